"""Synthetic predictor models for verifying fusion without trained networks.

The coordinate branch is modeled as ground truth plus isotropic Gaussian
scatter (with optional outliers). The heatmap branch is modeled as a clean
peak that, with some probability, gains a spurious peak at an adjacent
landmark of the chain, the failure mode that makes plain argmax decoding
jump to the wrong vertebra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GrayImage, LandmarkSet, PixelFrame, Rng, ValidationError
from .evaluate import ComparisonReport, pck
from .fusion import FusionConfig, fuse_batch
from .heatmap import GaussianSpec, Heatmap, decode_argmax, render_gaussian
from .preprocess import _round_u8


@dataclass(frozen=True)
class CoordPredictorModel:
    """Isotropic Gaussian scatter around truth, with an outlier branch."""

    noise_sigma: float
    outlier_rate: float = 0.0
    outlier_sigma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValidationError(f"outlier_rate must be in [0, 1], got {self.outlier_rate}")
        if not (math.isfinite(self.outlier_sigma) and self.outlier_sigma >= 0):
            raise ValidationError(f"outlier_sigma must be >= 0, got {self.outlier_sigma}")


@dataclass(frozen=True)
class HeatmapPredictorModel:
    """True peak with jitter plus an occasional spurious peak at a neighbor."""

    peak_jitter_sigma: float = 0.0
    heatmap_sigma: float = 1.2
    adjacent_confusion_prob: float = 0.0
    spurious_amplitude: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        if not (math.isfinite(self.peak_jitter_sigma) and self.peak_jitter_sigma >= 0):
            raise ValidationError(f"peak_jitter_sigma must be >= 0, got {self.peak_jitter_sigma}")
        if not (math.isfinite(self.heatmap_sigma) and self.heatmap_sigma > 0):
            raise ValidationError(f"heatmap_sigma must be > 0, got {self.heatmap_sigma}")
        if not 0.0 <= self.adjacent_confusion_prob <= 1.0:
            raise ValidationError(
                f"adjacent_confusion_prob must be in [0, 1], got {self.adjacent_confusion_prob}"
            )
        lo, hi = self.spurious_amplitude
        if not (0 < lo <= hi and math.isfinite(hi)):
            raise ValidationError(f"bad spurious_amplitude range: ({lo}, {hi})")


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry of the synthetic near-vertical landmark chain."""

    landmarks: int = 11
    width: int = 512
    height: int = 512
    spacing_mm_per_px: float = 0.5
    chain_spacing_px: float = 40.0
    wobble_px: float = 6.0

    def __post_init__(self):
        if self.landmarks < 2:
            raise ValidationError(f"need at least 2 landmarks, got {self.landmarks}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"non-positive grid: {self.width}x{self.height}")
        if self.spacing_mm_per_px <= 0:
            raise ValidationError(f"non-positive spacing: {self.spacing_mm_per_px}")
        if self.chain_spacing_px <= 0 or self.wobble_px < 0:
            raise ValidationError("chain spacing must be positive and wobble non-negative")


@dataclass(frozen=True)
class SpinePhantom:
    """A generated ground-truth chain together with its grid geometry."""

    config: PhantomConfig
    landmarks: LandmarkSet


def generate_phantom(rng: Rng, config: PhantomConfig) -> tuple[SpinePhantom, LandmarkSet]:
    """Draw one ground-truth chain: evenly spaced rows, laterally wobbled x.

    Landmark positions are rounded to integer pixels so rendered label peaks
    hit grid points exactly. y is strictly increasing down the chain.
    """
    n = config.landmarks
    span = (n - 1) * config.chain_spacing_px
    y0 = (config.height - 1 - span) / 2.0
    if y0 < 0:
        raise ValidationError(
            f"chain of {n} landmarks spaced {config.chain_spacing_px}px "
            f"does not fit a height of {config.height}px"
        )
    cx = (config.width - 1) / 2.0
    if cx - config.wobble_px < 0 or cx + config.wobble_px > config.width - 1:
        raise ValidationError(f"wobble {config.wobble_px}px exceeds the frame")
    pts = np.empty((n, 2))
    for i in range(n):
        pts[i, 0] = round(cx + rng.uniform(-config.wobble_px, config.wobble_px))
        pts[i, 1] = round(y0 + i * config.chain_spacing_px)
    if not np.all(np.diff(pts[:, 1]) > 0):
        raise ValidationError("chain spacing too small: rows collide after rounding")
    lms = LandmarkSet(pts, PixelFrame(config.width, config.height))
    lms.validate_bounds()
    return SpinePhantom(config, lms), lms


def phantom_image(phantom: SpinePhantom) -> GrayImage:
    """Render the phantom as a displayable raster: bright blobs on a dark bed."""
    cfg = phantom.config
    vals = np.zeros((cfg.height, cfg.width))
    for x, y in phantom.landmarks.points:
        spot = render_gaussian(GaussianSpec((float(x), float(y)), 5.0), cfg.width, cfg.height)
        np.maximum(vals, spot.values, out=vals)
    return GrayImage(_round_u8(15.0 + 220.0 * vals), cfg.spacing_mm_per_px)


def simulate_coords(rng: Rng, gt: LandmarkSet, model: CoordPredictorModel) -> LandmarkSet:
    """Scatter each ground-truth point with the model's Gaussian noise.

    Each point consumes one uniform (outlier gate) and two normals, in that
    order, regardless of parameters, so stream positions stay aligned across
    configurations.
    """
    pts = np.empty_like(gt.points)
    for i, (x, y) in enumerate(gt.points):
        sigma = model.outlier_sigma if rng.random() < model.outlier_rate else model.noise_sigma
        pts[i, 0] = x + rng.normal(0.0, sigma)
        pts[i, 1] = y + rng.normal(0.0, sigma)
    return LandmarkSet(pts, gt.frame)


def simulate_heatmaps(rng: Rng, gt: LandmarkSet, model: HeatmapPredictorModel,
                      width: int, height: int) -> list[Heatmap]:
    """One channel per landmark: jittered true peak, max-combined with an
    occasional spurious peak at a uniformly chosen chain neighbor.

    Per channel the stream consumes two jitter normals and one confusion
    uniform; a triggered confusion consumes one neighbor-choice uniform and
    one amplitude uniform.
    """
    n = len(gt)
    channels = []
    for k, (x, y) in enumerate(gt.points):
        cx = x + rng.normal(0.0, model.peak_jitter_sigma)
        cy = y + rng.normal(0.0, model.peak_jitter_sigma)
        spec = GaussianSpec((float(cx), float(cy)), model.heatmap_sigma)
        peak = render_gaussian(spec, width, height)
        if rng.random() < model.adjacent_confusion_prob and n > 1:
            pick_next = rng.random() < 0.5
            if k == 0:
                nb = 1
            elif k == n - 1:
                nb = n - 2
            else:
                nb = k + 1 if pick_next else k - 1
            amp = rng.uniform(*model.spurious_amplitude)
            nx, ny = gt.points[nb]
            spur = render_gaussian(
                GaussianSpec((float(nx), float(ny)), model.heatmap_sigma, amplitude=amp),
                width, height,
            )
            peak = Heatmap(np.maximum(peak.values, spur.values))
        channels.append(peak)
    return channels


@dataclass(frozen=True)
class TrialConfig:
    """Everything one comparison run needs."""

    phantom: PhantomConfig
    coords: CoordPredictorModel
    heatmaps: HeatmapPredictorModel
    fusion: FusionConfig
    threshold_mm: float = 8.0
    images: int = 50

    def __post_init__(self):
        if self.threshold_mm <= 0:
            raise ValidationError(f"non-positive threshold: {self.threshold_mm}")
        if self.images < 1:
            raise ValidationError(f"need at least one image, got {self.images}")


METHOD_COORDS = "coords_only"
METHOD_HEATMAP = "heatmap_argmax"
METHOD_FUSED = "fused"


def run_trial(rng: Rng, config: TrialConfig) -> ComparisonReport:
    """Score coords-only, heatmap-argmax, and fused decoding on shared trials.

    Each image gets its own child stream spawned from the image index, so
    results do not depend on execution order.
    """
    cfg = config.phantom
    gts, coord_preds, heat_preds, fused_preds = [], [], [], []
    for i in range(config.images):
        stream = rng.spawn(i)
        phantom, gt = generate_phantom(stream, cfg)
        coords = simulate_coords(stream, gt, config.coords)
        stack = simulate_heatmaps(stream, gt, config.heatmaps, cfg.width, cfg.height)
        heat = np.array([decode_argmax(ch) for ch in stack], dtype=np.float64)
        fused = fuse_batch(stack, coords, config.fusion)
        gts.append(gt)
        coord_preds.append(coords)
        heat_preds.append(LandmarkSet(heat, gt.frame))
        fused_preds.append(fused)

    spacing = cfg.spacing_mm_per_px
    methods = {
        METHOD_COORDS: pck(coord_preds, gts, config.threshold_mm, spacing),
        METHOD_HEATMAP: pck(heat_preds, gts, config.threshold_mm, spacing),
        METHOD_FUSED: pck(fused_preds, gts, config.threshold_mm, spacing),
    }
    return ComparisonReport(
        images=config.images,
        landmarks_per_image=cfg.landmarks,
        threshold_mm=config.threshold_mm,
        spacing_mm_per_px=spacing,
        methods=methods,
    )


# ---------------------------------------------------------------------------
# calibration helpers
# ---------------------------------------------------------------------------

def noise_sigma_for_accuracy(accuracy: float, threshold_px: float) -> float:
    """Coordinate noise sigma giving the target hit rate at a pixel radius.

    With isotropic Gaussian error the miss probability follows the Rayleigh
    tail P(|e| > r) = exp(-r^2 / (2 sigma^2)); solving for sigma gives
    r / sqrt(-2 ln(1 - accuracy)).
    """
    if not 0 < accuracy < 1:
        raise ValidationError(f"accuracy must be in (0, 1), got {accuracy}")
    if threshold_px <= 0:
        raise ValidationError(f"non-positive threshold: {threshold_px}")
    return threshold_px / math.sqrt(-2.0 * math.log(1.0 - accuracy))


def confusion_prob_for_accuracy(accuracy: float,
                                amplitude_range: tuple[float, float] = (0.9, 1.1)) -> float:
    """Confusion probability giving the target heatmap-argmax hit rate.

    A spurious peak steals the argmax iff its amplitude exceeds 1, so the
    miss rate is confusion_prob * P(amplitude > 1) under the uniform
    amplitude law. Requires the range to straddle 1.
    """
    lo, hi = amplitude_range
    if not lo < 1.0 < hi:
        raise ValidationError(f"amplitude range must straddle 1, got ({lo}, {hi})")
    p_win = (hi - 1.0) / (hi - lo)
    prob = (1.0 - accuracy) / p_win
    if not 0.0 <= prob <= 1.0:
        raise ValidationError(
            f"accuracy {accuracy} unreachable with amplitude range ({lo}, {hi})"
        )
    return prob


def calibrated_config(coords_accuracy: float = 0.713,
                      heatmap_accuracy: float = 0.65,
                      images: int = 4546,
                      phantom: PhantomConfig = PhantomConfig()) -> TrialConfig:
    """The comparison setup tuned to the target standalone accuracies.

    Defaults give ~50,000 landmark trials (4546 images x 11 landmarks) at
    an 8 mm threshold, which is 16 px at the default 0.5 mm/px spacing.
    The heatmap branch uses zero peak jitter so the analytic amplitude law
    holds exactly on integer-pixel ground truth.
    """
    threshold_px = 8.0 / phantom.spacing_mm_per_px
    return TrialConfig(
        phantom=phantom,
        coords=CoordPredictorModel(
            noise_sigma=noise_sigma_for_accuracy(coords_accuracy, threshold_px)
        ),
        heatmaps=HeatmapPredictorModel(
            peak_jitter_sigma=0.0,
            heatmap_sigma=1.2,
            adjacent_confusion_prob=confusion_prob_for_accuracy(heatmap_accuracy),
            spurious_amplitude=(0.9, 1.1),
        ),
        fusion=FusionConfig(prior_sigma=6.0),
        threshold_mm=8.0,
        images=images,
    )


def noiseless_config(images: int = 10,
                     phantom: PhantomConfig = PhantomConfig()) -> TrialConfig:
    """Both branches exact: every method should score 1.0."""
    return TrialConfig(
        phantom=phantom,
        coords=CoordPredictorModel(noise_sigma=0.0),
        heatmaps=HeatmapPredictorModel(peak_jitter_sigma=0.0, adjacent_confusion_prob=0.0),
        fusion=FusionConfig(prior_sigma=6.0),
        threshold_mm=8.0,
        images=images,
    )
