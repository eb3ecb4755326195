"""Gaussian heatmap synthesis and peak decoding."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import LandmarkSet, PixelFrame, ValidationError, _frozen


class GaussianForm(Enum):
    """Shape of the rendered spot.

    UNIT peaks at ``amplitude`` (1 by default) at the center. SCALED
    multiplies the same exponential by ``amplitude / (2*pi*sigma)``.
    """

    UNIT = "unit"
    SCALED = "scaled"


@dataclass(frozen=True)
class GaussianSpec:
    """Center, width, amplitude, and form of one Gaussian spot."""

    center: tuple[float, float]
    sigma: float
    amplitude: float = 1.0
    form: GaussianForm = GaussianForm.UNIT

    def __post_init__(self):
        x0, y0 = self.center
        if not (math.isfinite(x0) and math.isfinite(y0)):
            raise ValidationError(f"non-finite center: {self.center}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"sigma must be positive and finite, got {self.sigma}")
        if not (math.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValidationError(f"amplitude must be positive and finite, got {self.amplitude}")


@dataclass(frozen=True)
class Heatmap:
    """Dense grid of non-negative finite scores, one value per pixel."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(f"heatmap must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("heatmap values must be finite")
        if arr.min() < 0:
            raise ValidationError("heatmap values must be non-negative")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def render_gaussian(spec: GaussianSpec, width: int, height: int) -> Heatmap:
    """Evaluate the Gaussian at every integer pixel of a width x height grid.

    No truncation radius is applied: tails are evaluated over the whole grid
    (fusion in log space relies on them). The 2-D exponential separates into
    an outer product of two 1-D exponentials.
    """
    if width <= 0 or height <= 0:
        raise ValidationError(f"non-positive grid: {width}x{height}")
    x0, y0 = spec.center
    two_s2 = 2.0 * spec.sigma * spec.sigma
    ex = np.exp(-((np.arange(width, dtype=np.float64) - x0) ** 2) / two_s2)
    ey = np.exp(-((np.arange(height, dtype=np.float64) - y0) ** 2) / two_s2)
    vals = np.outer(ey, ex)
    if spec.form is GaussianForm.SCALED:
        vals *= spec.amplitude / (2.0 * math.pi * spec.sigma)
    elif spec.amplitude != 1.0:
        vals *= spec.amplitude
    return Heatmap(vals)


def render_label_stack(lms: LandmarkSet, sigma: float, width: int, height: int) -> list[Heatmap]:
    """One UNIT-form heatmap per landmark, channel order matching point order."""
    if not isinstance(lms.frame, PixelFrame):
        raise ValidationError("label rendering expects landmarks in a pixel frame")
    return [
        render_gaussian(GaussianSpec((float(x), float(y)), sigma), width, height)
        for x, y in lms.points
    ]


def decode_argmax(hm: Heatmap) -> tuple[int, int]:
    """Grid coordinates of the maximum value; row-major first index on ties."""
    vals = hm.values
    idx = int(np.argmax(vals))
    # values are non-negative by type, so a zero maximum means an all-zero map
    if vals.flat[idx] <= 0:
        raise ValidationError("cannot decode an all-zero heatmap")
    return idx % hm.width, idx // hm.width


def decode_centroid(hm: Heatmap, window: int = 3) -> tuple[float, float]:
    """Intensity-weighted centroid of the window x window patch at the argmax.

    The patch is clamped at the grid border. ``window`` must be odd.
    """
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"window must be odd and positive, got {window}")
    ax, ay = decode_argmax(hm)
    half = window // 2
    x0, x1 = max(0, ax - half), min(hm.width - 1, ax + half)
    y0, y1 = max(0, ay - half), min(hm.height - 1, ay + half)
    patch = hm.values[y0:y1 + 1, x0:x1 + 1]
    total = patch.sum()
    # offsets relative to the argmax so mirror terms of a symmetric patch
    # cancel exactly and the centroid of a symmetric peak is the argmax
    dx = np.arange(x0 - ax, x1 - ax + 1, dtype=np.float64)
    dy = np.arange(y0 - ay, y1 - ay + 1, dtype=np.float64)
    return (
        ax + float((patch.sum(axis=0) * dx).sum() / total),
        ay + float((patch.sum(axis=1) * dy).sum() / total),
    )


def normalize_peak(hm: Heatmap) -> Heatmap:
    """Scale so the maximum value is exactly 1."""
    peak = hm.values.max()
    if peak <= 0:
        raise ValidationError("cannot peak-normalize an all-zero heatmap")
    return Heatmap(hm.values / peak)
