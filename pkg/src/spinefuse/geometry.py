"""Affine augmentation applied consistently to an image and its landmarks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import GrayImage, LandmarkSet, PixelFrame, Rng, ValidationError, _frozen
from .preprocess import _round_u8


@dataclass(frozen=True)
class AffineTransform2D:
    """2x3 matrix [[a, b, tx], [c, d, ty]] mapping (x, y) to
    (a*x + b*y + tx, c*x + d*y + ty). Must be invertible."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValidationError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("affine matrix must be finite")
        if abs(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) < 1e-12:
            raise ValidationError("singular transform")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of (x, y) points forward."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def invert(self) -> "AffineTransform2D":
        lin = self.matrix[:, :2]
        inv = np.linalg.inv(lin)
        return AffineTransform2D(np.hstack([inv, (-inv @ self.matrix[:, 2])[:, None]]))

    def compose(self, inner: "AffineTransform2D") -> "AffineTransform2D":
        """The map applying ``inner`` first, then this transform."""
        lin = self.matrix[:, :2] @ inner.matrix[:, :2]
        off = self.matrix[:, :2] @ inner.matrix[:, 2] + self.matrix[:, 2]
        return AffineTransform2D(np.hstack([lin, off[:, None]]))


@dataclass(frozen=True)
class AugmentationRanges:
    """Uniform sampling ranges for translation (px), rotation (deg), scale."""

    tx: tuple[float, float] = (-35.0, 35.0)
    ty: tuple[float, float] = (-8.0, 8.0)
    angle_deg: tuple[float, float] = (-25.0, 25.0)
    scale: tuple[float, float] = (0.7, 1.3)

    def __post_init__(self):
        for name in ("tx", "ty", "angle_deg", "scale"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValidationError(f"bad {name} range: ({lo}, {hi})")
        if self.scale[0] <= 0:
            raise ValidationError(f"scale must stay positive, got {self.scale}")


class AugmentationParams(NamedTuple):
    tx: float
    ty: float
    angle_deg: float
    scale: float


def sample_augmentation(rng: Rng, ranges: AugmentationRanges) -> AugmentationParams:
    """Draw one parameter tuple, each component uniform over its range.

    Draw order is fixed (tx, ty, angle, scale) so a given stream position
    always yields the same tuple.
    """
    return AugmentationParams(
        tx=rng.uniform(*ranges.tx),
        ty=rng.uniform(*ranges.ty),
        angle_deg=rng.uniform(*ranges.angle_deg),
        scale=rng.uniform(*ranges.scale),
    )


def build_transform(tx: float, ty: float, angle_deg: float, scale: float,
                    center: tuple[float, float]) -> AffineTransform2D:
    """Compose scale, then rotation, then translation about ``center``.

    p -> R(angle) * scale * (p - center) + center + (tx, ty), with R in the
    y-down pixel frame: a positive angle turns image content clockwise on
    screen.
    """
    if scale <= 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    th = math.radians(angle_deg)
    a = scale * math.cos(th)
    b = -scale * math.sin(th)
    c = scale * math.sin(th)
    d = scale * math.cos(th)
    cx, cy = center
    return AffineTransform2D(np.array([
        [a, b, cx + tx - a * cx - b * cy],
        [c, d, cy + ty - c * cx - d * cy],
    ]))


def warp_image(img: GrayImage, t: AffineTransform2D) -> GrayImage:
    """Resample the image through the inverse map with bilinear weights.

    Output pixel p takes the bilinear sample of the input at t^-1(p);
    samples falling outside the input grid contribute intensity 0.
    Dimensions and spacing are unchanged.
    """
    h, w = img.pixels.shape
    inv = t.invert().matrix
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    sx = inv[0, 0] * xs[None, :] + inv[0, 1] * ys[:, None] + inv[0, 2]
    sy = inv[1, 0] * xs[None, :] + inv[1, 1] * ys[:, None] + inv[1, 2]

    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0

    src = img.pixels.astype(np.float64)
    out = np.zeros((h, w))
    for dy in (0, 1):
        wy = fy if dy else 1.0 - fy
        yy = y0 + dy
        for dx in (0, 1):
            wx = fx if dx else 1.0 - fx
            xx = x0 + dx
            valid = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            out[valid] += (wx * wy)[valid] * src[yy[valid], xx[valid]]
    return GrayImage(_round_u8(out), img.spacing)


def warp_landmarks(lms: LandmarkSet, t: AffineTransform2D) -> tuple[LandmarkSet, np.ndarray]:
    """Map landmarks forward through the transform.

    Returns the warped set and a boolean in-frame mask. Raises if every
    point leaves the frame (such an augmentation should be rejected and
    resampled).
    """
    if not isinstance(lms.frame, PixelFrame):
        raise ValidationError("warp expects landmarks in a pixel frame")
    warped = LandmarkSet(t.apply(lms.points), lms.frame)
    mask = warped.in_bounds_mask()
    if len(warped) and not mask.any():
        raise ValidationError("all landmarks left the frame")
    return warped, mask


def sample_valid_augmentation(
    rng: Rng,
    ranges: AugmentationRanges,
    lms: LandmarkSet,
    center: tuple[float, float],
    max_tries: int = 100,
) -> tuple[AugmentationParams, AffineTransform2D]:
    """Sample until the augmentation keeps every landmark in frame.

    Silently clipping labels would corrupt training targets, so draws that
    push any landmark out are discarded. Raises after ``max_tries``.
    """
    for _ in range(max_tries):
        params = sample_augmentation(rng, ranges)
        t = build_transform(*params, center)
        warped = LandmarkSet(t.apply(lms.points), lms.frame)
        if warped.in_bounds_mask().all():
            return params, t
    raise ValidationError(
        f"no augmentation kept all landmarks in frame after {max_tries} tries"
    )
