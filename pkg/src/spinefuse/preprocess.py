"""Intensity and geometry normalization applied before any predictor."""
from __future__ import annotations

import numpy as np

from .core import GrayImage, LandmarkSet, PixelFrame, ValidationError, validate_image


def _round_u8(vals: np.ndarray) -> np.ndarray:
    # round half away from zero, saturating; np.round would round half to even
    return np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)


def equalize_histogram(img: GrayImage) -> GrayImage:
    """Spread the intensity histogram over the full 8-bit range.

    Output intensity is round((cdf(v) - cdf_min) / (P - cdf_min) * 255) where
    cdf is the cumulative pixel count over 256 bins, cdf_min the smallest
    nonzero cdf value, and P the pixel count. A constant image equalizes to
    itself (the denominator would be zero and any constant output is equally
    uninformative). Dimensions and spacing are unchanged.
    """
    validate_image(img)
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    cdf = hist.cumsum()
    total = int(cdf[-1])
    cdf_min = int(cdf[hist.nonzero()[0][0]])
    if cdf_min == total:
        return img
    lut = _round_u8((cdf - cdf_min) / float(total - cdf_min) * 255.0)
    return GrayImage(lut[img.pixels], img.spacing)


def resize_bilinear(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    """Bilinear resample with half-pixel-center alignment and edge clamping.

    Output pixel (x, y) samples the source at
    ((x + 0.5) * width / out_w - 0.5, (y + 0.5) * height / out_h - 0.5).
    Spacing is rescaled by width / out_w.
    """
    validate_image(img)
    if out_w <= 0 or out_h <= 0:
        raise ValidationError(f"non-positive output size: {out_w}x{out_h}")
    src = img.pixels.astype(np.float64)
    h, w = src.shape

    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)

    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0

    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return GrayImage(_round_u8(out), img.spacing * (w / out_w))


def resize_landmarks(lms: LandmarkSet, to_w: int, to_h: int) -> LandmarkSet:
    """Scale landmark coordinates from their pixel frame to a new grid size.

    x is scaled by to_w / from_w and y by to_h / from_h; equivalent to
    converting through the normalized frame.
    """
    if not isinstance(lms.frame, PixelFrame):
        raise ValidationError("resize expects landmarks in a pixel frame")
    lms.validate_bounds()
    if to_w <= 0 or to_h <= 0:
        raise ValidationError(f"non-positive target size: {to_w}x{to_h}")
    scale = np.array([to_w / lms.frame.width, to_h / lms.frame.height])
    return LandmarkSet(lms.points * scale, PixelFrame(to_w, to_h))
