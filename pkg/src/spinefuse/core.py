"""Shared domain types, validation, and deterministic randomness.

All types are immutable after construction: numpy buffers are frozen with
``writeable = False`` so instances can be shared freely across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """Malformed domain data or file content."""


class InvariantError(RuntimeError):
    """Internal state that should be impossible; indicates a bug."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrayImage:
    """8-bit single-channel raster with isotropic physical pixel spacing.

    ``pixels`` is a read-only (height, width) uint8 array; ``spacing`` is
    millimetres per pixel. Pixel (row i, col j) is sampled at the continuous
    point (x=j, y=i): x grows rightward, y grows downward.
    """

    pixels: np.ndarray
    spacing: float

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(
                f"image pixels must be a non-empty 2-D array, got shape {arr.shape}"
            )
        if arr.dtype != np.uint8:
            if not (np.issubdtype(arr.dtype, np.integer)
                    and arr.min() >= 0 and arr.max() <= 255):
                raise ValidationError("image pixels must be 8-bit intensities in [0, 255]")
            arr = arr.astype(np.uint8)
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise ValidationError(f"non-positive spacing: {self.spacing}")
        object.__setattr__(self, "pixels", _frozen(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_flat(cls, width: int, height: int, pixels, spacing: float) -> "GrayImage":
        """Build from a row-major flat intensity sequence, validating shape."""
        if width <= 0 or height <= 0:
            raise ValidationError(f"non-positive dimensions: {width}x{height}")
        flat = np.asarray(pixels)
        if flat.size != width * height:
            raise ValidationError(
                f"dimension mismatch: {width}x{height} needs {width * height} pixels, "
                f"got {flat.size}"
            )
        return cls(flat.reshape(height, width), spacing)


def validate_image(img: GrayImage) -> None:
    """Re-check every GrayImage invariant; raises ValidationError on failure."""
    if not isinstance(img, GrayImage):
        raise ValidationError(f"not a GrayImage: {type(img).__name__}")
    if img.pixels.ndim != 2 or img.pixels.size != img.width * img.height:
        raise ValidationError("dimension mismatch")
    if not (math.isfinite(img.spacing) and img.spacing > 0):
        raise ValidationError(f"non-positive spacing: {img.spacing}")


# ---------------------------------------------------------------------------
# landmark sets and coordinate frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PixelFrame:
    """Coordinate frame of a width x height pixel grid."""
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"non-positive frame: {self.width}x{self.height}")


@dataclass(frozen=True)
class NormalizedFrame:
    """Unit-square frame: both coordinates in [0, 1]."""


NORMALIZED = NormalizedFrame()

Frame = PixelFrame | NormalizedFrame


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered continuous (x, y) landmark coordinates in a declared frame.

    Construction requires finite coordinates only; predictions are allowed to
    fall outside the frame. Use :meth:`validate_bounds` where in-frame data is
    required (labels, frame conversion, dataset loading).
    """

    points: np.ndarray
    frame: Frame

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError(f"landmarks must have shape (N, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("landmark coordinates must be finite")
        if not isinstance(self.frame, (PixelFrame, NormalizedFrame)):
            raise ValidationError(f"unknown frame: {self.frame!r}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    def in_bounds_mask(self) -> np.ndarray:
        """Boolean mask of points inside the declared frame."""
        x, y = self.points[:, 0], self.points[:, 1]
        if isinstance(self.frame, PixelFrame):
            return (x >= 0) & (x < self.frame.width) & (y >= 0) & (y < self.frame.height)
        return (x >= 0) & (x <= 1) & (y >= 0) & (y <= 1)

    def validate_bounds(self) -> None:
        mask = self.in_bounds_mask()
        if not mask.all():
            bad = int(np.flatnonzero(~mask)[0])
            raise ValidationError(
                f"landmark {bad} at ({self.points[bad, 0]}, {self.points[bad, 1]}) "
                f"is outside frame {self.frame}"
            )


def landmark_frame_convert(lms: LandmarkSet, target: Frame) -> LandmarkSet:
    """Convert landmarks between pixel and normalized frames.

    Pixel -> normalized divides x by the frame width and y by the height;
    normalized -> pixel multiplies back. Source points must be in bounds.
    """
    lms.validate_bounds()
    if isinstance(target, NormalizedFrame):
        if not isinstance(lms.frame, PixelFrame):
            raise ValidationError("source must be in a pixel frame")
        scale = np.array([lms.frame.width, lms.frame.height], dtype=np.float64)
        return LandmarkSet(lms.points / scale, NORMALIZED)
    if not isinstance(lms.frame, NormalizedFrame):
        raise ValidationError("source must be in the normalized frame")
    scale = np.array([target.width, target.height], dtype=np.float64)
    return LandmarkSet(lms.points * scale, target)


# ---------------------------------------------------------------------------
# deterministic randomness
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class Rng:
    """Portable deterministic random stream (splitmix64).

    The generator is fixed so the same seed yields bit-identical streams on
    any platform: state advances by the 64-bit golden-ratio increment and the
    output is the standard splitmix64 finalizer. Doubles take the top 53 bits.
    Each :meth:`normal` consumes exactly two uniforms (Box-Muller, second
    variate discarded), keeping stream positions easy to reason about.
    """

    seed: int
    _state: int = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.seed, int) or not (0 <= self.seed <= _MASK64):
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        self._state = self.seed

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # (0,1] for the radius so log never sees zero
        u1 = ((self.next_u64() >> 11) + 1) * (2.0 ** -53)
        u2 = (self.next_u64() >> 11) * (2.0 ** -53)
        r = math.sqrt(-2.0 * math.log(u1))
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def normals(self, count: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return np.array([self.normal(mu, sigma) for _ in range(count)])

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via the multiply-shift reduction."""
        if n <= 0:
            raise ValidationError(f"randint needs n > 0, got {n}")
        return (self.next_u64() * n) >> 64

    def spawn(self, index: int) -> "Rng":
        """Derive an independent child stream from the seed and an index.

        Children depend only on (seed, index), never on this stream's
        position, so parallel or reordered consumers see identical streams.
        """
        return Rng(_mix64((self.seed + (index + 1) * _GAMMA) & _MASK64))
