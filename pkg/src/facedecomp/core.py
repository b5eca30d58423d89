"""Shared domain types and pixel arithmetic.

Conventions used throughout the package:
  * pixel x grows right, pixel y grows down
  * normal vectors live in a y-up frame (n_x right, n_y up, n_z toward
    the camera), so anything converting between pixel displacements and
    normal components must flip the sign of the y part
  * all image math is linear intensity, no gamma anywhere
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UNIT_TOL = 1e-5


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """H x W x 3 float raster. Residual images may be negative in [-1, 1];
    everything else is nonnegative linear intensity, nominally [0, 1]."""

    data: np.ndarray
    residual: bool = False

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"image data must be (H, W, 3), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("image data must be finite")
        if not self.residual and d.min() < 0:
            raise ValueError("non-residual image has negative values")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class Mask:
    """Boolean validity raster gating an image of the same size."""

    valid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.valid, dtype=bool)
        if v.ndim != 2:
            raise ValueError(f"mask must be (H, W), got {v.shape}")
        object.__setattr__(self, "valid", _freeze(v))

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def count(self) -> int:
        return int(self.valid.sum())

    @classmethod
    def full(cls, height: int, width: int) -> "Mask":
        return cls(np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class NormalMap:
    """H x W x 3 field of unit vectors; only pixels covered by the owning
    mask are required to be unit and camera-facing (n_z >= 0)."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"normal map must be (H, W, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("normal map must be finite")
        object.__setattr__(self, "vectors", _freeze(v))

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


def check_unit_normals(n: NormalMap, m: Optional[Mask] = None, tol: float = UNIT_TOL) -> None:
    """Raise if any (valid) normal deviates from unit length by more than tol."""
    norms = np.linalg.norm(n.vectors, axis=2)
    if m is not None:
        norms = norms[m.valid]
    if norms.size and np.abs(norms - 1.0).max() > tol:
        raise ValueError("normal map contains non-unit vectors")


@dataclass(frozen=True)
class ShLighting:
    """9 x 3 spherical-harmonic lighting coefficients (basis row, RGB column)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (9, 3):
            raise ValueError(f"lighting must be (9, 3), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("lighting coefficients must be finite")
        object.__setattr__(self, "coeffs", _freeze(c))


@dataclass(frozen=True)
class LandmarkSet:
    """Sub-pixel 2D landmarks with polyline grouping (eyes/nose/mouth analog)."""

    points: np.ndarray
    groups: tuple

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError(f"points must be (N, 2), got {p.shape}")
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        for g in groups:
            for i in g:
                if not (0 <= i < len(p)):
                    raise ValueError(f"group index {i} out of range")
        if len(p) < 4:
            raise ValueError("need at least 4 landmark points")
        centered = p - p.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-8) < 2:
            raise ValueError("landmark points are collinear")
        object.__setattr__(self, "points", _freeze(p))
        object.__setattr__(self, "groups", groups)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class GroundTruth:
    albedo: Image
    normal: NormalMap
    lighting: ShLighting
    residual: Image
    image_local: Image


@dataclass(frozen=True)
class FrameRecord:
    image_global: Image
    mask: Mask
    landmarks: LandmarkSet
    gt: Optional[GroundTruth] = None

    def __post_init__(self):
        if (self.image_global.height, self.image_global.width) != (self.mask.height, self.mask.width):
            raise ValueError("image / mask dimension mismatch")


@dataclass(frozen=True)
class FrameSequence:
    identity: str
    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)


def _check_same_shape(a, b) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"dimension mismatch: {(a.height, a.width)} vs {(b.height, b.width)}")


def apply_mask(img: Image, m: Mask) -> Image:
    """Zero out invalid pixels, leave valid pixels untouched."""
    _check_same_shape(img, m)
    out = img.data * m.valid[:, :, None]
    return Image(out, residual=img.residual)


def masked_l1(a: Image, b: Image, m: Mask) -> float:
    """Mean absolute difference over valid pixel-channels; 0 for an empty mask."""
    _check_same_shape(a, b)
    _check_same_shape(a, m)
    if m.count == 0:
        return 0.0
    diff = np.abs(a.data - b.data)[m.valid]
    return float(diff.mean())


def masked_l1_arrays(a: np.ndarray, b: np.ndarray, valid: np.ndarray) -> float:
    """masked_l1 on raw (H, W, C) arrays, for solver internals."""
    if a.shape != b.shape or a.shape[:2] != valid.shape:
        raise ValueError("dimension mismatch")
    if not valid.any():
        return 0.0
    return float(np.abs(a - b)[valid].mean())


def encode_normals(n: NormalMap, m: Optional[Mask] = None) -> np.ndarray:
    """Pack unit normals into a 16-bit 3-channel raster.

    Component mapping is v = round_half_up((n + 1) / 2 * 65535); masked
    pixels encode (0, 0, 0), which is outside the image of the mapping for
    unit vectors and therefore unambiguous.
    """
    check_unit_normals(n, m)
    v = np.floor((n.vectors + 1.0) / 2.0 * 65535.0 + 0.5)
    v = np.clip(v, 0, 65535).astype(np.uint16)
    if m is not None:
        _check_same_shape(n, m)
        v[~m.valid] = 0
    return v


def decode_normals(raster: np.ndarray, renormalize: bool = True) -> np.ndarray:
    """Inverse of encode_normals, up to quantization. Pixels encoded (0,0,0)
    decode to (0,0,1) when renormalizing (they are masked-out anyway)."""
    r = np.asarray(raster)
    if r.ndim != 3 or r.shape[2] != 3 or r.dtype != np.uint16:
        raise ValueError("expected a (H, W, 3) uint16 raster")
    v = r.astype(np.float64) / 65535.0 * 2.0 - 1.0
    if renormalize:
        norm = np.linalg.norm(v, axis=2, keepdims=True)
        hole = norm[:, :, 0] < 0.5
        v = np.where(hole[:, :, None], np.array([0.0, 0.0, 1.0]), v / np.maximum(norm, 1e-12))
    return v
