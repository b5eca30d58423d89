"""Landmark-driven piecewise-affine warping between frames.

Corresponding landmark sets induce a warp: Delaunay-triangulate the target
landmarks (augmented with raster corners and edge midpoints, which map to
themselves), solve the affine map of each triangle from its three point
correspondences, then look up each target pixel's source coordinate. The
per-triangle in-plane rotation angle is kept alongside so warped normals
can be re-directed, not just displaced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .core import Image, LandmarkSet, Mask, NormalMap, masked_l1


@dataclass(frozen=True)
class WarpField:
    """Per-target-pixel source coordinates, validity, and in-plane rotation.

    theta is the angle (radians) by which a transported normal's (n_x, n_y)
    must be rotated in the y-up normal frame; it is constant per triangle.
    """

    src: np.ndarray       # (H, W, 2) source (x, y)
    valid: np.ndarray     # (H, W) bool
    theta: np.ndarray     # (H, W)
    interior: np.ndarray  # (H, W) bool: triangle uses landmark vertices only
                          # (not the self-mapping raster corners/midpoints)

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]


def _augment(points: np.ndarray, w: int, h: int) -> np.ndarray:
    """Append the 4 raster corners and 4 edge midpoints (self-mapping)."""
    x1, y1 = w - 1.0, h - 1.0
    extra = np.array(
        [[0, 0], [x1, 0], [0, y1], [x1, y1],
         [x1 / 2, 0], [x1 / 2, y1], [0, y1 / 2], [x1, y1 / 2]]
    )
    return np.concatenate([points, extra], axis=0)


def estimate_warp(c_i: LandmarkSet, c_j: LandmarkSet, w: int, h: int) -> WarpField:
    """Warp that pulls frame-i content onto frame-j pixel positions."""
    if len(c_i) != len(c_j) or c_i.groups != c_j.groups:
        raise ValueError("landmark sets must have matching point counts and groups")
    src_pts = _augment(c_i.points, w, h)
    dst_pts = _augment(c_j.points, w, h)
    try:
        tri = Delaunay(dst_pts)
    except QhullError as e:
        raise ValueError(f"degenerate landmark configuration: {e}") from e

    n_tri = len(tri.simplices)
    n_lm = len(c_j)
    lin = np.empty((n_tri, 2, 2))
    off = np.empty((n_tri, 2))
    theta_tri = np.empty(n_tri)
    interior_tri = (tri.simplices < n_lm).all(axis=1)
    for t, simplex in enumerate(tri.simplices):
        d = dst_pts[simplex]  # (3, 2) target triangle
        s = src_pts[simplex]
        if np.array_equal(d, s):
            # exact identity triangles stay pixel-exact
            lin[t] = np.eye(2)
            off[t] = 0.0
            theta_tri[t] = 0.0
            continue
        M = np.column_stack([d, np.ones(3)])  # solve src = A @ dst + b
        try:
            coef = np.linalg.solve(M, s)  # (3, 2): rows = [ax, ay, b]
        except np.linalg.LinAlgError as e:
            raise ValueError(f"degenerate triangle in landmark configuration: {e}") from e
        A_back = coef[:2].T  # src = A_back @ dst + b
        lin[t] = A_back
        off[t] = coef[2]
        # forward (source -> target) linear part drives normal re-direction
        A_fwd = np.linalg.inv(A_back)
        theta_pix = math.atan2(A_fwd[1, 0] - A_fwd[0, 1], A_fwd[0, 0] + A_fwd[1, 1])
        theta_tri[t] = -theta_pix  # y-down pixels -> y-up normal frame

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1)
    simplex_of = tri.find_simplex(pix)
    valid = simplex_of >= 0
    src = np.zeros((h * w, 2))
    theta = np.zeros(h * w)
    interior = np.zeros(h * w, dtype=bool)
    if valid.any():
        t = simplex_of[valid]
        src[valid] = np.einsum("nij,nj->ni", lin[t], pix[valid]) + off[t]
        theta[valid] = theta_tri[t]
        interior[valid] = interior_tri[t]
    inside = valid & (src[:, 0] >= 0) & (src[:, 0] <= w - 1) & (src[:, 1] >= 0) & (src[:, 1] <= h - 1)
    return WarpField(
        src=src.reshape(h, w, 2),
        valid=inside.reshape(h, w),
        theta=theta.reshape(h, w),
        interior=(inside & interior).reshape(h, w),
    )


def bilinear_weights(src: np.ndarray, valid: np.ndarray, w: int, h: int):
    """Flat-index neighbors and weights for bilinear sampling at src coords.

    Returns (idx, wgt) of shape (n_valid, 4); the solver reuses these both
    to sample and to scatter adjoints back.
    """
    p = src[valid]
    x0 = np.clip(np.floor(p[:, 0]).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(p[:, 1]).astype(np.int64), 0, h - 2)
    fx = p[:, 0] - x0
    fy = p[:, 1] - y0
    idx = np.stack(
        [y0 * w + x0, y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1], axis=1
    )
    wgt = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    )
    return idx, wgt


def _sample(channel_stack: np.ndarray, wf: WarpField) -> np.ndarray:
    """Bilinear-sample an (H, W, C) stack at the warp's source coordinates."""
    h, w, c = channel_stack.shape
    idx, wgt = bilinear_weights(wf.src, wf.valid, w, h)
    flat = channel_stack.reshape(-1, c)
    out = np.zeros_like(channel_stack)
    out[wf.valid] = np.einsum("nkc,nk->nc", flat[idx], wgt)
    return out


def _sampled_mask(m: Mask, wf: WarpField) -> np.ndarray:
    """Valid where the warp lands strictly inside fully-valid source pixels."""
    h, w = m.valid.shape
    idx, wgt = bilinear_weights(wf.src, wf.valid, w, h)
    cov = np.zeros((h, w))
    cov[wf.valid] = (m.valid.ravel()[idx] * wgt).sum(axis=1)
    return wf.valid & (cov >= 1.0 - 1e-9)


def warp_albedo(a: Image, wf: WarpField, m: Mask) -> Tuple[Image, Mask]:
    """Displace-only transport of an albedo (or any color) image."""
    if (a.height, a.width) != (wf.height, wf.width):
        raise ValueError("dimension mismatch")
    out = _sample(a.data, wf)
    out_mask = _sampled_mask(m, wf)
    return Image(np.clip(out, 0.0, None) if not a.residual else out, residual=a.residual), Mask(out_mask)


def warp_normal(n: NormalMap, wf: WarpField, m: Mask) -> Tuple[NormalMap, Mask]:
    """Transport normals: displace, rotate (n_x, n_y) by theta, renormalize."""
    if (n.height, n.width) != (wf.height, wf.width):
        raise ValueError("dimension mismatch")
    v = _sample(n.vectors, wf)
    ct, st = np.cos(wf.theta), np.sin(wf.theta)
    rx = ct * v[:, :, 0] - st * v[:, :, 1]
    ry = st * v[:, :, 0] + ct * v[:, :, 1]
    out = np.stack([rx, ry, v[:, :, 2]], axis=2)
    norm = np.linalg.norm(out, axis=2, keepdims=True)
    out = np.where(norm > 1e-9, out / np.maximum(norm, 1e-9), np.array([0.0, 0.0, 1.0]))
    return NormalMap(out), Mask(_sampled_mask(m, wf))


def rasterize_contour(lm: LandmarkSet, w: int, h: int) -> Image:
    """Anti-aliased 1-pixel polylines through each landmark group.

    Intensity is 1 on the curve falling off linearly to 0 at distance 1;
    the single channel is replicated to 3 so contours share the Image type.
    """
    pts = lm.points
    if (pts[:, 0].min() < 0 or pts[:, 0].max() > w - 1
            or pts[:, 1].min() < 0 or pts[:, 1].max() > h - 1):
        raise ValueError("landmarks out of raster bounds")
    canvas = np.zeros((h, w))
    for g in lm.groups:
        for a, b in zip(g[:-1], g[1:]):
            p, q = pts[a], pts[b]
            x_lo = max(0, int(math.floor(min(p[0], q[0]) - 1)))
            x_hi = min(w - 1, int(math.ceil(max(p[0], q[0]) + 1)))
            y_lo = max(0, int(math.floor(min(p[1], q[1]) - 1)))
            y_hi = min(h - 1, int(math.ceil(max(p[1], q[1]) + 1)))
            if x_lo > x_hi or y_lo > y_hi:
                continue
            yy, xx = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1].astype(np.float64)
            d = q - p
            len2 = d @ d
            if len2 < 1e-12:
                t = np.zeros_like(xx)
            else:
                t = np.clip(((xx - p[0]) * d[0] + (yy - p[1]) * d[1]) / len2, 0.0, 1.0)
            dist = np.hypot(xx - (p[0] + t * d[0]), yy - (p[1] + t * d[1]))
            patch = np.maximum(0.0, 1.0 - dist)
            canvas[y_lo:y_hi + 1, x_lo:x_hi + 1] = np.maximum(canvas[y_lo:y_hi + 1, x_lo:x_hi + 1], patch)
    return Image(np.repeat(canvas[:, :, None], 3, axis=2))


def align_loss_albedo(a_i: Image, a_j: Image, c_i: LandmarkSet, c_j: LandmarkSet, m: Mask) -> float:
    """L1 between frame-j albedo and frame-i albedo warped onto frame j."""
    wf = estimate_warp(c_i, c_j, a_i.width, a_i.height)
    warped, wmask = warp_albedo(a_i, wf, m)
    combined = Mask(wmask.valid & m.valid)
    return masked_l1(a_j, warped, combined)


def align_loss_normal(n_i: NormalMap, n_j: NormalMap, c_i: LandmarkSet, c_j: LandmarkSet, m: Mask) -> float:
    """L1 over vector components between frame-j normals and transported
    frame-i normals."""
    wf = estimate_warp(c_i, c_j, n_i.width, n_i.height)
    warped, wmask = warp_normal(n_i, wf, m)
    combined = wmask.valid & m.valid
    if not combined.any():
        return 0.0
    return float(np.abs(n_j.vectors - warped.vectors)[combined].mean())
