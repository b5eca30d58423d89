"""Procedural desk-scale data generator.

An identity is an analytic heightfield (ellipsoidal cap plus a 20-field
Gaussian-bump deformation basis) with a textured albedo. Frames of one
identity vary in-plane pose (rotation / translation / scale), deformation
weights, and lighting. Everything is evaluated analytically, so posed
normals are exact and ground truth is self-consistent by construction.
The residual channel carries cast shadows (heightfield ray marching
toward the dominant light direction) and a Blinn-Phong highlight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    FrameRecord,
    FrameSequence,
    GroundTruth,
    Image,
    LandmarkSet,
    Mask,
    NormalMap,
    ShLighting,
)
from .shading import render_global, render_local, sh_basis_array

N_DEFORM_FIELDS = 20
N_TEXTURE_STYLES = 50
MASK_RHO = 0.82
SHADOW_STRENGTH = 0.6
HIGHLIGHT_STRENGTH = 0.15
HIGHLIGHT_EXPONENT = 32
MIN_HEMISPHERE_SHADING = 0.02
MIN_NZ = 0.05


class PoseError(ValueError):
    """Raised when a pose/deformation combination leaves the valid envelope."""


class LightingError(ValueError):
    """Raised when lighting resampling exhausts its attempt budget."""


def _fibonacci_hemisphere(n: int) -> np.ndarray:
    k = np.arange(n)
    z = (k + 0.5) / n  # camera-facing half only
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(1.0 - z**2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


_HEMI_DIRS = _fibonacci_hemisphere(512)
_HEMI_BASIS = sh_basis_array(_HEMI_DIRS)


@dataclass(frozen=True)
class ShapeModel:
    """Analytic heightfield: cap + weighted Gaussian bumps."""

    size: int
    center: np.ndarray       # (2,) cap center, pixel coords
    radii: np.ndarray        # (2,) in-plane semi-axes
    rz: float                # cap height
    rho: float               # mask cutoff in normalized ellipse radius
    bump_xy: np.ndarray      # (20, 2) bump centers
    bump_sigma: np.ndarray   # (20,)
    bump_amp: np.ndarray     # (20,)

    def _ellipse_u(self, x, y):
        return ((x - self.center[0]) / self.radii[0]) ** 2 + ((y - self.center[1]) / self.radii[1]) ** 2

    def height(self, x, y, weights):
        """Heightfield value; cap contributes 0 outside its support."""
        u = self._ellipse_u(x, y)
        h = self.rz * np.sqrt(np.maximum(0.0, 1.0 - u))
        for k in range(N_DEFORM_FIELDS):
            if weights[k] == 0.0:
                continue
            d2 = (x - self.bump_xy[k, 0]) ** 2 + (y - self.bump_xy[k, 1]) ** 2
            h = h + weights[k] * self.bump_amp[k] * np.exp(-d2 / (2.0 * self.bump_sigma[k] ** 2))
        return h

    def height_grad(self, x, y, weights):
        """(dh/dx, dh/dy) with x right, y down (pixel frame)."""
        u = self._ellipse_u(x, y)
        inside = u < 1.0 - 1e-9
        root = np.sqrt(np.maximum(1e-12, 1.0 - u))
        gx = np.where(inside, -self.rz * (x - self.center[0]) / (self.radii[0] ** 2 * root), 0.0)
        gy = np.where(inside, -self.rz * (y - self.center[1]) / (self.radii[1] ** 2 * root), 0.0)
        for k in range(N_DEFORM_FIELDS):
            if weights[k] == 0.0:
                continue
            dx = x - self.bump_xy[k, 0]
            dy = y - self.bump_xy[k, 1]
            s2 = self.bump_sigma[k] ** 2
            g = weights[k] * self.bump_amp[k] * np.exp(-(dx**2 + dy**2) / (2.0 * s2)) / s2
            gx = gx - g * dx
            gy = gy - g * dy
        return gx, gy


@dataclass(frozen=True)
class Pose:
    """In-plane similarity: rotate by theta about the raster center, scale,
    then translate. theta in radians, positive = CCW in pixel coords."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0


@dataclass(frozen=True)
class SceneLight:
    sh: ShLighting
    key_direction: np.ndarray  # (3,) unit, y-up frame


@dataclass(frozen=True)
class PosedShape:
    """A ShapeModel under fixed deformation weights and pose."""

    shape: ShapeModel
    pose: Pose
    weights: np.ndarray

    def _inverse_map(self, qx, qy):
        c = (self.shape.size - 1) / 2.0
        ct, st = math.cos(self.pose.theta), math.sin(self.pose.theta)
        ux = (qx - c - self.pose.tx) / self.pose.scale
        uy = (qy - c - self.pose.ty) / self.pose.scale
        return ct * ux + st * uy + c, -st * ux + ct * uy + c  # R(-theta)

    def forward_map(self, px, py):
        c = (self.shape.size - 1) / 2.0
        ct, st = math.cos(self.pose.theta), math.sin(self.pose.theta)
        ux, uy = px - c, py - c
        return (
            self.pose.scale * (ct * ux - st * uy) + c + self.pose.tx,
            self.pose.scale * (st * ux + ct * uy) + c + self.pose.ty,
        )

    def height(self, qx, qy):
        px, py = self._inverse_map(qx, qy)
        return self.pose.scale * self.shape.height(px, py, self.weights)

    def geometry(self):
        """Exact posed (NormalMap, Mask); normals default to (0,0,1) off-mask."""
        size = self.shape.size
        qy, qx = np.mgrid[0:size, 0:size].astype(np.float64)
        px, py = self._inverse_map(qx, qy)
        valid = self.shape._ellipse_u(px, py) <= self.shape.rho**2
        gx, gy = self.shape.height_grad(px, py, self.weights)
        # gradient of the posed field rotates with the pose (scale cancels)
        ct, st = math.cos(self.pose.theta), math.sin(self.pose.theta)
        gqx = ct * gx - st * gy
        gqy = st * gx + ct * gy
        # pixel-frame normal (-gx, -gy, 1); flip y for the y-up normal frame
        n = np.stack([-gqx, gqy, np.ones_like(gqx)], axis=2)
        n /= np.linalg.norm(n, axis=2, keepdims=True)
        n = np.where(valid[:, :, None], n, np.array([0.0, 0.0, 1.0]))
        if valid.any() and n[valid][:, 2].min() < MIN_NZ:
            raise PoseError("posed surface is too grazing; resample pose/weights")
        return NormalMap(n), Mask(valid)


def _texture_field(style_id: int, size: int) -> np.ndarray:
    """Deterministic procedural texture in [-1, 1] for one of the 50 styles."""
    if not 0 <= style_id < N_TEXTURE_STYLES:
        raise ValueError(f"style_id must be in [0, {N_TEXTURE_STYLES})")
    rng = np.random.default_rng(90001 + style_id)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    mode = style_id % 3
    if mode == 0:  # stripes
        fx, fy = rng.uniform(1.0, 3.5, 2) * rng.choice([-1.0, 1.0], 2)
        phase = rng.uniform(0, 2 * math.pi)
        field = np.sin(2 * math.pi * (fx * xx + fy * yy) + phase)
    elif mode == 1:  # smooth patches
        g = int(rng.integers(3, 6))
        coarse = rng.normal(size=(g, g))
        field = ndimage.zoom(coarse, size / g, order=3)[:size, :size]
        field = np.tanh(1.5 * field / max(np.abs(field).max(), 1e-9))
    else:  # multi-octave noise
        field = np.zeros((size, size))
        for octave, w in zip((3, 5, 9), (1.0, 0.5, 0.25)):
            coarse = rng.normal(size=(octave, octave))
            field += w * ndimage.zoom(coarse, size / octave, order=3)[:size, :size]
        field /= max(np.abs(field).max(), 1e-9)
    return np.clip(field, -1.0, 1.0)


def make_identity(seed: int, size: int = 64):
    """Deterministic identity: (ShapeModel, albedo, mask, anchor landmarks)."""
    rng = np.random.default_rng(seed)
    c = (size - 1) / 2.0
    center = c + rng.uniform(-0.02, 0.02, 2) * size
    radii = size * rng.uniform(0.35, 0.41, 2)
    rz = size * rng.uniform(0.38, 0.48)
    bump_r = rng.uniform(0.0, 0.55, N_DEFORM_FIELDS)
    bump_a = rng.uniform(0, 2 * math.pi, N_DEFORM_FIELDS)
    bump_xy = np.stack(
        [
            center[0] + bump_r * np.cos(bump_a) * radii[0] * MASK_RHO,
            center[1] + bump_r * np.sin(bump_a) * radii[1] * MASK_RHO,
        ],
        axis=1,
    )
    shape = ShapeModel(
        size=size,
        center=center,
        radii=radii,
        rz=rz,
        rho=MASK_RHO,
        bump_xy=bump_xy,
        bump_sigma=size * rng.uniform(0.07, 0.16, N_DEFORM_FIELDS),
        bump_amp=rz * rng.uniform(0.03, 0.07, N_DEFORM_FIELDS) * rng.choice([-1.0, 1.0], N_DEFORM_FIELDS),
    )

    base = rng.uniform(0.3, 0.8, 3)
    style_id = int(rng.integers(0, N_TEXTURE_STYLES))
    field = _texture_field(style_id, size)
    chan_w = rng.uniform(0.5, 1.0, 3)
    albedo = base[None, None, :] * (1.0 + 0.28 * chan_w[None, None, :] * field[:, :, None])
    albedo = Image(np.clip(albedo, 0.05, 0.95))

    rest = PosedShape(shape, Pose(), np.zeros(N_DEFORM_FIELDS))
    _, mask = rest.geometry()

    # anchors: an outer ring plus two bars, all attached to the surface
    ring_t = np.linspace(0, 2 * math.pi, 10, endpoint=False)
    ring = np.stack(
        [center[0] + 0.72 * MASK_RHO * radii[0] * np.cos(ring_t),
         center[1] + 0.72 * MASK_RHO * radii[1] * np.sin(ring_t)],
        axis=1,
    )
    bar_v = np.stack(
        [np.full(4, center[0]),
         center[1] + np.linspace(-0.45, 0.15, 4) * MASK_RHO * radii[1]],
        axis=1,
    )
    bar_h = np.stack(
        [center[0] + np.linspace(-0.35, 0.35, 4) * MASK_RHO * radii[0],
         np.full(4, center[1] + 0.45 * MASK_RHO * radii[1])],
        axis=1,
    )
    points = np.concatenate([ring, bar_v, bar_h], axis=0)
    groups = (tuple(range(10)) + (0,), tuple(range(10, 14)), tuple(range(14, 18)))
    anchors = LandmarkSet(points, groups)
    return shape, albedo, mask, anchors


def sample_lighting(seed: int, max_attempts: int = 100) -> SceneLight:
    """SH lighting with shading >= 0.02 over the whole visible hemisphere."""
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        l = np.zeros((9, 3))
        l[0] = rng.uniform(0.6, 1.1, 3)
        l[1:4] = rng.uniform(-0.35, 0.35, (3, 3))
        l[4:9] = rng.uniform(-0.15, 0.15, (5, 3))
        if (_HEMI_BASIS @ l).min() >= MIN_HEMISPHERE_SHADING:
            key = np.array([l[3].mean(), l[1].mean(), l[2].mean()])
            nrm = np.linalg.norm(key)
            key = key / nrm if nrm >= 1e-3 else np.array([0.0, 0.0, 1.0])
            return SceneLight(ShLighting(l), key)
    raise LightingError(f"no valid lighting after {max_attempts} attempts")


def key_direction_of(l: ShLighting) -> np.ndarray:
    """Dominant direction from the linear SH band, (0,0,1) when degenerate."""
    key = np.array([l.coeffs[3].mean(), l.coeffs[1].mean(), l.coeffs[2].mean()])
    nrm = np.linalg.norm(key)
    return key / nrm if nrm >= 1e-3 else np.array([0.0, 0.0, 1.0])


def pose_frame(shape: ShapeModel, pose: Pose, weights, anchors: LandmarkSet, enforce_limits: bool = True):
    """(NormalMap, LandmarkSet, Mask) of the deformed, posed surface.

    The 30-degree / scale limits guard the generator's sampling envelope;
    tests may disable them to probe exact large-rotation behavior.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (N_DEFORM_FIELDS,):
        raise ValueError(f"expected {N_DEFORM_FIELDS} deformation weights")
    if enforce_limits:
        if abs(pose.theta) > math.radians(30.0) + 1e-9:
            raise PoseError("in-plane rotation exceeds 30 degrees")
        if not 0.8 <= pose.scale <= 1.25:
            raise PoseError("scale outside [0.8, 1.25]")
    posed = PosedShape(shape, pose, weights)
    normals, mask = posed.geometry()
    return normals, _project_anchors(posed, anchors), mask


def _project_anchors(posed: PosedShape, anchors: LandmarkSet) -> LandmarkSet:
    x, y = posed.forward_map(anchors.points[:, 0], anchors.points[:, 1])
    return LandmarkSet(np.stack([x, y], axis=1), anchors.groups)


def make_residual(posed: PosedShape, n: NormalMap, m: Mask, light: SceneLight, i_l: Image) -> Image:
    """Global-illumination residual: cast shadow + Blinn-Phong highlight.

    Shadow: march from each surface point toward the key light; points whose
    ray passes under the heightfield lose SHADOW_STRENGTH of their local
    image. Highlight is added where unoccluded. Output clipped to [-1, 1].
    """
    if (i_l.height, i_l.width) != (m.height, m.width):
        raise ValueError("dimension mismatch")
    size = posed.shape.size
    d = light.key_direction
    occluded = np.zeros((size, size), dtype=bool)
    dx, dy_pix, dz = d[0], -d[1], d[2]  # y-up world -> y-down pixels
    horiz = math.hypot(dx, dy_pix)
    if horiz > 1e-6 and m.valid.any():
        ys, xs = np.nonzero(m.valid)
        xs = xs.astype(np.float64)
        ys = ys.astype(np.float64)
        z0 = posed.height(xs, ys)
        step = 0.7 / horiz
        n_steps = int(math.ceil(size * 1.6 * horiz / 0.7)) + 1
        occ = np.zeros(xs.shape, dtype=bool)
        for j in range(1, n_steps + 1):
            t = j * step
            hx = xs + t * dx
            hy = ys + t * dy_pix
            inb = (hx >= 0) & (hx <= size - 1) & (hy >= 0) & (hy <= size - 1)
            if not inb.any():
                break
            occ |= inb & (posed.height(hx, hy) > z0 + t * dz + 0.5)
        occluded[m.valid] = occ

    shadow = -SHADOW_STRENGTH * i_l.data * occluded[:, :, None]
    half = d + np.array([0.0, 0.0, 1.0])
    half /= np.linalg.norm(half)
    spec = np.maximum(0.0, n.vectors @ half) ** HIGHLIGHT_EXPONENT
    spec = HIGHLIGHT_STRENGTH * spec * (m.valid & ~occluded)
    r = np.clip(shadow + spec[:, :, None], -1.0, 1.0)
    return Image(r, residual=True)


def gen_sequence(seed: int, n_frames: int, size: int = 64, deform_scale: float = 1.0) -> FrameSequence:
    """A deterministic same-identity sequence with full ground truth."""
    if n_frames < 2:
        raise ValueError("a sequence needs at least 2 frames")
    shape, albedo, _, anchors = make_identity(seed, size)
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_frames, size]))
    frames = []
    for _ in range(n_frames):
        for _attempt in range(50):
            pose = Pose(
                theta=rng.uniform(-math.radians(15), math.radians(15)),
                tx=rng.uniform(-0.04, 0.04) * size,
                ty=rng.uniform(-0.04, 0.04) * size,
                scale=rng.uniform(0.9, 1.12),
            )
            weights = deform_scale * rng.uniform(-0.7, 0.7, N_DEFORM_FIELDS)
            try:
                posed = PosedShape(shape, pose, weights)
                normals, mask = posed.geometry()
                break
            except PoseError:
                continue
        else:
            raise PoseError("pose resampling exhausted")
        landmarks = _project_anchors(posed, anchors)
        light = sample_lighting(int(rng.integers(0, 2**31)))

        # albedo rides the surface: resample the base map through the pose
        qy, qx = np.mgrid[0:size, 0:size].astype(np.float64)
        px, py = posed._inverse_map(qx, qy)
        warped = np.stack(
            [ndimage.map_coordinates(albedo.data[:, :, ch], [py, px], order=1, cval=0.0) for ch in range(3)],
            axis=2,
        )
        frame_albedo = Image(np.clip(warped, 0.0, None) * mask.valid[:, :, None])

        i_l = render_local(frame_albedo, normals, light.sh, mask)
        resid = make_residual(posed, normals, mask, light, i_l)
        i_g = render_global(i_l, resid)
        frames.append(
            FrameRecord(
                image_global=i_g,
                mask=mask,
                landmarks=landmarks,
                gt=GroundTruth(
                    albedo=frame_albedo,
                    normal=normals,
                    lighting=light.sh,
                    residual=resid,
                    image_local=i_l,
                ),
            )
        )
    return FrameSequence(identity=f"synth-{seed:08d}", frames=tuple(frames))
