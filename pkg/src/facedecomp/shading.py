"""Second-order spherical-harmonic Lambertian shading and the two-stage
image formation model, with analytic derivatives for the solver.

The basis is the real SH basis scaled by the clamped-cosine convolution
weights (pi, 2*pi/3, pi/4), evaluated at a unit normal:

    b = [c0,
         c1 * ny, c1 * nz, c1 * nx,
         c2 * nx * ny, c2 * ny * nz,
         c3 * (3 * nz**2 - 1),
         c2 * nx * nz,
         c4 * (nx**2 - ny**2)]

Shading is b @ L per channel; the local-illumination image is albedo times
shading; the global image adds a residual map and clamps at zero. There is
deliberately no clamp inside shading itself: the model stays bilinear so
its gradients are exact.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .core import Image, Mask, NormalMap, ShLighting, check_unit_normals

C0 = 0.886227
C1 = 1.023328
C2 = 0.858086
C3 = 0.247708
C4 = 0.429043

SH_DIM = 9


def sh_basis_array(normals: np.ndarray) -> np.ndarray:
    """Evaluate the 9-vector basis at each normal in an (..., 3) array."""
    nx, ny, nz = normals[..., 0], normals[..., 1], normals[..., 2]
    b = np.empty(normals.shape[:-1] + (SH_DIM,), dtype=np.float64)
    b[..., 0] = C0
    b[..., 1] = C1 * ny
    b[..., 2] = C1 * nz
    b[..., 3] = C1 * nx
    b[..., 4] = C2 * nx * ny
    b[..., 5] = C2 * ny * nz
    b[..., 6] = C3 * (3.0 * nz**2 - 1.0)
    b[..., 7] = C2 * nx * nz
    b[..., 8] = C4 * (nx**2 - ny**2)
    return b


def sh_basis(n) -> np.ndarray:
    """Basis at a single unit 3-vector; rejects non-unit input."""
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (3,):
        raise ValueError("expected a 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > 1e-5:
        raise ValueError("normal must be unit length")
    return sh_basis_array(n)


def sh_basis_jacobian(normals: np.ndarray) -> np.ndarray:
    """d(basis)/d(normal): (..., 9, 3) for an (..., 3) array of normals."""
    nx, ny, nz = normals[..., 0], normals[..., 1], normals[..., 2]
    J = np.zeros(normals.shape[:-1] + (SH_DIM, 3), dtype=np.float64)
    J[..., 1, 1] = C1
    J[..., 2, 2] = C1
    J[..., 3, 0] = C1
    J[..., 4, 0] = C2 * ny
    J[..., 4, 1] = C2 * nx
    J[..., 5, 1] = C2 * nz
    J[..., 5, 2] = C2 * ny
    J[..., 6, 2] = C3 * 6.0 * nz
    J[..., 7, 0] = C2 * nz
    J[..., 7, 2] = C2 * nx
    J[..., 8, 0] = C4 * 2.0 * nx
    J[..., 8, 1] = -C4 * 2.0 * ny
    return J


def shade(n: NormalMap, l: ShLighting, m: Mask) -> Image:
    """Per-pixel shading b(n) @ L on valid pixels, zero elsewhere."""
    if (n.height, n.width) != (m.height, m.width):
        raise ValueError("normal map / mask dimension mismatch")
    check_unit_normals(n, m)
    b = sh_basis_array(n.vectors)
    s = b @ l.coeffs
    s *= m.valid[:, :, None]
    return Image(s, residual=True)  # shading may be negative pre-render


def render_local(a: Image, n: NormalMap, l: ShLighting, m: Mask) -> Image:
    """Local-illumination image: albedo times shading, element-wise."""
    if (a.height, a.width) != (n.height, n.width):
        raise ValueError("albedo / normal dimension mismatch")
    s = shade(n, l, m)
    return Image(a.data * s.data, residual=True)


def render_global(i_l: Image, r: Image) -> Image:
    """Global image: local illumination plus residual, clamped below at 0
    (never above: residuals may legitimately brighten past i_l)."""
    if (i_l.height, i_l.width) != (r.height, r.width):
        raise ValueError("dimension mismatch")
    return Image(np.maximum(i_l.data + r.data, 0.0))


def shade_gradients(n: NormalMap, l: ShLighting, m: Mask) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic partials of shade.

    Returns (d_shading_d_normal, d_shading_d_lighting) where the first is
    (H, W, 3, 3) indexed [channel, normal component] and the second is the
    per-pixel basis (H, W, 9): d shading(p, c) / d l[k][c] = basis[p, k].
    Derivatives are taken w.r.t. the raw normal components, before any
    unit-renormalization projection. Invalid pixels are zero.
    """
    if (n.height, n.width) != (m.height, m.width):
        raise ValueError("normal map / mask dimension mismatch")
    check_unit_normals(n, m)
    J = sh_basis_jacobian(n.vectors)  # (H, W, 9, 3)
    dN = np.einsum("hwkd,kc->hwcd", J, l.coeffs)
    b = sh_basis_array(n.vectors)
    v = m.valid[:, :, None]
    return dN * v[..., None], b * v
