"""Per-instance inverse rendering as staged energy minimization.

Each frame owns four variable blocks: albedo, raw normals (normalized
inside the energy, so gradients chain through the normalization), SH
lighting, and the residual map. The energy combines the L1 reconstruction
term, total-variation / sparsity priors, and cross-frame albedo + normal
consistency through fixed landmark-driven warps. Optimization is Adam
(bias-corrected first and second moments, eps = 1e-8) with a stepwise
lr decay, run in three stages: reconstruction with the residual frozen,
then the residual unfrozen, then consistency terms switched on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    FrameRecord,
    FrameSequence,
    Image,
    Mask,
    NormalMap,
    ShLighting,
    masked_l1,
)
from .shading import render_global, render_local, sh_basis_array, sh_basis_jacobian
from .warp import bilinear_weights, estimate_warp

ADAM_EPS = 1e-8
BLOCKS = ("albedo", "normal", "lighting", "residual")


class SolverAbort(RuntimeError):
    """Raised when the energy turns non-finite; carries the last report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Decomposition:
    albedo: Image
    normal: NormalMap
    lighting: ShLighting
    residual: Image


@dataclass(frozen=True)
class EnergyReport:
    total: float
    terms: Dict[str, float]
    iteration: int


@dataclass(frozen=True)
class SolverConfig:
    lambda_g: float = 1.0
    lambda_ab: float = 0.5
    lambda_no: float = 0.5
    lambda_l: float = 1.0
    lambda_a: float = 1.0
    lambda_n: float = 1.0
    lambda_h: float = 1.0
    lambda_r: float = 1.0
    lambda_tv_albedo: float = 0.01
    lambda_tv_normal: float = 0.01
    lambda_res_l1: float = 0.05
    lambda_tv_residual: float = 0.01
    lr: float = 5e-4
    lr_decay: float = 0.98
    decay_every: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    stages: Tuple[Tuple[str, int], ...] = (("local", 500), ("residual", 500), ("consistency", 500))
    freeze: Tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        for name in (
            "lambda_g", "lambda_ab", "lambda_no", "lambda_l", "lambda_a", "lambda_n",
            "lambda_h", "lambda_r", "lambda_tv_albedo", "lambda_tv_normal",
            "lambda_res_l1", "lambda_tv_residual",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        for name in self.freeze:
            if name not in BLOCKS:
                raise ValueError(f"unknown block {name!r}")
        for stage, _ in self.stages:
            if stage not in ("local", "residual", "consistency"):
                raise ValueError(f"unknown stage {stage!r}")


# ---------------------------------------------------------------------------
# variable state

def _normalize(raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norm = np.maximum(np.linalg.norm(raw, axis=2, keepdims=True), 1e-12)
    return raw / norm, norm


def _vars_from_decomposition(d: Decomposition) -> Dict[str, np.ndarray]:
    return {
        "albedo": d.albedo.data.copy(),
        "normal": d.normal.vectors.copy(),
        "lighting": d.lighting.coeffs.copy(),
        "residual": d.residual.data.copy(),
    }


def _decomposition_from_vars(v: Dict[str, np.ndarray], valid: np.ndarray) -> Decomposition:
    n, _ = _normalize(v["normal"])
    n = np.where(valid[:, :, None], n, np.array([0.0, 0.0, 1.0]))
    return Decomposition(
        albedo=Image(np.clip(v["albedo"], 0.0, 2.0)),
        normal=NormalMap(n),
        lighting=ShLighting(v["lighting"]),
        residual=Image(np.clip(v["residual"], -1.0, 1.0), residual=True),
    )


@dataclass
class _PairWarp:
    src_frame: int
    dst_frame: int
    tgt_flat: np.ndarray   # (n,) flat target pixel indices
    idx: np.ndarray        # (n, 4) flat source neighbor indices
    wgt: np.ndarray        # (n, 4)
    theta: np.ndarray      # (n,)


def _build_pair_warps(frames: FrameSequence) -> List[_PairWarp]:
    pairs = []
    n = len(frames)
    for i in range(n - 1):
        for a, b in ((i, i + 1), (i + 1, i)):
            fa, fb = frames.frames[a], frames.frames[b]
            h, w = fa.mask.height, fa.mask.width
            wf = estimate_warp(fa.landmarks, fb.landmarks, w, h)
            idx_all, wgt_all = bilinear_weights(wf.src, wf.valid, w, h)
            cov = np.zeros((h, w))
            cov[wf.valid] = (fa.mask.valid.ravel()[idx_all] * wgt_all).sum(axis=1)
            # interior-only: triangles touching the self-mapping raster
            # anchors dilute the correspondence, so skip them
            combined = wf.interior & (cov >= 1.0 - 1e-9) & fb.mask.valid
            keep = combined[wf.valid]
            pairs.append(
                _PairWarp(
                    src_frame=a,
                    dst_frame=b,
                    tgt_flat=np.flatnonzero(combined.ravel()),
                    idx=idx_all[keep],
                    wgt=wgt_all[keep],
                    theta=wf.theta[combined],
                )
            )
    return pairs


# ---------------------------------------------------------------------------
# energy + analytic gradient

def _tv_pairs(valid: np.ndarray):
    hv = valid[:, :-1] & valid[:, 1:]
    vv = valid[:-1, :] & valid[1:, :]
    return hv, vv, int(hv.sum() + vv.sum())


def _tv_value_grad(x: np.ndarray, valid: np.ndarray, weight: float):
    """Anisotropic TV: mean |neighbor diff| over valid pairs and channels."""
    hv, vv, n_pairs = _tv_pairs(valid)
    if n_pairs == 0 or weight == 0.0:
        return 0.0, np.zeros_like(x)
    c = x.shape[2]
    dh = (x[:, 1:] - x[:, :-1]) * hv[:, :, None]
    dv = (x[1:, :] - x[:-1, :]) * vv[:, :, None]
    val = weight * (np.abs(dh).sum() + np.abs(dv).sum()) / (n_pairs * c)
    g = np.zeros_like(x)
    sh = weight * np.sign(dh) / (n_pairs * c)
    sv = weight * np.sign(dv) / (n_pairs * c)
    g[:, 1:] += sh
    g[:, :-1] -= sh
    g[1:, :] += sv
    g[:-1, :] -= sv
    return float(val), g


def _energy_and_grads(
    frames: FrameSequence,
    fvars: List[Dict[str, np.ndarray]],
    cfg: SolverConfig,
    pair_warps: Optional[List[_PairWarp]],
    consistency_on: bool,
    want_grads: bool = True,
    active: Tuple[str, ...] = BLOCKS,
    geom_cache: Optional[List[Dict[str, np.ndarray]]] = None,
):
    n_frames = len(frames)
    terms = {
        "recon": 0.0,
        "tv_albedo": 0.0,
        "tv_normal": 0.0,
        "residual_l1": 0.0,
        "tv_residual": 0.0,
        "albedo_consistency": 0.0,
        "normal_consistency": 0.0,
    }
    grads = [{k: np.zeros_like(v[k]) for k in BLOCKS} for v in fvars] if want_grads else None
    unit_normals = []
    norm_scales = []

    for f in range(n_frames):
        fr = frames.frames[f]
        v = fvars[f]
        valid = fr.mask.valid
        vm = valid[:, :, None]
        count = int(valid.sum()) * 3
        A, L, R = v["albedo"], v["lighting"], v["residual"]
        if geom_cache is not None:
            # normals frozen for this stage: basis precomputed once
            Nn, norm, B = geom_cache[f]["Nn"], geom_cache[f]["norm"], geom_cache[f]["B"]
        else:
            Nn, norm = _normalize(v["normal"])
            B = sh_basis_array(Nn)  # (H, W, 9)
        unit_normals.append(Nn)
        norm_scales.append(norm)
        S = (B @ L) * vm
        I_l = A * S
        pre = I_l + R * vm
        I_pred = np.maximum(pre, 0.0)
        res = (I_pred - fr.image_global.data) * vm

        if count > 0:
            terms["recon"] += cfg.lambda_g * float(np.abs(res).sum()) / count
        tva, ga = _tv_value_grad(A, valid, cfg.lambda_tv_albedo)
        tvn, gn_tv = _tv_value_grad(Nn, valid, cfg.lambda_tv_normal)
        tvr, gr_tv = _tv_value_grad(R, valid, cfg.lambda_tv_residual)
        terms["tv_albedo"] += tva
        terms["tv_normal"] += tvn
        terms["tv_residual"] += tvr
        if count > 0 and cfg.lambda_res_l1 > 0:
            terms["residual_l1"] += cfg.lambda_res_l1 * float(np.abs(R[valid]).sum()) / count

        if not want_grads:
            continue
        g = grads[f]
        dNn = gn_tv
        if count > 0:
            d_pred = cfg.lambda_g * np.sign(res) * (pre > 0) / count
            if "albedo" in active:
                g["albedo"] += d_pred * S
            dS = d_pred * A
            if "lighting" in active:
                g["lighting"] += np.einsum("hwk,hwc->kc", B * vm, dS)
            if "normal" in active:
                J = sh_basis_jacobian(Nn)  # (H, W, 9, 3)
                dNn = dNn + np.einsum("hwkd,kc,hwc->hwd", J, L, dS * vm)
            if "residual" in active:
                g["residual"] += d_pred * vm
                if cfg.lambda_res_l1 > 0:
                    g["residual"] += cfg.lambda_res_l1 * np.sign(R) * vm / count
        if "albedo" in active:
            g["albedo"] += ga
        if "residual" in active:
            g["residual"] += gr_tv
        if "normal" in active:
            # chain dNn through the normalization of the raw normal block
            g["normal"] += (dNn - Nn * (Nn * dNn).sum(axis=2, keepdims=True)) / norm

    if consistency_on and pair_warps:
        for pw in pair_warps:
            if pw.tgt_flat.size == 0:
                continue
            n_pix = pw.tgt_flat.size
            vi, vj = fvars[pw.src_frame], fvars[pw.dst_frame]
            Ai = vi["albedo"].reshape(-1, 3)
            Aj = vj["albedo"].reshape(-1, 3)
            warped_a = np.einsum("nkc,nk->nc", Ai[pw.idx], pw.wgt)
            ra = Aj[pw.tgt_flat] - warped_a
            if cfg.lambda_ab > 0:
                terms["albedo_consistency"] += cfg.lambda_ab * float(np.abs(ra).sum()) / (n_pix * 3)

            Ni = unit_normals[pw.src_frame].reshape(-1, 3)
            Nj = unit_normals[pw.dst_frame].reshape(-1, 3)
            samp = np.einsum("nkc,nk->nc", Ni[pw.idx], pw.wgt)
            ct, st = np.cos(pw.theta), np.sin(pw.theta)
            rot = np.stack(
                [ct * samp[:, 0] - st * samp[:, 1], st * samp[:, 0] + ct * samp[:, 1], samp[:, 2]],
                axis=1,
            )
            rnorm = np.maximum(np.linalg.norm(rot, axis=1, keepdims=True), 1e-12)
            u = rot / rnorm
            rn = Nj[pw.tgt_flat] - u
            if cfg.lambda_no > 0:
                terms["normal_consistency"] += cfg.lambda_no * float(np.abs(rn).sum()) / (n_pix * 3)

            if not want_grads:
                continue
            if cfg.lambda_ab > 0 and "albedo" in active:
                sa = cfg.lambda_ab * np.sign(ra) / (n_pix * 3)
                gj = grads[pw.dst_frame]["albedo"].reshape(-1, 3)
                np.add.at(gj, pw.tgt_flat, sa)
                gi = grads[pw.src_frame]["albedo"].reshape(-1, 3)
                for k in range(4):
                    np.add.at(gi, pw.idx[:, k], -sa * pw.wgt[:, k][:, None])
            if cfg.lambda_no > 0 and "normal" in active:
                sn = cfg.lambda_no * np.sign(rn) / (n_pix * 3)
                # d/d Nn_j, chained through frame-j normalization
                dNnj = np.zeros_like(Nj)
                np.add.at(dNnj, pw.tgt_flat, sn)
                nj_unit = Nj
                proj = dNnj - nj_unit * (nj_unit * dNnj).sum(axis=1, keepdims=True)
                grads[pw.dst_frame]["normal"] += (
                    proj / norm_scales[pw.dst_frame].reshape(-1, 1)
                ).reshape(grads[pw.dst_frame]["normal"].shape)
                # d/d rot: through u = rot / |rot|
                du = -sn
                drot = (du - u * (u * du).sum(axis=1, keepdims=True)) / rnorm
                # undo the in-plane rotation
                dsamp = np.stack(
                    [ct * drot[:, 0] + st * drot[:, 1], -st * drot[:, 0] + ct * drot[:, 1], drot[:, 2]],
                    axis=1,
                )
                dNni = np.zeros_like(Ni)
                for k in range(4):
                    np.add.at(dNni, pw.idx[:, k], dsamp * pw.wgt[:, k][:, None])
                ni_unit = Ni
                proj_i = dNni - ni_unit * (ni_unit * dNni).sum(axis=1, keepdims=True)
                grads[pw.src_frame]["normal"] += (
                    proj_i / norm_scales[pw.src_frame].reshape(-1, 1)
                ).reshape(grads[pw.src_frame]["normal"].shape)

    total = float(sum(terms.values()))
    return total, terms, grads


def energy_weak(frames: FrameSequence, ds: Sequence[Decomposition], cfg: SolverConfig, iteration: int = 0) -> EnergyReport:
    """The full weakly-supervised objective (reconstruction + consistency +
    priors) evaluated at one decomposition per frame."""
    if len(ds) != len(frames):
        raise ValueError("need exactly one decomposition per frame")
    fvars = [_vars_from_decomposition(d) for d in ds]
    pair_warps = _build_pair_warps(frames)
    total, terms, _ = _energy_and_grads(frames, fvars, cfg, pair_warps, consistency_on=True, want_grads=False)
    return EnergyReport(total=total, terms=terms, iteration=iteration)


# ---------------------------------------------------------------------------
# supervised objectives (available when ground truth exists)

def loss_supervised_local(d: Decomposition, fr: FrameRecord, cfg: SolverConfig = SolverConfig()) -> float:
    """Weighted local-illumination losses against ground truth."""
    if fr.gt is None:
        raise ValueError("frame has no ground truth")
    gt = fr.gt
    i_l = render_local(d.albedo, d.normal, d.lighting, fr.mask)
    val = cfg.lambda_l * masked_l1(i_l, gt.image_local, fr.mask)
    val += cfg.lambda_a * masked_l1(d.albedo, gt.albedo, fr.mask)
    nv = np.abs(d.normal.vectors - gt.normal.vectors)[fr.mask.valid]
    val += cfg.lambda_n * float(nv.mean()) if nv.size else 0.0
    val += cfg.lambda_h * float(((d.lighting.coeffs - gt.lighting.coeffs) ** 2).mean())
    return float(val)


def loss_supervised_global(d: Decomposition, fr: FrameRecord, cfg: SolverConfig = SolverConfig()) -> float:
    """Global-image reconstruction + residual regression on top of the local losses."""
    if fr.gt is None:
        raise ValueError("frame has no ground truth")
    i_l = render_local(d.albedo, d.normal, d.lighting, fr.mask)
    i_g = render_global(i_l, d.residual)
    val = cfg.lambda_g * masked_l1(i_g, fr.image_global, fr.mask)
    val += cfg.lambda_r * masked_l1(d.residual, fr.gt.residual, fr.mask)
    return float(val + loss_supervised_local(d, fr, cfg))


# ---------------------------------------------------------------------------
# initialization and gauge

def default_init(frame: FrameRecord) -> Decomposition:
    """Cheap deterministic starting point: image as albedo, an ellipsoidal
    cap fitted to the mask bounding box as normals, DC lighting calibrated
    to unit mean shading, zero residual."""
    valid = frame.mask.valid
    if not valid.any():
        raise ValueError("empty mask")
    ys, xs = np.nonzero(valid)
    cx, cy = (xs.min() + xs.max()) / 2.0, (ys.min() + ys.max()) / 2.0
    rx = max((xs.max() - xs.min()) / 2.0, 1.0) * 1.05
    ry = max((ys.max() - ys.min()) / 2.0, 1.0) * 1.05
    rz = 0.75 * (rx + ry) / 2.0
    h, w = valid.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    root = np.sqrt(np.maximum(0.05, 1.0 - u))
    gx = -rz * (xx - cx) / (rx**2 * root)
    gy = -rz * (yy - cy) / (ry**2 * root)
    n = np.stack([-gx, gy, np.ones_like(gx)], axis=2)
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    n = np.where(valid[:, :, None], n, np.array([0.0, 0.0, 1.0]))
    l = np.zeros((9, 3))
    l[0] = 1.0 / 0.886227  # DC-only: mean shading over the mask is exactly 1
    return Decomposition(
        albedo=Image(frame.image_global.data.copy()),
        normal=NormalMap(n),
        lighting=ShLighting(l),
        residual=Image(np.zeros((h, w, 3)), residual=True),
    )


def gauge_fix(d: Decomposition, m: Mask) -> Decomposition:
    """Remove the albedo/lighting scale freedom: per channel, normalize the
    mean shading over the mask to 1. The rendered product is unchanged."""
    from .shading import shade

    s = shade(d.normal, d.lighting, m)
    if m.count == 0:
        raise ValueError("empty mask")
    means = s.data[m.valid].mean(axis=0)
    if np.any(np.abs(means) <= 1e-6):
        raise ValueError("near-zero mean shading; gauge is degenerate")
    albedo = d.albedo.data * means[None, None, :]
    lighting = d.lighting.coeffs / means[None, :]
    return replace(d, albedo=Image(np.clip(albedo, 0.0, None)), lighting=ShLighting(lighting))


# ---------------------------------------------------------------------------
# the staged solve

def _stage_options(stage: str):
    if stage == "local":
        return {"freeze_extra": ("residual",), "consistency": False}
    if stage == "residual":
        return {"freeze_extra": (), "consistency": False}
    return {"freeze_extra": (), "consistency": True}


def solve(
    frames: FrameSequence,
    cfg: SolverConfig,
    init: Optional[Sequence[Decomposition]] = None,
) -> Tuple[List[Decomposition], List[EnergyReport]]:
    """Staged first-order minimization; returns per-frame decompositions and
    the energy trace (one report every 10 iterations plus stage ends)."""
    n_frames = len(frames)
    if init is not None:
        if len(init) != n_frames:
            raise ValueError("init length mismatch")
        for d, fr in zip(init, frames.frames):
            if d.albedo.shape != fr.image_global.shape:
                raise ValueError("init dimension mismatch")
        fvars = [_vars_from_decomposition(d) for d in init]
    else:
        fvars = [_vars_from_decomposition(default_init(fr)) for fr in frames.frames]

    needs_pairs = any(s == "consistency" for s, _ in cfg.stages)
    pair_warps = _build_pair_warps(frames) if needs_pairs else None
    reports: List[EnergyReport] = []
    iteration = 0

    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for stage, n_iters in cfg.stages:
        opts = _stage_options(stage)
        frozen = set(cfg.freeze) | set(opts["freeze_extra"])
        active = [b for b in BLOCKS if b not in frozen]
        mstate = [{b: np.zeros_like(v[b]) for b in active} for v in fvars]
        vstate = [{b: np.zeros_like(v[b]) for b in active} for v in fvars]
        geom_cache = None
        if "normal" not in active:
            geom_cache = []
            for v in fvars:
                Nn, norm = _normalize(v["normal"])
                geom_cache.append({"Nn": Nn, "norm": norm, "B": sh_basis_array(Nn)})
        best = math.inf
        for it in range(n_iters):
            total, terms, grads = _energy_and_grads(
                frames, fvars, cfg, pair_warps, consistency_on=opts["consistency"],
                active=tuple(active), geom_cache=geom_cache,
            )
            report = EnergyReport(total=total, terms=dict(terms), iteration=iteration)
            if not math.isfinite(total):
                raise SolverAbort(f"non-finite energy at iteration {iteration}", report)
            best = min(best, total)
            if it % 10 == 0 or it == n_iters - 1:
                reports.append(report)
            lr = cfg.lr * cfg.lr_decay ** (it // cfg.decay_every)
            t = it + 1
            for f in range(n_frames):
                for b in active:
                    g = grads[f][b]
                    mstate[f][b] = b1 * mstate[f][b] + (1.0 - b1) * g
                    vstate[f][b] = b2 * vstate[f][b] + (1.0 - b2) * g * g
                    mhat = mstate[f][b] / (1.0 - b1**t)
                    vhat = vstate[f][b] / (1.0 - b2**t)
                    fvars[f][b] -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
                # projections keep the Decomposition invariants
                if "albedo" in active:
                    np.clip(fvars[f]["albedo"], 0.0, 2.0, out=fvars[f]["albedo"])
                if "residual" in active:
                    np.clip(fvars[f]["residual"], -1.0, 1.0, out=fvars[f]["residual"])
                if "normal" in active:
                    fvars[f]["normal"], _ = _normalize(fvars[f]["normal"])
            iteration += 1

    ds = [_decomposition_from_vars(v, fr.mask.valid) for v, fr in zip(fvars, frames.frames)]
    return ds, reports
