"""Quantitative evaluation: normal angular-error statistics with threshold
percentages, reconstruction error, and scale-invariant albedo error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .core import Image, Mask, NormalMap, check_unit_normals, masked_l1

ANGLE_THRESHOLDS_DEG = (20, 25, 30)


@dataclass(frozen=True)
class NormalErrorStats:
    mean_deg: float
    std_deg: float
    pct_under: Dict[int, float]
    n_pixels: int

    def as_dict(self):
        return {
            "mean_deg": self.mean_deg,
            "std_deg": self.std_deg,
            "pct_under": {str(k): v for k, v in self.pct_under.items()},
            "n_pixels": self.n_pixels,
        }


def angular_errors_deg(pred: NormalMap, gt: NormalMap, m: Mask) -> np.ndarray:
    """Per-valid-pixel angular error in degrees."""
    if (pred.height, pred.width) != (gt.height, gt.width) or (pred.height, pred.width) != (m.height, m.width):
        raise ValueError("dimension mismatch")
    check_unit_normals(pred, m)
    check_unit_normals(gt, m)
    dots = np.clip((pred.vectors * gt.vectors).sum(axis=2), -1.0, 1.0)
    return np.degrees(np.arccos(dots[m.valid]))


def angular_stats(pred: NormalMap, gt: NormalMap, m: Mask) -> NormalErrorStats:
    """Mean, population std, and strict-inequality threshold percentages."""
    err = angular_errors_deg(pred, gt, m)
    if err.size == 0:
        raise ValueError("no valid pixels")
    return NormalErrorStats(
        mean_deg=float(err.mean()),
        std_deg=float(err.std()),  # population std
        pct_under={t: float(100.0 * (err < t).mean()) for t in ANGLE_THRESHOLDS_DEG},
        n_pixels=int(err.size),
    )


def recon_metrics(pred: Image, gt: Image, m: Mask) -> Dict[str, float]:
    """Masked L1 plus PSNR; identical inputs report PSNR = +inf."""
    if m.count == 0:
        raise ValueError("no valid pixels")
    l1 = masked_l1(pred, gt, m)
    mse = float(((pred.data - gt.data) ** 2)[m.valid].mean())
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return {"l1": l1, "psnr_db": psnr}


def albedo_error_scale_invariant(pred: Image, gt: Image, m: Mask) -> float:
    """Masked L1 after removing the per-channel scalar that best (least
    squares) matches pred to gt, compensating the albedo/lighting gauge."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ValueError("dimension mismatch")
    if m.count == 0:
        raise ValueError("no valid pixels")
    p = pred.data[m.valid]
    g = gt.data[m.valid]
    energy = (p * p).sum(axis=0)
    if np.any(energy <= 1e-12):
        raise ValueError("prediction has a zero channel on the mask")
    s = (p * g).sum(axis=0) / energy
    return float(np.abs(p * s[None, :] - g).mean())
