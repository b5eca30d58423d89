"""Inverse face rendering by per-instance energy minimization: decompose
images into albedo, normals, second-order SH lighting, and a global
illumination residual, with cross-frame consistency for video clips."""

from .core import (
    FrameRecord,
    FrameSequence,
    GroundTruth,
    Image,
    LandmarkSet,
    Mask,
    NormalMap,
    ShLighting,
    apply_mask,
    masked_l1,
)
from .shading import render_global, render_local, shade, sh_basis
from .solver import Decomposition, SolverConfig, default_init, energy_weak, gauge_fix, solve

__all__ = [
    "FrameRecord", "FrameSequence", "GroundTruth", "Image", "LandmarkSet",
    "Mask", "NormalMap", "ShLighting", "apply_mask", "masked_l1",
    "render_global", "render_local", "shade", "sh_basis",
    "Decomposition", "SolverConfig", "default_init", "energy_weak",
    "gauge_fix", "solve",
]

__version__ = "0.1.0"
