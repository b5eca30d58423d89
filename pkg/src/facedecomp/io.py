"""Bit-exact file encodings: 16-bit PNG rasters, JSON sidecars, manifests.

Color images are linear 16-bit RGB PNG. Residual images use the affine
encoding v = round((r + 1) / 2 * 65535). Masks are 8-bit single channel
(0 invalid, 255 valid). All writes go through a temp-file rename so a
crashed run never leaves a half-written file behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .core import (
    FrameRecord,
    FrameSequence,
    GroundTruth,
    Image,
    LandmarkSet,
    Mask,
    NormalMap,
    ShLighting,
    decode_normals,
    encode_normals,
)


def _atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _png_bytes(raster: np.ndarray) -> bytes:
    if raster.ndim == 3:
        raster = raster[:, :, ::-1]  # cv2 encodes BGR
    ok, buf = cv2.imencode(".png", raster)
    if not ok:
        raise IOError("PNG encoding failed")
    return buf.tobytes()


def _read_png(path: Path, flags=cv2.IMREAD_UNCHANGED) -> np.ndarray:
    raster = cv2.imread(str(path), flags)
    if raster is None:
        raise IOError(f"cannot read {path}")
    if raster.ndim == 3:
        raster = raster[:, :, ::-1]
    return raster


def save_image(path, img: Image) -> None:
    d = img.data
    if img.residual:
        d = (d + 1.0) / 2.0
    v = np.floor(np.clip(d, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    _atomic_write_bytes(path, _png_bytes(v))


def load_image(path, residual: bool = False) -> Image:
    raster = _read_png(Path(path))
    if raster.ndim != 3 or raster.dtype != np.uint16:
        raise IOError(f"{path}: expected 16-bit RGB PNG")
    d = raster.astype(np.float64) / 65535.0
    if residual:
        d = d * 2.0 - 1.0
    return Image(d, residual=residual)


def save_mask(path, m: Mask) -> None:
    _atomic_write_bytes(path, _png_bytes(np.where(m.valid, 255, 0).astype(np.uint8)))


def load_mask(path) -> Mask:
    raster = _read_png(Path(path), cv2.IMREAD_GRAYSCALE)
    return Mask(raster > 127)


def save_normal_map(path, n: NormalMap, m: Optional[Mask] = None) -> None:
    _atomic_write_bytes(path, _png_bytes(encode_normals(n, m)))


def load_normal_map(path) -> NormalMap:
    raster = _read_png(Path(path))
    if raster.ndim != 3 or raster.dtype != np.uint16:
        raise IOError(f"{path}: expected 16-bit RGB PNG")
    return NormalMap(decode_normals(raster))


def save_lighting(path, l: ShLighting) -> None:
    payload = json.dumps([[float(v) for v in row] for row in l.coeffs], indent=1)
    _atomic_write_bytes(path, payload.encode())


def load_lighting(path) -> ShLighting:
    with open(path) as f:
        rows = json.load(f)
    return ShLighting(np.asarray(rows, dtype=np.float64))


def save_landmarks(path, lm: LandmarkSet) -> None:
    payload = json.dumps(
        {
            "points": [[float(x), float(y)] for x, y in lm.points],
            "groups": [list(g) for g in lm.groups],
        },
        indent=1,
    )
    _atomic_write_bytes(path, payload.encode())


def load_landmarks(path) -> LandmarkSet:
    with open(path) as f:
        d = json.load(f)
    return LandmarkSet(np.asarray(d["points"], dtype=np.float64), tuple(tuple(g) for g in d["groups"]))


_GT_KEYS = ("albedo", "normal", "lighting", "residual", "image_local")


def save_sequence(seq: FrameSequence, outdir) -> Path:
    """Write every frame component plus a manifest; returns the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    frames = []
    for k, fr in enumerate(seq.frames):
        stem = f"frame{k:03d}"
        entry = {
            "image_global": f"{stem}_image_global.png",
            "mask": f"{stem}_mask.png",
            "landmarks": f"{stem}_landmarks.json",
        }
        save_image(outdir / entry["image_global"], fr.image_global)
        save_mask(outdir / entry["mask"], fr.mask)
        save_landmarks(outdir / entry["landmarks"], fr.landmarks)
        if fr.gt is not None:
            entry.update(
                albedo=f"{stem}_albedo.png",
                normal=f"{stem}_normal.png",
                lighting=f"{stem}_lighting.json",
                residual=f"{stem}_residual.png",
                image_local=f"{stem}_image_local.png",
            )
            save_image(outdir / entry["albedo"], fr.gt.albedo)
            save_normal_map(outdir / entry["normal"], fr.gt.normal, fr.mask)
            save_lighting(outdir / entry["lighting"], fr.gt.lighting)
            save_image(outdir / entry["residual"], fr.gt.residual)
            save_image(outdir / entry["image_local"], fr.gt.image_local)
        frames.append(entry)
    manifest = outdir / "manifest.json"
    _atomic_write_bytes(manifest, json.dumps({"identity": seq.identity, "frames": frames}, indent=1).encode())
    return manifest


def load_sequence(manifest_path) -> FrameSequence:
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        man = json.load(f)
    root = manifest_path.parent
    frames = []
    for entry in man["frames"]:
        gt = None
        if all(k in entry for k in _GT_KEYS):
            gt = GroundTruth(
                albedo=load_image(root / entry["albedo"]),
                normal=load_normal_map(root / entry["normal"]),
                lighting=load_lighting(root / entry["lighting"]),
                residual=load_image(root / entry["residual"], residual=True),
                image_local=load_image(root / entry["image_local"]),
            )
        frames.append(
            FrameRecord(
                image_global=load_image(root / entry["image_global"]),
                mask=load_mask(root / entry["mask"]),
                landmarks=load_landmarks(root / entry["landmarks"]),
                gt=gt,
            )
        )
    return FrameSequence(identity=man["identity"], frames=tuple(frames))


def save_json(path, obj) -> None:
    _atomic_write_bytes(path, json.dumps(obj, indent=1, sort_keys=True).encode())
