"""Command-line surface: gen / decompose / eval / relight / edit-albedo.

Every subcommand is deterministic given its flags and seed. Precedence for
solver settings is defaults < config file (--config JSON) < flags. Errors
exit nonzero with a single machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io as _stdio
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .core import FrameSequence, Image, Mask, masked_l1
from .metrics import albedo_error_scale_invariant, angular_stats, recon_metrics
from .shading import render_global, render_local
from .solver import Decomposition, SolverConfig, gauge_fix, solve
from .synth import gen_sequence


def _thread_env():
    n = os.environ.get("FACEDECOMP_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="facedecomp", description="Inverse face rendering toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--identities", type=int, default=1)
    g.add_argument("--frames", type=int, default=4)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--out", required=True)

    d = sub.add_parser("decompose", help="decompose a sequence manifest")
    d.add_argument("--manifest", required=True)
    d.add_argument("--config", help="JSON file with SolverConfig overrides")
    d.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single SolverConfig field (wins over --config)")
    d.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate predictions against ground truth")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)

    r = sub.add_parser("relight", help="re-render a decomposition under new lighting")
    r.add_argument("--decomp", required=True, help="directory written by decompose")
    r.add_argument("--frame", type=int, default=0)
    r.add_argument("--target-lighting", required=True, help="SH JSON file")
    r.add_argument("--keep-residual", action="store_true",
                   help="retain the (lighting-dependent) residual map")
    r.add_argument("--out", required=True)

    a = sub.add_parser("edit-albedo", help="edit the albedo map and re-render")
    a.add_argument("--decomp", required=True)
    a.add_argument("--frame", type=int, default=0)
    a.add_argument("--edit-image", required=True)
    a.add_argument("--edit-mask", required=True)
    a.add_argument("--out", required=True)
    return p


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _solver_config(args) -> SolverConfig:
    overrides = {}
    if args.config:
        with open(args.config) as f:
            overrides.update(json.load(f))
    for item in args.set:
        key, _, raw = item.partition("=")
        if not _:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = _parse_value(raw)
    field_names = {f.name for f in dataclasses.fields(SolverConfig)}
    unknown = set(overrides) - field_names
    if unknown:
        raise ValueError(f"unknown SolverConfig fields: {sorted(unknown)}")
    if "stages" in overrides:
        overrides["stages"] = tuple((str(s), int(n)) for s, n in overrides["stages"])
    if "freeze" in overrides:
        overrides["freeze"] = tuple(overrides["freeze"])
    return SolverConfig(**overrides)


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.identities):
        seq = gen_sequence(args.seed + k, args.frames, size=args.size)
        fio.save_sequence(seq, out / f"identity{k:03d}")
    return 0


def _frame_stem(k: int) -> str:
    return f"frame{k:03d}"


def cmd_decompose(args) -> int:
    seq = fio.load_sequence(args.manifest)
    cfg = _solver_config(args)
    ds, reports = solve(seq, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, (d, fr) in enumerate(zip(ds, seq.frames)):
        d = gauge_fix(d, fr.mask)
        stem = _frame_stem(k)
        fio.save_image(out / f"{stem}_albedo.png", Image(np.clip(d.albedo.data, 0.0, 1.0)))
        fio.save_normal_map(out / f"{stem}_normal.png", d.normal, fr.mask)
        fio.save_lighting(out / f"{stem}_lighting.json", d.lighting)
        fio.save_image(out / f"{stem}_residual.png", d.residual)
        fio.save_mask(out / f"{stem}_mask.png", fr.mask)
    buf = _stdio.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["iteration", "term", "value"])
    for rep in reports:
        writer.writerow([rep.iteration, "total", f"{rep.total:.9g}"])
        for name, val in sorted(rep.terms.items()):
            writer.writerow([rep.iteration, name, f"{val:.9g}"])
    fio._atomic_write_bytes(out / "energy_trace.csv", buf.getvalue().encode())
    return 0


def _load_decomp(decomp_dir: Path, k: int):
    stem = _frame_stem(k)
    d = Decomposition(
        albedo=fio.load_image(decomp_dir / f"{stem}_albedo.png"),
        normal=fio.load_normal_map(decomp_dir / f"{stem}_normal.png"),
        lighting=fio.load_lighting(decomp_dir / f"{stem}_lighting.json"),
        residual=fio.load_image(decomp_dir / f"{stem}_residual.png", residual=True),
    )
    mask = fio.load_mask(decomp_dir / f"{stem}_mask.png")
    return d, mask


def cmd_eval(args) -> int:
    seq = fio.load_sequence(args.manifest)
    pred_dir = Path(args.pred_dir)
    per_frame = []
    pooled = {"n": 0, "sum_ang": 0.0, "sum_ang2": 0.0, "under": {20: 0, 25: 0, 30: 0},
              "sum_l1": 0.0, "sum_alb": 0.0}
    for k, fr in enumerate(seq.frames):
        if fr.gt is None:
            raise ValueError(f"frame {k} has no ground truth; nothing to evaluate")
        if not (pred_dir / f"{_frame_stem(k)}_albedo.png").exists():
            raise ValueError(f"missing prediction for frame {k} in {pred_dir}")
        d, _ = _load_decomp(pred_dir, k)
        stats = angular_stats(d.normal, fr.gt.normal, fr.mask)
        i_g = render_global(render_local(d.albedo, d.normal, d.lighting, fr.mask), d.residual)
        rec = recon_metrics(i_g, fr.image_global, fr.mask)
        alb = albedo_error_scale_invariant(d.albedo, fr.gt.albedo, fr.mask)
        per_frame.append({"frame": k, "normal": stats.as_dict(), "recon": rec, "albedo_si_l1": alb})
        n = stats.n_pixels
        pooled["n"] += n
        pooled["sum_ang"] += stats.mean_deg * n
        pooled["sum_ang2"] += (stats.std_deg**2 + stats.mean_deg**2) * n
        for t in (20, 25, 30):
            pooled["under"][t] += stats.pct_under[t] * n / 100.0
        pooled["sum_l1"] += rec["l1"] * n
        pooled["sum_alb"] += alb * n
    n = pooled["n"]
    mean = pooled["sum_ang"] / n
    var = max(pooled["sum_ang2"] / n - mean**2, 0.0)
    aggregate = {
        "normal": {
            "mean_deg": mean,
            "std_deg": var**0.5,
            "pct_under": {str(t): 100.0 * pooled["under"][t] / n for t in (20, 25, 30)},
            "n_pixels": n,
        },
        "recon_l1": pooled["sum_l1"] / n,
        "albedo_si_l1": pooled["sum_alb"] / n,
    }
    fio.save_json(args.out, {"per_frame": per_frame, "aggregate": aggregate})
    return 0


def cmd_relight(args) -> int:
    d, mask = _load_decomp(Path(args.decomp), args.frame)
    target = fio.load_lighting(args.target_lighting)
    i_l = render_local(d.albedo, d.normal, target, mask)
    if args.keep_residual:
        out = render_global(i_l, d.residual)
    else:
        out = Image(np.maximum(i_l.data, 0.0))
    fio.save_image(args.out, out)
    return 0


def cmd_edit_albedo(args) -> int:
    d, mask = _load_decomp(Path(args.decomp), args.frame)
    edit = fio.load_image(args.edit_image)
    edit_mask = fio.load_mask(args.edit_mask)
    if edit.shape != d.albedo.shape or (edit_mask.height, edit_mask.width) != (mask.height, mask.width):
        raise ValueError("edit image/mask dimension mismatch")
    sel = edit_mask.valid[:, :, None]
    albedo = Image(np.where(sel, edit.data, d.albedo.data))
    out = render_global(render_local(albedo, d.normal, d.lighting, mask), d.residual)
    fio.save_image(args.out, out)
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "decompose": cmd_decompose,
    "eval": cmd_eval,
    "relight": cmd_relight,
    "edit-albedo": cmd_edit_albedo,
}


def main(argv=None) -> int:
    _thread_env()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # uniform machine-readable failure line
        print(json.dumps({"error": str(e), "command": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
