"""End-to-end demo: generate a sequence, decompose it, evaluate, relight.

Usage: python scripts/run_pipeline_demo.py --workdir /tmp/demo [--size 48] [--iters 200]
"""

import argparse
import json
from pathlib import Path

from facedecomp.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=48)
    ap.add_argument("--frames", type=int, default=3)
    ap.add_argument("--iters", type=int, default=200)
    args = ap.parse_args()

    wd = args.workdir
    stages = json.dumps([["local", args.iters], ["residual", args.iters], ["consistency", args.iters]])
    steps = [
        ["gen", "--seed", str(args.seed), "--identities", "1", "--frames", str(args.frames),
         "--size", str(args.size), "--out", str(wd / "data")],
        ["decompose", "--manifest", str(wd / "data" / "identity000" / "manifest.json"),
         "--set", f"stages={stages}", "--set", "lr=0.005", "--out", str(wd / "decomp")],
        ["eval", "--pred-dir", str(wd / "decomp"),
         "--manifest", str(wd / "data" / "identity000" / "manifest.json"),
         "--out", str(wd / "metrics.json")],
        ["relight", "--decomp", str(wd / "decomp"), "--frame", "0",
         "--target-lighting", str(wd / "decomp" / "frame001_lighting.json"),
         "--keep-residual", "--out", str(wd / "relit.png")],
    ]
    for argv in steps:
        print("$ facedecomp " + " ".join(argv))
        rc = cli(argv)
        if rc != 0:
            raise SystemExit(rc)
    agg = json.loads((wd / "metrics.json").read_text())["aggregate"]
    print(json.dumps(agg, indent=2))


if __name__ == "__main__":
    main()
