"""Generate a seeded synthetic benchmark set on disk.

Usage: python scripts/make_dataset.py --out /tmp/faces --identities 10 --frames 4 --size 64
"""

import argparse
from pathlib import Path

from facedecomp.io import save_sequence
from facedecomp.synth import gen_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--identities", type=int, default=10)
    ap.add_argument("--frames", type=int, default=4)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--deform-scale", type=float, default=1.0)
    args = ap.parse_args()

    for k in range(args.identities):
        seq = gen_sequence(args.seed + k, args.frames, size=args.size, deform_scale=args.deform_scale)
        manifest = save_sequence(seq, args.out / f"identity{k:03d}")
        print(manifest)


if __name__ == "__main__":
    main()
