#!/usr/bin/env python3
"""Generate the deterministic synthetic training corpus.

The corpus is procedural (seeded gaussian blobs + low-frequency waves), so
it can be regenerated anywhere without shipping image assets.
"""

import argparse

from diif.pipeline import make_synthetic_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/synth", help="output directory")
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    paths = make_synthetic_corpus(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")


if __name__ == "__main__":
    main()
