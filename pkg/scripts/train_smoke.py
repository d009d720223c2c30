#!/usr/bin/env python3
"""Run the 2000-iteration training smoke on the synthetic corpus.

Prints the first/last-100 loss means and the held-out x2 PSNR against a
random-weights baseline; exits nonzero if the smoke thresholds are missed.
"""

import argparse
import sys
import tempfile
import time

import numpy as np

from diif.decoder import decode_image
from diif.encoder import FeatureMap, unfold_encode
from diif.geometry import build_plan, make_grid
from diif.pipeline import (
    TrainConfig,
    bicubic_resample,
    make_synthetic_corpus,
    psnr,
    synth_image,
    train,
    weight_init,
)


def held_out_psnr(weights, radius: int = 1) -> float:
    hr = synth_image(999, 48, 48)
    lr = bicubic_resample(hr, 24, 24)
    f = unfold_encode(lr, radius)
    fmap = FeatureMap(f.height, f.width, f.depth, f.data.astype(np.float32))
    plan = build_plan(make_grid(48, 48), fmap.grid(), "linear", 1, 2.0)
    out = decode_image(fmap, plan, weights)
    return psnr(np.clip(out, 0.0, 1.0), hr)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default=None, help="optional weights output path")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as d:
        make_synthetic_corpus(d, count=8, size=96, seed=0)
        cfg = TrainConfig(data_dir=d, iters=args.iters, seed=args.seed,
                          crop=24, batch=4)
        t0 = time.perf_counter()
        result = train(cfg)
        dt = time.perf_counter() - t0

    first = float(np.mean(result.losses[:100]))
    last = float(np.mean(result.losses[-100:]))
    p_trained = held_out_psnr(result.weights)
    p_random = held_out_psnr(weight_init(cfg.architecture(), seed=1))
    print(f"{args.iters} iters in {dt:.1f}s")
    print(f"loss first-100 {first:.5f}, last-100 {last:.5f} (ratio {last / first:.3f})")
    print(f"held-out x2 PSNR: trained {p_trained:.2f} dB vs random {p_random:.2f} dB")
    if args.out:
        from diif.decoder import save_weights

        save_weights(args.out, result.weights)
        print(f"wrote {args.out}")
    ok = last <= 0.7 * first and p_trained - p_random >= 5.0
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
