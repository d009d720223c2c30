#!/usr/bin/env python3
"""Sweep decode cost over scales and fit the log-log scaling exponents.

Reproduces the efficiency trends: per-pixel reference cost grows ~s^2,
linear-order coarse cost ~s^1, constant-order coarse cost ~s^0.
"""

import argparse

import numpy as np

from diif.costmodel import count_macs, fit_scaling_exponent, write_cost_csv
from diif.decoder import Architecture
from diif.geometry import build_plan, make_grid


def sweep(arch, h, w, scales, strategy, n):
    latent = make_grid(h, w)
    reports = []
    for s in scales:
        out = make_grid(int(np.floor(s * h)), int(np.floor(s * w)))
        reports.append(count_macs(arch, build_plan(out, latent, strategy, n, float(s))))
    return reports


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--height", type=int, default=180)
    ap.add_argument("--width", type=int, default=320)
    ap.add_argument("--scales", default="2,4,8,16,32")
    ap.add_argument("--depth", type=int, default=27, help="feature depth")
    ap.add_argument("--csv", default=None, help="optional CSV output (linear sweep)")
    args = ap.parse_args()

    scales = [float(t) for t in args.scales.split(",")]
    arch = Architecture(args.depth)

    linear = sweep(arch, args.height, args.width, scales, "linear", 1)
    constant = sweep(arch, args.height, args.width, scales, "constant", 1)

    ref_fit = fit_scaling_exponent([(r.scale, r.reference_macs) for r in linear])
    lin_fit = fit_scaling_exponent([(r.scale, r.coarse_macs) for r in linear])
    con_fit = fit_scaling_exponent([(r.scale, r.coarse_macs) for r in constant])
    print(f"reference decoder slope: {ref_fit.slope:.4f} (residual {ref_fit.residual:.2e})")
    print(f"linear-order coarse slope: {lin_fit.slope:.4f} (residual {lin_fit.residual:.2e})")
    print(f"constant-order coarse slope: {con_fit.slope:.4f} (residual {con_fit.residual:.2e})")
    for r in linear:
        print(f"  x{r.scale:g}: total {r.total_macs}, reference {r.reference_macs}, "
              f"ratio {r.reference_macs / r.total_macs:.2f}")
    if args.csv:
        write_cost_csv(args.csv, linear)
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
