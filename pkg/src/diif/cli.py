"""argparse front end: upscale / train / bench / verify."""

from __future__ import annotations

import argparse
import logging
import math
import sys

from .errors import ConfigError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diif",
        description="Arbitrary-scale image upscaling with a sliced coarse-to-fine decoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    up = sub.add_parser("upscale", help="upscale a PNG by a real factor")
    up.add_argument("--input", required=True, help="input PNG path")
    up.add_argument("--scale", required=True, type=float, help="upscaling factor (>= 1)")
    up.add_argument("--out", default=None, help="output PNG path (default: <input>_x<scale>.png)")
    up.add_argument("--weights", required=True, help="decoder weights file")
    up.add_argument("--strategy", choices=["linear", "constant", "fixed"],
                    default="linear", help="slice interval strategy")
    up.add_argument("--n", type=int, default=1, help="interval order parameter")
    up.add_argument("--fixed-interval", type=int, default=None,
                    help="explicit interval for --strategy fixed (overrides --n)")
    up.add_argument("--no-ensemble", action="store_true",
                    help="require weights trained without the vertex ensemble")

    tr = sub.add_parser("train", help="train decoder weights on a directory of PNGs")
    tr.add_argument("--data", required=True, help="directory of training PNGs")
    tr.add_argument("--iters", required=True, type=int)
    tr.add_argument("--seed", required=True, type=int)
    tr.add_argument("--out", required=True, help="output weights file")
    tr.add_argument("--crop", type=int, default=48, help="HR crop size")

    be = sub.add_parser("bench", help="MAC/runtime sweep over scales, written as CSV")
    be.add_argument("--width", required=True, type=int)
    be.add_argument("--height", required=True, type=int)
    be.add_argument("--scales", required=True,
                    help="comma-separated list, e.g. 2,3,4,6,12,18,24")
    be.add_argument("--weights", required=True)
    be.add_argument("--report", required=True, help="output CSV path")

    ve = sub.add_parser("verify", help="run the invariant self-checks (exit 0/1)")
    ve.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_upscale(args) -> int:
    from .pipeline import upscale

    n = args.n
    if args.fixed_interval is not None:
        if args.strategy != "fixed":
            raise ConfigError("--fixed-interval only applies to --strategy fixed")
        n = args.fixed_interval
    out_path = args.out
    if out_path is None:
        stem = args.input[:-4] if args.input.lower().endswith(".png") else args.input
        out_path = f"{stem}_x{args.scale:g}.png"
    if args.no_ensemble:
        from .decoder import load_weights

        if load_weights(args.weights).arch.ensemble:
            raise ConfigError(
                f"{args.weights} was trained with the vertex ensemble; "
                "--no-ensemble weights have a narrower coarse stage")
    _, report = upscale(args.input, args.weights, scale=args.scale,
                        out_path=out_path, strategy=args.strategy, n=n)
    macs = report.total_macs
    print(f"wrote {out_path}")
    print(f"scale {report.scale:g}: {report.groups} groups, {report.slices} slices, "
          f"{report.pixels} pixels")
    print(f"decode MACs {macs} (coarse {report.coarse_macs}, ensemble "
          f"{report.ensemble_macs}, fine {report.fine_macs}); "
          f"per-pixel reference would need {report.reference_macs} "
          f"({macs / report.reference_macs:.1%})")
    return 0


def _cmd_train(args) -> int:
    from .decoder import save_weights
    from .pipeline import TrainConfig, train

    cfg = TrainConfig(data_dir=args.data, iters=args.iters, seed=args.seed,
                      crop=args.crop)
    result = train(cfg)
    save_weights(args.out, result.weights)
    if result.losses:
        print(f"trained {len(result.losses)} iterations; "
              f"first loss {result.losses[0]:.5f}, last {result.losses[-1]:.5f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    from .costmodel import benchmark_decode, write_cost_csv
    from .decoder import load_weights
    from .encoder import unfold_encode
    from .pipeline import synth_image

    scales = [float(tok) for tok in args.scales.split(",") if tok]
    if not scales:
        raise ConfigError(f"no scales parsed from {args.scales!r}")
    weights = load_weights(args.weights)
    side = round(math.sqrt(weights.arch.feature_depth / 3))
    radius = (side - 1) // 2
    feats = unfold_encode(synth_image(0, args.height, args.width), radius)
    reports = benchmark_decode(feats, weights, scales)
    write_cost_csv(args.report, reports)
    for r in reports:
        print(f"x{r.scale:g}: {r.total_macs} MACs, reference {r.reference_macs}, "
              f"ratio {r.reference_macs / r.total_macs:.2f}, {r.runtime_ms:.1f} ms")
    print(f"wrote {args.report}")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(args.seed)
    failed = 0
    for name, ok, detail in results:
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _build_parser().parse_args(argv)
    handlers = {"upscale": _cmd_upscale, "train": _cmd_train,
                "bench": _cmd_bench, "verify": _cmd_verify}
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
