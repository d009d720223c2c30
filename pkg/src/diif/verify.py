"""Self-contained invariant checks behind ``diif verify``.

Each check is a function returning (ok, detail).  They exercise the same
laws the test suite gates on, but sized to finish in seconds and to run
from an installed package with no fixtures on disk.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .costmodel import MultiplyCounter, count_macs
from .decoder import (
    Architecture,
    decode_image,
    decode_image_sequential,
    ensemble_weights,
    load_weights,
    save_weights,
)
from .encoder import FeatureMap, load_feature_map, save_feature_map
from .geometry import build_plan, make_grid

__all__ = ["run_all", "CHECKS"]


def _random_instance(rng, ensemble: bool = True):
    lat = int(rng.integers(2, 7))
    s = float(rng.choice([1.0, 2.0, 2.5, 3.0]))
    out = int(np.floor(lat * s))
    depth = 12
    from .pipeline import weight_init

    arch = Architecture(depth, hidden=16, ensemble=ensemble)
    weights = weight_init(arch, int(rng.integers(1 << 30))).astype(np.float64)
    data = rng.standard_normal((lat, lat, depth))
    feats = FeatureMap(lat, lat, depth, data)
    plan = build_plan(make_grid(out, out), make_grid(lat, lat),
                      str(rng.choice(["linear", "constant", "fixed"])),
                      int(rng.integers(1, 4)), s)
    return feats, plan, weights


def check_decode_equivalence(seed: int = 0):
    """Batched decode agrees with the strictly sequential per-slice walk."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(6):
        feats, plan, weights = _random_instance(rng, ensemble=trial % 2 == 0)
        a = decode_image(feats, plan, weights)
        b = decode_image_sequential(feats, plan, weights)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst <= 1e-10, f"max abs deviation {worst:.2e}"


def check_grouping_partition(seed: int = 0):
    """Groups tile the output raster exactly once."""
    rng = np.random.default_rng(seed + 1)
    for _ in range(20):
        lat = int(rng.integers(1, 9))
        out = int(rng.integers(lat, 4 * lat + 1))
        plan = build_plan(make_grid(out, out), make_grid(lat, lat), "fixed", 3)
        seen = np.zeros(out * out, dtype=np.int64)
        for j in range(lat):
            for k in range(lat):
                np.add.at(seen, plan.members(j, k), 1)
        if not np.all(seen == 1):
            return False, f"output {out} latent {lat}: coverage counts {np.unique(seen)}"
    return True, "20 random configurations partition cleanly"


def check_ensemble_sums(seed: int = 0):
    rng = np.random.default_rng(seed + 2)
    pq = rng.uniform(-1, 1, size=(2000, 2))
    worst = max(abs(ensemble_weights(p, q).sum() - 1.0) for p, q in pq)
    return worst <= 1e-12, f"max |sum - 1| = {worst:.2e}"


def check_weight_roundtrip(seed: int = 0):
    from .pipeline import weight_init

    weights = weight_init(Architecture(27, hidden=32), seed + 3)
    with tempfile.TemporaryDirectory() as d:
        p1 = os.path.join(d, "a.bin")
        p2 = os.path.join(d, "b.bin")
        save_weights(p1, weights)
        save_weights(p2, load_weights(p1))
        with open(p1, "rb") as f:
            b1 = f.read()
        with open(p2, "rb") as f:
            b2 = f.read()
    return b1 == b2, f"{len(b1)} bytes round-tripped"


def check_feature_roundtrip(seed: int = 0):
    rng = np.random.default_rng(seed + 4)
    fmap = FeatureMap(5, 7, 6, rng.standard_normal((5, 7, 6)).astype(np.float32))
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "f.bin")
        save_feature_map(p, fmap)
        back = load_feature_map(p)
    ok = (back.height, back.width, back.depth) == (5, 7, 6) and np.array_equal(
        back.data, fmap.data)
    return ok, "header and payload preserved"


def check_counter_matches_analytic(seed: int = 0):
    rng = np.random.default_rng(seed + 5)
    feats, plan, weights = _random_instance(rng)
    counter = MultiplyCounter()
    decode_image_sequential(feats, plan, weights, counter=counter)
    report = count_macs(weights.arch, plan)
    expect = {"coarse": report.coarse_macs, "ensemble": report.ensemble_macs,
              "fine": report.fine_macs}
    ok = all(counter.buckets.get(k, 0) == v for k, v in expect.items())
    return ok, f"counted {counter.buckets}, analytic {expect}"


CHECKS = [
    ("decode equivalence", check_decode_equivalence),
    ("grouping partition", check_grouping_partition),
    ("ensemble weight sums", check_ensemble_sums),
    ("weight file round trip", check_weight_roundtrip),
    ("feature map round trip", check_feature_roundtrip),
    ("multiply counter vs analytic", check_counter_matches_analytic),
]


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn(seed)
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
