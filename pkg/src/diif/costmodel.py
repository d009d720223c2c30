"""Analytic MAC accounting, scaling-law fits, and the decode benchmark.

A MAC is one multiply inside a matmul; biases and activations are free.
Per-pixel blending multiplies are charged to their own "ensemble" bucket.
The instrumented counter on the sequential decode path must reproduce
these numbers exactly.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .decoder import (
    Architecture,
    DecoderWeights,
    ReferenceWeights,
    decode_image,
)
from .errors import ResourceError
from .geometry import GroupPlan, build_plan, make_grid

__all__ = [
    "MultiplyCounter",
    "CostReport",
    "per_forward_macs",
    "count_macs",
    "fit_scaling_exponent",
    "ScalingFit",
    "benchmark_decode",
    "write_cost_csv",
    "CSV_FIELDS",
]

CSV_FIELDS = [
    "scale", "groups", "slices", "coarse_macs", "ensemble_macs",
    "fine_macs", "total_macs", "reference_macs", "runtime_ms",
]


class MultiplyCounter:
    """Tallies multiplies per bucket while an instrumented path runs."""

    def __init__(self) -> None:
        self.buckets: dict = {}

    def add(self, bucket: str, n: int) -> None:
        self.buckets[bucket] = self.buckets.get(bucket, 0) + int(n)

    def total(self) -> int:
        return sum(self.buckets.values())


@dataclass(frozen=True)
class CostReport:
    scale: float
    groups: int
    slices: int
    pixels: int
    coarse_macs: int
    ensemble_macs: int
    fine_macs: int
    reference_macs: int
    runtime_ms: Optional[float] = None

    @property
    def total_macs(self) -> int:
        return self.coarse_macs + self.ensemble_macs + self.fine_macs


def per_forward_macs(shapes: Sequence[tuple[int, int]]) -> int:
    return sum(rows * cols for rows, cols in shapes)


def reference_shapes(arch: Architecture) -> list[tuple[int, int]]:
    """Layer shapes of the matched-width per-pixel baseline decoder."""
    return ReferenceWeights.shapes(arch.feature_depth, arch.hidden)


def count_macs(arch: Architecture, plan: GroupPlan) -> CostReport:
    """Analytic decode cost of a plan, with the per-pixel baseline alongside.

    coarse = slices * vertices * coarse forward, fine = pixels * fine
    forward, ensemble = pixels * vertices * hidden (skipped without the
    ensemble), reference = pixels * 4 * baseline forward.
    """
    slices = plan.total_slices()
    pixels = plan.out_grid.height * plan.out_grid.width
    vertices = 4 if arch.ensemble else 1
    coarse_pf = per_forward_macs(arch.coarse_shapes())
    fine_pf = per_forward_macs(arch.fine_shapes())
    ref_pf = per_forward_macs(reference_shapes(arch))
    return CostReport(
        scale=plan.scale if plan.scale is not None else float("nan"),
        groups=plan.n_groups,
        slices=slices,
        pixels=pixels,
        coarse_macs=slices * vertices * coarse_pf,
        ensemble_macs=pixels * vertices * arch.hidden if arch.ensemble else 0,
        fine_macs=pixels * fine_pf,
        reference_macs=pixels * 4 * ref_pf,
    )


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residual: float  # rms of log-space residuals


def fit_scaling_exponent(points: Sequence[tuple[float, float]]) -> ScalingFit:
    """Least-squares slope of log(cost) against log(scale).

    Needs at least three points with distinct positive scales and positive
    costs; a slope near d means cost grows like scale**d.
    """
    if len(points) < 3:
        raise ValueError(f"need at least 3 points; got {len(points)}")
    s = np.array([p[0] for p in points], dtype=np.float64)
    c = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(s <= 0) or np.any(c <= 0):
        raise ValueError("scales and costs must be positive")
    if len(np.unique(s)) < 2:
        raise ValueError("scales must not all coincide")
    x = np.log(s)
    y = np.log(c)
    a = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return ScalingFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2))))


def estimate_output_pixels(height: int, width: int, scale: float) -> int:
    return math.floor(scale * height) * math.floor(scale * width)


def benchmark_decode(
    features,
    weights: DecoderWeights,
    scales: Sequence[float],
    strategy: str = "linear",
    n: int = 1,
    repetitions: int = 1,
    max_output_pixels: int = 1 << 27,
) -> list[CostReport]:
    """Time full decodes of one feature map over a scale sweep.

    Runtime is the median of ``repetitions`` wall-clock decodes; the analytic
    MAC counts are unaffected by repetitions.  Scales whose output raster
    would exceed ``max_output_pixels`` raise ResourceError instead of
    attempting the allocation.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1; got {repetitions}")
    reports = []
    latent = make_grid(features.height, features.width)
    for s in scales:
        out_h = math.floor(s * features.height)
        out_w = math.floor(s * features.width)
        if out_h * out_w > max_output_pixels:
            raise ResourceError(
                f"scale {s} needs {out_h * out_w} output pixels "
                f"(budget {max_output_pixels})"
            )
        plan = build_plan(make_grid(out_h, out_w), latent, strategy, n, float(s))
        report = count_macs(weights.arch, plan)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            decode_image(features, plan, weights)
            times.append((time.perf_counter() - t0) * 1000.0)
        reports.append(replace(report, runtime_ms=float(np.median(times))))
    return reports


def write_cost_csv(path, reports: Sequence[CostReport]) -> None:
    """Emit the benchmark CSV; header row is part of the format."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_FIELDS)
        for r in reports:
            writer.writerow([
                r.scale, r.groups, r.slices, r.coarse_macs, r.ensemble_macs,
                r.fine_macs, r.total_macs, r.reference_macs,
                "" if r.runtime_ms is None else f"{r.runtime_ms:.3f}",
            ])
