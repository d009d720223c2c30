import csv

import numpy as np
import pytest

from diif.costmodel import (
    CSV_FIELDS,
    MultiplyCounter,
    ScalingFit,
    benchmark_decode,
    count_macs,
    fit_scaling_exponent,
    per_forward_macs,
    reference_shapes,
    write_cost_csv,
)
from diif.decoder import Architecture, decode_image_sequential
from diif.encoder import FeatureMap
from diif.errors import ResourceError
from diif.geometry import build_plan, make_grid
from diif.pipeline import weight_init


def sweep(arch, h, w, scales, strategy, n=1):
    latent = make_grid(h, w)
    out = []
    for s in scales:
        grid = make_grid(int(np.floor(s * h)), int(np.floor(s * w)))
        out.append(count_macs(arch, build_plan(grid, latent, strategy, n, float(s))))
    return out


class TestCountMacs:
    def test_single_layer_definition(self):
        assert per_forward_macs([(7, 5)]) == 35

    def test_integer_scale_enumeration(self):
        # 10x10 input at s=4: 100 groups of 16, u=4 -> 4 slices each
        arch = Architecture(27)
        plan = build_plan(make_grid(40, 40), make_grid(10, 10), "linear", 1, 4.0)
        report = count_macs(arch, plan)
        assert report.groups == 100
        assert report.slices == 400
        coarse_pf = per_forward_macs(arch.coarse_shapes())
        fine_pf = per_forward_macs(arch.fine_shapes())
        assert report.coarse_macs == 400 * 4 * coarse_pf  # 1600 coarse forwards
        assert report.fine_macs == 1600 * fine_pf
        assert report.ensemble_macs == 1600 * 4 * arch.hidden
        assert report.reference_macs == 1600 * 4 * per_forward_macs(reference_shapes(arch))
        assert report.total_macs == (report.coarse_macs + report.ensemble_macs
                                     + report.fine_macs)

    def test_whole_group_slicing_minimizes_coarse(self):
        arch = Architecture(6, hidden=8)
        latent, out = make_grid(4, 4), make_grid(12, 12)
        whole = count_macs(arch, build_plan(out, latent, "fixed", 9, 3.0))
        for n in (1, 2, 3, 4):
            other = count_macs(arch, build_plan(out, latent, "fixed", n, 3.0))
            assert whole.coarse_macs <= other.coarse_macs

    def test_counter_equals_analytic(self):
        rng = np.random.default_rng(0)
        for ensemble in (True, False):
            arch = Architecture(4, hidden=8, ensemble=ensemble)
            w = weight_init(arch, 1).astype(np.float64)
            feats = FeatureMap(3, 3, 4, rng.standard_normal((3, 3, 4)))
            plan = build_plan(make_grid(8, 8), make_grid(3, 3), "linear", 1, 8 / 3)
            counter = MultiplyCounter()
            decode_image_sequential(feats, plan, w, counter=counter)
            report = count_macs(arch, plan)
            assert counter.buckets.get("coarse", 0) == report.coarse_macs
            assert counter.buckets.get("ensemble", 0) == report.ensemble_macs
            assert counter.buckets.get("fine", 0) == report.fine_macs


class TestScalingFits:
    def test_exact_quadratic(self):
        pts = [(s, 3.0 * s * s) for s in (2, 4, 8, 16, 32)]
        assert fit_scaling_exponent(pts).slope == pytest.approx(2.0, abs=1e-9)

    def test_exact_linear(self):
        pts = [(s, 5.0 * s) for s in (2, 4, 8)]
        fit = fit_scaling_exponent(pts)
        assert fit.slope == pytest.approx(1.0, abs=1e-9)
        assert fit.residual == pytest.approx(0.0, abs=1e-9)

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            fit_scaling_exponent([(2, 4.0), (4, 8.0)])

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            fit_scaling_exponent([(2, 0.0), (4, 8.0), (8, 16.0)])

    def test_reference_slope_near_two(self):
        arch = Architecture(27)
        reports = sweep(arch, 180, 320, (2, 4, 8, 16, 32), "linear")
        fit = fit_scaling_exponent([(r.scale, r.reference_macs) for r in reports])
        assert 1.95 <= fit.slope <= 2.05

    def test_linear_coarse_slope_near_one(self):
        arch = Architecture(27)
        reports = sweep(arch, 180, 320, (2, 4, 8, 16, 32), "linear")
        fit = fit_scaling_exponent([(r.scale, r.coarse_macs) for r in reports])
        assert 0.9 <= fit.slope <= 1.1

    def test_constant_coarse_slope_near_zero(self):
        arch = Architecture(27)
        reports = sweep(arch, 180, 320, (2, 4, 8, 16, 32), "constant")
        fit = fit_scaling_exponent([(r.scale, r.coarse_macs) for r in reports])
        assert -0.05 <= fit.slope <= 0.05

    def test_reduction_at_sixteen(self):
        arch = Architecture(27)
        (report,) = sweep(arch, 180, 320, (16,), "linear")
        assert report.total_macs <= 0.25 * report.reference_macs

    def test_ratio_monotone_in_scale(self):
        arch = Architecture(27)
        reports = sweep(arch, 180, 320, (2, 3, 4, 6, 12, 18, 24), "linear")
        ratios = [r.reference_macs / r.total_macs for r in reports]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))


class TestBenchmark:
    def _small(self):
        rng = np.random.default_rng(1)
        arch = Architecture(4, hidden=8)
        w = weight_init(arch, 2)
        feats = FeatureMap(6, 6, 4, rng.standard_normal((6, 6, 4)).astype(np.float32))
        return feats, w

    def test_repetitions_do_not_change_macs(self):
        feats, w = self._small()
        a = benchmark_decode(feats, w, [2.0, 3.0], repetitions=1)
        b = benchmark_decode(feats, w, [2.0, 3.0], repetitions=3)
        for ra, rb in zip(a, b):
            assert ra.total_macs == rb.total_macs
            assert ra.runtime_ms is not None and rb.runtime_ms is not None

    def test_absurd_scale_is_resource_error(self):
        feats, w = self._small()
        with pytest.raises(ResourceError):
            benchmark_decode(feats, w, [10000.0], max_output_pixels=1 << 20)

    def test_csv_schema(self, tmp_path):
        feats, w = self._small()
        reports = benchmark_decode(feats, w, [2.0, 2.5, 3.0])
        path = tmp_path / "costs.csv"
        write_cost_csv(path, reports)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == CSV_FIELDS
        assert len(rows) == 4
        for row, rep in zip(rows[1:], reports):
            assert float(row[0]) == rep.scale
            assert int(row[6]) == rep.total_macs


class TestScalingFitType:
    def test_fields(self):
        fit = ScalingFit(slope=1.0, intercept=0.0, residual=0.0)
        assert fit.slope == 1.0
