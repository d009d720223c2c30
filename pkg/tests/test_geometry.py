from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diif.geometry import (
    build_plan,
    group_coordinates,
    make_grid,
    round_half_up,
    slice_group,
    slice_interval,
)


def brute_force_assignment(out_n: int, lat_n: int) -> list:
    """Exact nearest-latent search per axis with rational arithmetic.

    Pixel i of N sits at (2i+1)/N - 1.  Fractions keep equidistant cases
    exact, so the smaller-index tie rule is applied on true ties only.
    """
    out_pos = [Fraction(2 * i + 1, out_n) - 1 for i in range(out_n)]
    lat_pos = [Fraction(2 * j + 1, lat_n) - 1 for j in range(lat_n)]
    assign = []
    for p in out_pos:
        best, best_d = 0, abs(p - lat_pos[0])
        for j in range(1, lat_n):
            d = abs(p - lat_pos[j])
            if d < best_d:  # strict: ties stay at the smaller index
                best, best_d = j, d
        assign.append(best)
    return assign


class TestMakeGrid:
    def test_two(self):
        g = make_grid(2, 2)
        np.testing.assert_allclose(g.ys, [-0.5, 0.5])
        np.testing.assert_allclose(g.xs, [-0.5, 0.5])

    def test_one_is_centered(self):
        g = make_grid(1, 1)
        assert g.ys[0] == 0.0 and g.xs[0] == 0.0

    def test_four(self):
        np.testing.assert_allclose(make_grid(4, 4).ys, [-0.75, -0.25, 0.25, 0.75])

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValueError):
            make_grid(0, 4)

    @given(st.integers(1, 200))
    def test_centers_increasing_and_symmetric(self, n):
        ys = make_grid(n, 1).ys
        assert np.all(np.diff(ys) > 0)
        np.testing.assert_allclose(ys + ys[::-1], 0.0, atol=1e-15)


class TestRounding:
    def test_half_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(3.5) == 4
        assert round_half_up(2.4) == 2
        assert round_half_up(-0.5) == 0


class TestGrouping:
    def test_integer_scale_four(self):
        plan = group_coordinates(make_grid(8, 8), make_grid(2, 2))
        for j in range(2):
            for k in range(2):
                assert plan.group_size(j, k) == 16

    def test_scale_one_singletons(self):
        plan = group_coordinates(make_grid(5, 5), make_grid(5, 5))
        for j in range(5):
            for k in range(5):
                assert plan.members(j, k).tolist() == [j * 5 + k]

    def test_fractional_scale_matches_brute_force(self):
        # scale 2.5 on a 4x4 latent grid
        plan = group_coordinates(make_grid(10, 10), make_grid(4, 4))
        expect = brute_force_assignment(10, 4)
        assert plan.y_assign.tolist() == expect
        assert plan.x_assign.tolist() == expect

    @settings(deadline=None, max_examples=60)
    @given(st.integers(1, 40), st.integers(1, 40))
    def test_axis_assignment_matches_brute_force(self, lat_n, extra):
        out_n = lat_n + extra
        plan = group_coordinates(make_grid(out_n, 3), make_grid(lat_n, 1))
        assert plan.y_assign.tolist() == brute_force_assignment(out_n, lat_n)

    @settings(deadline=None, max_examples=50)
    @given(st.integers(1, 12), st.integers(1, 12),
           st.floats(1.0, 8.0, allow_nan=False))
    def test_partition(self, h, w, s):
        out_h, out_w = int(np.floor(s * h)), int(np.floor(s * w))
        plan = group_coordinates(make_grid(out_h, out_w), make_grid(h, w))
        seen = np.zeros(out_h * out_w, dtype=np.int64)
        total = 0
        for j in range(h):
            for k in range(w):
                m = plan.members(j, k)
                total += len(m)
                np.add.at(seen, m, 1)
        assert total == out_h * out_w
        assert np.all(seen == 1)

    @settings(deadline=None, max_examples=30)
    @given(st.integers(1, 10), st.integers(1, 6), st.integers(1, 8))
    def test_integer_scale_regularity(self, h, w, s):
        plan = group_coordinates(make_grid(s * h, s * w), make_grid(h, w))
        assert np.all(plan.y_count == s) and np.all(plan.x_count == s)

    def test_latent_larger_than_output_rejected(self):
        with pytest.raises(ValueError):
            group_coordinates(make_grid(3, 3), make_grid(4, 4))


class TestSliceInterval:
    def test_linear_order_one(self):
        assert slice_interval("linear", 4.0, 1, 16) == 4

    def test_constant_order_one(self):
        assert slice_interval("constant", 4.0, 1, 16) == 16

    def test_fixed_four(self):
        assert slice_interval("fixed", 2.0, 4, 16) == 4
        assert slice_interval("fixed", 7.3, 4, 16) == 4

    def test_fractional_linear_rounds(self):
        assert slice_interval("linear", 2.5, 1, 7) == 3  # round(2.5) half-up
        assert slice_interval("linear", 2.4, 1, 7) == 2

    def test_clamped_to_group(self):
        assert slice_interval("linear", 6.0, 3, 4) == 4
        assert slice_interval("constant", 1.0, 5, 9) == 1

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            slice_interval("spiral", 2.0, 1, 4)
        with pytest.raises(ValueError):
            slice_interval("linear", 0.5, 1, 4)
        with pytest.raises(ValueError):
            slice_interval("linear", 2.0, 0, 4)

    @settings(deadline=None, max_examples=80)
    @given(st.sampled_from(["linear", "constant", "fixed"]),
           st.floats(1.0, 16.0), st.integers(1, 6), st.integers(1, 256))
    def test_interval_in_bounds(self, strategy, s, n, g):
        u = slice_interval(strategy, s, n, g)
        assert 0 < u <= g


class TestSliceGroup:
    def test_even_split(self):
        members = np.arange(16)
        slices = slice_group(members, 4)
        assert len(slices) == 4
        assert all(len(sl) == 4 for sl in slices)

    def test_truncated_last(self):
        slices = slice_group(np.arange(10), 4)
        assert [len(sl) for sl in slices] == [4, 4, 2]

    def test_whole_group(self):
        slices = slice_group(np.arange(5), 5)
        assert len(slices) == 1 and len(slices[0]) == 5

    def test_boundary_indices(self):
        sl = slice_group(np.array([7, 9, 11]), 3)[0]
        assert sl.first_index == 7 and sl.last_index == 11

    @settings(deadline=None, max_examples=80)
    @given(st.integers(1, 300), st.integers(1, 300))
    def test_count_and_reconstruction(self, g, u):
        u = min(u, g)
        members = np.random.default_rng(g * 301 + u).permutation(1000)[:g]
        slices = slice_group(members, u)
        assert len(slices) == -(-g // u)  # K = ceil(g/u)
        assert all(len(sl) == u for sl in slices[:-1])
        concat = np.concatenate([sl.members for sl in slices])
        assert np.array_equal(concat, members)


class TestPlans:
    @settings(deadline=None, max_examples=40)
    @given(st.integers(1, 10), st.integers(1, 10),
           st.floats(1.0, 6.0), st.sampled_from(["linear", "constant", "fixed"]),
           st.integers(1, 4))
    def test_linear_never_more_slices_than_unit_fixed(self, h, w, s, strategy, n):
        out_h, out_w = int(np.floor(s * h)), int(np.floor(s * w))
        plan = build_plan(make_grid(out_h, out_w), make_grid(h, w), strategy, n, s)
        assert plan.total_slices() <= out_h * out_w  # fixed(1) gives g slices
        brute = sum(plan.slice_count(j, k) for j in range(h) for k in range(w))
        assert plan.total_slices() == brute

    def test_with_slicing_defaults_scale(self):
        plan = group_coordinates(make_grid(8, 8), make_grid(4, 4)).with_slicing(
            "linear", 1)
        assert plan.scale == 2.0
