"""Coordinate grids, nearest-latent grouping, and slice construction.

Conventions used everywhere downstream:

* Pixel i of an N-pixel axis sits at ``-1 + (2*i + 1) / N`` in [-1, 1], for
  both latent grids (input resolution) and output grids.
* Every output coordinate belongs to the group of its nearest latent code.
  Ties (a coordinate exactly on the midpoint between two latents) go to the
  smaller, i.e. top-left, latent index.  Assignment is computed with exact
  integer arithmetic so ties are never at the mercy of float rounding.
* Group members are ordered row-major: left to right, then top to bottom.
* A group of g members is cut into ``ceil(g / u)`` contiguous slices of u
  members each, the last one possibly shorter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

__all__ = [
    "CoordGrid",
    "make_grid",
    "GroupPlan",
    "Slice",
    "group_coordinates",
    "build_plan",
    "slice_interval",
    "slice_group",
    "round_half_up",
]

STRATEGIES = ("linear", "constant", "fixed")


@dataclass(frozen=True)
class CoordGrid:
    """Pixel-center coordinates of an H x W raster in [-1, 1]^2."""

    height: int
    width: int
    ys: np.ndarray  # (height,) float64
    xs: np.ndarray  # (width,) float64


def make_grid(height: int, width: int) -> CoordGrid:
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be positive; got {height}x{width}")
    ys = (2.0 * np.arange(height, dtype=np.float64) + 1.0) / height - 1.0
    xs = (2.0 * np.arange(width, dtype=np.float64) + 1.0) / width - 1.0
    return CoordGrid(height, width, ys, xs)


def round_half_up(x: float) -> int:
    """Round to nearest integer with .5 always going up (not banker's)."""
    return int(math.floor(x + 0.5))


def slice_interval(strategy: str, s: float, n: int, g: int) -> int:
    """Slice interval u for one group of size g at scale s.

    ``linear`` grows u with the scale (u = n*s rounded), ``constant`` keeps
    the per-group slice count near n (u = ceil(s^2/n)), and ``fixed`` uses n
    itself as the interval.  The result is always clamped to [1, g].
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown slicing strategy {strategy!r}")
    if s < 1.0:
        raise ValueError(f"scale must be >= 1; got {s}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"strategy parameter must be a positive integer; got {n!r}")
    if g < 1:
        raise ValueError(f"group size must be positive; got {g}")
    if strategy == "linear":
        u = round_half_up(n * s)
    elif strategy == "constant":
        u = math.ceil(s * s / n)
    else:
        u = n
    return max(1, min(int(u), g))


def _axis_assignment(out_n: int, lat_n: int) -> np.ndarray:
    """Nearest-latent index for each of out_n output positions along one axis.

    Output position i and the midpoint between latents j and j+1 compare as
    (2i+1)/out_n vs (2j+2)/lat_n, i.e. (2i+1)*lat_n vs (2j+2)*out_n in exact
    integers.  The smallest j whose upper midpoint is >= the position wins,
    which sends exact ties to the smaller index.
    """
    i = np.arange(out_n, dtype=np.int64)
    num = (2 * i + 1) * lat_n - 2 * out_n
    j = -(-num // (2 * out_n))  # ceil division
    return np.clip(j, 0, lat_n - 1)


def _run_lengths(assign: np.ndarray, lat_n: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(assign, minlength=lat_n).astype(np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return starts, counts


@dataclass(frozen=True)
class Slice:
    """One contiguous run of a group's members (row-major member order)."""

    j: int
    k: int
    start: int  # member offset within the group, inclusive
    stop: int   # exclusive
    members: np.ndarray  # flattened output indices, row-major

    @property
    def first_index(self) -> int:
        return int(self.members[0])

    @property
    def last_index(self) -> int:
        return int(self.members[-1])

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class GroupPlan:
    """Grouping (and optionally slicing) of an output grid over a latent grid.

    Groups are rectangular blocks of the output raster: member rows of group
    (j, k) are ``y_start[j] : y_start[j] + y_count[j]`` and similarly for
    columns.  ``u`` is filled in by :meth:`with_slicing`; plans fresh from
    :func:`group_coordinates` carry no slicing strategy yet.
    """

    out_grid: CoordGrid
    latent_grid: CoordGrid
    y_assign: np.ndarray
    x_assign: np.ndarray
    y_start: np.ndarray
    y_count: np.ndarray
    x_start: np.ndarray
    x_count: np.ndarray
    scale: Optional[float] = None
    strategy: Optional[str] = None
    n: Optional[int] = None

    @property
    def n_groups(self) -> int:
        return self.latent_grid.height * self.latent_grid.width

    def group_size(self, j: int, k: int) -> int:
        return int(self.y_count[j] * self.x_count[k])

    def group_block(self, j: int, k: int) -> tuple[int, int, int, int]:
        """(row0, row1, col0, col1) bounds of the group's output block, half-open."""
        r0 = int(self.y_start[j])
        c0 = int(self.x_start[k])
        return r0, r0 + int(self.y_count[j]), c0, c0 + int(self.x_count[k])

    def members(self, j: int, k: int) -> np.ndarray:
        """Flattened row-major output indices of the group, in member order."""
        r0, r1, c0, c1 = self.group_block(j, k)
        rows = np.arange(r0, r1, dtype=np.int64)
        cols = np.arange(c0, c1, dtype=np.int64)
        return (rows[:, None] * self.out_grid.width + cols[None, :]).reshape(-1)

    def interval(self, j: int, k: int) -> int:
        if self.strategy is None:
            raise ValueError("plan has no slicing strategy attached")
        return slice_interval(self.strategy, self.scale, self.n, self.group_size(j, k))

    def slices(self, j: int, k: int) -> list[Slice]:
        return slice_group(self.members(j, k), self.interval(j, k), j, k)

    def slice_count(self, j: int, k: int) -> int:
        g = self.group_size(j, k)
        return -(-g // self.interval(j, k))

    def total_slices(self) -> int:
        """Sum of per-group slice counts, computed separably (no member walk)."""
        total = 0
        # group size depends only on the pair of per-axis counts, so tabulate
        # over distinct count values instead of all Hi*Wi groups
        yc_vals, yc_freq = np.unique(self.y_count, return_counts=True)
        xc_vals, xc_freq = np.unique(self.x_count, return_counts=True)
        for yc, fy in zip(yc_vals, yc_freq):
            for xc, fx in zip(xc_vals, xc_freq):
                g = int(yc * xc)
                u = slice_interval(self.strategy, self.scale, self.n, g)
                total += int(fy * fx) * (-(-g // u))
        return total

    def with_slicing(self, strategy: str, n: int, scale: Optional[float] = None) -> "GroupPlan":
        if scale is None:
            scale = self.out_grid.height / self.latent_grid.height
        # validate eagerly on a representative group size
        slice_interval(strategy, scale, n, int(self.y_count[0] * self.x_count[0]))
        return replace(self, strategy=strategy, n=int(n), scale=float(scale))


def group_coordinates(out_grid: CoordGrid, latent_grid: CoordGrid) -> GroupPlan:
    """Assign every output coordinate to its nearest latent code.

    The latent grid must be no larger than the output grid per axis, so every
    group is nonempty.
    """
    if latent_grid.height > out_grid.height or latent_grid.width > out_grid.width:
        raise ValueError(
            f"latent grid {latent_grid.height}x{latent_grid.width} exceeds "
            f"output grid {out_grid.height}x{out_grid.width}"
        )
    ya = _axis_assignment(out_grid.height, latent_grid.height)
    xa = _axis_assignment(out_grid.width, latent_grid.width)
    ys, yc = _run_lengths(ya, latent_grid.height)
    xs, xc = _run_lengths(xa, latent_grid.width)
    return GroupPlan(out_grid, latent_grid, ya, xa, ys, yc, xs, xc)


def build_plan(
    out_grid: CoordGrid,
    latent_grid: CoordGrid,
    strategy: str = "linear",
    n: int = 1,
    scale: Optional[float] = None,
) -> GroupPlan:
    return group_coordinates(out_grid, latent_grid).with_slicing(strategy, n, scale)


def slice_group(members: np.ndarray, u: int, j: int = 0, k: int = 0) -> list[Slice]:
    """Cut an ordered member list into ceil(g/u) contiguous slices."""
    g = len(members)
    if g == 0:
        raise ValueError("cannot slice an empty group")
    if not 0 < u <= g:
        raise ValueError(f"slice interval {u} outside (0, {g}]")
    out = []
    for start in range(0, g, u):
        stop = min(start + u, g)
        out.append(Slice(j, k, start, stop, members[start:stop]))
    return out
