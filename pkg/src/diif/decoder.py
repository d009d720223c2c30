"""Sliced coarse-to-fine implicit decoder and the per-pixel reference decoder.

Decoding conventions (shared by every path in this module and by the
independent interop oracle):

* Local coordinates.  A group member at output coordinate x with group latent
  v* has local offset ``(x - v*) * (H_in, W_in)`` per axis, i.e. offsets are
  measured in latent half-cell units, so the group's latent cell spans
  [-1, 1]^2 and its corners are exactly (+-1, +-1).
* Vertex codes.  The four cell corners sit at half-integer latent positions.
  A corner's code is the concatenation, in row-major offset order
  {-1.5, -0.5, 0.5, 1.5} x {-1.5, -0.5, 0.5, 1.5}, of the latent codes at the
  clamped integer positions nearest (corner + offset): a clamped 4x4 window.
  Corners are shared by adjacent groups, so a corner's code and position do
  not depend on which group is asking.
* Coarse stage.  One forward per (slice, vertex): input is the vertex code
  followed by the slice's first and last member offsets measured from that
  vertex (local units), giving width 16*D + 4.  All coarse layers are ReLU.
* Hidden blend.  Per member coordinate, the four vertex hiddens are combined
  with the normalized area of the rectangle spanned by the coordinate and the
  diagonally opposite vertex; for local (p, q) the weight of vertex (ty, tx)
  is (1 + ty*p)(1 + tx*q)/4.  Weights are nonneg and sum to one.
* Fine stage.  One forward per member: blended hidden plus a 2D coordinate.
  The coordinate is the local offset with its sign flipped on odd-index
  latent cells per axis ("orientation-alternating").  The flip makes the
  fine input agree from both sides of every cell boundary, which together
  with corner sharing makes predictions continuous across group boundaries.
* Without the ensemble (ablation), the coarse stage sees the group's own
  latent code with a 3x3 unfolding (width 9*D + 4), offsets measured from
  v*, and the blend is skipped.

Arrays are float32 for inference and float64 for gradient checking; every
function follows the dtype of the weights it is given.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import ConfigError, FormatError, StateError, UnsupportedVersionError
from .geometry import GroupPlan, make_grid, slice_group
from .numerics import matmul_add_bias, relu

if TYPE_CHECKING:  # pragma: no cover
    from .encoder import FeatureMap

__all__ = [
    "Architecture",
    "DecoderWeights",
    "ReferenceWeights",
    "VERTEX_TAGS",
    "local_coords",
    "unfold_vertex_code",
    "coarse_forward",
    "fine_forward",
    "ensemble_weights",
    "ensemble_hidden",
    "decode_image",
    "decode_image_sequential",
    "decode_at",
    "decode_reference",
    "forward_training",
    "backward_training",
    "save_weights",
    "load_weights",
]

# row-major corner order: (ty, tx) = top-left, top-right, bottom-left, bottom-right
VERTEX_TAGS = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=np.float64)

_UNFOLD_OFFSETS = (-1.5, -0.5, 0.5, 1.5)

# fixed work-chunk geometry; decode output is bit-identical for any thread
# count because chunk boundaries never depend on it
_PIXEL_CHUNK = 1 << 16
_ROW_CHUNK = 1 << 15

WEIGHTS_MAGIC = b"DIIF"
REFERENCE_MAGIC = b"LIIR"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Layer shape description of the coarse-to-fine decoder.

    ``coarse_layers`` counts the ReLU layers of the slice stage and
    ``fine_layers`` the hidden ReLU layers before the linear rgb readout.
    """

    feature_depth: int
    hidden: int = 256
    coarse_layers: int = 2
    fine_layers: int = 2
    ensemble: bool = True

    def __post_init__(self) -> None:
        if self.feature_depth < 1 or self.hidden < 1:
            raise ConfigError(f"bad architecture dims: {self}")
        if self.coarse_layers < 1 or self.fine_layers < 1:
            raise ConfigError(f"need at least one layer per stage: {self}")

    @property
    def unfold_cells(self) -> int:
        return 16 if self.ensemble else 9

    @property
    def code_width(self) -> int:
        return self.unfold_cells * self.feature_depth

    @property
    def coarse_in(self) -> int:
        return self.code_width + 4

    @property
    def fine_in(self) -> int:
        return self.hidden + 2

    def coarse_shapes(self) -> list[tuple[int, int]]:
        shapes = [(self.coarse_in, self.hidden)]
        shapes += [(self.hidden, self.hidden)] * (self.coarse_layers - 1)
        return shapes

    def fine_shapes(self) -> list[tuple[int, int]]:
        shapes = [(self.fine_in, self.hidden)]
        shapes += [(self.hidden, self.hidden)] * (self.fine_layers - 1)
        shapes.append((self.hidden, 3))
        return shapes


def _check_stage(name: str, layers, shapes) -> None:
    if len(layers) != len(shapes):
        raise ConfigError(f"{name} stage has {len(layers)} layers, expected {len(shapes)}")
    for i, ((w, b), (rows, cols)) in enumerate(zip(layers, shapes)):
        if w.shape != (rows, cols) or b.shape != (cols,):
            raise ConfigError(
                f"{name} layer {i}: got {w.shape}/{b.shape}, expected {(rows, cols)}/({cols},)"
            )


@dataclass
class DecoderWeights:
    """Coarse and fine stage parameters; each layer is a (weight, bias) pair."""

    arch: Architecture
    coarse: list
    fine: list

    def __post_init__(self) -> None:
        _check_stage("coarse", self.coarse, self.arch.coarse_shapes())
        _check_stage("fine", self.fine, self.arch.fine_shapes())

    @property
    def dtype(self):
        return self.coarse[0][0].dtype

    def astype(self, dtype) -> "DecoderWeights":
        cast = lambda layers: [(w.astype(dtype), b.astype(dtype)) for w, b in layers]
        return DecoderWeights(self.arch, cast(self.coarse), cast(self.fine))

    def params(self) -> dict:
        out = {}
        for stage, layers in (("coarse", self.coarse), ("fine", self.fine)):
            for i, (w, b) in enumerate(layers):
                out[f"{stage}.{i}.w"] = w
                out[f"{stage}.{i}.b"] = b
        return out

    @classmethod
    def from_params(cls, arch: Architecture, params: dict) -> "DecoderWeights":
        coarse = [
            (params[f"coarse.{i}.w"], params[f"coarse.{i}.b"])
            for i in range(arch.coarse_layers)
        ]
        fine = [
            (params[f"fine.{i}.w"], params[f"fine.{i}.b"])
            for i in range(arch.fine_layers + 1)
        ]
        return cls(arch, coarse, fine)


@dataclass
class ReferenceWeights:
    """Single-stage per-pixel decoder (input 9*D + 2, hidden ReLU layers, rgb out)."""

    feature_depth: int
    hidden: int
    layers: list

    def __post_init__(self) -> None:
        shapes = self.shapes(self.feature_depth, self.hidden, len(self.layers) - 1)
        _check_stage("reference", self.layers, shapes)

    @staticmethod
    def shapes(depth: int, hidden: int, hidden_layers: int = 4) -> list[tuple[int, int]]:
        if hidden_layers < 1:
            raise ConfigError("reference decoder needs at least one hidden layer")
        shapes = [(9 * depth + 2, hidden)]
        shapes += [(hidden, hidden)] * (hidden_layers - 1)
        shapes.append((hidden, 3))
        return shapes

    @property
    def dtype(self):
        return self.layers[0][0].dtype

    def astype(self, dtype) -> "ReferenceWeights":
        return ReferenceWeights(
            self.feature_depth, self.hidden,
            [(w.astype(dtype), b.astype(dtype)) for w, b in self.layers],
        )


# ---------------------------------------------------------------------------
# elementary forwards


def _mlp(x: np.ndarray, layers, relu_last: bool) -> np.ndarray:
    for i, (w, b) in enumerate(layers):
        x = matmul_add_bias(x, w, b)
        if relu_last or i < len(layers) - 1:
            x = relu(x)
    return x


def coarse_forward(code: np.ndarray, x_first_rel, x_last_rel, weights: DecoderWeights) -> np.ndarray:
    """Hidden vector for one slice seen from one vertex.

    ``code`` is the vertex (or center) code, ``x_first_rel``/``x_last_rel``
    the slice's boundary member offsets measured from the same vertex, in
    local units.
    """
    code = np.asarray(code)
    if code.shape != (weights.arch.code_width,):
        raise ValueError(f"code has shape {code.shape}, expected ({weights.arch.code_width},)")
    x = np.concatenate([code, np.asarray(x_first_rel), np.asarray(x_last_rel)])
    x = x.astype(weights.dtype, copy=False)[None, :]
    return _mlp(x, weights.coarse, relu_last=True)[0]


def fine_forward(hidden: np.ndarray, x_rel, weights: DecoderWeights) -> np.ndarray:
    """RGB for one member coordinate from its blended hidden vector."""
    hidden = np.asarray(hidden)
    if hidden.shape != (weights.arch.hidden,):
        raise ValueError(f"hidden has shape {hidden.shape}, expected ({weights.arch.hidden},)")
    x = np.concatenate([hidden, np.asarray(x_rel)]).astype(weights.dtype, copy=False)[None, :]
    return _mlp(x, weights.fine, relu_last=False)[0]


def ensemble_weights(p: float, q: float) -> np.ndarray:
    """Blend weights of the four vertices for local coordinate (p, q).

    Weight of vertex t is the area between (p, q) and the diagonally opposite
    vertex, normalized by the cell area; for corners at (+-1, +-1) that is
    (1 + ty*p)(1 + tx*q)/4.
    """
    ty = VERTEX_TAGS[:, 0]
    tx = VERTEX_TAGS[:, 1]
    return 0.25 * (1.0 + ty * p) * (1.0 + tx * q)


def ensemble_hidden(vertex_hiddens: np.ndarray, p: float, q: float) -> np.ndarray:
    """Area-weighted combination of the four vertex hiddens at local (p, q)."""
    vertex_hiddens = np.asarray(vertex_hiddens)
    if vertex_hiddens.shape[0] != 4:
        raise ValueError(f"expected 4 vertex hiddens, got {vertex_hiddens.shape}")
    w = ensemble_weights(p, q).astype(vertex_hiddens.dtype)
    return w @ vertex_hiddens


# ---------------------------------------------------------------------------
# gathers


def unfold_vertex_code(features: "FeatureMap", vy: float, vx: float) -> np.ndarray:
    """Clamped 4x4 neighborhood code for a vertex at a half-integer position.

    ``vy``/``vx`` are latent-grid index positions (latent j sits at index j);
    cell corners live at half-integers.
    """
    ay = vy + 0.5
    ax = vx + 0.5
    if abs(ay - round(ay)) > 1e-9 or abs(ax - round(ax)) > 1e-9:
        raise ValueError(f"vertex position ({vy}, {vx}) is not half-integer")
    data = features.data
    h, w = data.shape[:2]
    rows = np.clip(int(round(ay)) + np.array([-2, -1, 0, 1]), 0, h - 1)
    cols = np.clip(int(round(ax)) + np.array([-2, -1, 0, 1]), 0, w - 1)
    return data[rows][:, cols].reshape(-1)


def _unfold_center_code(data: np.ndarray, j: int, k: int) -> np.ndarray:
    h, w = data.shape[:2]
    rows = np.clip(j + np.array([-1, 0, 1]), 0, h - 1)
    cols = np.clip(k + np.array([-1, 0, 1]), 0, w - 1)
    return data[rows][:, cols].reshape(-1)


def local_coords(plan: GroupPlan, j: int, k: int) -> np.ndarray:
    """(g, 2) member offsets of group (j, k) from its latent, in local units."""
    r0, r1, c0, c1 = plan.group_block(j, k)
    og, lg = plan.out_grid, plan.latent_grid
    py = (og.ys[r0:r1] - lg.ys[j]) * lg.height
    qx = (og.xs[c0:c1] - lg.xs[k]) * lg.width
    pp, qq = np.meshgrid(py, qx, indexing="ij")
    return np.stack([pp.reshape(-1), qq.reshape(-1)], axis=1)


def _gather_table_indices(h: int, w: int, ensemble: bool) -> np.ndarray:
    """Flat latent indices feeding each anchor's code, (n_anchors, cells).

    Anchors are the (h+1)x(w+1) cell corners in ensemble mode (4x4 window per
    corner) or the h*w latents themselves otherwise (3x3 window).
    """
    if ensemble:
        ar = np.arange(h + 1)
        ac = np.arange(w + 1)
        rows = np.clip(ar[:, None] + np.array([-2, -1, 0, 1])[None, :], 0, h - 1)
        cols = np.clip(ac[:, None] + np.array([-2, -1, 0, 1])[None, :], 0, w - 1)
    else:
        ar = np.arange(h)
        ac = np.arange(w)
        rows = np.clip(ar[:, None] + np.array([-1, 0, 1])[None, :], 0, h - 1)
        cols = np.clip(ac[:, None] + np.array([-1, 0, 1])[None, :], 0, w - 1)
    # (n_row_anchors, n_col_anchors, window, window) -> flat cells row-major
    flat = rows[:, None, :, None] * w + cols[None, :, None, :]
    n = flat.shape[0] * flat.shape[1]
    return flat.reshape(n, -1)


def _anchor_codes(data: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Gathered codes for all anchors: (..., n_anchors, cells*depth)."""
    h, w, d = data.shape[-3:]
    flat = data.reshape(*data.shape[:-3], h * w, d)
    out = flat[..., idx, :]
    return out.reshape(*out.shape[:-2], idx.shape[1] * d)


# ---------------------------------------------------------------------------
# sequential oracle path


def _count_layers_macs(counter, bucket: str, layers, rows: int) -> None:
    if counter is not None:
        macs = sum(w.shape[0] * w.shape[1] for w, _ in layers)
        counter.add(bucket, rows * macs)


def decode_image_sequential(features: "FeatureMap", plan: GroupPlan, weights: DecoderWeights,
                            counter=None) -> np.ndarray:
    """Reference decode: plain loops over groups, slices, and members.

    This is the oracle that the batched path is checked against, and the
    execution that the multiply counter instruments: per slice one coarse
    forward per vertex, hiddens cached for the whole slice, then one blend
    and one fine forward per member.
    """
    arch = weights.arch
    og, lg = plan.out_grid, plan.latent_grid
    data = np.asarray(features.data, dtype=weights.dtype)
    out = np.zeros((og.height, og.width, 3), dtype=weights.dtype)
    tags = VERTEX_TAGS if arch.ensemble else np.zeros((1, 2))
    from .encoder import FeatureMap  # local import to avoid a cycle at load time

    fmap = FeatureMap(lg.height, lg.width, data.shape[-1], data)
    for j in range(lg.height):
        for k in range(lg.width):
            offs = local_coords(plan, j, k)
            members = plan.members(j, k)
            u = plan.interval(j, k)
            if arch.ensemble:
                codes = [unfold_vertex_code(fmap, j + t[0] / 2, k + t[1] / 2) for t in tags]
            else:
                codes = [_unfold_center_code(data, j, k)]
            par = np.array([1 - 2 * (j % 2), 1 - 2 * (k % 2)], dtype=np.float64)
            for sl in slice_group(members, u, j, k):
                first = offs[sl.start]
                last = offs[sl.stop - 1]
                hiddens = np.stack([
                    coarse_forward(codes[t], first - tags[t], last - tags[t], weights)
                    for t in range(len(tags))
                ])
                _count_layers_macs(counter, "coarse", weights.coarse, len(tags))
                for m in range(sl.start, sl.stop):
                    p, q = offs[m]
                    if arch.ensemble:
                        hb = ensemble_hidden(hiddens, p, q)
                        if counter is not None:
                            counter.add("ensemble", 4 * arch.hidden)
                    else:
                        hb = hiddens[0]
                    rgb = fine_forward(hb, np.array([p, q]) * par, weights)
                    _count_layers_macs(counter, "fine", weights.fine, 1)
                    idx = members[m]
                    out[idx // og.width, idx % og.width] = rgb
    return out


# ---------------------------------------------------------------------------
# batched path


def _class_tables(plan: GroupPlan) -> list[dict]:
    """Per group-shape class: member/slice index tables shared by all groups.

    Groups with the same block shape (bh, bw) share their interval, slice
    layout, and member offset pattern, so the batched path processes one
    class at a time.
    """
    tables = getattr(plan, "_class_tables", None)
    if tables is not None:
        return tables
    tables = []
    for bh in np.unique(plan.y_count):
        js = np.nonzero(plan.y_count == bh)[0]
        for bw in np.unique(plan.x_count):
            ks = np.nonzero(plan.x_count == bw)[0]
            if len(js) == 0 or len(ks) == 0:
                continue
            g = int(bh * bw)
            u = plan.interval(int(js[0]), int(ks[0]))
            n_slices = -(-g // u)
            m = np.arange(g, dtype=np.int64)
            starts = np.arange(0, g, u, dtype=np.int64)
            tables.append(dict(
                gj=np.repeat(js, len(ks)).astype(np.int64),
                gk=np.tile(ks, len(js)).astype(np.int64),
                bh=int(bh), bw=int(bw), g=g, u=u, n_slices=n_slices,
                dr=m // bw, dc=m % bw, kappa=m // u,
                first_off=starts,
                last_off=np.minimum(starts + u, g) - 1,
            ))
    object.__setattr__(plan, "_class_tables", tables)
    return tables


def _class_geometry(plan: GroupPlan, tab: dict, lo: int, hi: int):
    """Coordinate tables for groups [lo:hi) of one class (float64)."""
    og, lg = plan.out_grid, plan.latent_grid
    gj = tab["gj"][lo:hi]
    gk = tab["gk"][lo:hi]
    r = plan.y_start[gj][:, None] + tab["dr"][None, :]
    c = plan.x_start[gk][:, None] + tab["dc"][None, :]
    p = (og.ys[r] - lg.ys[gj][:, None]) * lg.height
    q = (og.xs[c] - lg.xs[gk][:, None]) * lg.width
    return gj, gk, r, c, p, q


def _vertex_meta(arch: Architecture, lat_h: int, lat_w: int):
    if arch.ensemble:
        tags = VERTEX_TAGS
        anchor_w = lat_w + 1

        def anchor_id(gj, gk, t):
            oy = int(tags[t, 0] + 1) // 2
            ox = int(tags[t, 1] + 1) // 2
            return (gj + oy) * anchor_w + (gk + ox)
    else:
        tags = np.zeros((1, 2))

        def anchor_id(gj, gk, t):
            return gj * lat_w + gk

    return tags, anchor_id


def _decode_class_chunk(plan, tab, lo, hi, weights, anchor_l1, tags, anchor_id,
                        batch_data=None, out=None, want_cache=False):
    """Decode groups [lo:hi) of one class; scatter rgb into ``out``.

    ``anchor_l1`` is the per-anchor first-layer product (B, n_anchors, hidden),
    i.e. code @ W1[:code_width]; the remaining first-layer input (the four
    boundary offsets) is added here.  Returns a cache dict when requested.
    """
    arch = weights.arch
    dtype = weights.dtype
    B = anchor_l1.shape[0]
    gj, gk, r, c, p, q = _class_geometry(plan, tab, lo, hi)
    nc = hi - lo
    g, u, K = tab["g"], tab["u"], tab["n_slices"]
    w1, b1 = weights.coarse[0]
    w1_rel = w1[arch.code_width:]

    # coarse stage, all vertices stacked t-major: rows = T * nc * K
    T = len(tags)
    first, last = tab["first_off"], tab["last_off"]
    rel = np.empty((T, nc, K, 4), dtype=np.float64)
    for t in range(T):
        rel[t, :, :, 0] = p[:, first] - tags[t, 0]
        rel[t, :, :, 1] = q[:, first] - tags[t, 1]
        rel[t, :, :, 2] = p[:, last] - tags[t, 0]
        rel[t, :, :, 3] = q[:, last] - tags[t, 1]
    rel = rel.astype(dtype)
    aid = np.stack([anchor_id(gj, gk, t) for t in range(T)])  # (T, nc)
    rel_term = (rel.reshape(-1, 4) @ w1_rel).reshape(T, nc, K, -1)
    z1 = anchor_l1[:, aid, :][:, :, :, None, :] + rel_term[None] + b1
    acts = [z1]
    a = relu(z1.reshape(B * T * nc * K, -1))
    for w, b in weights.coarse[1:]:
        z = a @ w + b
        acts.append(z)
        a = relu(z)
    # (B, T, nc, K, h) -> member gather wants (B, nc, K, T, h)
    hid = a.reshape(B, T, nc, K, -1).transpose(0, 2, 3, 1, 4)

    # blend + fine stage per member
    kappa = tab["kappa"]
    if arch.ensemble:
        wts = np.empty((T, nc, g), dtype=np.float64)
        for t in range(T):
            wts[t] = 0.25 * (1.0 + tags[t, 0] * p) * (1.0 + tags[t, 1] * q)
        wts_c = wts.astype(dtype)
        hblend = np.zeros((B, nc, g, arch.hidden), dtype=dtype)
        for t in range(T):
            hblend += wts_c[t][None, :, :, None] * hid[:, :, kappa, t, :]
    else:
        wts = None
        hblend = hid[:, :, kappa, 0, :]

    par_y = (1 - 2 * (gj % 2)).astype(np.float64)[:, None]
    par_x = (1 - 2 * (gk % 2)).astype(np.float64)[:, None]
    m_coords = np.stack([p * par_y, q * par_x], axis=-1).astype(dtype)  # (nc, g, 2)

    h_dim = arch.hidden
    f0 = np.empty((B, nc, g, h_dim + 2), dtype=dtype)
    f0[..., :h_dim] = hblend
    f0[..., h_dim:] = m_coords[None]
    a = f0.reshape(B * nc * g, h_dim + 2)
    fine_acts = [a]
    for i, (w, b) in enumerate(weights.fine):
        z = a @ w + b
        if i < len(weights.fine) - 1:
            fine_acts.append(z)
            a = relu(z)
        else:
            a = z
    rgb = a.reshape(B, nc, g, 3)

    if out is not None:
        if out.ndim == 3:
            out[r, c] = rgb[0]
        else:
            out[:, r, c] = rgb
    if not want_cache:
        return None
    return dict(tab=tab, lo=lo, hi=hi, gj=gj, gk=gk, r=r, c=c,
                rel=rel, aid=aid, coarse_pre=acts, wts=wts, kappa=kappa,
                fine_acts=fine_acts, fine_out_shape=(B, nc, g))


def _chunk_ranges(n_groups: int, g: int, n_slices: int, t: int) -> list[tuple[int, int]]:
    per = min(max(1, _PIXEL_CHUNK // max(g, 1)), max(1, _ROW_CHUNK // max(n_slices * t, 1)))
    return [(lo, min(lo + per, n_groups)) for lo in range(0, n_groups, per)]


def _prepare_anchor_l1(data: np.ndarray, arch: Architecture, weights: DecoderWeights):
    """Gather anchor codes and fold them through the first coarse layer."""
    h, w = data.shape[-3:-1]
    idx = _gather_table_indices(h, w, arch.ensemble)
    codes = _anchor_codes(data, idx)
    w1 = weights.coarse[0][0]
    flat = codes.reshape(-1, codes.shape[-1]) @ w1[: arch.code_width]
    return idx, codes, flat.reshape(*codes.shape[:-1], arch.hidden)


def decode_image(features: "FeatureMap", plan: GroupPlan, weights: DecoderWeights,
                 threads: Optional[int] = None) -> np.ndarray:
    """Batched decode of a full output grid.  (H_out, W_out, 3), unclamped.

    ``threads`` (default: DIIF_THREADS env var, else 1) caps worker threads;
    chunk boundaries are fixed constants so the result is bit-identical for
    any thread count.
    """
    arch = weights.arch
    if features.depth != arch.feature_depth:
        raise ConfigError(f"feature depth {features.depth} != decoder depth {arch.feature_depth}")
    if threads is None:
        threads = max(1, int(os.environ.get("DIIF_THREADS", "1")))
    og = plan.out_grid
    data = np.asarray(features.data, dtype=weights.dtype)[None]
    _, _, anchor_l1 = _prepare_anchor_l1(data, arch, weights)
    tags, anchor_id = _vertex_meta(arch, plan.latent_grid.height, plan.latent_grid.width)
    out = np.zeros((og.height, og.width, 3), dtype=weights.dtype)

    jobs = []
    for tab in _class_tables(plan):
        for lo, hi in _chunk_ranges(len(tab["gj"]), tab["g"], tab["n_slices"], len(tags)):
            jobs.append((tab, lo, hi))

    def run(job):
        tab, lo, hi = job
        _decode_class_chunk(plan, tab, lo, hi, weights, anchor_l1, tags, anchor_id, out=out)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)
    return out


def decode_at(features: "FeatureMap", coords: np.ndarray, weights: DecoderWeights) -> np.ndarray:
    """Decode arbitrary continuous coordinates, (n, 2) of (y, x) in [-1, 1].

    Each query forms a degenerate one-coordinate slice (first = last = query)
    in the group of its nearest latent; ties on cell boundaries go to the
    smaller latent index.  This is the continuous-query view of the decoder
    and is continuous across group boundaries.
    """
    arch = weights.arch
    dtype = weights.dtype
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must be (n, 2); got {coords.shape}")
    data = np.asarray(features.data, dtype=dtype)[None]
    lat_h, lat_w = features.height, features.width
    lg = make_grid(lat_h, lat_w)

    # nearest latent per axis; exact .5 boundaries go down (smaller index)
    ciy = (coords[:, 0] + 1.0) * lat_h / 2.0 - 0.5
    cix = (coords[:, 1] + 1.0) * lat_w / 2.0 - 0.5
    j = np.clip(np.ceil(ciy - 0.5).astype(np.int64), 0, lat_h - 1)
    k = np.clip(np.ceil(cix - 0.5).astype(np.int64), 0, lat_w - 1)
    p = (coords[:, 0] - lg.ys[j]) * lat_h
    q = (coords[:, 1] - lg.xs[k]) * lat_w

    tags, anchor_id = _vertex_meta(arch, lat_h, lat_w)
    _, _, anchor_l1 = _prepare_anchor_l1(data, arch, weights)
    w1, b1 = weights.coarse[0]
    w1_rel = w1[arch.code_width:]

    T = len(tags)
    n = len(coords)
    hiddens = np.empty((T, n, arch.hidden), dtype=dtype)
    for t in range(T):
        rel = np.stack([p - tags[t, 0], q - tags[t, 1]], axis=1)
        rel4 = np.concatenate([rel, rel], axis=1).astype(dtype)
        z = anchor_l1[0, anchor_id(j, k, t)] + rel4 @ w1_rel + b1
        a = relu(z)
        for w, b in weights.coarse[1:]:
            a = relu(a @ w + b)
        hiddens[t] = a
    if arch.ensemble:
        wts = np.stack([
            0.25 * (1.0 + tags[t, 0] * p) * (1.0 + tags[t, 1] * q) for t in range(T)
        ]).astype(dtype)
        hblend = np.einsum("tnh,tn->nh", hiddens, wts)
    else:
        hblend = hiddens[0]
    par = np.stack([1 - 2 * (j % 2), 1 - 2 * (k % 2)], axis=1).astype(np.float64)
    m = (np.stack([p, q], axis=1) * par).astype(dtype)
    x = np.concatenate([hblend, m], axis=1)
    return _mlp(x, weights.fine, relu_last=False)


# ---------------------------------------------------------------------------
# per-pixel reference decoder


def _unfold3x3(data: np.ndarray) -> np.ndarray:
    h, w, d = data.shape
    idx = _gather_table_indices(h, w, ensemble=False)
    return data.reshape(h * w, d)[idx].reshape(h * w, 9 * d)


def decode_reference(features: "FeatureMap", out_grid, weights: ReferenceWeights,
                     counter=None) -> np.ndarray:
    """LIIF-style per-pixel decode: four forwards per output pixel.

    Each output coordinate is predicted from the four surrounding latents
    (clamped at borders), one forward per latent with the 3x3-unfolded code
    and the offset from that latent; predictions are blended with bilinear
    weights, which equal the diagonal-rectangle areas over the cell area.
    """
    data = np.asarray(features.data, dtype=weights.dtype)
    lat_h, lat_w = features.height, features.width
    lg = make_grid(lat_h, lat_w)
    unf = _unfold3x3(data)

    ciy = (out_grid.ys + 1.0) * lat_h / 2.0 - 0.5
    cix = (out_grid.xs + 1.0) * lat_w / 2.0 - 0.5
    jf = np.floor(ciy).astype(np.int64)
    kf = np.floor(cix).astype(np.int64)
    fy = ciy - jf
    fx = cix - kf

    ho, wo = out_grid.height, out_grid.width
    out = np.zeros((ho, wo, 3), dtype=weights.dtype)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        j = np.clip(jf + dy, 0, lat_h - 1)
        rel_y = ((out_grid.ys - lg.ys[j]) * lat_h)[:, None]
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            k = np.clip(kf + dx, 0, lat_w - 1)
            rel_x = ((out_grid.xs - lg.xs[k]) * lat_w)[None, :]
            code = unf[(j[:, None] * lat_w + k[None, :]).reshape(-1)]
            rel = np.stack([
                np.broadcast_to(rel_y, (ho, wo)).reshape(-1),
                np.broadcast_to(rel_x, (ho, wo)).reshape(-1),
            ], axis=1)
            x = np.concatenate([code, rel], axis=1).astype(weights.dtype)
            pred = _mlp(x, weights.layers, relu_last=False).reshape(ho, wo, 3)
            _count_layers_macs(counter, "reference", weights.layers, ho * wo)
            out += (wy[:, None] * wx[None, :])[:, :, None].astype(weights.dtype) * pred
    return out


# ---------------------------------------------------------------------------
# training forward / backward


def forward_training(batch: np.ndarray, plan: GroupPlan, weights: DecoderWeights):
    """Decode a (B, H_in, W_in, D) feature batch with caches for backward."""
    arch = weights.arch
    data = np.asarray(batch, dtype=weights.dtype)
    if data.ndim != 4:
        raise ValueError(f"batch must be (B, H, W, D); got {data.shape}")
    og = plan.out_grid
    idx, codes, anchor_l1 = _prepare_anchor_l1(data, arch, weights)
    tags, anchor_id = _vertex_meta(arch, plan.latent_grid.height, plan.latent_grid.width)
    out = np.zeros((data.shape[0], og.height, og.width, 3), dtype=weights.dtype)
    caches = []
    for tab in _class_tables(plan):
        caches.append(_decode_class_chunk(
            plan, tab, 0, len(tab["gj"]), weights, anchor_l1, tags, anchor_id,
            out=out, want_cache=True,
        ))
    cache = dict(weights=weights, plan=plan, tags=tags, classes=caches,
                 gather_idx=idx, codes=codes, batch_shape=data.shape)
    return out, cache


def backward_training(cache: dict, dout: np.ndarray):
    """Reverse-mode gradients of a training forward.

    ``dout`` is the loss gradient w.r.t. the decoded batch.  Returns
    ``(grads, dfeatures)`` where grads is keyed like DecoderWeights.params().
    The hidden blend is linear, so its backward just splits member gradients
    by the same area weights before they reach the coarse stage.
    """
    if not isinstance(cache, dict) or "classes" not in cache:
        raise StateError("backward_training needs the cache from forward_training")
    weights: DecoderWeights = cache["weights"]
    arch = weights.arch
    dtype = weights.dtype
    tags = cache["tags"]
    T = len(tags)
    h_dim = arch.hidden
    grads = {k: np.zeros_like(v) for k, v in weights.params().items()}
    codes = cache["codes"]
    B = codes.shape[0]
    danchor_l1 = np.zeros((B, codes.shape[1], h_dim), dtype=dtype)

    for cls in cache["classes"]:
        tab = cls["tab"]
        g, u, K = tab["g"], tab["u"], tab["n_slices"]
        nc = cls["hi"] - cls["lo"]
        if dout.ndim != 4:
            raise ValueError(f"dout must be (B, H, W, 3); got {dout.shape}")
        dout_rows = np.ascontiguousarray(dout[:, cls["r"], cls["c"], :])

        # fine stage backward
        fine_acts = cls["fine_acts"]
        da = dout_rows.reshape(B * nc * g, 3)
        for i in range(len(weights.fine) - 1, -1, -1):
            w, _ = weights.fine[i]
            inp = fine_acts[i] if i == 0 else relu(fine_acts[i])
            grads[f"fine.{i}.w"] += inp.T @ da
            grads[f"fine.{i}.b"] += da.sum(axis=0)
            da = da @ w.T
            if i > 0:
                da *= fine_acts[i] > 0
        dblend = da[:, :h_dim].reshape(B, nc, g, h_dim)

        # blend backward: member gradients -> (slice, vertex) hiddens
        starts = tab["first_off"]
        if arch.ensemble:
            wts = cls["wts"].astype(dtype)  # (T, nc, g)
            dh_vert = np.empty((B, T, nc, K, h_dim), dtype=dtype)
            for t in range(T):
                weighted = dblend * wts[t][None, :, :, None]
                dh_vert[:, t] = np.add.reduceat(weighted, starts, axis=2)
        else:
            dh_vert = np.add.reduceat(dblend, starts, axis=2)[:, None]

        # coarse stage backward, rows t-major as in the forward
        da = dh_vert.reshape(B * T * nc * K, h_dim)
        pre = cls["coarse_pre"]
        for i in range(len(weights.coarse) - 1, 0, -1):
            w, _ = weights.coarse[i]
            da = da * (pre[i].reshape(da.shape) > 0)
            inp = relu(pre[i - 1]).reshape(-1, h_dim)
            grads[f"coarse.{i}.w"] += inp.T @ da
            grads[f"coarse.{i}.b"] += da.sum(axis=0)
            da = da @ w.T
        dz1 = (da * (pre[0].reshape(da.shape) > 0)).reshape(B, T, nc, K, h_dim)
        rel = cls["rel"].astype(dtype).reshape(T * nc * K, 4)
        dz1_rows = dz1.reshape(B, T * nc * K, h_dim)
        grads["coarse.0.w"][arch.code_width:] += np.einsum("ri,brh->ih", rel, dz1_rows)
        grads["coarse.0.b"] += dz1_rows.sum(axis=(0, 1))
        # slice rows of one (vertex, group) all share an anchor
        dz1_anchor = dz1.sum(axis=3)  # (B, T, nc, h)
        aid = cls["aid"]  # (T, nc)
        for t in range(T):
            np.add.at(danchor_l1, (slice(None), aid[t]), dz1_anchor[:, t])

    w1 = weights.coarse[0][0]
    code_w = arch.code_width
    grads["coarse.0.w"][:code_w] += np.einsum(
        "bnc,bnh->ch", codes.astype(dtype), danchor_l1)
    dcodes = danchor_l1 @ w1[:code_w].T

    # vertex-code gather backward: scatter window cells back onto the features
    _, lat_h, lat_w, depth = cache["batch_shape"]
    idx = cache["gather_idx"]
    dfeat = np.zeros((B, lat_h * lat_w, depth), dtype=dtype)
    cells = idx.shape[1]
    dcodes = dcodes.reshape(B, -1, cells, depth)
    for cell in range(cells):
        np.add.at(dfeat, (slice(None), idx[:, cell]), dcodes[:, :, cell])
    return grads, dfeat.reshape(B, lat_h, lat_w, depth)


# ---------------------------------------------------------------------------
# weight files


def _write_stage(parts: list, layers) -> None:
    for w, b in layers:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())


def save_weights(path, weights) -> None:
    """Write decoder weights in the little-endian binary wire format.

    Header: magic, version u32, feature depth u32, hidden u32, coarse layer
    count u32, fine layer count u32; then per layer rows u32, cols u32,
    rows*cols float32 row-major, cols float32 biases.  The reference decoder
    uses magic "LIIR" with all layers in the first stage and a zero second
    count.
    """
    parts = []
    if isinstance(weights, DecoderWeights):
        arch = weights.arch
        parts.append(struct.pack(
            "<4sIIIII", WEIGHTS_MAGIC, WEIGHTS_VERSION, arch.feature_depth,
            arch.hidden, len(weights.coarse), len(weights.fine)))
        _write_stage(parts, weights.coarse)
        _write_stage(parts, weights.fine)
    elif isinstance(weights, ReferenceWeights):
        parts.append(struct.pack(
            "<4sIIIII", REFERENCE_MAGIC, WEIGHTS_VERSION, weights.feature_depth,
            weights.hidden, len(weights.layers), 0))
        _write_stage(parts, weights.layers)
    else:
        raise TypeError(f"cannot serialize {type(weights).__name__}")
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(f"truncated file: wanted {n} bytes at byte {self.off}")
        chunk = self.blob[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)


def _read_stage(r: _Reader, count: int) -> list:
    layers = []
    for _ in range(count):
        rows, cols = r.u32(), r.u32()
        w = r.f32s(rows * cols).reshape(rows, cols)
        b = r.f32s(cols)
        layers.append((w, b))
    return layers


def load_weights(path):
    """Read a weight file; returns DecoderWeights or ReferenceWeights by magic.

    The decoder's mode (with or without the vertex ensemble) is recovered
    from the first coarse layer width.
    """
    with open(path, "rb") as f:
        r = _Reader(f.read())
    magic = r.take(4)
    if magic not in (WEIGHTS_MAGIC, REFERENCE_MAGIC):
        raise FormatError(f"bad magic {magic!r} at byte 0")
    version = r.u32()
    if version != WEIGHTS_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} at byte 4")
    depth, hidden, n_first, n_second = r.u32(), r.u32(), r.u32(), r.u32()
    if magic == REFERENCE_MAGIC:
        if n_second != 0:
            raise FormatError(f"reference weights carry a second stage at byte {r.off}")
        layers = _read_stage(r, n_first)
        if r.off != len(r.blob):
            raise FormatError(f"trailing bytes at byte {r.off}")
        return ReferenceWeights(depth, hidden, layers)
    coarse = _read_stage(r, n_first)
    fine = _read_stage(r, n_second)
    if r.off != len(r.blob):
        raise FormatError(f"trailing bytes at byte {r.off}")
    first_width = coarse[0][0].shape[0]
    if first_width == 16 * depth + 4:
        ensemble = True
    elif first_width == 9 * depth + 4:
        ensemble = False
    else:
        raise ConfigError(f"coarse input width {first_width} fits no known mode for depth {depth}")
    arch = Architecture(depth, hidden, n_first, n_second - 1, ensemble)
    return DecoderWeights(arch, coarse, fine)
