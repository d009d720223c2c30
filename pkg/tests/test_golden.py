"""Replays the cross-implementation golden vectors under tests/golden.

The files are generated by the interop package's straight-line 64-bit
oracle; reproducing them here checks the two implementations agree on every
documented convention (gather windows, blend weights, offset mirroring,
binary formats) without sharing any code.

Each JSON case carries base64-encoded little-endian float64 payloads and
the tolerances to apply: decoding runs once in float64 (tight tolerance)
and once in float32 (loose).
"""

import base64
import json
from pathlib import Path

import numpy as np
import pytest

from diif.decoder import (
    Architecture,
    DecoderWeights,
    coarse_forward,
    decode_at,
    decode_image,
    ensemble_weights,
    fine_forward,
    load_weights,
    save_weights,
)
from diif.encoder import FeatureMap, load_feature_map
from diif.geometry import build_plan, make_grid
from diif.numerics import matmul_add_bias

GOLDEN_DIR = Path(__file__).parent / "golden"


def _array(node) -> np.ndarray:
    raw = base64.b64decode(node["data_b64"])
    return np.frombuffer(raw, dtype="<f8").reshape(node["shape"]).copy()


def _weights(node, dtype) -> DecoderWeights:
    arch = Architecture(
        node["arch"]["feature_depth"], node["arch"]["hidden"],
        node["arch"]["coarse_layers"], node["arch"]["fine_layers"],
        node["arch"]["ensemble"])
    stage = lambda layers: [
        (_array(l["w"]).astype(dtype), _array(l["b"]).astype(dtype))
        for l in layers
    ]
    return DecoderWeights(arch, stage(node["coarse"]), stage(node["fine"]))


def _features(node, dtype) -> FeatureMap:
    data = _array(node["data"]).astype(dtype)
    return FeatureMap(node["height"], node["width"], node["depth"], data)


def golden_cases() -> list:
    cases = []
    for path in sorted(GOLDEN_DIR.glob("*.json")):
        with open(path) as f:
            case = json.load(f)
        case["_dir"] = path.parent
        cases.append(case)
    return cases


def _run(case: dict, dtype) -> float:
    """Worst abs deviation between this implementation and the recorded output."""
    op = case["op"]
    inp = case["inputs"]
    if op == "matmul":
        got = matmul_add_bias(_array(inp["x"]).astype(dtype),
                              _array(inp["w"]).astype(dtype),
                              _array(inp["b"]).astype(dtype))
        want = _array(case["expected"]["y"])
    elif op == "coarse_forward":
        w = _weights(inp["weights"], dtype)
        got = coarse_forward(_array(inp["code"]).astype(dtype),
                             _array(inp["x_first_rel"]),
                             _array(inp["x_last_rel"]), w)
        want = _array(case["expected"]["hidden"])
    elif op == "fine_forward":
        w = _weights(inp["weights"], dtype)
        got = fine_forward(_array(inp["hidden"]).astype(dtype),
                           _array(inp["x_rel"]), w)
        want = _array(case["expected"]["rgb"])
    elif op == "ensemble_weights":
        got = ensemble_weights(inp["p"], inp["q"])
        want = _array(case["expected"]["weights"])
    elif op == "decode_at":
        w = _weights(inp["weights"], dtype)
        feats = _features(inp["features"], dtype)
        got = decode_at(feats, _array(inp["coords"]), w)
        want = _array(case["expected"]["rgb"])
    elif op == "decode_grid":
        w = _weights(inp["weights"], dtype)
        feats = _features(inp["features"], dtype)
        plan = build_plan(make_grid(inp["out_height"], inp["out_width"]),
                          make_grid(feats.height, feats.width),
                          inp["strategy"], inp["n"], inp["scale"])
        got = decode_image(feats, plan, w)
        want = _array(case["expected"]["image"])
    elif op == "file_decode":
        w = load_weights(case["_dir"] / inp["weights_file"])
        if dtype == np.float64:
            w = w.astype(np.float64)
        fmap = load_feature_map(case["_dir"] / inp["features_file"])
        if dtype == np.float64:
            fmap = FeatureMap(fmap.height, fmap.width, fmap.depth,
                              fmap.data.astype(np.float64))
        plan = build_plan(make_grid(inp["out_height"], inp["out_width"]),
                          make_grid(fmap.height, fmap.width),
                          inp["strategy"], inp["n"], inp["scale"])
        got = decode_image(fmap, plan, w)
        want = _array(case["expected"]["image"])
    else:
        raise AssertionError(f"unknown golden op {op!r}")
    got = np.asarray(got, dtype=np.float64)
    assert got.shape == want.shape, f"shape {got.shape} vs {want.shape}"
    return float(np.max(np.abs(got - want))) if got.size else 0.0


def run_case(case: dict):
    """None if the case reproduces within tolerance, else a description."""
    try:
        err64 = _run(case, np.float64)
        if err64 > case["tolerance_f64"]:
            return f"float64 deviation {err64:.3e} > {case['tolerance_f64']:.0e}"
        err32 = _run(case, np.float32)
        if err32 > case["tolerance_f32"]:
            return f"float32 deviation {err32:.3e} > {case['tolerance_f32']:.0e}"
    except Exception as exc:
        return f"raised {type(exc).__name__}: {exc}"
    return None


def _case_ids():
    return [c["name"] for c in golden_cases()]


@pytest.mark.parametrize("case", golden_cases(), ids=_case_ids())
def test_golden_case(case):
    err = run_case(case)
    assert err is None, f"{case['name']}: {err}"


def test_goldens_exist():
    assert golden_cases(), "no golden files checked in under tests/golden"


def test_interop_weight_file_rewrites_byte_identical(tmp_path):
    """ DIIF files written by the interop exporter survive a load/save loop."""
    files = sorted(GOLDEN_DIR.glob("*.bin"))
    assert files, "no interop-written weight files under tests/golden"
    for path in files:
        w = load_weights(path)
        out = tmp_path / path.name
        save_weights(out, w)
        assert out.read_bytes() == path.read_bytes(), path.name
