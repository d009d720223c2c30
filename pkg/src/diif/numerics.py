"""Dense MLP primitives: matmul with bias, ReLU, Adam, finite differences.

Everything operates on plain numpy arrays and is dtype-agnostic.  Two dtype
regimes are used throughout the project: float32 for inference and
benchmarks, float64 for gradient verification.  Parameters are addressed by
name (dict of arrays) so optimizer errors can point at the offending tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import TrainingError

__all__ = [
    "matmul_add_bias",
    "relu",
    "AdamState",
    "adam_step",
    "finite_diff_gradient",
    "finite_diff_gradient_at",
]


def matmul_add_bias(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``x @ w + b`` for a (batch, in) activation block.

    Shapes are validated up front so a mismatch fails loudly instead of
    broadcasting into nonsense.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    b = np.asarray(b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ValueError(
            f"expected 2D x, 2D w, 1D b; got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {x.shape} @ {w.shape} + {b.shape}")
    return x @ w + b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class AdamState:
    """First/second moment buffers for a named parameter set.

    A state object is owned by exactly one training loop; the moment dicts are
    keyed by parameter name and created lazily on the first step.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(f"betas must lie in (0, 1); got {self.beta1}, {self.beta2}")
        if self.lr <= 0.0:
            raise ValueError(f"learning rate must be positive; got {self.lr}")


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Gradients must be finite; a NaN/inf gradient raises TrainingError naming
    the parameter.  Zero gradients leave parameters untouched for any number
    of steps (moments stay exactly zero).
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


def _param_copy(params: Mapping[str, np.ndarray]) -> dict:
    return {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}


def finite_diff_gradient(
    fn: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict:
    """Central-difference gradient of a scalar function of named parameters.

    Every coordinate is probed, so this is only for small parameter sets; use
    :func:`finite_diff_gradient_at` to spot-check a sample of coordinates in a
    large model.  Work happens in float64 regardless of input dtype.
    """
    work = _param_copy(params)
    out = {k: np.zeros_like(v) for k, v in work.items()}
    for name, arr in work.items():
        flat = arr.reshape(-1)
        grad = out[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(work)
            flat[i] = orig - h
            lo = fn(work)
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * h)
    return out


def finite_diff_gradient_at(
    fn: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    coords: Mapping[str, Iterable[int]],
    h: float = 1e-5,
) -> dict:
    """Central differences at selected flat indices per parameter.

    Returns ``{name: (indices, values)}`` with one difference quotient per
    requested coordinate.
    """
    work = _param_copy(params)
    out = {}
    for name, idxs in coords.items():
        flat = work[name].reshape(-1)
        idxs = list(idxs)
        vals = np.zeros(len(idxs), dtype=np.float64)
        for slot, i in enumerate(idxs):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(work)
            flat[i] = orig - h
            lo = fn(work)
            flat[i] = orig
            vals[slot] = (hi - lo) / (2.0 * h)
        out[name] = (np.asarray(idxs), vals)
    return out
