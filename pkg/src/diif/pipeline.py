"""End-to-end flows: image I/O, bicubic resampling, training, upscaling.

Images are (H, W, 3) float arrays in [0, 1].  PNG is the only image format
(8-bit RGB, no alpha); loading maps bytes to [0, 1] by /255 and saving
clamps to [0, 1] then quantizes with floor(x*255 + 0.5).  Decode outputs
stay unclamped until they are written.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .decoder import (
    Architecture,
    DecoderWeights,
    ReferenceWeights,
    backward_training,
    decode_image,
    forward_training,
    load_weights,
)
from .encoder import FeatureMap, unfold_encode
from .errors import ConfigError
from .geometry import GroupPlan, build_plan, make_grid
from .numerics import AdamState, adam_step

log = logging.getLogger("diif")

__all__ = [
    "load_png",
    "save_png",
    "bicubic_resample",
    "psnr",
    "weight_init",
    "reference_weight_init",
    "TrainConfig",
    "TrainResult",
    "train",
    "upscale",
    "make_synthetic_corpus",
    "synth_image",
    "dump_plan_debug",
]


# ---------------------------------------------------------------------------
# image I/O


def load_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_png(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3); got {image.shape}")
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# bicubic resampling (Catmull-Rom flavor, a = -0.5, clamp-to-edge)

_BICUBIC_A = -0.5


def _cubic_kernel(d: np.ndarray) -> np.ndarray:
    d = np.abs(d)
    a = _BICUBIC_A
    near = (a + 2.0) * d**3 - (a + 3.0) * d**2 + 1.0
    far = a * (d**3 - 5.0 * d**2 + 8.0 * d - 4.0)
    return np.where(d <= 1.0, near, np.where(d < 2.0, far, 0.0))


def _axis_taps(src_n: int, dst_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-destination source indices (dst, 4) and kernel weights (dst, 4)."""
    pos = (np.arange(dst_n, dtype=np.float64) + 0.5) * (src_n / dst_n) - 0.5
    base = np.floor(pos).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    wts = _cubic_kernel(pos[:, None] - taps)
    return np.clip(taps, 0, src_n - 1), wts


def bicubic_resample(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable 4-tap cubic resample with edge clamping, in float64.

    The kernel is interpolatory (weights of the four taps sum to one for any
    phase), so a same-size resample is an identity up to rounding.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected (H, W, C); got {image.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {out_h}x{out_w}")
    taps_y, w_y = _axis_taps(image.shape[0], out_h)
    taps_x, w_x = _axis_taps(image.shape[1], out_w)
    tmp = np.einsum("rtwc,rt->rwc", image[taps_y], w_y)
    return np.einsum("rwtc,wt->rwc", tmp[:, taps_x], w_x)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; inf if equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# initialization


def _he_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = math.sqrt(6.0 / rows)
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(np.float32)


def weight_init(arch: Architecture, seed: int) -> DecoderWeights:
    """He-style fan-in uniform init (limit sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    coarse = [(_he_uniform(rng, r, c), np.zeros(c, dtype=np.float32))
              for r, c in arch.coarse_shapes()]
    fine = [(_he_uniform(rng, r, c), np.zeros(c, dtype=np.float32))
            for r, c in arch.fine_shapes()]
    return DecoderWeights(arch, coarse, fine)


def reference_weight_init(depth: int, seed: int, hidden: int = 256) -> ReferenceWeights:
    rng = np.random.default_rng(seed)
    layers = [(_he_uniform(rng, r, c), np.zeros(c, dtype=np.float32))
              for r, c in ReferenceWeights.shapes(depth, hidden)]
    return ReferenceWeights(depth, hidden, layers)


# ---------------------------------------------------------------------------
# synthetic data (smooth procedural textures; used by the smoke runs)


def synth_image(seed: int, height: int = 96, width: int = 96) -> np.ndarray:
    """Deterministic smooth test image: gaussian blobs + low-frequency waves."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width),
                         indexing="ij")
    img = np.zeros((height, width, 3), dtype=np.float64)
    for c in range(3):
        acc = np.zeros((height, width))
        for _ in range(3):
            cy, cx = rng.uniform(0, 1, 2)
            sig = rng.uniform(0.1, 0.35)
            acc += rng.uniform(-1, 1) * np.exp(
                -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2))
        for _ in range(2):
            fy, fx = rng.uniform(0.5, 3.0, 2)
            ph = rng.uniform(0, 2 * np.pi)
            acc += rng.uniform(-0.5, 0.5) * np.sin(2 * np.pi * (fy * yy + fx * xx) + ph)
        img[:, :, c] = acc
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo + 1e-12)
    return 0.05 + 0.9 * img


def make_synthetic_corpus(directory, count: int = 8, size: int = 96,
                          seed: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = directory / f"synth_{i:02d}.png"
        save_png(p, synth_image(seed + i, size, size))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    """Decoder-only training configuration (the encoder has no parameters).

    Each iteration samples one scale from ``scales``, crops ``batch`` HR
    patches of ``crop`` pixels, augments with horizontal flips (p = 0.5) and
    uniform 90-degree rotations, downsamples bicubically, and takes one Adam
    step on the mean L1 against the HR pixels.  The learning rate halves
    every ``iters // 5`` iterations (at least every iteration).
    """

    data_dir: str
    iters: int
    seed: int
    crop: int = 48
    scales: Sequence[float] = (2.0, 2.5, 3.0, 3.5, 4.0)
    batch: int = 16
    lr: float = 1e-4
    lr_decay: float = 0.5
    radius: int = 1
    hidden: int = 256
    coarse_layers: int = 2
    fine_layers: int = 2
    ensemble: bool = True
    strategy: str = "linear"
    n: int = 1
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.iters < 0 or self.crop < 2 or self.batch < 1:
            raise ConfigError(f"bad training config: {self}")
        if min(self.scales) < 1.0:
            raise ConfigError(f"scales must be >= 1: {self.scales}")
        if self.crop % int(max(self.scales)) != 0:
            raise ConfigError(
                f"crop {self.crop} not divisible by max scale {max(self.scales)}")

    def architecture(self) -> Architecture:
        depth = 3 * (2 * self.radius + 1) ** 2
        return Architecture(depth, self.hidden, self.coarse_layers,
                            self.fine_layers, self.ensemble)


@dataclass
class TrainResult:
    weights: DecoderWeights
    losses: list


def _load_corpus(data_dir) -> list[np.ndarray]:
    paths = sorted(Path(data_dir).glob("*.png"))
    images = []
    for p in paths:
        try:
            images.append(load_png(p))
        except Exception as exc:  # unreadable file: warn and move on
            log.warning("skipping unreadable image %s: %s", p, exc)
    if not images:
        raise ConfigError(f"no readable training images in {data_dir}")
    return images


def _augment(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < 0.5:
        patch = patch[:, ::-1]
    return np.rot90(patch, k=int(rng.integers(4)))


_PLAN_CACHE: dict = {}


def _plan_for(out_n: int, lat_n: int, strategy: str, n: int, scale: float) -> GroupPlan:
    key = (out_n, lat_n, strategy, n, round(scale, 6))
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        plan = build_plan(make_grid(out_n, out_n), make_grid(lat_n, lat_n),
                          strategy, n, scale)
        _PLAN_CACHE[key] = plan
    return plan


def train(cfg: TrainConfig) -> TrainResult:
    """Run the decoder training loop; deterministic for a fixed seed."""
    images = _load_corpus(cfg.data_dir)
    for i, img in enumerate(images):
        if img.shape[0] < cfg.crop or img.shape[1] < cfg.crop:
            raise ConfigError(
                f"image {i} is {img.shape[0]}x{img.shape[1]}, smaller than crop {cfg.crop}")
    rng = np.random.default_rng(cfg.seed)
    arch = cfg.architecture()
    weights = weight_init(arch, cfg.seed)
    params = weights.params()
    state = AdamState(lr=cfg.lr)
    decay_every = max(1, cfg.iters // 5)
    losses: list[float] = []

    for it in range(cfg.iters):
        s = float(cfg.scales[rng.integers(len(cfg.scales))])
        lr_size = math.floor(cfg.crop / s)
        out_size = math.floor(lr_size * s)
        feats = np.empty((cfg.batch, lr_size, lr_size, arch.feature_depth),
                         dtype=np.float32)
        targets = np.empty((cfg.batch, out_size, out_size, 3), dtype=np.float32)
        for b in range(cfg.batch):
            img = images[rng.integers(len(images))]
            y0 = int(rng.integers(img.shape[0] - cfg.crop + 1))
            x0 = int(rng.integers(img.shape[1] - cfg.crop + 1))
            patch = _augment(img[y0:y0 + cfg.crop, x0:x0 + cfg.crop], rng)
            lr_img = bicubic_resample(patch, lr_size, lr_size)
            feats[b] = unfold_encode(lr_img, cfg.radius).data
            targets[b] = patch[:out_size, :out_size]
        plan = _plan_for(out_size, lr_size, cfg.strategy, cfg.n, s)
        pred, cache = forward_training(feats, plan, weights)
        diff = pred - targets
        loss = float(np.mean(np.abs(diff)))
        dout = (np.sign(diff) / diff.size).astype(np.float32)
        grads, _ = backward_training(cache, dout)
        adam_step(params, grads, state)
        losses.append(loss)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iter %d: loss %.5f lr %.2e", it + 1, loss, state.lr)
        if (it + 1) % decay_every == 0:
            state.lr *= cfg.lr_decay
    return TrainResult(weights, losses)


# ---------------------------------------------------------------------------
# upscaling


def upscale(
    input_path,
    weights_path,
    scale: Optional[float] = None,
    out_path=None,
    out_size: Optional[tuple[int, int]] = None,
    strategy: str = "linear",
    n: int = 1,
    threads: Optional[int] = None,
):
    """Upscale a PNG by a real factor (or to explicit output dims).

    Returns (image, cost report).  Output dims are floor(scale * input dims)
    when a scale is given.
    """
    from .costmodel import count_macs

    weights = load_weights(weights_path)
    if not isinstance(weights, DecoderWeights):
        raise ConfigError(f"{weights_path} holds reference weights, not a sliced decoder")
    side = round(math.sqrt(weights.arch.feature_depth / 3))
    if 3 * side * side != weights.arch.feature_depth or side % 2 != 1:
        raise ConfigError(
            f"feature depth {weights.arch.feature_depth} does not match an unfold encoder")
    radius = (side - 1) // 2

    image = load_png(input_path)
    h, w = image.shape[:2]
    if (scale is None) == (out_size is None):
        raise ValueError("give exactly one of scale or out_size")
    if scale is not None:
        if scale < 1.0:
            raise ValueError(f"scale must be >= 1; got {scale}")
        out_h, out_w = math.floor(scale * h), math.floor(scale * w)
        s = float(scale)
    else:
        out_h, out_w = out_size
        s = math.sqrt((out_h * out_w) / (h * w))
        if out_h < h or out_w < w:
            raise ValueError(f"target {out_h}x{out_w} is below the input size")

    feats = unfold_encode(image, radius)
    fmap = FeatureMap(feats.height, feats.width, feats.depth,
                      feats.data.astype(np.float32))
    plan = build_plan(make_grid(out_h, out_w), fmap.grid(), strategy, n, s)
    out = decode_image(fmap, plan, weights, threads=threads)
    if out_path is not None:
        save_png(out_path, out)
    return out, count_macs(weights.arch, plan)


def dump_plan_debug(plan: GroupPlan, path) -> None:
    """Debug-dump a plan as JSON.

    Schema: out/latent dims, strategy, n, scale, per-axis run starts/counts,
    and the slice interval per distinct group size.
    """
    sizes = {}
    for yc in np.unique(plan.y_count):
        for xc in np.unique(plan.x_count):
            g = int(yc * xc)
            if plan.strategy is not None:
                from .geometry import slice_interval

                sizes[str(g)] = slice_interval(plan.strategy, plan.scale, plan.n, g)
    doc = {
        "out": [plan.out_grid.height, plan.out_grid.width],
        "latent": [plan.latent_grid.height, plan.latent_grid.width],
        "strategy": plan.strategy,
        "n": plan.n,
        "scale": plan.scale,
        "y_start": plan.y_start.tolist(),
        "y_count": plan.y_count.tolist(),
        "x_start": plan.x_start.tolist(),
        "x_count": plan.x_count.tolist(),
        "interval_by_group_size": sizes,
        "groups": plan.n_groups,
        "slices": plan.total_slices() if plan.strategy is not None else None,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
