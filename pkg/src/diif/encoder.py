"""Parameter-free unfold encoder and the feature-map wire format.

The encoder stacks each pixel's clamped (2r+1)x(2r+1) RGB neighborhood into
a latent code, so the feature map has the input's spatial dims and depth
3*(2r+1)^2.  Radius 0 is the identity encoder (depth 3).  Latent codes sit
at the pixel centers of the input grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UnsupportedVersionError
from .geometry import CoordGrid, make_grid

__all__ = [
    "FeatureMap",
    "unfold_encode",
    "save_feature_map",
    "load_feature_map",
]

FEATURE_MAGIC = b"DIFM"
FEATURE_VERSION = 1


@dataclass
class FeatureMap:
    """H x W grid of depth-D latent codes anchored at input pixel centers."""

    height: int
    width: int
    depth: int
    data: np.ndarray  # (height, width, depth)

    def __post_init__(self) -> None:
        if self.data.shape != (self.height, self.width, self.depth):
            raise ValueError(
                f"feature data shape {self.data.shape} != "
                f"({self.height}, {self.width}, {self.depth})"
            )

    def grid(self) -> CoordGrid:
        return make_grid(self.height, self.width)


def unfold_encode(image: np.ndarray, radius: int = 1) -> FeatureMap:
    """Encode an (H, W, 3) image by neighborhood unfolding.

    Border pixels clamp to the edge.  Cell order within a code is row-major
    over the window, channels innermost, matching the decoder's gathers.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image; got {image.shape}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0; got {radius}")
    h, w, _ = image.shape
    side = 2 * radius + 1
    cells = []
    for dy in range(-radius, radius + 1):
        rows = np.clip(np.arange(h) + dy, 0, h - 1)
        for dx in range(-radius, radius + 1):
            cols = np.clip(np.arange(w) + dx, 0, w - 1)
            cells.append(image[rows][:, cols])
    data = np.concatenate(cells, axis=2)
    return FeatureMap(h, w, 3 * side * side, data)


def save_feature_map(path, fmap: FeatureMap) -> None:
    """Write the little-endian binary format: magic "DIFM", version u32,
    H u32, W u32, depth u32, then H*W*depth float32 row-major
    (row, col, channel)."""
    header = struct.pack(
        "<4sIIII", FEATURE_MAGIC, FEATURE_VERSION, fmap.height, fmap.width, fmap.depth
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())


def load_feature_map(path) -> FeatureMap:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} at byte 0")
    if len(blob) < 20:
        raise FormatError(f"truncated header: {len(blob)} bytes")
    version, h, w, d = struct.unpack("<IIII", blob[4:20])
    if version != FEATURE_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} at byte 4")
    want = 20 + 4 * h * w * d
    if len(blob) != want:
        raise FormatError(f"expected {want} bytes, file has {len(blob)} (at byte 20)")
    data = np.frombuffer(blob[20:], dtype="<f4").astype(np.float32).reshape(h, w, d)
    return FeatureMap(h, w, d, data)
