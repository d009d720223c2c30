"""Arbitrary-scale image upscaling with a sliced coarse-to-fine decoder.

The decoder shares one coarse MLP pass across a contiguous slice of output
pixels before a lightweight per-pixel fine stage, so decode cost grows far
slower with the upscaling factor than a per-pixel implicit decoder.
"""

from .costmodel import (
    CostReport,
    MultiplyCounter,
    benchmark_decode,
    count_macs,
    fit_scaling_exponent,
    write_cost_csv,
)
from .decoder import (
    Architecture,
    DecoderWeights,
    ReferenceWeights,
    coarse_forward,
    decode_at,
    decode_image,
    decode_image_sequential,
    decode_reference,
    ensemble_hidden,
    ensemble_weights,
    fine_forward,
    load_weights,
    local_coords,
    save_weights,
    unfold_vertex_code,
)
from .encoder import FeatureMap, load_feature_map, save_feature_map, unfold_encode
from .errors import (
    ConfigError,
    FormatError,
    ResourceError,
    StateError,
    TrainingError,
    UnsupportedVersionError,
)
from .geometry import (
    CoordGrid,
    GroupPlan,
    Slice,
    build_plan,
    group_coordinates,
    make_grid,
    round_half_up,
    slice_group,
    slice_interval,
)
from .pipeline import (
    TrainConfig,
    TrainResult,
    bicubic_resample,
    load_png,
    make_synthetic_corpus,
    psnr,
    save_png,
    train,
    upscale,
    weight_init,
)

__version__ = "0.1.0"
