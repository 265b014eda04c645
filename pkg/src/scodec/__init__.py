"""Extreme low-bitrate learned image codec.

Deterministic float32 transform inference, a 4-step quadtree autoregressive
entropy model over a hyperprior, carry-less range coding, a versioned
bitstream container, one-step denoising with pluggable noise predictors,
tiled decoding, a quantized color fix, and a rate-distortion evaluation
toolkit.
"""

__version__ = "0.1.0"

from .config import TransformConfig
from .errors import (
    CodingError,
    ConfigurationError,
    ContainerError,
    DecodeError,
    InternalError,
    ModelMismatchError,
    ScodecError,
    SequencingError,
    WeightFormatError,
    WeightSchemaError,
)
from .metrics import Curve, RatePoint, bd_rate, eval_corpus, ms_ssim, psnr
from .nets import random_store, schema
from .pipeline import (
    ColorStats,
    DecodeResult,
    EncodeResult,
    NoiseSchedule,
    TileConfig,
    ToyPredictor,
    ZeroPredictor,
    color_fix,
    decode_image,
    encode_image,
    one_step_denoise,
    tile_process,
)
from .weights import WeightStore, load_weights, save_weights

__all__ = [
    "TransformConfig",
    "ScodecError",
    "ConfigurationError",
    "InternalError",
    "SequencingError",
    "WeightFormatError",
    "WeightSchemaError",
    "ContainerError",
    "ModelMismatchError",
    "CodingError",
    "DecodeError",
    "WeightStore",
    "load_weights",
    "save_weights",
    "random_store",
    "schema",
    "encode_image",
    "decode_image",
    "EncodeResult",
    "DecodeResult",
    "NoiseSchedule",
    "ZeroPredictor",
    "ToyPredictor",
    "one_step_denoise",
    "TileConfig",
    "tile_process",
    "ColorStats",
    "color_fix",
    "psnr",
    "ms_ssim",
    "bd_rate",
    "RatePoint",
    "Curve",
    "eval_corpus",
    "__version__",
]
