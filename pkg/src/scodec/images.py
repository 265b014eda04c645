"""PNG and binary PPM image I/O as float32 RGB planes in [0, 1]."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .tensors import DTYPE


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read an image file as a (3, height, width) float32 array in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        data = np.asarray(rgb, dtype=np.uint8)
    return np.ascontiguousarray(data.transpose(2, 0, 1)).astype(DTYPE) / DTYPE(255.0)


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a (3, height, width) float array; format chosen by extension."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError("save_image expects a (3, height, width) array")
    clipped = np.clip(image.astype(np.float64), 0.0, 1.0)
    quantized = np.floor(clipped * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path)
