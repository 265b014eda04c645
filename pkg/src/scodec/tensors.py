"""Deterministic float32 tensor primitives.

All operations take and return numpy float32 arrays in NCHW layout and are
evaluated eagerly. Convolution accumulates over kernel taps in row-major
order (kernel row, then kernel column); the channel reduction inside a
single tap is one fused dot product. The evaluation order is fixed, so a
given build on a given machine reproduces results bit for bit. Bit equality
across different BLAS builds is not promised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

DTYPE = np.float32

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

ACTIVATION_KINDS = ("gelu-tanh", "silu", "relu", "tanh", "sigmoid")


def as_tensor(values, name: str = "input") -> np.ndarray:
    """Coerce to a contiguous float32 array, rejecting non-finite input."""
    t = np.ascontiguousarray(values, dtype=DTYPE)
    if not np.isfinite(t).all():
        raise ConfigurationError(f"{name} contains non-finite values")
    return t


def _require_nchw(x: np.ndarray, name: str) -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ConfigurationError(f"{name} must be a rank-4 NCHW array")
    if x.dtype != DTYPE:
        raise ConfigurationError(f"{name} must be float32, got {x.dtype}")
    return x


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution.

    padding is symmetric per axis: an int pads rows and columns alike, a
    (rows, cols) pair pads them separately.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int | tuple[int, int] = 0
    groups: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w) < 1:
            raise ConfigurationError("conv extents must be positive")
        pad = self.padding if isinstance(self.padding, tuple) else (self.padding, self.padding)
        object.__setattr__(self, "padding", (int(pad[0]), int(pad[1])))
        if self.stride < 1 or min(self.padding) < 0 or self.groups < 1:
            raise ConfigurationError("invalid conv stride/padding/groups")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigurationError("channels must divide evenly into groups")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel_h,
            self.kernel_w,
        )

    def out_extent(self, extent: int, kernel: int, pad: int) -> int:
        out = (extent + 2 * pad - kernel) // self.stride + 1
        if out < 1:
            raise ConfigurationError(
                f"conv input extent {extent} too small for kernel {kernel} "
                f"with padding {pad}"
            )
        return out


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Grouped 2-D convolution with zero padding.

    weight has shape (out_channels, in_channels/groups, kh, kw) and bias
    shape (out_channels,). Output spatial extents follow the usual
    floor((e + 2p - k)/s) + 1 rule and must stay >= 1.
    """
    x = _require_nchw(x, "conv input")
    n, ci, h, w = x.shape
    if ci != spec.in_channels:
        raise ConfigurationError(
            f"conv expected {spec.in_channels} input channels, got {ci}"
        )
    if weight.shape != spec.weight_shape or weight.dtype != DTYPE:
        raise ConfigurationError(
            f"conv weight must be float32 {spec.weight_shape}, got "
            f"{weight.dtype} {weight.shape}"
        )
    if bias.shape != (spec.out_channels,) or bias.dtype != DTYPE:
        raise ConfigurationError("conv bias must be float32 (out_channels,)")

    ph, pw = spec.padding
    ho = spec.out_extent(h, spec.kernel_h, ph)
    wo = spec.out_extent(w, spec.kernel_w, pw)
    s = spec.stride
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    if spec.groups == spec.in_channels == spec.out_channels:
        # depthwise fast path: one fused multiply-add per kernel tap
        acc = np.zeros((n, spec.out_channels, ho, wo), dtype=DTYPE)
        for kh in range(spec.kernel_h):
            for kw in range(spec.kernel_w):
                patch = x[:, :, kh : kh + s * ho : s, kw : kw + s * wo : s]
                acc += patch * weight[:, 0, kh, kw][None, :, None, None]
        out = acc + bias[None, :, None, None]
    else:
        cig = spec.in_channels // spec.groups
        cog = spec.out_channels // spec.groups
        parts = []
        for g in range(spec.groups):
            xs = x[:, g * cig : (g + 1) * cig]
            ws = weight[g * cog : (g + 1) * cog]
            acc = np.zeros((n, ho, wo, cog), dtype=DTYPE)
            for kh in range(spec.kernel_h):
                for kw in range(spec.kernel_w):
                    patch = xs[:, :, kh : kh + s * ho : s, kw : kw + s * wo : s]
                    acc += np.tensordot(patch, ws[:, :, kh, kw], axes=([1], [1]))
            parts.append(acc)
        joined = parts[0] if spec.groups == 1 else np.concatenate(parts, axis=3)
        out = joined.transpose(0, 3, 1, 2) + bias[None, :, None, None]

    out = np.ascontiguousarray(out, dtype=DTYPE)
    if not np.isfinite(out).all():
        raise ConfigurationError("conv output overflowed to non-finite values")
    return out


def pixel_unshuffle(x: np.ndarray, factor: int) -> np.ndarray:
    """Space-to-depth rearrangement, channel-major sub-pixel order.

    Output channel c*factor^2 + dy*factor + dx holds input channel c sampled
    at row offset dy, column offset dx. Pure reordering, bit exact.
    """
    x = _require_nchw(x, "pixel_unshuffle input")
    n, c, h, w = x.shape
    if factor < 1 or h % factor or w % factor:
        raise ConfigurationError(
            f"extents ({h}, {w}) not divisible by unshuffle factor {factor}"
        )
    r = factor
    t = x.reshape(n, c, h // r, r, w // r, r)
    t = t.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(t.reshape(n, c * r * r, h // r, w // r))


def pixel_shuffle(x: np.ndarray, factor: int) -> np.ndarray:
    """Depth-to-space rearrangement, exact inverse of pixel_unshuffle."""
    x = _require_nchw(x, "pixel_shuffle input")
    n, c, h, w = x.shape
    r = factor
    if factor < 1 or c % (r * r):
        raise ConfigurationError(
            f"channel count {c} not divisible by shuffle factor {factor}^2"
        )
    co = c // (r * r)
    t = x.reshape(n, co, r, r, h, w)
    t = t.transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(t.reshape(n, co, h * r, w * r))


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Pointwise nonlinearity evaluated in float32."""
    if kind == "gelu-tanh":
        inner = _SQRT_2_OVER_PI * (x + DTYPE(0.044715) * x * x * x)
        return (DTYPE(0.5) * x * (DTYPE(1.0) + np.tanh(inner))).astype(DTYPE)
    if kind == "silu":
        return (x * _sigmoid(x)).astype(DTYPE)
    if kind == "relu":
        return np.maximum(x, DTYPE(0.0))
    if kind == "tanh":
        return np.tanh(x).astype(DTYPE)
    if kind == "sigmoid":
        return _sigmoid(x)
    raise ConfigurationError(f"unknown activation kind {kind!r}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids exp overflow for large negative inputs
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(DTYPE)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (not banker's rounding)."""
    return (np.sign(x) * np.floor(np.abs(x) + DTYPE(0.5))).astype(DTYPE)


def replicate_pad_to_multiple(x: np.ndarray, multiple: int) -> np.ndarray:
    """Pad bottom and right edges by replication so extents divide `multiple`."""
    x = _require_nchw(x, "pad input")
    h, w = x.shape[2], x.shape[3]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")


def crop_top_left(x: np.ndarray, height: int, width: int) -> np.ndarray:
    if height > x.shape[2] or width > x.shape[3]:
        raise ConfigurationError("crop extents exceed tensor extents")
    return np.ascontiguousarray(x[:, :, :height, :width])
