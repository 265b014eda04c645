"""Quadtree autoregressive entropy model.

The code field splits spatially into four interleaved groups on a 2x2
lattice, coded in a fixed order: (0,0), then (1,1), then (0,1), then (1,0).
Group 1 is conditioned on the hyperprior feature field alone; each later
group additionally sees every previously decoded group overlaid onto that
field at its lattice positions. A shared trunk with private per-step 1x1
adapters predicts a mean and scale per element, values are quantized to
round(y - mean) + mean with ties away from zero, and a per-step residual
head bounded to (-0.5, 0.5) refines each decoded group before it joins the
context.

Coding distributions are Gaussians discretized to integer tables with
16-bit totals over the symbol support [-127, 127]; mass outside lands in a
final escape bucket (escaped values are raw 16-bit coded). Scales are
clamped to [0.04, 64.0] before discretization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .config import TransformConfig
from .errors import InternalError, SequencingError
from .nets import ParamSource, run_context_step, run_lrp
from .rangecoder import TOTAL, CdfRows, CdfTable
from .tensors import DTYPE, round_half_away

GROUP_COUNT = 4
# lattice offsets (row, col) in coding order
GROUP_OFFSETS = ((0, 0), (1, 1), (0, 1), (1, 0))
SIGMA_MIN = 0.04
SIGMA_MAX = 64.0
SYMBOL_SUPPORT = (-127, 127)
ESCAPE_RAW_BITS = 16
LRP_BOUND = 0.5


@dataclass(frozen=True)
class GaussianParams:
    """Per-element coding distribution: mean and clamped scale, same shape."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.scale.shape:
            raise InternalError("mean and scale shapes differ")


def partition(field: np.ndarray) -> tuple[np.ndarray, ...]:
    """Split a field into its four lattice groups, coding order."""
    if field.shape[-1] % 2 or field.shape[-2] % 2:
        raise InternalError("quadtree partition needs even spatial extents")
    return tuple(
        np.ascontiguousarray(field[..., dy::2, dx::2]) for dy, dx in GROUP_OFFSETS
    )


def merge(groups) -> np.ndarray:
    """Inverse of partition."""
    groups = tuple(groups)
    if len(groups) != GROUP_COUNT:
        raise InternalError(f"merge needs {GROUP_COUNT} groups")
    g = groups[0]
    full = np.empty(g.shape[:-2] + (g.shape[-2] * 2, g.shape[-1] * 2), dtype=g.dtype)
    for (dy, dx), part in zip(GROUP_OFFSETS, groups):
        if part.shape != g.shape:
            raise InternalError("group shapes differ")
        full[..., dy::2, dx::2] = part
    return full


def scatter_group(field: np.ndarray, step: int, values: np.ndarray) -> None:
    """Write one group's values into a full-resolution field in place."""
    dy, dx = GROUP_OFFSETS[step]
    field[..., dy::2, dx::2] = values


def gather_group(field: np.ndarray, step: int) -> np.ndarray:
    dy, dx = GROUP_OFFSETS[step]
    return np.ascontiguousarray(field[..., dy::2, dx::2])


def quantize(values: np.ndarray, mean: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-centered quantization.

    Returns (symbols int32, reconstruction float32) where the symbol is
    round(value - mean) with ties away from zero and the reconstruction is
    symbol + mean.
    """
    delta = round_half_away(values - mean)
    return delta.astype(np.int32), (delta + mean).astype(DTYPE)


def gaussian_cdf_rows(
    params: GaussianParams,
    support: tuple[int, int] = SYMBOL_SUPPORT,
) -> CdfRows:
    """Discretize per-element Gaussians to integer tables.

    The probability of symbol s is Phi((s + 0.5 - mean)/scale) -
    Phi((s - 0.5 - mean)/scale); leftover tail mass goes to the escape
    bucket. Real probabilities are apportioned to 16-bit integer counts by
    largest remainder with every bucket floored at one count, so every
    symbol stays codable.
    """
    lo, hi = support
    means = np.asarray(params.mean, dtype=np.float64).reshape(-1)
    scales = np.clip(
        np.asarray(params.scale, dtype=np.float64).reshape(-1), SIGMA_MIN, SIGMA_MAX
    )
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5  # bucket boundaries
    z = (edges[None, :] - means[:, None]) / scales[:, None]
    cdf = ndtr(z)
    probs = np.diff(cdf, axis=1)
    escape = np.clip(1.0 - probs.sum(axis=1), 0.0, 1.0)
    probs = np.concatenate([probs, escape[:, None]], axis=1)

    buckets = probs.shape[1]
    budget = TOTAL - buckets  # one guaranteed count per bucket comes off the top
    raw = probs * budget
    counts = np.floor(raw).astype(np.int64) + 1
    frac = raw - np.floor(raw)
    deficit = TOTAL - counts.sum(axis=1)
    # largest-remainder apportionment, stable order breaks ties
    order = np.argsort(-frac, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(buckets)[None, :].repeat(len(means), 0), axis=1)
    counts += rank < deficit[:, None]

    cum = np.zeros((len(means), buckets + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cum[:, 1:])
    return CdfRows((lo, hi), cum)


def build_cdf(
    params: GaussianParams, support: tuple[int, int] = SYMBOL_SUPPORT
) -> list[CdfTable]:
    """Per-element CdfTable objects; convenience wrapper over gaussian_cdf_rows."""
    rows = gaussian_cdf_rows(params, support)
    return [rows.table(i) for i in range(len(rows))]


def coding_rows(
    params: GaussianParams, support: tuple[int, int] = SYMBOL_SUPPORT
) -> CdfRows:
    """Integer tables for the symbols produced by quantize().

    Symbols are residuals round(v - mean), so their distribution under the
    model is the element's Gaussian re-centered at zero; only the scale
    matters here. Using the raw mean as the table offset would double-count
    it and misprice every symbol.
    """
    zero = np.zeros_like(params.scale)
    return gaussian_cdf_rows(GaussianParams(zero, params.scale), support)


def estimate_rate(symbols: np.ndarray, rows: CdfRows) -> float:
    """Exact information content of symbols under the integer tables, in bits.

    Escaped symbols cost their escape bucket plus 16 raw bits. This is the
    quantity the range coder approaches to within its small constant
    overhead.
    """
    lo, hi = rows.support
    flat = np.asarray(symbols).reshape(-1).astype(np.int64)
    if len(flat) != len(rows):
        raise InternalError("symbol count does not match table count")
    if len(flat) == 0:
        return 0.0
    escape_bucket = hi - lo + 1
    buckets = np.where((flat >= lo) & (flat <= hi), flat - lo, escape_bucket)
    idx = np.arange(len(flat))
    counts = rows.cum[idx, buckets + 1] - rows.cum[idx, buckets]
    bits = np.log2(TOTAL / counts.astype(np.float64))
    bits += (buckets == escape_bucket) * float(ESCAPE_RAW_BITS)
    return float(bits.sum())


class EntropyModel:
    """Conditional coding distributions for the code and hyper code fields."""

    def __init__(self, params: ParamSource, cfg: TransformConfig):
        self._p = params
        self._cfg = cfg

    # hyper code: factorized per-channel Gaussian prior

    def hyper_params(self, shape: tuple[int, ...]) -> GaussianParams:
        """Broadcast the per-channel prior over a hyper code field (n,c,h,w)."""
        cz = self._cfg.hyper_channels
        if len(shape) != 4 or shape[1] != cz:
            raise InternalError(f"hyper field must have {cz} channels")
        loc = self._p.get("hyper_prior.loc", (cz,))
        scale = self._p.get("hyper_prior.scale", (cz,))
        mean = np.broadcast_to(loc[None, :, None, None], shape).astype(DTYPE)
        sig = np.broadcast_to(scale[None, :, None, None], shape).astype(DTYPE)
        return GaussianParams(np.ascontiguousarray(mean), np.ascontiguousarray(sig))

    # code field: 4-step quadtree model

    def _context_field(self, features: np.ndarray, decoded) -> np.ndarray:
        """Feature field with every already-decoded group overlaid in place."""
        cy = self._cfg.code_channels
        if features.ndim != 4 or features.shape[1] != cy:
            raise SequencingError(f"context features must have {cy} channels")
        ctx = features.copy()
        for step, group in enumerate(decoded):
            scatter_group(ctx, step, group)
        return ctx

    def _check_step(self, decoded, step: int) -> None:
        if not 0 <= step < GROUP_COUNT:
            raise SequencingError(f"step {step} outside [0, {GROUP_COUNT})")
        if len(decoded) != step:
            raise SequencingError(
                f"step {step} needs exactly {step} previously decoded groups, "
                f"got {len(decoded)}"
            )

    def predict_params(self, features: np.ndarray, decoded, step: int) -> GaussianParams:
        """Coding distribution for the group at `step` (0-based).

        decoded holds the refined reconstructions of all earlier groups, in
        coding order. Scales come back already clamped.
        """
        decoded = list(decoded)
        self._check_step(decoded, step)
        ctx = self._context_field(features, decoded)
        mean_field, scale_raw = run_context_step(ctx, self._p, step, self._cfg)
        mean = gather_group(mean_field, step)
        scale = np.clip(gather_group(scale_raw, step), SIGMA_MIN, SIGMA_MAX).astype(DTYPE)
        return GaussianParams(mean, scale)

    def apply_lrp(self, group: np.ndarray, features: np.ndarray, decoded, step: int) -> np.ndarray:
        """Refine a just-decoded group with its bounded residual prediction.

        The group is scattered onto the context (which already carries all
        earlier groups), stacked with the context features, and the step's
        residual head output, squashed to (-0.5, 0.5), is added at the
        group's positions.
        """
        decoded = list(decoded)
        self._check_step(decoded, step)
        ctx = self._context_field(features, decoded)
        scatter_group(ctx, step, group)
        stacked = np.concatenate([ctx, features], axis=1)
        residual = run_lrp(stacked, self._p, step, self._cfg)
        bounded = DTYPE(LRP_BOUND) * np.tanh(residual)
        return (group + gather_group(bounded, step)).astype(DTYPE)
