"""End-to-end codec pipeline.

Encode: pad to 256-multiples, derive the intermediate latent from the two
source stacks, analysis transform to the code, hyper transform, quantize,
then range code the hyper stream followed by the four quadtree groups,
computing each group's distribution exactly as the decoder will. Decode
mirrors this, then expands the code with the synthesis transform, applies
one-step denoising, adds the auxiliary guidance field, maps to pixels,
crops the padding, and applies the color fix last.

The coded symbols never depend on tiling: the encoder's transform path
always runs untiled (symbol streams must be reproducible regardless of
memory strategy), while the decoder-side transforms may run through
tile_process with Gaussian-weighted aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .config import TransformConfig
from .container import (
    ContainerHeader,
    dequantize_stat,
    parse_container,
    quantize_stat,
    write_container,
)
from .entropy import (
    GROUP_COUNT,
    EntropyModel,
    gather_group,
    coding_rows,
    estimate_rate,
    merge,
    quantize,
)
from .errors import ConfigurationError, ModelMismatchError
from .nets import (
    ParamSource,
    fuse_sources,
    run_analysis,
    run_aux_decoder,
    run_hyper_analysis,
    run_hyper_synthesis,
    run_noise_net,
    run_pixel_decoder,
    run_source16,
    run_source8,
    run_synthesis,
)
from .rangecoder import decode_stream, encode_stream
from .tensors import DTYPE, crop_top_left, replicate_pad_to_multiple
from .weights import WeightStore

PAD_MULTIPLE = 256
CODE_FACTOR = 64
HYPER_FACTOR = 256
LATENT_FACTOR = 8


# noise schedule and one-step denoising


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative retention factors of a DDPM forward process.

    alpha_bar[t] is the product of (1 - beta) up to step t (0-based). Values
    must be nonincreasing in (0, 1]; 1.0 is allowed so synthetic degenerate
    schedules can express the identity limit.
    """

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or len(ab) < 1:
            raise ConfigurationError("schedule needs a 1-D run of alpha_bar values")
        if (ab <= 0).any() or (ab > 1).any():
            raise ConfigurationError("alpha_bar values must lie in (0, 1]")
        if (np.diff(ab) > 0).any():
            raise ConfigurationError("alpha_bar must be nonincreasing")
        object.__setattr__(self, "alpha_bar", ab)

    @classmethod
    def linear(
        cls, steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02
    ) -> "NoiseSchedule":
        """Standard linear-beta schedule; alpha_bar stays strictly inside (0, 1)."""
        if steps < 1:
            raise ConfigurationError("schedule needs at least one step")
        betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
        return cls(np.cumprod(1.0 - betas))

    def __len__(self) -> int:
        return len(self.alpha_bar)


class ZeroPredictor:
    """Predicts zero noise; denoising reduces to scaling by 1/sqrt(alpha_bar)."""

    def __call__(self, noisy: np.ndarray, t_index: int) -> np.ndarray:
        return np.zeros_like(noisy)


class ToyPredictor:
    """Noise predictor backed by the weight store's small conv net.

    The toy net is timestep-unconditioned; t_index is accepted and ignored.
    """

    def __init__(self, params: ParamSource, cfg: TransformConfig):
        self._p = params
        self._cfg = cfg

    def __call__(self, noisy: np.ndarray, t_index: int) -> np.ndarray:
        return run_noise_net(noisy, self._p, self._cfg)


def one_step_denoise(noisy: np.ndarray, schedule: NoiseSchedule, t_index: int, predictor) -> np.ndarray:
    """Single-application denoising: (l - sqrt(1-ab)*eps) / sqrt(ab)."""
    if not 0 <= t_index < len(schedule):
        raise ConfigurationError(f"timestep {t_index} outside schedule of {len(schedule)}")
    eps = predictor(noisy, t_index)
    if not isinstance(eps, np.ndarray) or eps.shape != noisy.shape:
        raise ConfigurationError("predictor output shape does not match its input")
    ab = float(schedule.alpha_bar[t_index])
    keep = DTYPE(math.sqrt(ab))
    spill = DTYPE(math.sqrt(1.0 - ab))
    return ((noisy - spill * eps.astype(DTYPE)) / keep).astype(DTYPE)


# tiled evaluation


@dataclass(frozen=True)
class TileConfig:
    """Tile geometry for windowed evaluation.

    tile and overlap are in the units of whatever field is tiled; sigma
    (weight-map spread) defaults to tile/4. At the codec boundary, where
    units are image pixels, tile must be a multiple of 256 and overlap a
    multiple of 64 so every downscaled stage keeps integral geometry.
    """

    tile: int
    overlap: int = 64
    sigma: float | None = None

    def __post_init__(self):
        if self.tile < 1:
            raise ConfigurationError("tile size must be positive")
        if not 0 <= self.overlap < self.tile:
            raise ConfigurationError("overlap must be in [0, tile)")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigurationError("weight-map sigma must be positive")

    @property
    def weight_sigma(self) -> float:
        return self.sigma if self.sigma is not None else self.tile / 4.0

    def require_pixel_units(self) -> None:
        if self.tile % PAD_MULTIPLE:
            raise ConfigurationError(f"pixel tile size must be a multiple of {PAD_MULTIPLE}")
        if self.overlap % CODE_FACTOR:
            raise ConfigurationError(f"pixel overlap must be a multiple of {CODE_FACTOR}")

    def scaled(self, factor: int) -> "TileConfig":
        return replace(
            self,
            tile=self.tile // factor,
            overlap=self.overlap // factor,
            sigma=None if self.sigma is None else self.sigma / factor,
        )


def _tile_starts(extent: int, tile: int, step: int) -> list[int]:
    if extent <= tile:
        return [0]
    starts = list(range(0, extent - tile + 1, step))
    if starts[-1] != extent - tile:
        starts.append(extent - tile)
    return starts


def tile_process(x: np.ndarray, config: TileConfig, fn) -> np.ndarray:
    """Evaluate fn over overlapping tiles, blending with a Gaussian weight map.

    fn must map (n,c,th,tw) to (n,c',th*r,tw*r) for a fixed rational scale r
    shared by both axes. Output pixels covered by several tiles average the
    per-tile values weighted by a Gaussian centered on each tile. Tiles are
    visited top-to-bottom, left-to-right, and accumulation follows that
    order, so the result is deterministic. If one tile covers the whole
    input, fn is applied directly.
    """
    if x.ndim != 4:
        raise ConfigurationError("tile_process expects an NCHW tensor")
    n, _, h, w = x.shape
    if h <= config.tile and w <= config.tile:
        return fn(x)

    step = config.tile - config.overlap
    ys = _tile_starts(h, config.tile, step)
    xs = _tile_starts(w, config.tile, step)

    ratio: Fraction | None = None
    out_sum = None
    weight_sum = None
    out_channels = None

    for y0 in ys:
        for x0 in xs:
            th = min(config.tile, h - y0)
            tw = min(config.tile, w - x0)
            piece = np.ascontiguousarray(x[:, :, y0 : y0 + th, x0 : x0 + tw])
            got = fn(piece)
            if got.ndim != 4 or got.shape[0] != n:
                raise ConfigurationError("per-tile function changed the batch shape")
            r_h = Fraction(got.shape[2], th)
            r_w = Fraction(got.shape[3], tw)
            if r_h != r_w:
                raise ConfigurationError("per-tile function scales axes differently")
            if ratio is None:
                ratio = r_h
                out_channels = got.shape[1]
                oh_full = h * ratio
                ow_full = w * ratio
                if oh_full.denominator != 1 or ow_full.denominator != 1:
                    raise ConfigurationError("tile scale does not map the full input to a grid")
                out_sum = np.zeros((n, out_channels, int(oh_full), int(ow_full)), dtype=np.float64)
                weight_sum = np.zeros((int(oh_full), int(ow_full)), dtype=np.float64)
            elif r_h != ratio or got.shape[1] != out_channels:
                raise ConfigurationError("per-tile function is not shape-consistent")

            oy = y0 * ratio
            ox = x0 * ratio
            if oy.denominator != 1 or ox.denominator != 1:
                raise ConfigurationError(
                    "tile positions do not land on the output grid; adjust tile/overlap"
                )
            oy, ox = int(oy), int(ox)
            oth, otw = got.shape[2], got.shape[3]

            sig = config.weight_sigma * float(ratio)
            dy = np.arange(oth, dtype=np.float64) - (oth - 1) / 2.0
            dx = np.arange(otw, dtype=np.float64) - (otw - 1) / 2.0
            weight = np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sig * sig))
            out_sum[:, :, oy : oy + oth, ox : ox + otw] += got.astype(np.float64) * weight
            weight_sum[oy : oy + oth, ox : ox + otw] += weight

    if weight_sum.min() <= 0.0:
        raise ConfigurationError("zero aggregation weight; weight-map sigma too small")
    return (out_sum / weight_sum).astype(DTYPE)


# color statistics and fix


@dataclass(frozen=True)
class ColorStats:
    """Per-channel mean and population standard deviation in the [0,1] domain."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if any(s < 0 for s in self.std):
            raise ConfigurationError("standard deviations cannot be negative")


_SIGMA_FLOOR = 1e-6


def compute_color_stats(image: np.ndarray) -> ColorStats:
    planes = image.astype(np.float64)
    mean = tuple(float(planes[c].mean()) for c in range(3))
    std = tuple(float(planes[c].std()) for c in range(3))
    return ColorStats(mean, std)


def stats_to_codes(stats: ColorStats) -> tuple[int, ...]:
    return tuple(quantize_stat(v) for v in (*stats.mean, *stats.std))


def codes_to_stats(codes) -> ColorStats:
    values = [dequantize_stat(c) for c in codes]
    return ColorStats(tuple(values[:3]), tuple(values[3:]))


def color_fix(image: np.ndarray, stats: ColorStats, *, clamp: bool = True) -> np.ndarray:
    """Match each channel's mean/std to the decoded statistics.

    Channels whose current deviation is at most 1e-6 are copied through
    unchanged. The result is clamped to [0,1] unless clamp is False.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError("color_fix expects a (3, height, width) image")
    out = image.astype(np.float64).copy()
    for c in range(3):
        cur_mean = out[c].mean()
        cur_std = out[c].std()
        if cur_std <= _SIGMA_FLOOR:
            continue
        out[c] = (out[c] - cur_mean) / cur_std * stats.std[c] + stats.mean[c]
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(DTYPE)


# results


@dataclass(frozen=True)
class RateEstimate:
    """Shannon information of the coded symbols under the integer tables."""

    hyper_bits: float
    group_bits: tuple[float, float, float, float]

    @property
    def total_bits(self) -> float:
        return self.hyper_bits + sum(self.group_bits)


@dataclass(frozen=True)
class CodedSymbols:
    """Debug tap: the exact integer symbols that entered the range coder."""

    hyper: np.ndarray
    groups: tuple[np.ndarray, ...]

    def equals(self, other: "CodedSymbols") -> bool:
        if self.hyper.shape != other.hyper.shape or len(self.groups) != len(other.groups):
            return False
        if not np.array_equal(self.hyper, other.hyper):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.groups, other.groups))


@dataclass(frozen=True)
class EncodeResult:
    data: bytes
    width: int
    height: int
    rate: RateEstimate
    color_codes: tuple[int, ...] | None
    symbols: CodedSymbols | None = None

    @property
    def bpp(self) -> float:
        return 8.0 * len(self.data) / (self.width * self.height)


@dataclass(frozen=True)
class DecodeResult:
    image: np.ndarray  # final reconstruction, clamped, color-fixed when coded
    raw_image: np.ndarray  # pre-clamp, pre-color-fix reconstruction
    width: int
    height: int
    symbols: CodedSymbols | None = None


# pipeline entry points


def _validate_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ConfigurationError("expected a (3, height, width) image")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ConfigurationError("image must be at least 1x1")
    arr = arr.astype(DTYPE)
    if not np.isfinite(arr).all():
        raise ConfigurationError("image has non-finite pixels")
    if arr.min() < -1e-3 or arr.max() > 1.0 + 1e-3:
        raise ConfigurationError("pixel values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def _config_for(weights: WeightStore, config: TransformConfig | None) -> TransformConfig:
    return config if config is not None else TransformConfig.from_text(weights.config_text)


def padded_extents(height: int, width: int) -> tuple[int, int]:
    return (
        height + (-height) % PAD_MULTIPLE,
        width + (-width) % PAD_MULTIPLE,
    )


def encode_image(
    image: np.ndarray,
    weights: WeightStore,
    *,
    config: TransformConfig | None = None,
    color: bool = True,
    tiling: TileConfig | None = None,
    timestep_index: int | None = None,
    collect_symbols: bool = False,
) -> EncodeResult:
    """Compress one image to container bytes.

    The coded symbol streams are independent of `tiling`; the option is
    recorded in the header as a decode-side hint only.
    """
    cfg = _config_for(weights, config)
    img = _validate_image(image)
    height, width = img.shape[1], img.shape[2]
    t_index = cfg.timestep_index if timestep_index is None else timestep_index
    if not 0 <= t_index < cfg.schedule_steps:
        raise ConfigurationError(f"timestep {t_index} outside schedule of {cfg.schedule_steps}")
    if tiling is not None:
        tiling.require_pixel_units()

    color_codes = stats_to_codes(compute_color_stats(img)) if color else None

    x = replicate_pad_to_multiple(img[None], PAD_MULTIPLE)
    p = ParamSource(weights)
    em = EntropyModel(p, cfg)

    latent = fuse_sources(run_source8(x, p, cfg), run_source16(x, p, cfg), p, cfg)
    code = run_analysis(latent, p, cfg)
    hyper = run_hyper_analysis(code, p, cfg)

    hyper_prior = em.hyper_params(hyper.shape)
    hyper_syms, hyper_hat = quantize(hyper, hyper_prior.mean)
    hyper_rows = coding_rows(hyper_prior)
    hyper_stream = encode_stream(hyper_syms.ravel(), hyper_rows)
    hyper_bits = estimate_rate(hyper_syms, hyper_rows)

    features = run_hyper_synthesis(hyper_hat, p, cfg)
    decoded: list[np.ndarray] = []
    group_streams: list[bytes] = []
    group_bits: list[float] = []
    group_syms: list[np.ndarray] = []
    for step in range(GROUP_COUNT):
        params = em.predict_params(features, decoded, step)
        target = gather_group(code, step)
        syms, recon = quantize(target, params.mean)
        rows = coding_rows(params)
        group_streams.append(encode_stream(syms.ravel(), rows))
        group_bits.append(estimate_rate(syms, rows))
        group_syms.append(syms)
        decoded.append(em.apply_lrp(recon, features, decoded, step))

    header = ContainerHeader(
        width=width,
        height=height,
        model_id=weights.model_id,
        timestep=t_index,
        color_present=color_codes is not None,
        tiled=tiling is not None,
    )
    data = write_container(header, color_codes, (hyper_stream, *group_streams))
    symbols = (
        CodedSymbols(hyper_syms, tuple(group_syms)) if collect_symbols else None
    )
    return EncodeResult(
        data=data,
        width=width,
        height=height,
        rate=RateEstimate(hyper_bits, tuple(group_bits)),
        color_codes=color_codes,
        symbols=symbols,
    )


def decode_image(
    data: bytes,
    weights: WeightStore,
    *,
    config: TransformConfig | None = None,
    predictor=None,
    tiling: TileConfig | None = None,
    collect_symbols: bool = False,
) -> DecodeResult:
    """Reconstruct an image from container bytes."""
    cfg = _config_for(weights, config)
    parsed = parse_container(data)
    header = parsed.header
    if header.model_id != weights.model_id:
        raise ModelMismatchError(
            "container was produced by a different model "
            f"({header.model_id.hex()} != {weights.model_id.hex()})"
        )
    if header.timestep >= cfg.schedule_steps:
        raise ModelMismatchError("container timestep outside this model's schedule")
    if tiling is not None:
        tiling.require_pixel_units()

    ph, pw = padded_extents(header.height, header.width)
    zh, zw = ph // HYPER_FACTOR, pw // HYPER_FACTOR
    p = ParamSource(weights)
    em = EntropyModel(p, cfg)

    hyper_shape = (1, cfg.hyper_channels, zh, zw)
    hyper_prior = em.hyper_params(hyper_shape)
    hyper_rows = coding_rows(hyper_prior)
    hyper_syms = decode_stream(
        parsed.streams[0], hyper_rows, int(np.prod(hyper_shape))
    ).reshape(hyper_shape)
    hyper_hat = (hyper_syms.astype(DTYPE) + hyper_prior.mean).astype(DTYPE)

    features = run_hyper_synthesis(hyper_hat, p, cfg)
    decoded: list[np.ndarray] = []
    group_syms: list[np.ndarray] = []
    for step in range(GROUP_COUNT):
        params = em.predict_params(features, decoded, step)
        count = params.mean.size
        syms = decode_stream(parsed.streams[1 + step], coding_rows(params), count)
        syms = syms.reshape(params.mean.shape)
        recon = (syms.astype(DTYPE) + params.mean).astype(DTYPE)
        decoded.append(em.apply_lrp(recon, features, decoded, step))
        group_syms.append(syms)
    code_hat = merge(decoded)

    def synth(t):
        return run_synthesis(t, p, cfg)

    def aux(t):
        return run_aux_decoder(t, p, cfg)

    def pix(t):
        return run_pixel_decoder(t, p, cfg)

    if tiling is None:
        noisy = synth(code_hat)
        guidance = aux(code_hat)
    else:
        code_tiles = tiling.scaled(CODE_FACTOR)
        noisy = tile_process(code_hat, code_tiles, synth)
        guidance = tile_process(code_hat, code_tiles, aux)

    schedule = NoiseSchedule.linear(cfg.schedule_steps)
    active_predictor = predictor if predictor is not None else ZeroPredictor()

    def denoise(t):
        return one_step_denoise(t, schedule, header.timestep, active_predictor)

    if tiling is None:
        clean = denoise(noisy)
        pixels = pix((clean + guidance).astype(DTYPE))
    else:
        latent_tiles = tiling.scaled(LATENT_FACTOR)
        clean = tile_process(noisy, latent_tiles, denoise)
        pixels = tile_process((clean + guidance).astype(DTYPE), latent_tiles, pix)

    raw = crop_top_left(pixels, header.height, header.width)[0]
    if parsed.color_codes is not None:
        final = color_fix(raw, codes_to_stats(parsed.color_codes))
    else:
        final = np.clip(raw, 0.0, 1.0).astype(DTYPE)

    symbols = CodedSymbols(hyper_syms, tuple(group_syms)) if collect_symbols else None
    return DecodeResult(
        image=final,
        raw_image=raw,
        width=header.width,
        height=header.height,
        symbols=symbols,
    )
