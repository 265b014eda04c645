"""Transform networks.

Encoder side derives an intermediate latent from two strided conv stacks
(1/8 and 1/16 resolution sources), then a three-stage analysis transform
takes it to the code at 1/64. Decoder side mirrors it: a synthesis
transform expands the code to a compact latent at 1/8, an auxiliary decoder
of the same shape provides the guidance branch, and a sub-pixel decoder
maps the denoised latent back to RGB. Hyper transforms move between the
code and its 1/256 hyper code.

Every network is a pure function of (input, parameter source, config).
Parameter names form a flat schema, e.g. "analysis.stage0.block0.pw.weight";
schema() enumerates the exact names and shapes a config requires.
"""

from __future__ import annotations

import math

import numpy as np

from .config import TransformConfig
from .errors import ConfigurationError
from .tensors import (
    DTYPE,
    ConvSpec,
    activation,
    conv2d,
    pixel_shuffle,
)
from .weights import WeightStore

CONTEXT_STEPS = 4


class ParamSource:
    """Fetches parameters from a store and records which names were used."""

    def __init__(self, store: WeightStore):
        self._store = store
        self.requested: set[str] = set()

    def get(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        self.requested.add(name)
        return self._store.get(name, shape)


def _conv(
    x: np.ndarray,
    p: ParamSource,
    name: str,
    ci: int,
    co: int,
    kernel: int | tuple[int, int],
    *,
    stride: int = 1,
    padding: int | tuple[int, int] = 0,
    groups: int = 1,
) -> np.ndarray:
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
    spec = ConvSpec(ci, co, kh, kw, stride=stride, padding=padding, groups=groups)
    w = p.get(f"{name}.weight", spec.weight_shape)
    b = p.get(f"{name}.bias", (co,))
    return conv2d(x, w, b, spec)


def _inception_split(channels: int) -> tuple[int, int]:
    quarter = channels // 4
    if quarter < 1:
        raise ConfigurationError("inception-dw blocks need at least 4 channels")
    return channels - 3 * quarter, quarter


def run_block(
    x: np.ndarray, p: ParamSource, prefix: str, kind: str, channels: int, cfg: TransformConfig
) -> np.ndarray:
    """One residual block. kind selects the body, channels stay constant."""
    if kind == "plain-conv":
        h = _conv(x, p, f"{prefix}.c1", channels, channels, 3, padding=1)
        h = activation(h, cfg.activation)
        h = _conv(h, p, f"{prefix}.c2", channels, channels, 3, padding=1)
        return x + h

    if kind == "inception-dw":
        keep, q = _inception_split(channels)
        band = cfg.band_kernel
        x_id = x[:, :keep]
        x_hw = x[:, keep : keep + q]
        x_w = x[:, keep + q : keep + 2 * q]
        x_h = x[:, keep + 2 * q :]
        b_hw = _conv(x_hw, p, f"{prefix}.dw_hw", q, q, 3, padding=1, groups=q)
        b_w = _conv(x_w, p, f"{prefix}.dw_w", q, q, (1, band), padding=(0, band // 2), groups=q)
        b_h = _conv(x_h, p, f"{prefix}.dw_h", q, q, (band, 1), padding=(band // 2, 0), groups=q)
        mixed = np.concatenate([x_id, b_hw, b_w, b_h], axis=1)
        return x + _conv(mixed, p, f"{prefix}.pw", channels, channels, 1)

    if kind == "gated-cnn":
        hidden = channels * cfg.gate_expansion
        e = _conv(x, p, f"{prefix}.expand", channels, 2 * hidden, 1)
        gate_in, value = e[:, :hidden], e[:, hidden:]
        gk = cfg.gate_kernel
        gate = _conv(
            np.ascontiguousarray(gate_in),
            p,
            f"{prefix}.dw",
            hidden,
            hidden,
            gk,
            padding=gk // 2,
            groups=hidden,
        )
        gated = activation(gate, "sigmoid") * value
        return x + _conv(gated, p, f"{prefix}.proj", hidden, channels, 1)

    raise ConfigurationError(f"unknown block kind {kind!r}")


def run_stage(
    x: np.ndarray, p: ParamSource, prefix: str, count: int, kind: str, channels: int, cfg: TransformConfig
) -> np.ndarray:
    for j in range(count):
        x = run_block(x, p, f"{prefix}.block{j}", kind, channels, cfg)
    return x


def run_source8(x: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Three stride-2 convs: RGB at full resolution to src8_channels at 1/8."""
    h1, h2 = cfg.src8_hidden
    x = _conv(x, p, "source8.conv0", 3, h1, 3, stride=2, padding=1)
    x = activation(x, cfg.activation)
    x = _conv(x, p, "source8.conv1", h1, h2, 3, stride=2, padding=1)
    x = activation(x, cfg.activation)
    return _conv(x, p, "source8.conv2", h2, cfg.src8_channels, 3, stride=2, padding=1)


def run_source16(x: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Four stride-2 convs: RGB at full resolution to src16_channels at 1/16."""
    h1, h2, h3 = cfg.src16_hidden
    x = _conv(x, p, "source16.conv0", 3, h1, 3, stride=2, padding=1)
    x = activation(x, cfg.activation)
    x = _conv(x, p, "source16.conv1", h1, h2, 3, stride=2, padding=1)
    x = activation(x, cfg.activation)
    x = _conv(x, p, "source16.conv2", h2, h3, 3, stride=2, padding=1)
    x = activation(x, cfg.activation)
    return _conv(x, p, "source16.conv3", h3, cfg.src16_channels, 3, stride=2, padding=1)


def fuse_sources(
    s8: np.ndarray, s16: np.ndarray, p: ParamSource, cfg: TransformConfig
) -> np.ndarray:
    """Fuse the two source fields into the intermediate latent at 1/16."""
    down = _conv(
        s8, p, "adapter.down", cfg.src8_channels, cfg.adapter_down_channels, 3, stride=2, padding=1
    )
    keep = _conv(
        s16, p, "adapter.conv", cfg.src16_channels, cfg.adapter_conv_channels, 3, padding=1
    )
    if down.shape[2:] != keep.shape[2:]:
        raise ConfigurationError("source fields do not align at 1/16 resolution")
    return np.concatenate([down, keep], axis=1)


def run_analysis(latent: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Intermediate latent at 1/16 to the code at 1/64."""
    c0, c1, c2 = cfg.ga_channels
    k0, k1, k2 = cfg.ga_kinds
    n0, n1, n2 = cfg.ga_blocks
    x = run_stage(latent, p, "analysis.stage0", n0, k0, c0, cfg)
    x = _conv(x, p, "analysis.down0", c0, c1, 3, stride=2, padding=1)
    x = run_stage(x, p, "analysis.stage1", n1, k1, c1, cfg)
    x = _conv(x, p, "analysis.down1", c1, c2, 3, stride=2, padding=1)
    return run_stage(x, p, "analysis.stage2", n2, k2, c2, cfg)


def _run_expander(
    code: np.ndarray, p: ParamSource, prefix: str, cfg: TransformConfig
) -> np.ndarray:
    c0, c1, c2 = cfg.gs_channels
    k0, k1, k2 = cfg.gs_kinds
    n0, n1, n2 = cfg.gs_blocks
    x = run_stage(code, p, f"{prefix}.stage0", n0, k0, c0, cfg)
    x = _conv(x, p, f"{prefix}.up0", c0, 4 * c1, 1)
    x = pixel_shuffle(x, 2)
    x = run_stage(x, p, f"{prefix}.stage1", n1, k1, c1, cfg)
    x = _conv(x, p, f"{prefix}.up1", c1, 4 * c2, 1)
    x = pixel_shuffle(x, 2)
    x = run_stage(x, p, f"{prefix}.stage2", n2, k2, c2, cfg)
    x = _conv(x, p, f"{prefix}.up2", c2, 4 * cfg.diffusion_channels, 1)
    return pixel_shuffle(x, 2)


def run_synthesis(code: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Code at 1/64 to the noisy decoder latent at 1/8."""
    return _run_expander(code, p, "synthesis", cfg)


def run_aux_decoder(code: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Guidance branch, same shape as the synthesis transform."""
    return _run_expander(code, p, "auxdec", cfg)


def run_hyper_analysis(code: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Code at 1/64 to the hyper code at 1/256."""
    cy, cz = cfg.code_channels, cfg.hyper_channels
    x = _conv(code, p, "hyper_enc.down0", cy, cz, 3, stride=2, padding=1)
    x = run_stage(x, p, "hyper_enc.stage0", cfg.ha_blocks, cfg.ha_kind, cz, cfg)
    return _conv(x, p, "hyper_enc.down1", cz, cz, 3, stride=2, padding=1)


def run_hyper_synthesis(zhat: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Hyper code at 1/256 to the context feature field at 1/64.

    The output has exactly code_channels channels so decoded groups can be
    overlaid onto it position for position.
    """
    cy, cz = cfg.code_channels, cfg.hyper_channels
    x = _conv(zhat, p, "hyper_dec.up0", cz, 4 * cz, 1)
    x = pixel_shuffle(x, 2)
    x = run_stage(x, p, "hyper_dec.stage0", cfg.hs_blocks, cfg.hs_kind, cz, cfg)
    x = _conv(x, p, "hyper_dec.up1", cz, 4 * cy, 1)
    return pixel_shuffle(x, 2)


def run_context_step(
    ctx_field: np.ndarray, p: ParamSource, step: int, cfg: TransformConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step parameter head over the context field.

    A private 1x1 adapter feeds the shared trunk, a second private adapter
    reads it back out. Returns (mean field, raw scale field) at full code
    resolution; gathering the active group and clamping the scale is the
    entropy model's job.
    """
    if not 0 <= step < CONTEXT_STEPS:
        raise ConfigurationError(f"context step must be in [0, {CONTEXT_STEPS})")
    cy, w = cfg.code_channels, cfg.ctx_channels
    x = _conv(ctx_field, p, f"ctx.adapt_in{step}", cy, w, 1)
    x = run_stage(x, p, "ctx.shared", cfg.ctx_blocks, cfg.ctx_kind, w, cfg)
    x = _conv(x, p, f"ctx.adapt_out{step}", w, 2 * cy, 1)
    return np.ascontiguousarray(x[:, :cy]), np.ascontiguousarray(x[:, cy:])


def run_lrp(
    stacked: np.ndarray, p: ParamSource, step: int, cfg: TransformConfig
) -> np.ndarray:
    """Residual head for one step: (decoded group field ++ context) to a correction."""
    if not 0 <= step < CONTEXT_STEPS:
        raise ConfigurationError(f"lrp step must be in [0, {CONTEXT_STEPS})")
    cy = cfg.code_channels
    x = _conv(stacked, p, f"lrp{step}.c1", 2 * cy, cy, 1)
    x = activation(x, cfg.activation)
    return _conv(x, p, f"lrp{step}.c2", cy, cy, 3, padding=1)


def run_pixel_decoder(latent: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Denoised latent at 1/8 back to RGB via an 8x sub-pixel conv."""
    x = _conv(latent, p, "pixel_dec.conv0", cfg.diffusion_channels, cfg.pix_hidden, 3, padding=1)
    x = activation(x, cfg.activation)
    x = _conv(x, p, "pixel_dec.conv1", cfg.pix_hidden, 3 * 64, 3, padding=1)
    return pixel_shuffle(x, 8)


def run_noise_net(noisy: np.ndarray, p: ParamSource, cfg: TransformConfig) -> np.ndarray:
    """Small conv stack predicting the noise component of the decoder latent."""
    cd = cfg.diffusion_channels
    x = _conv(noisy, p, "noise_pred.conv0", cd, cfg.pred_hidden, 3, padding=1)
    x = activation(x, cfg.activation)
    return _conv(x, p, "noise_pred.conv1", cfg.pred_hidden, cd, 3, padding=1)


def schema(cfg: TransformConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape the config's networks will request."""
    out: dict[str, tuple[int, ...]] = {}

    def conv(name: str, ci: int, co: int, kh: int, kw: int | None = None, groups: int = 1):
        kw = kh if kw is None else kw
        out[f"{name}.weight"] = (co, ci // groups, kh, kw)
        out[f"{name}.bias"] = (co,)

    def block(prefix: str, kind: str, c: int):
        if kind == "plain-conv":
            conv(f"{prefix}.c1", c, c, 3)
            conv(f"{prefix}.c2", c, c, 3)
        elif kind == "inception-dw":
            _, q = _inception_split(c)
            conv(f"{prefix}.dw_hw", q, q, 3, groups=q)
            conv(f"{prefix}.dw_w", q, q, 1, cfg.band_kernel, groups=q)
            conv(f"{prefix}.dw_h", q, q, cfg.band_kernel, 1, groups=q)
            conv(f"{prefix}.pw", c, c, 1)
        elif kind == "gated-cnn":
            hidden = c * cfg.gate_expansion
            conv(f"{prefix}.expand", c, 2 * hidden, 1)
            conv(f"{prefix}.dw", hidden, hidden, cfg.gate_kernel, groups=hidden)
            conv(f"{prefix}.proj", hidden, c, 1)
        else:
            raise ConfigurationError(f"unknown block kind {kind!r}")

    def stage(prefix: str, count: int, kind: str, c: int):
        for j in range(count):
            block(f"{prefix}.block{j}", kind, c)

    h1, h2 = cfg.src8_hidden
    conv("source8.conv0", 3, h1, 3)
    conv("source8.conv1", h1, h2, 3)
    conv("source8.conv2", h2, cfg.src8_channels, 3)
    g1, g2, g3 = cfg.src16_hidden
    conv("source16.conv0", 3, g1, 3)
    conv("source16.conv1", g1, g2, 3)
    conv("source16.conv2", g2, g3, 3)
    conv("source16.conv3", g3, cfg.src16_channels, 3)
    conv("adapter.down", cfg.src8_channels, cfg.adapter_down_channels, 3)
    conv("adapter.conv", cfg.src16_channels, cfg.adapter_conv_channels, 3)

    a0, a1, a2 = cfg.ga_channels
    stage("analysis.stage0", cfg.ga_blocks[0], cfg.ga_kinds[0], a0)
    conv("analysis.down0", a0, a1, 3)
    stage("analysis.stage1", cfg.ga_blocks[1], cfg.ga_kinds[1], a1)
    conv("analysis.down1", a1, a2, 3)
    stage("analysis.stage2", cfg.ga_blocks[2], cfg.ga_kinds[2], a2)

    s0, s1, s2 = cfg.gs_channels
    for prefix in ("synthesis", "auxdec"):
        stage(f"{prefix}.stage0", cfg.gs_blocks[0], cfg.gs_kinds[0], s0)
        conv(f"{prefix}.up0", s0, 4 * s1, 1)
        stage(f"{prefix}.stage1", cfg.gs_blocks[1], cfg.gs_kinds[1], s1)
        conv(f"{prefix}.up1", s1, 4 * s2, 1)
        stage(f"{prefix}.stage2", cfg.gs_blocks[2], cfg.gs_kinds[2], s2)
        conv(f"{prefix}.up2", s2, 4 * cfg.diffusion_channels, 1)

    cy, cz = cfg.code_channels, cfg.hyper_channels
    conv("hyper_enc.down0", cy, cz, 3)
    stage("hyper_enc.stage0", cfg.ha_blocks, cfg.ha_kind, cz)
    conv("hyper_enc.down1", cz, cz, 3)
    conv("hyper_dec.up0", cz, 4 * cz, 1)
    stage("hyper_dec.stage0", cfg.hs_blocks, cfg.hs_kind, cz)
    conv("hyper_dec.up1", cz, 4 * cy, 1)

    for i in range(CONTEXT_STEPS):
        conv(f"ctx.adapt_in{i}", cy, cfg.ctx_channels, 1)
        conv(f"ctx.adapt_out{i}", cfg.ctx_channels, 2 * cy, 1)
        conv(f"lrp{i}.c1", 2 * cy, cy, 1)
        conv(f"lrp{i}.c2", cy, cy, 3)
    stage("ctx.shared", cfg.ctx_blocks, cfg.ctx_kind, cfg.ctx_channels)

    out["hyper_prior.loc"] = (cz,)
    out["hyper_prior.scale"] = (cz,)

    conv("pixel_dec.conv0", cfg.diffusion_channels, cfg.pix_hidden, 3)
    conv("pixel_dec.conv1", cfg.pix_hidden, 3 * 64, 3)
    conv("noise_pred.conv0", cfg.diffusion_channels, cfg.pred_hidden, 3)
    conv("noise_pred.conv1", cfg.pred_hidden, cfg.diffusion_channels, 3)
    return out


def random_store(cfg: TransformConfig, seed: int = 0) -> WeightStore:
    """Seeded random weights matching schema(cfg).

    Conv weights draw from N(0, 1/fan_in) and biases from U(-0.3, 0.3).
    Nonzero biases matter: with zero biases an all-zero hyper code would
    collapse every later field to exactly zero and the whole pipeline would
    degenerate to coding nothing but zeros. The scale half of each context
    output adapter is re-centered at 1 so initial coding scales sit near 1,
    and the hyper prior starts at loc 0, scale 1.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in schema(cfg).items():
        if name == "hyper_prior.loc":
            params[name] = np.zeros(shape, dtype=DTYPE)
        elif name == "hyper_prior.scale":
            params[name] = np.ones(shape, dtype=DTYPE)
        elif name.endswith(".bias"):
            params[name] = rng.uniform(-0.3, 0.3, shape).astype(DTYPE)
        else:
            fan_in = math.prod(shape[1:])
            params[name] = rng.normal(0.0, math.sqrt(1.0 / fan_in), shape).astype(DTYPE)
    for i in range(CONTEXT_STEPS):
        bias = params[f"ctx.adapt_out{i}.bias"]
        bias[cfg.code_channels :] = 1.0 + bias[cfg.code_channels :]
    return WeightStore(params, cfg.to_text())
