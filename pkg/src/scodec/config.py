"""Transform configuration and the key=value text format.

Config text is line oriented: one `key=value` per line, `#` starts a
comment, blank lines ignored. Integer tuples are comma separated. The same
format carries runtime options for the CLI; unknown keys are preserved by
the parser so weight files can embed extra metadata (a trainer's lambda
label, for instance) without breaking older readers.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigurationError

BLOCK_KINDS = ("plain-conv", "inception-dw", "gated-cnn")
ACTIVATION_NAMES = ("gelu-tanh", "silu", "relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class TransformConfig:
    """Channel widths and block layout of every network in the codec.

    Defaults reproduce the full-size model: 320-channel code at 1/64
    resolution, 160-channel hyper code at 1/256, 4-channel decoder latent
    at 1/8.
    """

    code_channels: int = 320
    hyper_channels: int = 160
    diffusion_channels: int = 4
    src8_channels: int = 4
    src16_channels: int = 192
    src8_hidden: tuple[int, ...] = (32, 64)
    src16_hidden: tuple[int, ...] = (32, 64, 128)
    adapter_down_channels: int = 128
    adapter_conv_channels: int = 64
    ga_channels: tuple[int, ...] = (192, 256, 320)
    ga_blocks: tuple[int, ...] = (1, 1, 1)
    ga_kinds: tuple[str, ...] = ("inception-dw", "gated-cnn", "inception-dw")
    gs_channels: tuple[int, ...] = (320, 256, 192)
    gs_blocks: tuple[int, ...] = (1, 1, 1)
    gs_kinds: tuple[str, ...] = ("inception-dw", "gated-cnn", "inception-dw")
    ha_blocks: int = 1
    ha_kind: str = "plain-conv"
    hs_blocks: int = 1
    hs_kind: str = "plain-conv"
    ctx_channels: int = 640
    ctx_blocks: int = 2
    ctx_kind: str = "gated-cnn"
    band_kernel: int = 11
    gate_kernel: int = 7
    gate_expansion: int = 2
    pix_hidden: int = 64
    pred_hidden: int = 32
    activation: str = "gelu-tanh"
    schedule_steps: int = 1000
    timestep_index: int = 999

    @property
    def latent_channels(self) -> int:
        """Channels of the fused intermediate latent at 1/16 resolution."""
        return self.adapter_down_channels + self.adapter_conv_channels

    def __post_init__(self):
        ints = (
            self.code_channels,
            self.hyper_channels,
            self.diffusion_channels,
            self.src8_channels,
            self.src16_channels,
            self.adapter_down_channels,
            self.adapter_conv_channels,
            self.ha_blocks,
            self.hs_blocks,
            self.ctx_channels,
            self.ctx_blocks,
            self.pix_hidden,
            self.pred_hidden,
            self.gate_expansion,
        )
        if any(v < 1 for v in ints):
            raise ConfigurationError("channel and block counts must be positive")
        if len(self.src8_hidden) != 2 or len(self.src16_hidden) != 3:
            raise ConfigurationError("src8_hidden needs 2 widths, src16_hidden needs 3")
        for name in ("ga", "gs"):
            chans = getattr(self, f"{name}_channels")
            blocks = getattr(self, f"{name}_blocks")
            kinds = getattr(self, f"{name}_kinds")
            if not (len(chans) == len(blocks) == len(kinds) == 3):
                raise ConfigurationError(f"{name}_* tuples must have 3 stages")
            if any(v < 1 for v in chans) or any(v < 0 for v in blocks):
                raise ConfigurationError(f"invalid {name} stage sizes")
        if self.ga_channels[0] != self.latent_channels:
            raise ConfigurationError(
                "ga_channels[0] must equal adapter_down_channels + adapter_conv_channels"
            )
        if self.ga_channels[-1] != self.code_channels:
            raise ConfigurationError("ga_channels[-1] must equal code_channels")
        if self.gs_channels[0] != self.code_channels:
            raise ConfigurationError("gs_channels[0] must equal code_channels")
        for kind in (
            *self.ga_kinds,
            *self.gs_kinds,
            self.ha_kind,
            self.hs_kind,
            self.ctx_kind,
        ):
            if kind not in BLOCK_KINDS:
                raise ConfigurationError(f"unknown block kind {kind!r}")
        if self.activation not in ACTIVATION_NAMES:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.band_kernel % 2 == 0 or self.gate_kernel % 2 == 0:
            raise ConfigurationError("band_kernel and gate_kernel must be odd")
        if self.schedule_steps < 1:
            raise ConfigurationError("schedule_steps must be positive")
        if not 0 <= self.timestep_index < self.schedule_steps:
            raise ConfigurationError("timestep_index out of schedule range")

    def to_text(self) -> str:
        """Serialize every field as canonical key=value lines."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "TransformConfig":
        """Build a config from parsed key=value pairs, ignoring unknown keys."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            default = getattr(cls, f.name)
            try:
                if isinstance(default, tuple):
                    parts = [p.strip() for p in raw.split(",") if p.strip()]
                    if isinstance(default[0], int):
                        kwargs[f.name] = tuple(int(p) for p in parts)
                    else:
                        kwargs[f.name] = tuple(parts)
                elif isinstance(default, int):
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = raw
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {f.name}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "TransformConfig":
        return cls.from_mapping(parse_kv(text))

    def with_timestep(self, timestep_index: int) -> "TransformConfig":
        return replace(self, timestep_index=timestep_index)


def parse_kv(text: str) -> dict[str, str]:
    """Parse key=value lines into a dict. Later duplicates win."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"config line {lineno} is not key=value: {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigurationError(f"config line {lineno} has an empty key")
        out[key] = value.strip()
    return out
