"""Shared fixtures: a small but structurally complete model for fast tests.

The tiny configuration keeps every architectural element of the default
model (two source branches, three-stage analysis/synthesis, hyper pair,
four context steps, residual heads, pixel decoder) at a fraction of the
channel counts, so end-to-end tests run in well under a second.
"""

from __future__ import annotations

import numpy as np
import pytest

from scodec import TransformConfig, WeightStore, random_store

TINY_KWARGS = dict(
    code_channels=32,
    hyper_channels=16,
    diffusion_channels=4,
    src8_channels=4,
    src16_channels=8,
    src8_hidden=(8, 8),
    src16_hidden=(8, 8, 8),
    adapter_down_channels=8,
    adapter_conv_channels=8,
    ga_channels=(16, 24, 32),
    gs_channels=(32, 24, 16),
    ga_blocks=(1, 1, 1),
    gs_blocks=(1, 1, 1),
    ga_kinds=("plain-conv", "plain-conv", "plain-conv"),
    gs_kinds=("plain-conv", "plain-conv", "plain-conv"),
    ctx_channels=48,
    ctx_blocks=1,
    ctx_kind="plain-conv",
    pix_hidden=16,
    pred_hidden=8,
)


def tiny_config(**overrides) -> TransformConfig:
    kwargs = dict(TINY_KWARGS)
    kwargs.update(overrides)
    return TransformConfig(**kwargs)


def make_image(seed: int, height: int, width: int) -> np.ndarray:
    """Random RGB test image in [0, 1]: smooth base plus mild noise."""
    rng = np.random.default_rng(seed)
    bh, bw = (height + 7) // 8 + 1, (width + 7) // 8 + 1
    base = rng.random((3, bh, bw), dtype=np.float32)
    up = np.repeat(np.repeat(base, 8, axis=1), 8, axis=2)[:, :height, :width]
    noise = rng.random((3, height, width), dtype=np.float32)
    return (0.7 * up + 0.3 * noise).astype(np.float32)


@pytest.fixture(scope="session")
def tiny_cfg() -> TransformConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_store(tiny_cfg) -> WeightStore:
    return random_store(tiny_cfg, seed=11)


@pytest.fixture(scope="session")
def default_cfg() -> TransformConfig:
    return TransformConfig()


@pytest.fixture(scope="session")
def default_store(default_cfg) -> WeightStore:
    return random_store(default_cfg, seed=7)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    results: dict[str, str] = {}
    order: list[str] = []
    for outcome, label in (
        ("passed", "PASS"),
        ("failed", "FAIL"),
        ("error", "FAIL"),
        ("skipped", "SKIP"),
    ):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            if outcome == "passed" and getattr(rep, "when", "call") != "call":
                continue
            name = nodeid.split("::")[-1]
            if name not in results:
                order.append(name)
            if results.get(name) != "FAIL":
                results[name] = label
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in order:
        terminalreporter.write_line(f"[{results[name]}] {name}")
