"""Top-level acceptance checks, one test per release criterion.

Each test states its tolerance inline. The terminal summary hook in
conftest.py prints one PASS/FAIL line per test here, so this file doubles
as the release checklist. Everything runs from seeded random weights; no
trained artifacts are required.
"""

import time

import numpy as np
import pytest

from conftest import make_image, tiny_config
from scodec.config import TransformConfig
from scodec.container import parse_container, quantize_stat
from scodec.entropy import (
    GROUP_COUNT,
    GaussianParams,
    estimate_rate,
    gaussian_cdf_rows,
    merge,
    partition,
)
from scodec.metrics import Curve, bd_rate
from scodec.nets import ParamSource, run_source8, run_source16, run_synthesis
from scodec.pipeline import (
    NoiseSchedule,
    TileConfig,
    ZeroPredictor,
    codes_to_stats,
    color_fix,
    compute_color_stats,
    decode_image,
    encode_image,
    one_step_denoise,
    padded_extents,
    stats_to_codes,
    tile_process,
)
from scodec.rangecoder import TOTAL, CdfRows, decode_stream, encode_stream
from scodec.tensors import DTYPE


def _random_rows(rng, n):
    """One arbitrary table (last bucket = escape) tiled across n positions."""
    buckets = int(rng.integers(2, 200))
    lo = int(rng.integers(-128, 8))
    hi = lo + buckets - 2
    counts = rng.multinomial(TOTAL - buckets, rng.dirichlet(np.full(buckets, 0.6))) + 1
    cum = np.zeros(buckets + 1, np.int64)
    np.cumsum(counts, out=cum[1:])
    return CdfRows((lo, hi), np.tile(cum, (n, 1))), lo, hi


def test_lossless_coding_fuzz_100k_cases():
    # criterion: 1e5 fuzzed symbol roundtrips, zero mismatches, under 60 s
    rng = np.random.default_rng(2024)
    start = time.monotonic()
    total = 0
    while total < 100_000:
        n = int(rng.integers(1, 2000))
        if rng.random() < 0.5:
            rows, lo, hi = _random_rows(rng, n)
            syms = rng.integers(lo, hi + 1, n).astype(np.int32)
        else:
            scales = np.exp(rng.uniform(np.log(0.04), np.log(64.0), n)).astype(np.float32)
            rows = gaussian_cdf_rows(GaussianParams(np.zeros(n, np.float32), scales))
            syms = np.round(rng.standard_normal(n) * scales).astype(np.int32)
        wild = rng.random(n) < 0.02  # force escape coding for a slice
        syms[wild] = rng.integers(-32768, 32768, int(wild.sum()))
        data = encode_stream(syms, rows)
        back = decode_stream(data, rows, n)
        assert (back == syms).all(), "decoded symbols differ"
        total += n
    assert time.monotonic() - start < 60.0


def test_rate_soundness_on_100_random_fields():
    # criterion: actual bits in [estimate - 1 bit, estimate*1.01 + 256 bits]
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(64, 4096))
        scales = np.exp(rng.uniform(np.log(0.04), np.log(40.0), n)).astype(np.float32)
        params = GaussianParams(np.zeros(n, np.float32), scales)
        syms = np.round(rng.standard_normal(n) * scales).astype(np.int32)
        syms = np.clip(syms, -32768, 32767)
        rows = gaussian_cdf_rows(params)
        estimate = estimate_rate(syms, rows)
        actual = 8.0 * len(encode_stream(syms, rows))
        assert estimate - 1.0 <= actual <= estimate * 1.01 + 256.0


def test_structural_constants(default_store):
    # criterion: 320-channel code at 1/64, 160-channel hyper at 1/256,
    # 96-bit color payload, 4 groups forming an exact partition
    cfg = TransformConfig()
    assert cfg.code_channels == 320
    assert cfg.hyper_channels == 160

    img = make_image(60, 512, 768)
    enc = encode_image(img, default_store, collect_symbols=True)
    merged = merge([g.astype(np.float32) for g in enc.symbols.groups])
    assert merged.shape == (1, 320, 512 // 64, 768 // 64)
    assert enc.symbols.hyper.shape == (1, 160, 512 // 256, 768 // 256)

    stats = compute_color_stats(img)
    assert len(stats_to_codes(stats)) == 6  # 6 u16 words = 96 bits
    with_color = encode_image(img, default_store, color=True)
    without = encode_image(img, default_store, color=False)
    assert len(with_color.data) - len(without.data) == 12

    assert GROUP_COUNT == 4
    field = np.arange(2 * 5 * 6 * 8, dtype=np.float32).reshape(2, 5, 6, 8)
    groups = partition(field)
    assert len(groups) == 4
    np.testing.assert_array_equal(merge(list(groups)), field)


def test_end_to_end_determinism_20_images(tiny_store):
    # criterion: byte-identical re-encode and symbol-exact decode for 20
    # fuzzed images in under 5 minutes
    rng = np.random.default_rng(11)
    start = time.monotonic()
    for i in range(20):
        h = int(rng.integers(16, 420))
        w = int(rng.integers(16, 420))
        img = make_image(100 + i, h, w)
        first = encode_image(img, tiny_store, collect_symbols=True)
        second = encode_image(img, tiny_store, collect_symbols=True)
        assert first.data == second.data
        dec = decode_image(first.data, tiny_store, collect_symbols=True)
        assert first.symbols.equals(dec.symbols)
        assert dec.image.shape == (3, h, w)
    assert time.monotonic() - start < 300.0


def test_one_step_denoise_algebra():
    # criterion: oracle predictor inverts the corruption within 1e-5;
    # zero predictor rescales exactly
    sched = NoiseSchedule.linear()
    t = 999
    ab = float(sched.alpha_bar[t])
    rng = np.random.default_rng(3)
    a = rng.uniform(-0.25, 0.25, (2, 4, 12, 12)).astype(np.float32)
    n = rng.uniform(-0.25, 0.25, (2, 4, 12, 12)).astype(np.float32)
    noisy = (
        np.sqrt(ab) * a.astype(np.float64) + np.sqrt(1.0 - ab) * n.astype(np.float64)
    ).astype(np.float32)
    out = one_step_denoise(noisy, sched, t, lambda x, ti: n)
    np.testing.assert_allclose(out, a, atol=1e-5)

    noisy2 = rng.standard_normal((1, 4, 9, 9)).astype(np.float32)
    out2 = one_step_denoise(noisy2, sched, t, ZeroPredictor())
    expected = (noisy2 / DTYPE(np.sqrt(ab))).astype(DTYPE)
    np.testing.assert_array_equal(out2, expected)


def test_tiling_identity_and_synthesis(tiny_cfg, tiny_store):
    # criterion: identity per-tile function within 1e-6 for any geometry;
    # tiled synthesis within 1e-3 of untiled given sufficient overlap
    rng = np.random.default_rng(4)
    field = rng.standard_normal((1, 3, 48, 64)).astype(np.float32)
    for tile, overlap in ((16, 8), (32, 16), (48, 12)):
        out = tile_process(field, TileConfig(tile, overlap), lambda t: t)
        assert np.abs(out - field).max() <= 1e-6

    code = (rng.standard_normal((1, 32, 24, 32)) * 2).astype(np.float32)
    src = ParamSource(tiny_store)
    synth = lambda t: run_synthesis(t, src, tiny_cfg)
    whole = synth(code)
    tiled = tile_process(code, TileConfig(16, 12, sigma=1.0), synth)
    assert np.abs(tiled - whole).max() <= 1e-3


def test_color_fix_payload_agreement(tiny_store):
    # criterion: post-fix moments match the decoded payload within 1e-4,
    # idempotent within 1e-6, quantize_stat(0.5) = 32768/65535
    img = make_image(61, 192, 256)
    enc = encode_image(img, tiny_store, color=True)
    parsed = parse_container(enc.data)
    target = codes_to_stats(parsed.color_codes)

    dec = decode_image(enc.data, tiny_store)
    fixed = color_fix(dec.raw_image, target, clamp=False)
    got = compute_color_stats(fixed)
    for c in range(3):
        assert abs(got.mean[c] - target.mean[c]) <= 1e-4
        assert abs(got.std[c] - target.std[c]) <= 1e-4

    twice = color_fix(fixed, target, clamp=False)
    assert np.abs(twice - fixed).max() <= 1e-6

    assert quantize_stat(0.5) == 32768


def test_bd_rate_reference_values():
    # criterion: self-delta 0 within 1e-9, doubled rate +100% within 0.1,
    # hand-built pair matches an independent calculator within 0.05
    anchor = Curve.from_pairs([(0.10, 30.0), (0.16, 32.0), (0.26, 34.0), (0.40, 36.0)])
    assert abs(bd_rate(anchor, anchor)) <= 1e-9
    doubled = Curve.from_pairs([(p.bpp * 2, p.quality) for p in anchor.points])
    assert abs(bd_rate(anchor, doubled) - 100.0) <= 0.1
    shifted = Curve.from_pairs([(0.12, 30.5), (0.19, 32.5), (0.30, 34.5), (0.47, 36.5)])
    assert abs(bd_rate(anchor, shifted) - 4.615682090714501) <= 0.05


def test_padding_crop_and_shape_chain(tiny_cfg, tiny_store):
    # criterion: 50 random extents decode back exactly; code and hyper grids
    # follow the padded size at 1/64 and 1/256, sources at 1/8 and 1/16
    rng = np.random.default_rng(5)
    src = ParamSource(tiny_store)
    start = time.monotonic()
    for i in range(50):
        h = int(rng.integers(8, 520))
        w = int(rng.integers(8, 520))
        img = make_image(200 + i, h, w)
        enc = encode_image(img, tiny_store, collect_symbols=True)
        ph, pw = padded_extents(h, w)
        assert ph % 256 == 0 and pw % 256 == 0
        merged = merge([g.astype(np.float32) for g in enc.symbols.groups])
        assert merged.shape[2:] == (ph // 64, pw // 64)
        assert enc.symbols.hyper.shape[2:] == (ph // 256, pw // 256)
        dec = decode_image(enc.data, tiny_store)
        assert dec.image.shape == (3, h, w)
        if i < 3:
            from scodec.tensors import replicate_pad_to_multiple

            padded = replicate_pad_to_multiple(img[None], 256)
            assert run_source8(padded, src, tiny_cfg).shape[2:] == (ph // 8, pw // 8)
            assert run_source16(padded, src, tiny_cfg).shape[2:] == (ph // 16, pw // 16)
    assert time.monotonic() - start < 300.0
