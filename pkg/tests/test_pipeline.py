"""Pipeline: schedule, denoising, tiling, color fix, end-to-end codec."""

from __future__ import annotations

import numpy as np
import pytest

from scodec import (
    ColorStats,
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
from scodec.container import parse_container
from scodec.errors import (
    ConfigurationError,
    ContainerError,
    DecodeError,
    ModelMismatchError,
)
from scodec.nets import ParamSource, random_store, run_synthesis
from scodec.pipeline import (
    codes_to_stats,
    compute_color_stats,
    padded_extents,
    stats_to_codes,
)

from conftest import make_image, tiny_config


# ------------------------------------------------------------- schedule


def test_linear_schedule_invariants():
    sched = NoiseSchedule.linear()
    ab = sched.alpha_bar
    assert len(sched) == 1000
    assert abs(ab[0] - (1.0 - 1e-4)) < 1e-12
    assert ab[0] > 0.99
    assert (np.diff(ab) < 0).all()
    assert ab.min() > 0.0 and ab.max() < 1.0


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        NoiseSchedule(np.array([0.5, 0.6]))  # increasing
    with pytest.raises(ConfigurationError):
        NoiseSchedule(np.array([1.5]))
    with pytest.raises(ConfigurationError):
        NoiseSchedule(np.array([0.0]))
    with pytest.raises(ConfigurationError):
        NoiseSchedule(np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        NoiseSchedule.linear(0)
    NoiseSchedule(np.array([1.0, 1.0]))  # degenerate identity allowed


# -------------------------------------------------------------- denoise


def test_denoise_zero_predictor_is_scaling():
    sched = NoiseSchedule.linear()
    rng = np.random.default_rng(0)
    noisy = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
    out = one_step_denoise(noisy, sched, 999, ZeroPredictor())
    want = noisy / np.float32(np.sqrt(sched.alpha_bar[999]))
    np.testing.assert_array_equal(out, want)


def test_denoise_is_linear_for_zero_predictor():
    sched = NoiseSchedule.linear()
    rng = np.random.default_rng(1)
    noisy = rng.standard_normal((1, 4, 6, 6)).astype(np.float32)
    one = one_step_denoise(noisy, sched, 500, ZeroPredictor())
    two = one_step_denoise(2.0 * noisy, sched, 500, ZeroPredictor())
    np.testing.assert_array_equal(two, 2.0 * one)  # x2 is exact in float


def test_denoise_algebraic_inversion():
    # build l_T = sqrt(ab)*a + sqrt(1-ab)*n; a predictor that returns n
    # must recover a
    sched = NoiseSchedule.linear()
    t = 999
    ab = float(sched.alpha_bar[t])
    rng = np.random.default_rng(2)
    # 1/sqrt(ab) at the last step is ~157, which amplifies even the float32
    # representation rounding of l_T; bounded inputs keep that below tolerance
    a = rng.uniform(-0.25, 0.25, (2, 4, 16, 16)).astype(np.float32)
    n = rng.uniform(-0.25, 0.25, (2, 4, 16, 16)).astype(np.float32)
    noisy = (
        np.sqrt(ab) * a.astype(np.float64) + np.sqrt(1.0 - ab) * n.astype(np.float64)
    ).astype(np.float32)
    out = one_step_denoise(noisy, sched, t, lambda x, ti: n)
    np.testing.assert_allclose(out, a, atol=1e-5)


def test_denoise_identity_schedule():
    sched = NoiseSchedule(np.ones(3))
    rng = np.random.default_rng(3)
    noisy = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
    out = one_step_denoise(noisy, sched, 2, lambda x, ti: x.copy())
    np.testing.assert_array_equal(out, noisy)  # spill 0, keep 1


def test_denoise_errors():
    sched = NoiseSchedule.linear(10)
    noisy = np.zeros((1, 4, 4, 4), np.float32)
    with pytest.raises(ConfigurationError):
        one_step_denoise(noisy, sched, 10, ZeroPredictor())
    with pytest.raises(ConfigurationError):
        one_step_denoise(noisy, sched, -1, ZeroPredictor())
    with pytest.raises(ConfigurationError):
        one_step_denoise(noisy, sched, 3, lambda x, ti: x[:, :1])


def test_toy_predictor_runs(tiny_cfg, tiny_store):
    p = ParamSource(tiny_store)
    pred = ToyPredictor(p, tiny_cfg)
    noisy = np.random.default_rng(4).standard_normal((1, 4, 8, 8)).astype(np.float32)
    eps = pred(noisy, 999)
    assert eps.shape == noisy.shape
    assert np.isfinite(eps).all()


# --------------------------------------------------------------- tiling


def test_tile_config_validation():
    with pytest.raises(ConfigurationError):
        TileConfig(0)
    with pytest.raises(ConfigurationError):
        TileConfig(64, overlap=64)
    with pytest.raises(ConfigurationError):
        TileConfig(64, overlap=-1)
    with pytest.raises(ConfigurationError):
        TileConfig(64, sigma=0.0)
    assert TileConfig(64, 16).weight_sigma == 16.0
    assert TileConfig(64, 16, sigma=5.0).weight_sigma == 5.0


def test_tile_config_pixel_units():
    TileConfig(512, 64).require_pixel_units()
    with pytest.raises(ConfigurationError):
        TileConfig(500, 64).require_pixel_units()
    with pytest.raises(ConfigurationError):
        TileConfig(512, 50).require_pixel_units()


def test_tile_config_scaled():
    scaled = TileConfig(512, 128, sigma=100.0).scaled(64)
    assert scaled.tile == 8
    assert scaled.overlap == 2
    assert scaled.weight_sigma == 100.0 / 64


@pytest.mark.parametrize("shape,tile,overlap", [
    ((1, 3, 40, 56), 16, 8),
    ((2, 2, 33, 17), 16, 4),
    ((1, 1, 16, 16), 16, 4),  # single tile: direct call
    ((1, 4, 31, 64), 10, 5),
])
def test_tile_identity_function(shape, tile, overlap):
    rng = np.random.default_rng(6)
    x = rng.standard_normal(shape).astype(np.float32)
    out = tile_process(x, TileConfig(tile, overlap), lambda t: t)
    assert out.shape == x.shape
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_tile_constant_input_local_function():
    x = np.full((1, 2, 48, 40), 0.37, np.float32)
    out = tile_process(x, TileConfig(16, 8), lambda t: 2.0 * t + 1.0)
    np.testing.assert_allclose(out, 2.0 * 0.37 + 1.0, atol=1e-6)


def test_tile_downscaling_function():
    x = np.full((1, 3, 32, 48), 0.25, np.float32)
    out = tile_process(x, TileConfig(16, 8), lambda t: t[:, :, ::2, ::2] * 4.0)
    assert out.shape == (1, 3, 16, 24)
    np.testing.assert_allclose(out, 1.0, atol=1e-6)


def test_tile_upscaling_function():
    x = np.full((1, 1, 24, 24), 1.5, np.float32)
    up = lambda t: np.repeat(np.repeat(t, 2, axis=2), 2, axis=3)
    out = tile_process(x, TileConfig(16, 8), up)
    assert out.shape == (1, 1, 48, 48)
    np.testing.assert_allclose(out, 1.5, atol=1e-6)


def test_tile_positions_must_land_on_output_grid():
    x = np.zeros((1, 1, 8, 8), np.float32)
    down4 = lambda t: t[:, :, ::4, ::4]
    with pytest.raises(ConfigurationError, match="grid|consistent"):
        tile_process(x, TileConfig(4, 2), down4)


def test_tile_inconsistent_axis_scales_rejected():
    x = np.zeros((1, 1, 32, 32), np.float32)
    squish = lambda t: t[:, :, ::2, :]
    with pytest.raises(ConfigurationError, match="axes"):
        tile_process(x, TileConfig(16, 8), squish)


def test_tile_zero_weight_rejected():
    x = np.zeros((1, 1, 64, 64), np.float32)
    with pytest.raises(ConfigurationError, match="weight"):
        tile_process(x, TileConfig(32, 8, sigma=1e-3), lambda t: t)


def test_tiled_synthesis_close_to_untiled(tiny_cfg, tiny_store):
    # overlap 12 clears the net's receptive-field margin (~4 code units) and
    # the steep window pushes each tile's corrupted rim to negligible weight;
    # the two together are what make stitching indistinguishable
    rng = np.random.default_rng(7)
    code = (rng.standard_normal((1, 32, 24, 32)) * 2).astype(np.float32)

    def synth(t):
        return run_synthesis(t, ParamSource(tiny_store), tiny_cfg)

    whole = synth(code)
    tiled = tile_process(code, TileConfig(16, 12, sigma=1.0), synth)
    assert tiled.shape == whole.shape
    assert np.abs(tiled - whole).max() <= 1e-3


def test_tile_process_deterministic(tiny_cfg, tiny_store):
    rng = np.random.default_rng(8)
    code = rng.standard_normal((1, 32, 10, 10)).astype(np.float32)

    def synth(t):
        return run_synthesis(t, ParamSource(tiny_store), tiny_cfg)

    a = tile_process(code, TileConfig(6, 2), synth)
    b = tile_process(code, TileConfig(6, 2), synth)
    np.testing.assert_array_equal(a, b)


# ------------------------------------------------------------ color fix


def test_color_stats_population_convention():
    rng = np.random.default_rng(9)
    img = rng.random((3, 20, 30)).astype(np.float32)
    stats = compute_color_stats(img)
    for c in range(3):
        assert abs(stats.mean[c] - img[c].astype(np.float64).mean()) < 1e-12
        assert abs(stats.std[c] - img[c].astype(np.float64).std(ddof=0)) < 1e-12


def test_color_fix_matches_target_moments():
    rng = np.random.default_rng(10)
    img = (rng.random((3, 64, 64)) * 0.4 + 0.1).astype(np.float32)
    target = ColorStats((0.5, 0.45, 0.55), (0.1, 0.08, 0.12))
    fixed = color_fix(img, target)
    for c in range(3):
        assert abs(fixed[c].astype(np.float64).mean() - target.mean[c]) < 1e-4
        assert abs(fixed[c].astype(np.float64).std() - target.std[c]) < 1e-4
    assert fixed.min() >= 0.0 and fixed.max() <= 1.0


def test_color_fix_identity_when_stats_match():
    rng = np.random.default_rng(11)
    img = (rng.random((3, 32, 32)) * 0.5 + 0.25).astype(np.float32)
    fixed = color_fix(img, compute_color_stats(img), clamp=False)
    np.testing.assert_allclose(fixed, img, atol=1e-6)


def test_color_fix_idempotent_preclamp():
    rng = np.random.default_rng(12)
    img = (rng.random((3, 32, 32)) * 0.6 + 0.2).astype(np.float32)
    target = ColorStats((0.4, 0.5, 0.6), (0.05, 0.07, 0.09))
    once = color_fix(img, target, clamp=False)
    twice = color_fix(once, target, clamp=False)
    np.testing.assert_allclose(twice, once, atol=1e-6)


def test_color_fix_skips_degenerate_channels():
    img = np.zeros((3, 8, 8), np.float32)
    img[0] = 0.3  # constant channel
    img[1] = np.random.default_rng(13).random((8, 8))
    img[2] = 0.9
    target = ColorStats((0.5, 0.5, 0.5), (0.2, 0.2, 0.2))
    fixed = color_fix(img, target, clamp=False)
    np.testing.assert_array_equal(fixed[0], img[0])
    np.testing.assert_array_equal(fixed[2], img[2])
    assert abs(fixed[1].astype(np.float64).mean() - 0.5) < 1e-4


def test_color_codes_roundtrip():
    stats = ColorStats((0.1, 0.5, 0.9), (0.0, 0.25, 1.0))
    codes = stats_to_codes(stats)
    assert len(codes) == 6
    back = codes_to_stats(codes)
    for got, want in zip((*back.mean, *back.std), (*stats.mean, *stats.std)):
        assert abs(got - want) <= 0.5 / 65535 + 1e-12


def test_color_fix_rejects_bad_shape():
    with pytest.raises(ConfigurationError):
        color_fix(np.zeros((1, 3, 4, 4), np.float32), ColorStats((0,) * 3, (1,) * 3))


# ------------------------------------------------------------ end to end


def test_padded_extents():
    assert padded_extents(1, 1) == (256, 256)
    assert padded_extents(256, 256) == (256, 256)
    assert padded_extents(257, 512) == (512, 512)
    assert padded_extents(1080, 1920) == (1280, 2048)


def test_roundtrip_lossless_symbols(tiny_store):
    img = make_image(20, 200, 300)
    enc = encode_image(img, tiny_store, collect_symbols=True)
    dec = decode_image(enc.data, tiny_store, collect_symbols=True)
    assert enc.symbols.equals(dec.symbols)
    assert dec.image.shape == (3, 200, 300)
    assert dec.image.dtype == np.float32
    assert np.isfinite(dec.image).all()
    assert dec.image.min() >= 0.0 and dec.image.max() <= 1.0
    assert dec.raw_image.shape == (3, 200, 300)


def test_encode_deterministic(tiny_store):
    img = make_image(21, 128, 256)
    a = encode_image(img, tiny_store)
    b = encode_image(img, tiny_store)
    assert a.data == b.data


def test_decode_deterministic(tiny_store):
    img = make_image(22, 128, 128)
    data = encode_image(img, tiny_store).data
    a = decode_image(data, tiny_store)
    b = decode_image(data, tiny_store)
    np.testing.assert_array_equal(a.image, b.image)


def test_shape_chain_for_odd_sizes(tiny_store):
    for seed, (h, w) in enumerate([(1, 1), (255, 257), (300, 200), (64, 1000)]):
        img = make_image(seed + 30, h, w)
        enc = encode_image(img, tiny_store, collect_symbols=True)
        ph, pw = padded_extents(h, w)
        assert enc.symbols.hyper.shape == (1, 16, ph // 256, pw // 256)
        for g in enc.symbols.groups:
            assert g.shape == (1, 32, ph // 128, pw // 128)
        dec = decode_image(enc.data, tiny_store)
        assert dec.image.shape == (3, h, w)


def test_rate_estimate_fields(tiny_store):
    img = make_image(23, 200, 300)
    enc = encode_image(img, tiny_store)
    assert enc.rate.hyper_bits >= 0
    assert len(enc.rate.group_bits) == 4
    assert enc.rate.total_bits == enc.rate.hyper_bits + sum(enc.rate.group_bits)
    assert enc.bpp == 8.0 * len(enc.data) / (200 * 300)


def test_rate_estimate_close_to_container_size(tiny_store):
    img = make_image(24, 512, 512)
    enc = encode_image(img, tiny_store)
    payload_bits = enc.rate.total_bits
    container_bits = 8 * len(enc.data)
    # container adds header + color payload + lengths + 5 stream flushes
    overhead = 8 * (32 + 12 + 20) + 5 * 8 * 4
    assert container_bits >= payload_bits - 5
    assert container_bits <= payload_bits * 1.01 + overhead + 5 * 256


def test_color_flag_and_payload(tiny_store):
    img = make_image(25, 128, 128)
    with_color = encode_image(img, tiny_store)
    without = encode_image(img, tiny_store, color=False)
    assert len(with_color.data) == len(without.data) + 12
    assert parse_container(with_color.data).header.color_present
    assert not parse_container(without.data).header.color_present
    assert with_color.color_codes is not None and len(with_color.color_codes) == 6
    assert without.color_codes is None
    # decoding the no-color container still produces a clamped image
    dec = decode_image(without.data, tiny_store)
    np.testing.assert_array_equal(
        dec.image, np.clip(dec.raw_image, 0.0, 1.0).astype(np.float32)
    )


def test_decoded_image_color_fixed(tiny_store):
    img = make_image(26, 200, 200)
    enc = encode_image(img, tiny_store)
    dec = decode_image(enc.data, tiny_store)
    want = color_fix(dec.raw_image, codes_to_stats(enc.color_codes))
    np.testing.assert_array_equal(dec.image, want)


def test_timestep_override_recorded(tiny_store):
    img = make_image(27, 128, 128)
    enc = encode_image(img, tiny_store, timestep_index=123)
    assert parse_container(enc.data).header.timestep == 123
    dec = decode_image(enc.data, tiny_store)
    assert dec.image.shape == (3, 128, 128)
    with pytest.raises(ConfigurationError):
        encode_image(img, tiny_store, timestep_index=1000)


def test_model_mismatch_rejected(tiny_cfg, tiny_store):
    img = make_image(28, 128, 128)
    data = encode_image(img, tiny_store).data
    other = random_store(tiny_cfg, seed=99)
    with pytest.raises(ModelMismatchError):
        decode_image(data, other)


def test_corrupted_container_rejected(tiny_store):
    img = make_image(29, 128, 128)
    data = encode_image(img, tiny_store).data
    with pytest.raises((ContainerError, DecodeError)):
        decode_image(data[: len(data) - 10], tiny_store)
    with pytest.raises(ContainerError):
        decode_image(b"JUNK" + data[4:], tiny_store)


def test_encoder_tiling_never_changes_symbols(tiny_store):
    img = make_image(31, 520, 770)
    plain = encode_image(img, tiny_store, collect_symbols=True)
    tiled = encode_image(
        img, tiny_store, tiling=TileConfig(256, 64), collect_symbols=True
    )
    assert plain.symbols.equals(tiled.symbols)
    assert parse_container(tiled.data).header.tiled
    assert not parse_container(plain.data).header.tiled
    # the streams themselves are identical; only the flag differs
    assert parse_container(tiled.data).streams == parse_container(plain.data).streams


def test_encode_is_tile_independent(tiny_store):
    # only pixel-space decode stages tile; the analysis path never does, so
    # a tiled encode must emit the same symbols as an untiled one
    img = make_image(32, 520, 770)
    whole = encode_image(img, tiny_store, collect_symbols=True)
    tiled = encode_image(img, tiny_store, tiling=TileConfig(256, 64), collect_symbols=True)
    assert whole.symbols.equals(tiled.symbols)
    assert len(tiled.data) == len(whole.data)


def test_tiled_decode_well_formed(tiny_store):
    img = make_image(32, 520, 770)
    data = encode_image(img, tiny_store, tiling=TileConfig(256, 64)).data
    first = decode_image(data, tiny_store, tiling=TileConfig(256, 64))
    again = decode_image(data, tiny_store, tiling=TileConfig(256, 64))
    assert first.image.shape == (3, 520, 770)
    assert np.isfinite(first.image).all()
    assert first.image.min() >= 0.0 and first.image.max() <= 1.0
    np.testing.assert_array_equal(first.image, again.image)


def test_tiling_requires_pixel_units(tiny_store):
    img = make_image(33, 300, 300)
    with pytest.raises(ConfigurationError):
        encode_image(img, tiny_store, tiling=TileConfig(300, 64))
    data = encode_image(img, tiny_store).data
    with pytest.raises(ConfigurationError):
        decode_image(data, tiny_store, tiling=TileConfig(256, 60))


def test_toy_predictor_decode_path(tiny_cfg, tiny_store):
    img = make_image(34, 128, 128)
    data = encode_image(img, tiny_store).data
    pred = ToyPredictor(ParamSource(tiny_store), tiny_cfg)
    dec = decode_image(data, tiny_store, predictor=pred)
    assert np.isfinite(dec.image).all()
    base = decode_image(data, tiny_store)
    assert not np.array_equal(dec.raw_image, base.raw_image)


def test_image_validation(tiny_store):
    with pytest.raises(ConfigurationError):
        encode_image(np.zeros((1, 3, 4, 4), np.float32), tiny_store)
    with pytest.raises(ConfigurationError):
        encode_image(np.zeros((4, 8, 8), np.float32), tiny_store)
    with pytest.raises(ConfigurationError):
        encode_image(np.full((3, 8, 8), 2.0, np.float32), tiny_store)
    with pytest.raises(ConfigurationError):
        encode_image(np.full((3, 8, 8), np.nan, np.float32), tiny_store)
