"""Command-line interface.

Subcommands: encode, decode, roundtrip, inspect, eval, bench, init-weights.
Exit codes: 0 success, 1 I/O failure, 2 malformed input or bad usage,
3 model/bitstream mismatch. Data goes to stdout, diagnostics to stderr.

Options can come from a key=value config file (--config); explicit flags
win over config values, which win over the SCODEC_WEIGHTS environment
variable where applicable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .config import TransformConfig, parse_kv
from .container import HEADER_LEN, parse_container
from .entropy import (
    GROUP_COUNT,
    EntropyModel,
    gather_group,
    coding_rows,
    quantize,
)
from .errors import (
    CodingError,
    ConfigurationError,
    ContainerError,
    InternalError,
    ModelMismatchError,
    ScodecError,
    SequencingError,
    WeightFormatError,
    WeightSchemaError,
)
from .images import load_image, save_image
from .metrics import eval_corpus, psnr, write_rate_svg
from .nets import (
    ParamSource,
    fuse_sources,
    random_store,
    run_analysis,
    run_aux_decoder,
    run_hyper_analysis,
    run_hyper_synthesis,
    run_pixel_decoder,
    run_source16,
    run_source8,
    run_synthesis,
)
from .pipeline import (
    NoiseSchedule,
    TileConfig,
    ToyPredictor,
    ZeroPredictor,
    decode_image,
    encode_image,
    one_step_denoise,
)
from .rangecoder import decode_stream, encode_stream
from .tensors import replicate_pad_to_multiple
from .weights import load_weights, save_weights

log = logging.getLogger("scodec")

WEIGHTS_ENV = "SCODEC_WEIGHTS"

EXIT_OK = 0
EXIT_IO = 1
EXIT_FORMAT = 2
EXIT_MISMATCH = 3

_FORMAT_ERRORS = (
    ConfigurationError,
    ContainerError,
    WeightFormatError,
    WeightSchemaError,
    CodingError,
    SequencingError,
    InternalError,
    ValueError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scodec",
        description="Extreme low-bitrate learned image codec",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--weights", help=f"weight store path (default ${WEIGHTS_ENV})")
    common.add_argument("--config", help="key=value options file")
    common.add_argument("--threads", type=int, help="cap internal parallelism")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    tiled = argparse.ArgumentParser(add_help=False)
    tiled.add_argument("--tile", type=int, help="tile size in pixels (multiple of 256)")
    tiled.add_argument("--overlap", type=int, help="tile overlap in pixels (default 64)")
    tiled.add_argument("--tile-sigma", type=float, help="Gaussian weight-map sigma")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common, tiled], help="image -> container")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--no-color-fix", action="store_true", help="omit the color payload")
    p.add_argument("--timestep", type=int, help="denoising timestep index override")

    p = sub.add_parser("decode", parents=[common, tiled], help="container -> image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--predictor", choices=("zero", "toy"), default="zero")

    p = sub.add_parser("roundtrip", parents=[common, tiled], help="encode+decode check")
    p.add_argument("input")
    p.add_argument("--out", help="also write the reconstruction here")
    p.add_argument("--predictor", choices=("zero", "toy"), default="zero")
    p.add_argument("--no-color-fix", action="store_true")

    p = sub.add_parser("inspect", parents=[common], help="print container structure")
    p.add_argument("input")

    p = sub.add_parser("eval", parents=[common], help="evaluate an image corpus")
    p.add_argument("directory")
    p.add_argument("--out", help="write the TSV report here (default stdout)")
    p.add_argument("--svg", help="write a rate-curve SVG here")
    p.add_argument("--predictor", choices=("zero", "toy"), default="zero")

    p = sub.add_parser("bench", parents=[common], help="per-stage timing")
    p.add_argument("input")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)

    p = sub.add_parser("init-weights", parents=[common], help="write seeded random weights")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _load_options(args) -> dict[str, str]:
    if getattr(args, "config", None):
        return parse_kv(Path(args.config).read_text(encoding="utf-8"))
    return {}


def _resolve_weights_path(args, options) -> str:
    path = getattr(args, "weights", None) or options.get("weights") or os.environ.get(WEIGHTS_ENV)
    if not path:
        raise ConfigurationError(
            f"no weight store given (use --weights, config 'weights=', or ${WEIGHTS_ENV})"
        )
    return path


def _resolve_tiling(args, options) -> TileConfig | None:
    tile = args.tile if args.tile is not None else _opt_int(options, "tile")
    if tile is None:
        return None
    overlap = args.overlap if args.overlap is not None else _opt_int(options, "overlap")
    sigma = (
        args.tile_sigma
        if args.tile_sigma is not None
        else (float(options["tile_sigma"]) if "tile_sigma" in options else None)
    )
    cfg = TileConfig(tile=tile, overlap=64 if overlap is None else overlap, sigma=sigma)
    cfg.require_pixel_units()
    return cfg


def _opt_int(options, key) -> int | None:
    if key not in options:
        return None
    try:
        return int(options[key])
    except ValueError as exc:
        raise ConfigurationError(f"config key {key} is not an integer: {options[key]!r}") from exc


def _thread_limiter(threads: int | None):
    if not threads or threads < 1:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=threads)
    except ImportError:
        log.debug("threadpoolctl unavailable; --threads only limits corpus workers")
        return nullcontext()


def _predictor_for(kind: str, store, cfg):
    if kind == "toy":
        return ToyPredictor(ParamSource(store), cfg)
    return ZeroPredictor()


def _cmd_encode(args, options) -> int:
    store = load_weights(_resolve_weights_path(args, options))
    image = load_image(args.input)
    tiling = _resolve_tiling(args, options)
    result = encode_image(
        image,
        store,
        color=not args.no_color_fix,
        tiling=tiling,
        timestep_index=args.timestep,
    )
    Path(args.output).write_bytes(result.data)
    parsed = parse_container(result.data)
    stream_bits = [8 * len(s) for s in parsed.streams]
    color_bits = 96 if result.color_codes is not None else 0
    print(
        f"bpp={result.bpp:.6f} bytes={len(result.data)} "
        f"width={result.width} height={result.height} "
        f"bits hyper={stream_bits[0]} g1={stream_bits[1]} g2={stream_bits[2]} "
        f"g3={stream_bits[3]} g4={stream_bits[4]} color={color_bits}"
    )
    return EXIT_OK


def _cmd_decode(args, options) -> int:
    store = load_weights(_resolve_weights_path(args, options))
    cfg = TransformConfig.from_text(store.config_text)
    data = Path(args.input).read_bytes()
    result = decode_image(
        data,
        store,
        predictor=_predictor_for(args.predictor, store, cfg),
        tiling=_resolve_tiling(args, options),
    )
    save_image(args.output, result.image)
    print(f"decoded {result.width}x{result.height} -> {args.output}")
    return EXIT_OK


def _cmd_roundtrip(args, options) -> int:
    store = load_weights(_resolve_weights_path(args, options))
    cfg = TransformConfig.from_text(store.config_text)
    image = load_image(args.input)
    tiling = _resolve_tiling(args, options)
    enc = encode_image(
        image, store, color=not args.no_color_fix, tiling=tiling, collect_symbols=True
    )
    dec = decode_image(
        enc.data,
        store,
        predictor=_predictor_for(args.predictor, store, cfg),
        tiling=tiling,
        collect_symbols=True,
    )
    lossless = enc.symbols.equals(dec.symbols)
    quality = psnr(image, dec.image)
    if args.out:
        save_image(args.out, dec.image)
    print(f"symbols: {'LOSSLESS' if lossless else 'MISMATCH'}")
    print(f"bpp={enc.bpp:.6f} psnr_db={quality:.4f}")
    if not lossless:
        log.error("decoded symbols differ from the encoder's")
        return EXIT_FORMAT
    return EXIT_OK


def _cmd_inspect(args, options) -> int:
    data = Path(args.input).read_bytes()
    parsed = parse_container(data)
    h = parsed.header
    print(f"container: {len(data)} bytes, header {HEADER_LEN}")
    print(f"width={h.width} height={h.height}")
    print(f"model_id={h.model_id.hex()}")
    print(f"timestep={h.timestep} color={int(h.color_present)} tiled={int(h.tiled)}")
    if parsed.color_codes is not None:
        mean = tuple(parsed.color_codes[:3])
        std = tuple(parsed.color_codes[3:])
        print(f"color_codes mean={mean} std={std}")
    names = ("hyper", "group1", "group2", "group3", "group4")
    for name, stream in zip(names, parsed.streams):
        print(f"stream {name}: {len(stream)} bytes")
    return EXIT_OK


def _cmd_eval(args, options) -> int:
    paths_raw = getattr(args, "weights", None) or options.get("weights") or os.environ.get(WEIGHTS_ENV)
    if not paths_raw:
        raise ConfigurationError("eval needs --weights with one or more comma-separated paths")
    paths = [p for p in paths_raw.split(",") if p]
    report = eval_corpus(
        args.directory, paths, predictor=args.predictor, threads=args.threads
    )
    text = report.to_tsv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        sys.stdout.write(text)
    if args.svg:
        write_rate_svg(report, args.svg)
        print(f"rate curve written to {args.svg}")
    return EXIT_OK


def _cmd_bench(args, options) -> int:
    store = load_weights(_resolve_weights_path(args, options))
    cfg = TransformConfig.from_text(store.config_text)
    image = load_image(args.input)
    x = replicate_pad_to_multiple(image[None], 256)
    p = ParamSource(store)
    em = EntropyModel(p, cfg)
    schedule = NoiseSchedule.linear(cfg.schedule_steps)
    predictor = ZeroPredictor()

    stages = (
        "analysis",
        "hyper",
        "entropy-encode",
        "entropy-decode",
        "synthesis",
        "denoise",
        "aux",
        "pixel-decode",
    )
    times: dict[str, list[float]] = {s: [] for s in stages}

    def run_once(record: bool):
        def tick(name, fn):
            t0 = time.perf_counter()
            out = fn()
            if record:
                times[name].append(time.perf_counter() - t0)
            return out

        code = tick(
            "analysis",
            lambda: run_analysis(
                fuse_sources(run_source8(x, p, cfg), run_source16(x, p, cfg), p, cfg), p, cfg
            ),
        )

        def hyper_pass():
            hyper = run_hyper_analysis(code, p, cfg)
            prior = em.hyper_params(hyper.shape)
            syms, hyper_hat = quantize(hyper, prior.mean)
            return hyper, prior, syms, run_hyper_synthesis(hyper_hat, p, cfg)

        hyper, prior, hyper_syms, features = tick("hyper", hyper_pass)

        def entropy_encode():
            streams = [encode_stream(hyper_syms.ravel(), coding_rows(prior))]
            decoded = []
            for step in range(GROUP_COUNT):
                params = em.predict_params(features, decoded, step)
                syms, recon = quantize(gather_group(code, step), params.mean)
                streams.append(encode_stream(syms.ravel(), coding_rows(params)))
                decoded.append(em.apply_lrp(recon, features, decoded, step))
            return streams

        streams = tick("entropy-encode", entropy_encode)

        def entropy_decode():
            rows = coding_rows(prior)
            decode_stream(streams[0], rows, hyper_syms.size)
            decoded = []
            for step in range(GROUP_COUNT):
                params = em.predict_params(features, decoded, step)
                syms = decode_stream(
                    streams[1 + step], coding_rows(params), params.mean.size
                ).reshape(params.mean.shape)
                recon = (syms.astype(np.float32) + params.mean).astype(np.float32)
                decoded.append(em.apply_lrp(recon, features, decoded, step))
            return decoded

        decoded = tick("entropy-decode", entropy_decode)
        from .entropy import merge

        code_hat = merge(decoded)
        noisy = tick("synthesis", lambda: run_synthesis(code_hat, p, cfg))
        clean = tick(
            "denoise",
            lambda: one_step_denoise(noisy, schedule, cfg.timestep_index, predictor),
        )
        guidance = tick("aux", lambda: run_aux_decoder(code_hat, p, cfg))
        tick(
            "pixel-decode",
            lambda: run_pixel_decoder((clean + guidance).astype(np.float32), p, cfg),
        )

    if args.runs < 1 or args.warmup < 0:
        raise ConfigurationError("bench needs runs >= 1 and warmup >= 0")
    for _ in range(args.warmup):
        run_once(record=False)
    for _ in range(args.runs):
        run_once(record=True)

    print(f"stage\tmean_s\tstd_s\truns={args.runs}")
    for name in stages:
        vals = np.array(times[name])
        print(f"{name}\t{vals.mean():.6f}\t{vals.std():.6f}")
    return EXIT_OK


def _cmd_init_weights(args, options) -> int:
    cfg = TransformConfig.from_mapping(options) if options else TransformConfig()
    store = random_store(cfg, seed=args.seed)
    model_id = save_weights(store, args.output)
    print(f"wrote {args.output} model_id={model_id.hex()} params={len(store)}")
    return EXIT_OK


_COMMANDS = {
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "roundtrip": _cmd_roundtrip,
    "inspect": _cmd_inspect,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "init-weights": _cmd_init_weights,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        options = _load_options(args)
        with _thread_limiter(getattr(args, "threads", None)):
            return _COMMANDS[args.command](args, options)
    except ModelMismatchError as exc:
        log.error(str(exc))
        return EXIT_MISMATCH
    except _FORMAT_ERRORS as exc:
        log.error(str(exc))
        return EXIT_FORMAT
    except ScodecError as exc:
        log.error(str(exc))
        return EXIT_FORMAT
    except OSError as exc:
        log.error(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
