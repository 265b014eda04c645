"""Rate-distortion evaluation: PSNR, MS-SSIM, BD-rate, corpus reports.

Report format: UTF-8 tab-separated values with a header row. Columns are
label, image, width, height, bytes, bpp, psnr_db, ms_ssim. Per-image rows
come first (grouped by label in evaluation order, filenames sorted), then
one summary row per label with image set to "(mean)". PSNR of identical
images prints as "inf"; ms_ssim is "nan" when an image is too small for
the 5-scale protocol.
"""

from __future__ import annotations

import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import parse_kv
from .images import load_image
from .pipeline import ToyPredictor, ZeroPredictor, decode_image, encode_image
from .nets import ParamSource
from .config import TransformConfig
from .weights import WeightStore, load_weights

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW = 11
_WINDOW_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    for arr in (x, y):
        if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
            raise ValueError("metric inputs must lie in the [0, 1] domain")
    return x, y


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all channels jointly; inf if equal."""
    x, y = _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering of one 2-D plane."""
    n = len(kernel)
    rows = sliding_window_view(plane, n, axis=1) @ kernel
    return np.ascontiguousarray(
        np.moveaxis(sliding_window_view(rows, n, axis=0) @ kernel, -1, 0)
    ).reshape(rows.shape[0] - n + 1, rows.shape[1])


def _halve(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    h2, w2 = h // 2, w // 2
    return plane[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _ssim_means(x: np.ndarray, y: np.ndarray, window: int) -> tuple[float, float]:
    """(mean ssim, mean contrast-structure) of one plane pair."""
    kernel = _gaussian_kernel(window, _WINDOW_SIGMA)
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    mx = _filter_valid(x, kernel)
    my = _filter_valid(y, kernel)
    vx = _filter_valid(x * x, kernel) - mx * mx
    vy = _filter_valid(y * y, kernel) - my * my
    vxy = _filter_valid(x * y, kernel) - mx * my
    cs_map = (2.0 * vxy + c2) / (vx + vy + c2)
    ssim_map = ((2.0 * mx * my + c1) / (mx * mx + my * my + c1)) * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def ms_ssim(x: np.ndarray, y: np.ndarray, scales: int = 5) -> float:
    """Multiscale SSIM with the standard 5-scale weights.

    Images may be (3, h, w) or (h, w). For the full 5 scales the smaller
    extent must be at least 160; in general at least 10 * 2^(scales-1), and
    the Gaussian window shrinks to the extent at the coarsest scale when
    that extent falls below 11. Fewer scales renormalize the weight prefix.
    """
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(MS_SSIM_WEIGHTS)}]")
    x, y = _check_pair(x, y)
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    if x.ndim != 3:
        raise ValueError("expected (channels, h, w) or (h, w) images")
    min_extent = min(x.shape[1], x.shape[2])
    needed = 10 * (1 << (scales - 1))
    if min_extent < needed:
        raise ValueError(
            f"min extent {min_extent} too small for {scales} scales "
            f"(needs {needed}); use fewer scales"
        )
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
    weights = weights / weights.sum()

    per_channel = []
    for c in range(x.shape[0]):
        xa, ya = x[c], y[c]
        value = 1.0
        for level in range(scales):
            window = min(_WINDOW, min(xa.shape))
            ssim_mean, cs_mean = _ssim_means(xa, ya, window)
            if level == scales - 1:
                value *= max(ssim_mean, 0.0) ** weights[level]
            else:
                value *= max(cs_mean, 0.0) ** weights[level]
                xa, ya = _halve(xa), _halve(ya)
        per_channel.append(value)
    return float(np.mean(per_channel))


@dataclass(frozen=True)
class RatePoint:
    bpp: float
    quality: float

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError("bpp must be positive")


@dataclass(frozen=True)
class Curve:
    points: tuple[RatePoint, ...]

    def __post_init__(self):
        bpps = [p.bpp for p in self.points]
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise ValueError("curve bpp values must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs) -> "Curve":
        return cls(tuple(RatePoint(b, q) for b, q in pairs))

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points], dtype=np.float64)

    @property
    def log_rates(self) -> np.ndarray:
        return np.log10([p.bpp for p in self.points])


def bd_rate(anchor: Curve, test: Curve) -> float:
    """Average rate difference of test vs anchor at equal quality, percent.

    Fits log10(bpp) as a cubic in quality for each curve, integrates the
    difference over the shared quality interval and maps the mean log
    offset back to percent: 100 * (10^delta - 1).
    """
    if len(anchor.points) < 4 or len(test.points) < 4:
        raise ValueError("BD-rate needs at least 4 points per curve")
    lo = max(anchor.qualities.min(), test.qualities.min())
    hi = min(anchor.qualities.max(), test.qualities.max())
    if not hi > lo:
        raise ValueError("curves have no overlapping quality range")

    def integral(curve: Curve) -> float:
        coeffs = np.polyfit(curve.qualities, curve.log_rates, 3)
        anti = np.polyint(coeffs)
        return float(np.polyval(anti, hi) - np.polyval(anti, lo))

    delta = (integral(test) - integral(anchor)) / (hi - lo)
    return 100.0 * (10.0**delta - 1.0)


# corpus evaluation

_IMAGE_SUFFIXES = {".png", ".ppm", ".jpg", ".jpeg", ".bmp"}


@dataclass(frozen=True)
class ReportRow:
    label: str
    image: str
    width: int
    height: int
    size_bytes: int
    bpp: float
    psnr_db: float
    ms_ssim_value: float | None


@dataclass(frozen=True)
class Report:
    rows: tuple[ReportRow, ...]
    summaries: tuple[ReportRow, ...]

    def to_tsv(self) -> str:
        def fmt(row: ReportRow) -> str:
            ssim = "nan" if row.ms_ssim_value is None else f"{row.ms_ssim_value:.6f}"
            p = "inf" if math.isinf(row.psnr_db) else f"{row.psnr_db:.6f}"
            return "\t".join(
                (
                    row.label,
                    row.image,
                    str(row.width),
                    str(row.height),
                    str(row.size_bytes),
                    f"{row.bpp:.6f}",
                    p,
                    ssim,
                )
            )

        header = "label\timage\twidth\theight\tbytes\tbpp\tpsnr_db\tms_ssim"
        lines = [header]
        lines += [fmt(r) for r in self.rows]
        lines += [fmt(r) for r in self.summaries]
        return "\n".join(lines) + "\n"


def _store_label(path: str, store: WeightStore) -> str:
    extras = parse_kv(store.config_text)
    if "lambda_target" in extras:
        return f"lambda={extras['lambda_target']}"
    return Path(path).stem


def _evaluate_one(
    store: WeightStore, label: str, name: str, image: np.ndarray, predictor_kind: str
) -> ReportRow:
    cfg = TransformConfig.from_text(store.config_text)
    enc = encode_image(image, store)
    if predictor_kind == "toy":
        predictor = ToyPredictor(ParamSource(store), cfg)
    else:
        predictor = ZeroPredictor()
    dec = decode_image(enc.data, store, predictor=predictor)
    quality = psnr(image, dec.image)
    try:
        ssim_value = ms_ssim(image, dec.image)
    except ValueError:
        ssim_value = None
    return ReportRow(
        label=label,
        image=name,
        width=enc.width,
        height=enc.height,
        size_bytes=len(enc.data),
        bpp=enc.bpp,
        psnr_db=quality,
        ms_ssim_value=ssim_value,
    )


def eval_corpus(
    directory: str | os.PathLike,
    weight_paths,
    *,
    predictor: str = "zero",
    threads: int | None = None,
    log=lambda msg: print(msg, file=sys.stderr),
) -> Report:
    """Encode and decode every image under each weight store; tabulate metrics.

    Unreadable images are skipped with a warning; if nothing could be
    evaluated at all the call fails.
    """
    root = Path(directory)
    files = sorted(
        f for f in root.iterdir() if f.is_file() and f.suffix.lower() in _IMAGE_SUFFIXES
    ) if root.is_dir() else []
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    if not files:
        raise ValueError(f"no images found in {root}")
    if predictor not in ("zero", "toy"):
        raise ValueError("predictor must be 'zero' or 'toy'")

    stores = []
    for path in weight_paths:
        store = load_weights(path)
        stores.append((str(path), _store_label(str(path), store), store))
    if not stores:
        raise ValueError("no weight stores given")

    images = {}
    for f in files:
        try:
            images[f.name] = load_image(f)
        except Exception as exc:  # noqa: BLE001 - skip-and-warn contract
            log(f"warning: skipping unreadable image {f}: {exc}")
    if not images:
        raise ValueError("every image in the corpus failed to load")

    jobs = [
        (label, name, store)
        for (_, label, store) in stores
        for name in sorted(images)
    ]
    workers = threads if threads and threads > 0 else (os.cpu_count() or 1)

    def run(job):
        label, name, store = job
        return _evaluate_one(store, label, name, images[name], predictor)

    if workers == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))

    by_key = {(r.label, r.image): r for r in results}
    rows = [by_key[(label, name)] for (label, name, _) in jobs]

    summaries = []
    for _, label, _store in stores:
        mine = [r for r in rows if r.label == label]
        ssims = [r.ms_ssim_value for r in mine if r.ms_ssim_value is not None]
        finite_psnr = [r.psnr_db for r in mine if math.isfinite(r.psnr_db)]
        summaries.append(
            ReportRow(
                label=label,
                image="(mean)",
                width=0,
                height=0,
                size_bytes=sum(r.size_bytes for r in mine),
                bpp=float(np.mean([r.bpp for r in mine])),
                psnr_db=float(np.mean(finite_psnr)) if finite_psnr else math.inf,
                ms_ssim_value=float(np.mean(ssims)) if ssims else None,
            )
        )
    return Report(rows=tuple(rows), summaries=tuple(summaries))


def write_rate_svg(report: Report, path: str | os.PathLike) -> None:
    """Plot the per-label mean (bpp, psnr) points as a simple SVG rate curve."""
    points = [
        (s.bpp, s.psnr_db, s.label)
        for s in sorted(report.summaries, key=lambda s: s.bpp)
        if math.isfinite(s.psnr_db)
    ]
    width, height, margin = 480, 360, 48
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if points:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        x_span = (x_hi - x_lo) or 1.0
        y_span = (y_hi - y_lo) or 1.0

        def sx(v):
            return margin + (v - x_lo) / x_span * (width - 2 * margin)

        def sy(v):
            return height - margin - (v - y_lo) / y_span * (height - 2 * margin)

        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y, _ in points)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="#3366cc" stroke-width="2"/>'
        )
        for x, y, label in points:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="#3366cc"/>')
            parts.append(
                f'<text x="{sx(x) + 6:.1f}" y="{sy(y) - 6:.1f}" font-size="10">{label}</text>'
            )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="12" '
        f'text-anchor="middle">bpp</text>'
    )
    parts.append(
        f'<text x="14" y="{height / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {height / 2:.0f})">PSNR (dB)</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
