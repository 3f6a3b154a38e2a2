"""Quality metrics: PSNR, multi-exposure PSNR, SSIM and MS-SSIM.

PSNR/SSIM/MS-SSIM run on normalized code values (the network's native
domain); mPSNR runs on linear light after PQ linearization.  Aggregates
use the population (divide-by-N) standard deviation.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import colorimetry as cm
from .errors import FormatError, ShapeError
from .tensor import Tensor

MPSNR_EXPOSURES = tuple(range(-3, 4))
MPSNR_GAMMA = 2.2
MPSNR_BITS = 10

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x)


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) over all elements; +inf when MSE is zero."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ShapeError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _expose(linear: np.ndarray, stops: int) -> np.ndarray:
    tone = np.power(np.maximum(linear * (2.0**stops), 0.0), 1.0 / MPSNR_GAMMA)
    return cm.quantize_to_grid(np.clip(tone, 0.0, 1.0), MPSNR_BITS)


def mpsnr(a: cm.LuminanceFrame, b: cm.LuminanceFrame, strict: bool = False) -> float:
    """PSNR averaged over exposure stops -3..+3 of gamma-encoded, 10-bit
    quantized renderings of the linear-light inputs."""
    pa, pb = a.planes, b.planes
    if pa.shape != pb.shape:
        raise ShapeError(f"mpsnr: shape mismatch {pa.shape} vs {pb.shape}")
    if strict and (np.any(pa < 0) or np.any(pb < 0)):
        raise ShapeError("mpsnr: negative linear light in strict mode")
    values = [psnr(_expose(pa, c), _expose(pb, c), 1.0) for c in MPSNR_EXPOSURES]
    return float(np.mean(values))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _local_mean(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    # separable valid-mode weighted mean; window dims land on the last axis
    t = sliding_window_view(x, window.size, axis=1) @ window
    return sliding_window_view(t, window.size, axis=0) @ window


def _ssim_terms(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-window luminance and contrast-structure term maps."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a single 2-D plane, got shape {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim: plane {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _local_mean(a, w)
    mu_b = _local_mean(b, w)
    var_a = _local_mean(a * a, w) - mu_a * mu_a
    var_b = _local_mean(b * b, w) - mu_b * mu_b
    cov = _local_mean(a * b, w) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window, sigma 1.5."""
    lum, cs = _ssim_terms(_as_array(a), _as_array(b), data_range)
    return float(np.mean(lum * cs))


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4.0


def msssim_scales_for(shape: tuple[int, int]) -> int:
    """How many of the five dyadic scales fit an image of this shape."""
    fit = 0
    h, w = shape
    while fit < len(MSSSIM_WEIGHTS) and min(h, w) >= SSIM_WINDOW:
        fit += 1
        h, w = h // 2, w // 2
    return fit


def ms_ssim(a, b, data_range: float = 1.0, permissive: bool = False) -> float:
    """Five-scale MS-SSIM.

    Contrast-structure terms enter at every scale, the luminance term
    only at the coarsest.  In permissive mode, images too small for all
    five scales fall back to as many scales as fit, with the exponent
    weights renormalized; otherwise that raises.
    """
    a = np.asarray(_as_array(a), dtype=np.float64)
    b = np.asarray(_as_array(b), dtype=np.float64)
    n_scales = len(MSSSIM_WEIGHTS)
    fit = msssim_scales_for(a.shape)
    if fit < n_scales and not permissive:
        raise ShapeError(
            f"ms_ssim: image {a.shape} supports only {fit} of {n_scales} scales; "
            f"need at least {SSIM_WINDOW * 2 ** (n_scales - 1)} per axis"
        )
    if fit == 0:
        raise ShapeError(f"ms_ssim: image {a.shape} smaller than the SSIM window")
    weights = np.asarray(MSSSIM_WEIGHTS[:fit])
    if fit < n_scales:
        weights = weights / weights.sum()
    value = 1.0
    for level in range(fit):
        lum, cs = _ssim_terms(a, b, data_range)
        value *= float(np.mean(cs)) ** weights[level]
        if level == fit - 1:
            value *= float(np.mean(lum)) ** weights[level]
        else:
            a, b = _downsample2(a), _downsample2(b)
    return float(value)


# ---------------------------------------------------------------------------
# directory evaluation
# ---------------------------------------------------------------------------

KNOWN_METRICS = ("psnr", "mpsnr", "ssim", "msssim")


@dataclass
class MetricReport:
    """Per-pair metric values plus mean/std aggregates (population std)."""

    per_pair: dict[str, dict[str, float]] = field(default_factory=dict)  # metric -> name -> value
    notes: list[str] = field(default_factory=list)

    def add(self, metric: str, name: str, value: float) -> None:
        self.per_pair.setdefault(metric, {})[name] = value

    def mean(self, metric: str) -> float:
        vals = np.asarray(list(self.per_pair[metric].values()))
        if np.all(vals == vals[0]):
            return float(vals[0])
        return float(np.mean(vals))

    def std(self, metric: str) -> float:
        vals = np.asarray(list(self.per_pair[metric].values()))
        if np.all(vals == vals[0]):  # single pair, or all equal (incl. +inf sentinels)
            return 0.0
        with np.errstate(invalid="ignore"):
            return float(np.std(vals))  # population convention; nan when sentinels mix in

    def as_table(self) -> str:
        lines = ["metric        mean      std       pairs",
                 "--------------------------------------------"]
        for metric in self.per_pair:
            lines.append(
                f"{metric:<12}  {self.mean(metric):<8.4f}  {self.std(metric):<8.4f}  {len(self.per_pair[metric])}"
            )
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)

    def as_key_values(self) -> str:
        lines = ["# aggregate std is the population (divide-by-N) standard deviation"]
        for metric, pairs in self.per_pair.items():
            for name, value in pairs.items():
                lines.append(f"{metric}.pair.{name}={value!r}")
            lines.append(f"{metric}.mean={self.mean(metric)!r}")
            lines.append(f"{metric}.std={self.std(metric)!r}")
        return "\n".join(lines) + "\n"


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("SRITM_THREADS", "1")))
    except ValueError:
        return 1


def _pair_metrics(pred_path: Path, gt_path: Path, metrics: tuple[str, ...], peak_nits: float,
                  permissive_scales: bool) -> tuple[str, dict[str, float], int]:
    pred = cm.load_frame(pred_path)
    gt = cm.load_frame(gt_path)
    if pred.spec != gt.spec:
        raise FormatError(f"{pred_path.name}: prediction spec {pred.spec} != ground-truth spec {gt.spec}")
    out: dict[str, float] = {}
    scales_used = len(MSSSIM_WEIGHTS)
    if "psnr" in metrics:
        out["psnr"] = psnr(pred.planes, gt.planes, 1.0)
    if "ssim" in metrics:
        out["ssim"] = ssim(pred.planes[0], gt.planes[0])
    if "msssim" in metrics:
        out["msssim"] = ms_ssim(pred.planes[0], gt.planes[0], permissive=permissive_scales)
        scales_used = min(scales_used, msssim_scales_for(pred.planes[0].shape))
    if "mpsnr" in metrics:
        out["mpsnr"] = mpsnr(cm.hdr_to_linear(pred, peak_nits), cm.hdr_to_linear(gt, peak_nits))
    return pred_path.name, out, scales_used


def evaluate_pairs(pred_dir, gt_dir, metrics: tuple[str, ...] = KNOWN_METRICS,
                   peak_nits: float = cm.DEFAULT_PEAK_NITS, permissive_scales: bool = True) -> MetricReport:
    """Evaluate matching frame files from two directories."""
    for m in metrics:
        if m not in KNOWN_METRICS:
            raise FormatError(f"unknown metric {m!r}; known: {', '.join(KNOWN_METRICS)}")
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_files = {p.name: p for p in sorted(pred_dir.glob("*.png"))}
    gt_files = {p.name: p for p in sorted(gt_dir.glob("*.png"))}
    if not pred_files:
        raise FormatError(f"no frame files found in {pred_dir}")
    if set(pred_files) != set(gt_files):
        only_pred = sorted(set(pred_files) - set(gt_files))
        only_gt = sorted(set(gt_files) - set(pred_files))
        raise FormatError(f"unmatched frames; only in pred: {only_pred[:4]}, only in gt: {only_gt[:4]}")

    report = MetricReport()
    jobs = [(pred_files[name], gt_files[name]) for name in sorted(pred_files)]
    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda pg: _pair_metrics(*pg, metrics, peak_nits, permissive_scales), jobs))
    else:
        results = [_pair_metrics(p, g, metrics, peak_nits, permissive_scales) for p, g in jobs]
    min_scales = len(MSSSIM_WEIGHTS)
    for name, values, scales in results:
        stem = Path(name).stem
        for metric, value in values.items():
            report.add(metric, stem, value)
        min_scales = min(min_scales, scales)
    if "msssim" in metrics and min_scales < len(MSSSIM_WEIGHTS):
        report.notes.append(f"msssim fell back to {min_scales} scale(s) on small frames")
    return report
