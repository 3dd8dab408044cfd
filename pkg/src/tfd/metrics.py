"""PSNR and SSIM on 8-bit images, plus per-preset evaluation reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .degrade import DegradationConfig, bicubic_up, degrade_tensor
from .imageio import Image8, crop_to_multiple, from_tensor, to_tensor
from .rng import Rng, derive_seed

PSNR_CAP = 99.0
REPORT_HEADER = ("preset", "image", "psnr", "ssim")
BT601 = np.array([0.299, 0.587, 0.114])


class MetricError(ValueError):
    pass


def _planes(img: Image8, y_only: bool) -> np.ndarray:
    """H×W×C float planes on the 0-255 scale (one luma plane if ``y_only``)."""
    px = img.pixels.astype(np.float64)
    if y_only and px.shape[2] == 3:
        return (px @ BT601)[..., None]
    return px


def _check_pair(a: Image8, b: Image8) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise MetricError(f"dimension mismatch: {a.pixels.shape} vs {b.pixels.shape}")


def psnr(a: Image8, b: Image8, y_only: bool = False) -> float:
    _check_pair(a, b)
    mse = float(np.mean((_planes(a, y_only) - _planes(b, y_only)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0**2 / mse))


@lru_cache(maxsize=4)
def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    c = size // 2
    g = np.exp(-((np.arange(size) - c) ** 2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Correlation of a 2-D plane with ``w`` over fully-covered positions."""
    k = w.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k))
    return np.einsum("ijkl,kl->ij", win, w)


def ssim(a: Image8, b: Image8, y_only: bool = False, k1: float = 0.01, k2: float = 0.03) -> float:
    _check_pair(a, b)
    w = gaussian_window()
    if min(a.height, a.width) < w.shape[0]:
        raise MetricError(f"image {a.width}x{a.height} smaller than the {w.shape[0]}x{w.shape[0]} window")
    c1, c2 = (k1 * 255.0) ** 2, (k2 * 255.0) ** 2
    pa, pb = _planes(a, y_only), _planes(b, y_only)
    vals = []
    for ch in range(pa.shape[2]):
        x, y = pa[..., ch], pb[..., ch]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    preset: str
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))


SRFunction = Callable[[Image8], Image8]


def bicubic_model(scale: int = 4) -> SRFunction:
    """Identity 'model': bicubic upsampling of the LR input."""

    def run(lr: Image8) -> Image8:
        return from_tensor(bicubic_up(to_tensor(lr), scale))

    return run


def net_model(net, gate_enabled: bool | None = None) -> SRFunction:
    def run(lr: Image8) -> Image8:
        return from_tensor(net.super_resolve(to_tensor(lr), gate_enabled))

    return run


def evaluate(
    sr_fn: SRFunction,
    images: Sequence[tuple[str, Image8]],
    presets: Sequence[str],
    seed: int,
    scale: int = 4,
    y_only: bool = False,
) -> list[MetricReport]:
    """Degrade each HR image per preset (seed derived from preset and image index) and score."""
    reports = []
    for p_idx, preset in enumerate(presets):
        cfg = DegradationConfig.preset(preset, scale)
        rep = MetricReport(preset)
        for i, (name, hr) in enumerate(images):
            hr = crop_to_multiple(hr, scale)
            lr = from_tensor(degrade_tensor(cfg, to_tensor(hr), Rng(derive_seed(seed, p_idx, i))))
            sr = sr_fn(lr)
            rep.rows.append((name, psnr(sr, hr, y_only), ssim(sr, hr, y_only)))
        reports.append(rep)
    return reports


def write_report(reports: Sequence[MetricReport], path) -> None:
    """Per-image rows, one AVERAGE row per preset, then an overall AVERAGE row."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for rep in reports:
            for name, p, s in rep.rows:
                w.writerow([rep.preset, name, f"{p:.6f}", f"{s:.6f}"])
        for rep in reports:
            w.writerow([rep.preset, "AVERAGE", f"{rep.mean_psnr:.6f}", f"{rep.mean_ssim:.6f}"])
        if reports:
            w.writerow(
                [
                    "AVERAGE",
                    "AVERAGE",
                    f"{np.mean([r.mean_psnr for r in reports]):.6f}",
                    f"{np.mean([r.mean_ssim for r in reports]):.6f}",
                ]
            )
