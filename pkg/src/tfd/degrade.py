"""Synthetic degradations: blur, bicubic downsampling, Gaussian noise, block-DCT JPEG.

Stages run as blur -> downsample -> noise -> jpeg, skipping absent ones.
Noise and JPEG act at LR resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor
from .imageio import Image8, from_tensor, to_tensor
from .rng import Rng

PRESET_NAMES = (
    "clean",
    "blur",
    "noise",
    "jpeg",
    "blur+noise",
    "blur+jpeg",
    "noise+jpeg",
    "blur+noise+jpeg",
)

DEFAULT_BLUR_SIGMA = 2.0
DEFAULT_NOISE_SIGMA = 20.0
DEFAULT_JPEG_QUALITY = 30


class DegradationError(ValueError):
    pass


@dataclass(frozen=True)
class BlurSpec:
    sigma: float = DEFAULT_BLUR_SIGMA
    ksize: int | None = None

    @property
    def size(self) -> int:
        return self.ksize if self.ksize is not None else 2 * math.ceil(3 * self.sigma) + 1


@dataclass(frozen=True)
class DegradationConfig:
    blur: BlurSpec | None = None
    noise: float | None = None  # sigma on the 0-255 scale
    jpeg: int | None = None  # quality
    scale: int = 4
    name: str = "custom"

    @classmethod
    def preset(cls, name: str, scale: int = 4, blur_sigma: float = DEFAULT_BLUR_SIGMA) -> "DegradationConfig":
        if name not in PRESET_NAMES:
            raise DegradationError(f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}")
        parts = set(name.split("+"))
        return cls(
            blur=BlurSpec(blur_sigma) if "blur" in parts else None,
            noise=DEFAULT_NOISE_SIGMA if "noise" in parts else None,
            jpeg=DEFAULT_JPEG_QUALITY if "jpeg" in parts else None,
            scale=scale,
            name=name,
        )

    def noise_label(self) -> int:
        return int(self.noise is not None)

    def stages(self) -> list[str]:
        trace = []
        if self.blur is not None:
            trace.append("blur")
        trace.append("downsample")
        if self.noise is not None:
            trace.append("noise")
        if self.jpeg is not None:
            trace.append("jpeg")
        return trace


def _as_array(img) -> np.ndarray:
    return img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)


# --------------------------------------------------------------------------
# blur


def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    if ksize % 2 == 0 or ksize < 1:
        raise DegradationError(f"kernel size must be odd and positive, got {ksize}")
    if sigma <= 0:
        raise DegradationError(f"blur sigma must be positive, got {sigma}")
    c = ksize // 2
    k = np.exp(-((np.arange(ksize) - c) ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(img, sigma: float, ksize: int) -> Tensor:
    """Separable normalized Gaussian with reflect padding, on N×C×H×W."""
    k = gaussian_kernel1d(sigma, ksize)
    r = ksize // 2
    x = _as_array(img)
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (0, 0)), mode="reflect")
    x = sum(k[i] * xp[:, :, i : i + x.shape[2], :] for i in range(ksize))
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (r, r)), mode="reflect")
    x = sum(k[i] * xp[:, :, :, i : i + x.shape[3]] for i in range(ksize))
    return Tensor(x)


# --------------------------------------------------------------------------
# bicubic


def cubic_weight(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=128)
def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Resampling matrix (n_out × n_in): centre-aligned, 4 taps, clamped edges."""
    s = n_in / n_out
    src = (np.arange(n_out) + 0.5) * s - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        np.add.at(m, (rows, np.clip(base + tap, 0, n_in - 1)), cubic_weight(frac - tap))
    return m


def bicubic_resize(img, out_h: int, out_w: int) -> Tensor:
    x = _as_array(img)
    mh = bicubic_matrix(x.shape[2], out_h)
    mw = bicubic_matrix(x.shape[3], out_w)
    return Tensor(np.einsum("ih,nchw,jw->ncij", mh, x, mw, optimize=True))


def bicubic_down(img, scale: int) -> Tensor:
    x = _as_array(img)
    h, w = x.shape[2:]
    if h % scale or w % scale:
        raise DegradationError(f"image {h}x{w} not divisible by scale {scale}")
    return bicubic_resize(x, h // scale, w // scale)


def bicubic_up(img, scale: int) -> Tensor:
    x = _as_array(img)
    return bicubic_resize(x, x.shape[2] * scale, x.shape[3] * scale)


# --------------------------------------------------------------------------
# noise


def add_gaussian_noise(img, sigma255: float, rng: Rng) -> Tensor:
    if sigma255 < 0:
        raise DegradationError("noise sigma must be non-negative")
    x = _as_array(img)
    if sigma255 == 0:
        return Tensor(x.copy())
    noisy = x + rng.normal(x.shape, std=sigma255 / 255.0)
    return Tensor(np.clip(noisy, 0.0, 1.0))


# --------------------------------------------------------------------------
# jpeg

LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


def quality_scale(quality: int) -> int:
    if not 1 <= quality <= 100:
        raise DegradationError(f"JPEG quality must be in [1, 100], got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def quant_table(quality: int) -> np.ndarray:
    s = quality_scale(quality)
    return np.clip((LUMA_TABLE * s + 50) // 100, 1, 255)


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:
    k = np.arange(8)[:, None]
    n = np.arange(8)[None, :]
    d = np.cos(np.pi * (2 * n + 1) * k / 16.0) * np.sqrt(2.0 / 8.0)
    d[0] /= np.sqrt(2.0)
    return d


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def jpeg_codec(img, quality: int) -> Tensor:
    """Lossy part of baseline JPEG, per channel, no chroma subsampling."""
    q = quant_table(quality).astype(np.float64)
    x = round_half_away(np.clip(_as_array(img), 0.0, 1.0) * 255.0)
    n, c, h, w = x.shape
    ph, pw = -h % 8, -w % 8
    xp = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge") - 128.0
    hb, wb = xp.shape[2] // 8, xp.shape[3] // 8
    blocks = xp.reshape(n, c, hb, 8, wb, 8).transpose(0, 1, 2, 4, 3, 5)
    d = dct_matrix()
    coef = d @ blocks @ d.T
    coef = round_half_away(coef / q) * q
    rec = d.T @ coef @ d
    rec = rec.transpose(0, 1, 2, 4, 3, 5).reshape(xp.shape)[:, :, :h, :w] + 128.0
    rec = np.clip(round_half_away(rec), 0.0, 255.0)
    return Tensor(rec / 255.0)


# --------------------------------------------------------------------------
# pipeline


def degrade_tensor(config: DegradationConfig, hr, rng: Rng) -> Tensor:
    x = _as_array(hr)
    if config.blur is not None:
        x = gaussian_blur(x, config.blur.sigma, config.blur.size).data
    x = bicubic_down(x, config.scale).data
    if config.noise is not None:
        x = add_gaussian_noise(x, config.noise, rng).data
    if config.jpeg is not None:
        x = jpeg_codec(x, config.jpeg).data
    return Tensor(x)


def apply(config: DegradationConfig, hr: Image8, rng: Rng) -> tuple[Image8, int]:
    """Degrade an HR image to an 8-bit LR image and its noise label."""
    lr = degrade_tensor(config, to_tensor(hr), rng)
    return from_tensor(lr), config.noise_label()


def all_presets(scale: int = 4, blur_sigma: float = DEFAULT_BLUR_SIGMA) -> list[DegradationConfig]:
    return [DegradationConfig.preset(n, scale, blur_sigma) for n in PRESET_NAMES]
