"""Procedural stand-ins for natural photographs.

Images combine a 1/f random field (the power-law spectrum natural scenes
have), anti-aliased flat-colored shapes for edges, and oriented gratings
for texture.  Everything flows from an explicit :class:`Rng`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import Image8, quantize, save_ppm
from .rng import Rng, derive_seed


def pink_field(rng: Rng, size: int, exponent: float = 1.0) -> np.ndarray:
    """Zero-mean, unit-std field with amplitude spectrum ~ 1/f**exponent."""
    white = rng.normal((size, size))
    f = np.fft.fftfreq(size)
    radius = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
    radius[0, 0] = 1.0
    amp = 1.0 / np.maximum(radius, 1.0 / size) ** exponent
    amp[0, 0] = 0.0
    field = np.fft.ifft2(np.fft.fft2(white) * amp).real
    return (field - field.mean()) / (field.std() + 1e-12)


def _shape_mask(rng: Rng, size: int, ss: int = 4) -> np.ndarray:
    """Anti-aliased coverage of one random ellipse or rotated rectangle."""
    n = size * ss
    yy, xx = np.mgrid[0:n, 0:n] / ss
    cy, cx = rng.uniform((2,), 0.0, size)
    ry, rx = rng.uniform((2,), size * 0.08, size * 0.35)
    theta = rng.uniform((), 0.0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    if rng.uniform(()) < 0.5:
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    else:
        inside = (np.abs(u) <= rx) & (np.abs(v) <= ry)
    return inside.reshape(size, ss, size, ss).mean(axis=(1, 3))


def _grating(rng: Rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform((), 0.0, np.pi)
    period = rng.uniform((), 3.0, 12.0)
    phase = rng.uniform((), 0.0, 2 * np.pi)
    return np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)


def make_image(rng: Rng, size: int = 96, channels: int = 3) -> Image8:
    base = pink_field(rng, size)
    tint = rng.uniform((channels,), 0.7, 1.3)
    img = np.stack([0.5 + 0.12 * base * tint[c] for c in range(channels)], axis=-1)
    for c in range(channels):
        img[..., c] += 0.04 * pink_field(rng, size)
    for _ in range(int(rng.integers(5)) + 3):
        cover = _shape_mask(rng, size)[..., None]
        color = rng.uniform((channels,), 0.05, 0.95)
        img = img * (1 - cover) + cover * (color + 0.05 * base[..., None])
    if rng.uniform(()) < 0.7:
        cover = _shape_mask(rng, size)[..., None]
        amp = rng.uniform((), 0.08, 0.25)
        img = img + cover * amp * _grating(rng, size)[..., None]
    return Image8(quantize(img))


def make_corpus(seed: int, count: int, size: int = 96, channels: int = 3) -> list[Image8]:
    return [make_image(Rng(derive_seed(seed, i)), size, channels) for i in range(count)]


def write_corpus(directory, seed: int, count: int, size: int = 96, channels: int = 3) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(make_corpus(seed, count, size, channels)):
        path = directory / f"img{i:03d}.ppm"
        save_ppm(img, path)
        paths.append(path)
    return paths


def probe_image(size: int = 32, seed: int = 2024) -> Image8:
    """Fixed grayscale probe: 1/f field, a disk and a grating."""
    rng = Rng(seed)
    field = pink_field(rng, size)
    yy, xx = np.mgrid[0:size, 0:size]
    disk = ((yy - size * 0.4) ** 2 + (xx - size * 0.6) ** 2 <= (size * 0.22) ** 2).astype(np.float64)
    grating = np.sin(2 * np.pi * (xx + 0.5 * yy) / 5.0)
    img = 0.5 + 0.15 * field + 0.25 * disk + 0.06 * grating
    return Image8(quantize(img[..., None]))
