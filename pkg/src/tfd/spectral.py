"""2D discrete Fourier transforms on the tape, spectral filtering, radial profiles.

Convention: unnormalized forward transform with DC at index (0, 0); the
inverse carries the 1/(H*W) factor.  Axes whose length is a power of two go
through an iterative radix-2 FFT, other lengths through a dense DFT matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import ShapeError, Tensor, _record, add, depthwise_conv2d, relu, sqrt, square


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(m: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(m // 2) / m)


@lru_cache(maxsize=64)
def _dft_matrix(n: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    k = np.arange(n)
    # reduce k*j mod n before scaling keeps the phase exact for large products
    return np.exp(sign * 2j * np.pi * ((np.outer(k, k) % n) / n))


def fft_last(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT along the last axis (complex in, complex out)."""
    n = a.shape[-1]
    if n == 1:
        return a.astype(np.complex128)
    if not is_pow2(n):
        return a.astype(np.complex128) @ _dft_matrix(n, inverse).T
    x = a.astype(np.complex128)[..., _bitrev(n)]
    lead = x.shape[:-1]
    m = 2
    while m <= n:
        x = x.reshape(lead + (n // m, m))
        even = x[..., : m // 2]
        odd = x[..., m // 2 :] * _twiddles(m, inverse)
        x = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return x.reshape(lead + (n,))


def naive_last(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    n = a.shape[-1]
    return a.astype(np.complex128) @ _dft_matrix(n, inverse).T


def fft2_np(x: np.ndarray, inverse: bool = False, fast: bool = True) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes."""
    f = fft_last if fast else naive_last
    y = f(x, inverse)
    y = np.swapaxes(f(np.swapaxes(y, -1, -2), inverse), -1, -2)
    return y


@dataclass
class Spectrum:
    re: Tensor
    im: Tensor
    origin: str = "dc00"

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"spectrum planes differ: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self):
        return self.re.shape

    def complex(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


def dft2(x: Tensor) -> Spectrum:
    """Forward transform of a real tensor over its last two axes."""
    spec = fft2_np(x.data)
    re = _record(spec.real.copy(), (x,), lambda g: (fft2_np(g).real,))
    im = _record(spec.imag.copy(), (x,), lambda g: (fft2_np(g).imag,))
    return Spectrum(re, im)


def idft2(s: Spectrum) -> Tensor:
    """Inverse transform (with 1/(H*W)); returns the real part."""
    h, w = s.shape[-2:]
    norm = 1.0 / (h * w)
    out = fft2_np(s.complex(), inverse=True).real * norm

    def bwd(g):
        gf = fft2_np(g) * norm
        return gf.real, gf.imag

    return _record(out, (s.re, s.im), bwd)


def spectral_filter(s: Spectrum, wr: Tensor, wi: Tensor, mode: str = "hadamard") -> Spectrum:
    """Filter real and imaginary planes independently.

    ``hadamard``: per-bin products with weights shaped like one sample
    (C×H×W, or 1×H×W to share across channels).  ``conv3``: per-channel
    3×3 convolution of each plane followed by ReLU; weights are C×1×3×3.
    """
    n, c, h, w = s.shape
    if mode == "hadamard":
        if wr.shape != wi.shape or wr.shape[-2:] != (h, w) or wr.shape[0] not in (1, c):
            raise ShapeError(f"hadamard filter {wr.shape}/{wi.shape} for spectrum {s.shape}")
        return Spectrum(_bcast_mul(s.re, wr), _bcast_mul(s.im, wi))
    if mode == "conv3":
        if wr.shape != (c, 1, 3, 3) or wi.shape != (c, 1, 3, 3):
            raise ShapeError(f"conv3 filter {wr.shape}/{wi.shape} for {c} channels")
        return Spectrum(relu(depthwise_conv2d(s.re, wr)), relu(depthwise_conv2d(s.im, wi)))
    raise ValueError(f"unknown spectral filter mode {mode!r}")


def _bcast_mul(x: Tensor, w: Tensor) -> Tensor:
    """N×C×H×W times a per-sample weight (C×H×W or 1×H×W)."""
    xd, wd = x.data, w.data[None]

    def bwd(g):
        gw = (g * xd).sum(axis=0)
        if w.shape[0] == 1 and x.shape[1] != 1:
            gw = gw.sum(axis=0, keepdims=True)
        return g * wd, gw

    return _record(xd * wd, (x, w), bwd)


def magnitude(s: Spectrum, eps: float = 0.0) -> Tensor:
    return sqrt(add(square(s.re), square(s.im)), eps)


# --------------------------------------------------------------------------
# radial profile


@dataclass
class RadialProfile:
    normfreq: np.ndarray  # bin centres in [0, 1]
    mean: np.ndarray
    counts: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.mean)

    def rows(self):
        return [(i, float(f), float(m)) for i, (f, m) in enumerate(zip(self.normfreq, self.mean))]


def signed_freqs(n: int) -> np.ndarray:
    """Signed normalized frequency of each DFT index, in [-0.5, 0.5)."""
    k = np.arange(n)
    return np.where(k < (n + 1) // 2, k, k - n) / n


def radial_radius(h: int, w: int) -> np.ndarray:
    """r = |(fu, fv)| / sqrt(0.5), so the corner (Nyquist, Nyquist) maps to 1."""
    fu, fv = np.meshgrid(signed_freqs(h), signed_freqs(w), indexing="ij")
    return np.sqrt(fu**2 + fv**2) / np.sqrt(0.5)


def radial_bin_index(h: int, w: int, bins: int) -> np.ndarray:
    """Bin 0 holds the DC term alone; other radii split (0, 1] evenly."""
    if bins < 2:
        raise ValueError("radial profile needs at least 2 bins")
    r = radial_radius(h, w)
    idx = 1 + np.floor(r * (bins - 1)).astype(np.int64)
    idx = np.minimum(idx, bins - 1)
    idx[r == 0] = 0
    return idx


def radial_profile_np(mag: np.ndarray, bins: int) -> RadialProfile:
    """Bin mean of a magnitude plane (…×H×W); leading axes are averaged too."""
    h, w = mag.shape[-2:]
    idx = radial_bin_index(h, w, bins)
    flat = mag.reshape(-1, h * w)
    sums = np.bincount(np.tile(idx.ravel(), flat.shape[0]), weights=flat.ravel(), minlength=bins)
    counts = np.bincount(idx.ravel(), minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / (counts * flat.shape[0]), 0.0)
    centres = np.concatenate([[0.0], (np.arange(1, bins) - 0.5) / (bins - 1)])
    return RadialProfile(centres, mean, counts)


def radial_profile(s: Spectrum, bins: int, power: bool = False) -> RadialProfile:
    """Mean magnitude per radial bin (mean |X|^2 when ``power``)."""
    sq = s.re.data**2 + s.im.data**2
    return radial_profile_np(sq if power else np.sqrt(sq), bins)


def parseval_check(x: Tensor) -> tuple[float, float]:
    """(sum of squares in space, sum of |X|^2 / (H*W) in frequency)."""
    h, w = x.shape[-2:]
    spec = fft2_np(x.data)
    spatial = float(np.sum(x.data**2))
    spectral = float(np.sum(np.abs(spec) ** 2) / (h * w))
    return spatial, spectral


def resample_filter(w: np.ndarray, h: int, wd: int) -> np.ndarray:
    """Bilinearly resample a DC-at-origin frequency-domain filter to h×wd.

    Each target bin is located by its signed normalized frequency on the
    source grid, with wrap-around so negative frequencies stay contiguous.
    """
    src_h, src_w = w.shape[-2:]
    if (src_h, src_w) == (h, wd):
        return w.copy()
    rh = _interp_matrix(src_h, h)
    rw = _interp_matrix(src_w, wd)
    return np.einsum("ij,...jk,lk->...il", rh, w, rw)


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    pos = signed_freqs(dst) * src
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    m = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(m, (rows, lo % src), 1.0 - frac)
    np.add.at(m, (rows, (lo + 1) % src), frac)
    return m


__all__ = [
    "Spectrum",
    "RadialProfile",
    "dft2",
    "idft2",
    "spectral_filter",
    "magnitude",
    "radial_profile",
    "radial_profile_np",
    "radial_bin_index",
    "parseval_check",
    "fft2_np",
    "fft_last",
    "naive_last",
    "resample_filter",
    "signed_freqs",
]
