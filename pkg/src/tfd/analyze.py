"""Diagnostics: feature drift, residual spectra, frequency-principle probe, SNR ramp, detection audit."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .degrade import DegradationConfig, degrade_tensor
from .imageio import Image8, from_tensor, to_tensor
from .rng import Rng, derive_seed
from .spectral import RadialProfile, fft2_np, radial_profile_np, radial_radius

SIMILARITY_HEADER = ("step", "preset", "cossim")
SPECTRUM_HEADER = ("preset", "bin", "normfreq", "magnitude")
FREQ_HEADER = ("step", "band", "rel_error")
SNR_HEADER = ("step", "snr")
AUDIT_HEADER = ("n_noisy", "acc_before", "acc_after")


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# --------------------------------------------------------------------------
# feature drift


def cosine_similarity(a, b) -> float:
    x = np.ravel(a.data if isinstance(a, Tensor) else a).astype(np.float64)
    y = np.ravel(b.data if isinstance(b, Tensor) else b).astype(np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    na, nb = np.linalg.norm(x), np.linalg.norm(y)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(x, y) / (na * nb), -1.0, 1.0))


@dataclass
class SimilarityTrace:
    rows: list[tuple[int, str, float]] = field(default_factory=list)

    def at(self, step: int, preset: str) -> float:
        for s, p, v in self.rows:
            if s == step and p == preset:
                return v
        raise KeyError((step, preset))

    def final(self, preset: str) -> float:
        return self.at(max(r[0] for r in self.rows), preset)


def degraded_pair(hr: Image8, preset: str, seed: int, scale: int = 4) -> tuple[Tensor, Tensor]:
    """(clean-preset LR, preset LR) of one HR image, both 8-bit quantized."""
    hr_t = to_tensor(hr)
    clean = degrade_tensor(DegradationConfig.preset("clean", scale), hr_t, Rng(0))
    deg = degrade_tensor(DegradationConfig.preset(preset, scale), hr_t, Rng(seed))
    return to_tensor(from_tensor(clean)), to_tensor(from_tensor(deg))


class SimilarityTracker:
    """Training hook recording CosSim(h(clean), h(degraded)) at the insertion point.

    Each row is the mean over the probe images of the per-image similarity.
    """

    def __init__(self, probes: Sequence[Image8], presets: Sequence[str], every: int, seed: int, scale: int = 4):
        self.presets = list(presets)
        self.every = every
        self.trace = SimilarityTrace()
        self.pairs = {
            p: [degraded_pair(img, p, derive_seed(seed, k, i), scale) for i, img in enumerate(probes)]
            for k, p in enumerate(self.presets)
        }

    def __call__(self, step: int, model) -> None:
        if step % self.every:
            return
        with ad.no_grad():
            for p in self.presets:
                clean = ad.Tensor(np.concatenate([c.data for c, _ in self.pairs[p]]))
                deg = ad.Tensor(np.concatenate([d.data for _, d in self.pairs[p]]))
                hc, hd = model.features(clean).data, model.features(deg).data
                sims = [cosine_similarity(hc[i], hd[i]) for i in range(hc.shape[0])]
                self.trace.rows.append((step, p, float(np.mean(sims))))


# --------------------------------------------------------------------------
# residual spectra


def residual_spectrum(clean_lr: Image8, degraded_lr: Image8, bins: int, power: bool = False) -> RadialProfile:
    """Radial profile of |F(degraded - clean)|, channels averaged."""
    if clean_lr.pixels.shape != degraded_lr.pixels.shape:
        raise ValueError(f"size mismatch: {clean_lr.pixels.shape} vs {degraded_lr.pixels.shape}")
    diff = to_tensor(degraded_lr).data[0] - to_tensor(clean_lr).data[0]
    spec = fft2_np(diff)
    mag = np.abs(spec) ** 2 if power else np.abs(spec)
    return radial_profile_np(mag, bins)


def mean_residual_profile(hrs: Sequence[Image8], preset: str, bins: int, seed: int, scale: int = 4) -> RadialProfile:
    profiles = []
    for i, hr in enumerate(hrs):
        clean, deg = degraded_pair(hr, preset, derive_seed(seed, i), scale)
        profiles.append(residual_spectrum(from_tensor(clean), from_tensor(deg), bins))
    first = profiles[0]
    return RadialProfile(first.normfreq, np.mean([p.mean for p in profiles], axis=0), first.counts)


# --------------------------------------------------------------------------
# frequency principle


@dataclass
class FreqErrorTrace:
    rows: list[tuple[int, str, float]] = field(default_factory=list)

    def band(self, name: str) -> list[tuple[int, float]]:
        return [(s, v) for s, b, v in self.rows if b == name]

    def first_below(self, name: str, level: float = 0.5) -> float:
        """First logged step with error < level; +inf if never."""
        for s, v in self.band(name):
            if v < level:
                return float(s)
        return float("inf")


def band_masks(h: int, w: int, low: float = 0.1, high: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
    """Low band r <= low, high band r >= high (r normalized radial frequency)."""
    r = radial_radius(h, w)
    return r <= low, r >= high


def spectrum_errors(output: np.ndarray, target_spec: np.ndarray, masks, floor: float = 1e-6) -> dict[str, float]:
    """Band-averaged |S^k - H^k| / |H^k|, skipping bins with |H^k| < floor."""
    s = fft2_np(output)
    out = {}
    for name, m in zip(("low", "high"), masks):
        keep = m & (np.abs(target_spec) >= floor)
        if keep.any():
            out[name] = float(np.mean(np.abs(s[keep] - target_spec[keep]) / np.abs(target_spec[keep])))
    return out


class CoordinateMLP:
    """Two-layer ReLU perceptron (x, y) -> intensity on the autodiff engine."""

    def __init__(self, hidden: int, seed: int):
        rng = Rng(seed)
        self.params = ad.ParamStore()
        b1 = np.sqrt(6.0 / 2)
        self.params.add("w1", rng.uniform((2, hidden), -b1, b1))
        self.params.add("b1", rng.uniform((hidden,), -b1, b1))
        b2 = np.sqrt(6.0 / hidden)
        self.params.add("w2", rng.uniform((hidden, 1), -b2, b2) * 0.1)
        self.params.add("b2", np.zeros(1))

    def __call__(self, coords: Tensor) -> Tensor:
        p = self.params
        hid = ad.relu(ad.add_rowvec(ad.matmul(coords, p["w1"]), p["b1"]))
        return ad.add_rowvec(ad.matmul(hid, p["w2"]), p["b2"])


def _grid(h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return np.stack([2 * xx.ravel() / (w - 1) - 1, 2 * yy.ravel() / (h - 1) - 1], axis=1).astype(np.float64)


def freq_principle_probe(
    target: Image8,
    steps: int = 2000,
    seed: int = 0,
    hidden: int = 128,
    lr: float = 2e-3,
    log_every: int = 10,
) -> FreqErrorTrace:
    """Fit a coordinate MLP to a grayscale target; log band spectral errors."""
    from .train import TrainConfig, TrainState, adam_step

    img = to_tensor(target).data[0].mean(axis=0)
    h, w = img.shape
    if h & (h - 1) or w & (w - 1):
        raise ValueError(f"target must be power-of-two sized, got {h}x{w}")
    coords = Tensor(_grid(h, w))
    y = Tensor(img.reshape(-1, 1))
    target_spec = fft2_np(img)
    masks = band_masks(h, w)
    net = CoordinateMLP(hidden, seed)
    cfg = TrainConfig(lr0=lr, iters=steps, lambda_cls=0.0, lambda_feat=0.0)
    state = TrainState.for_params(net.params)
    trace = FreqErrorTrace()

    def log(step: int) -> None:
        with ad.no_grad():
            out = net(coords).data.reshape(h, w)
        for band, v in spectrum_errors(out, target_spec, masks).items():
            trace.rows.append((step, band, v))

    log(0)
    for step in range(1, steps + 1):
        with ad.Tape():
            diff = ad.sub(net(coords), y)
            loss = ad.mean_all(ad.square(diff))
            ad.backward(loss)
        adam_step(net.params, state, cfg)
        if step % log_every == 0:
            log(step)
    return trace


# --------------------------------------------------------------------------
# gradient SNR


@dataclass
class SnrCurve:
    rows: list[tuple[int, float]] = field(default_factory=list)
    weight: str = "uniform"

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.rows])


def ramp_weight(h: int, w: int, t: int, t_max: int, p_max: float, delta: float = 0.05) -> np.ndarray:
    """w(omega, t) = (r + delta) ** p(t) with p rising linearly from 0 to p_max."""
    p = p_max * t / max(t_max, 1)
    return (radial_radius(h, w) + delta) ** p


def snr_curve(
    content: np.ndarray,
    noise: np.ndarray,
    steps: Sequence[int],
    weight: str = "ramp",
    p_max: float = 4.0,
    delta: float = 0.05,
) -> SnrCurve:
    """SNR(t) = sum w |F content|^2 / sum w |F noise|^2 over a 2-D plane."""
    content = np.asarray(content, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if content.shape != noise.shape:
        raise ValueError("content and noise planes must match")
    pc = np.abs(fft2_np(content)) ** 2
    pn = np.abs(fft2_np(noise)) ** 2
    if pn.sum() == 0.0:
        raise ValueError("zero noise energy: SNR undefined")
    if weight not in ("uniform", "ramp"):
        raise ValueError(f"weight must be 'uniform' or 'ramp', got {weight!r}")
    h, w = content.shape[-2:]
    t_max = max(steps) if len(steps) else 1
    curve = SnrCurve(weight=weight if weight == "uniform" else f"ramp(p_max={p_max},delta={delta})")
    for t in steps:
        wt = np.ones((h, w)) if weight == "uniform" else ramp_weight(h, w, t, t_max, p_max, delta)
        curve.rows.append((int(t), float((wt * pc).sum() / (wt * pn).sum())))
    return curve


def gaussian_noise_plane(shape, sigma255: float, seed: int) -> np.ndarray:
    return Rng(seed).normal(shape, std=sigma255 / 255.0)


# --------------------------------------------------------------------------
# detection audit


@dataclass
class AuditResult:
    n_noisy: int
    acc_before: float
    acc_after: float


def detection_audit(model, lr_batch: Tensor, labels: np.ndarray) -> AuditResult:
    """Detector accuracy on noisy features before denoising, and after.

    Only label-1 (noisy) samples count.  acc_after is the fraction of
    denoised noisy features the detector still calls noisy.
    """
    if not model.arch.nd:
        raise ValueError("detection audit needs the noise detector enabled")
    noisy = np.flatnonzero(np.asarray(labels) == 1)
    if noisy.size == 0:
        raise ValueError("audit set contains no noisy samples")
    with ad.no_grad():
        h = model.features(Tensor(lr_batch.data[noisy]))
        before = np.argmax(model.detect(h)[0].data, axis=1) == 1
        after = np.argmax(model.detect(model.denoise(h))[0].data, axis=1) == 1
    return AuditResult(int(noisy.size), float(before.mean()), float(after.mean()))


def noisy_audit_batch(hrs: Sequence[Image8], seed: int, scale: int = 4) -> tuple[Tensor, np.ndarray]:
    """LR batch of the noise preset (all label 1)."""
    cfg = DegradationConfig.preset("noise", scale)
    lrs = [to_tensor(from_tensor(degrade_tensor(cfg, to_tensor(hr), Rng(derive_seed(seed, i))))) for i, hr in enumerate(hrs)]
    return Tensor(np.concatenate([t.data for t in lrs])), np.ones(len(lrs), dtype=np.int64)
