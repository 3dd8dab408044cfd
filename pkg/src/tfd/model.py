"""Tiny residual SR backbone with the targeted feature denoising add-on.

The add-on sits between two trunk blocks.  A spectral noise detector scores
the feature map; samples whose noise confidence exceeds the gate threshold
go through a frequency-masked encoder-decoder denoiser, the rest pass
through unchanged.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .rng import Rng
from .spectral import Spectrum, dft2, idft2, resample_filter, spectral_filter

FUSIONS = ("multiplication", "addition", "concatenation")


@dataclass
class ArchConfig:
    blocks: int = 8
    channels: int = 16
    insert_at: int = 4
    nd: bool = True
    sd: bool = True
    fd: bool = True
    fusion: str = "multiplication"
    reduction_ratio: int = 4
    in_channels: int = 3
    feat_size: int = 24
    classifier_hidden: int = 8
    freq_filter: str = "shared"  # or "per_channel"
    detect_mode: str = "conv3"
    freq_mode: str = "hadamard"
    mask_bias: float = 2.0
    gate_threshold: float = 0.75
    res_scale: float = 0.1

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.channels % self.reduction_ratio:
            raise ValueError(f"reduction ratio {self.reduction_ratio} does not divide {self.channels} channels")
        if not 0 <= self.insert_at <= self.blocks:
            raise ValueError(f"insert_at {self.insert_at} outside 0..{self.blocks}")
        if self.freq_filter not in ("shared", "per_channel"):
            raise ValueError(f"freq_filter must be 'shared' or 'per_channel', got {self.freq_filter!r}")
        if self.detect_mode not in ("conv3", "hadamard") or self.freq_mode not in ("conv3", "hadamard"):
            raise ValueError("spectral filter modes are 'conv3' or 'hadamard'")
        if self.feat_size % 4:
            raise ValueError("feat_size must be divisible by 4 (two encoder downsamplings)")
        if not 0.0 < self.gate_threshold < 1.0:
            raise ValueError("gate_threshold must lie in (0, 1)")

    @property
    def denoiser_on(self) -> bool:
        return self.sd or self.fd

    @property
    def addon_on(self) -> bool:
        return self.nd or self.sd or self.fd

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown arch keys: {sorted(unknown)}")
        return cls(**d)


def he_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -bound, bound)


class TFDNet:
    """Parameters live in ``self.params``; ``forward`` is a pure function of them."""

    GATE_KEY = "schedule.gate_active"

    def __init__(self, arch: ArchConfig, seed: int = 0):
        self.arch = arch
        self.params = ParamStore()
        # training-schedule gate; inference routes through the denoiser only once training opened it
        self.gate_open = True
        self._rng = Rng(seed)
        self._build()
        del self._rng

    # ------------------------------------------------------------------ build

    def _conv(self, name: str, cin: int, cout: int, k: int, bias: bool = True) -> None:
        self.params.add(name + ".w", he_uniform(self._rng, (cout, cin, k, k), cin * k * k))
        if bias:
            self.params.add(name + ".b", np.zeros(cout))

    def _dw(self, name: str, c: int) -> None:
        self.params.add(name + ".w", he_uniform(self._rng, (c, 1, 3, 3), 9))

    def _rau(self, name: str, c: int) -> None:
        r = self.arch.reduction_ratio
        self.params.add(name + ".ln.g", np.ones(c))
        self.params.add(name + ".ln.b", np.zeros(c))
        self._conv(name + ".pw1", c, c, 1, bias=False)
        self._dw(name + ".dw", c)
        self.params.add(name + ".ca.w1", he_uniform(self._rng, (c // r, c), c))
        self.params.add(name + ".ca.w2", he_uniform(self._rng, (c, c // r), c // r))
        self._conv(name + ".pw2", c, c, 1, bias=False)

    def _build(self) -> None:
        a = self.arch
        c = a.channels
        self._conv("backbone.head", a.in_channels, c, 3)
        for i in range(a.blocks):
            self._conv(f"backbone.block{i}.conv1", c, c, 3)
            self._conv(f"backbone.block{i}.conv2", c, c, 3)
        self._conv("backbone.trunk", c, c, 3)
        self._conv("backbone.up0", c, c, 3)
        self._conv("backbone.up1", c, c, 3)
        self._conv("backbone.tail", c, a.in_channels, 3)

        if a.nd:
            self._spectral_pair("tfd.detector", a.detect_mode)
            self._conv("tfd.detector.cls1", c, a.classifier_hidden, 1)
            self._conv("tfd.detector.cls2", a.classifier_hidden, 2, 1)
        if a.fd:
            self._spectral_pair("tfd.freq", a.freq_mode, init_one=True)
        if a.sd:
            for name in ("enc0", "enc1", "bottleneck", "dec1", "dec0"):
                self._rau(f"tfd.spatial.{name}", c)
            self._dw("tfd.spatial.down0", c)
            self._dw("tfd.spatial.down1", c)
            self._conv("tfd.spatial.fuse_in", 2 * c, c, 1)
            # start as a pass-through of h so switching the gate on does not
            # hand the rest of the backbone an untrained feature map
            w = self.params["tfd.spatial.fuse_in.w"].data
            w[...] = 0.0
            w[:, c:, 0, 0] = np.eye(c)
        if a.sd and a.fd and a.fusion == "concatenation":
            self._conv("tfd.fuse", 2 * c, c, 1)

    def _spectral_pair(self, name: str, mode: str, init_one: bool = False) -> None:
        c, s = self.arch.channels, self.arch.feat_size
        if mode == "hadamard":
            lead = 1 if self.arch.freq_filter == "shared" else c
            shape = (lead, s, s)
            for part in ("wr", "wi"):
                self.params.add(f"{name}.{part}", np.ones(shape) if init_one else self._rng.uniform(shape, 0.5, 1.5))
        else:
            for part in ("wr", "wi"):
                self.params.add(f"{name}.{part}", he_uniform(self._rng, (c, 1, 3, 3), 9))

    # ---------------------------------------------------------------- counting

    def param_count(self) -> tuple[int, int]:
        """(backbone parameters, add-on parameters)."""
        return self.params.count("backbone."), self.params.count("tfd.")

    # ----------------------------------------------------------------- pieces

    def p(self, name: str) -> Tensor:
        return self.params[name]

    def conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        b = self.params[name + ".b"] if name + ".b" in self.params else None
        return ad.conv2d(x, self.p(name + ".w"), b, stride=stride)

    def head(self, lr: Tensor) -> Tensor:
        return ad.relu(self.conv("backbone.head", lr))

    def block(self, i: int, h: Tensor) -> Tensor:
        y = self.conv(f"backbone.block{i}.conv2", ad.relu(self.conv(f"backbone.block{i}.conv1", h)))
        return ad.add(h, ad.scale(y, self.arch.res_scale))

    def prefix(self, lr: Tensor) -> tuple[Tensor, Tensor]:
        """(head features, trunk features h_n at the insertion point)."""
        f0 = self.head(lr)
        h = f0
        for i in range(self.arch.insert_at):
            h = self.block(i, h)
        return f0, h

    def features(self, lr: Tensor) -> Tensor:
        return self.prefix(lr)[1]

    def suffix(self, f0: Tensor, h: Tensor) -> Tensor:
        for i in range(self.arch.insert_at, self.arch.blocks):
            h = self.block(i, h)
        h = ad.add(self.conv("backbone.trunk", h), f0)
        h = ad.relu(self.conv("backbone.up0", ad.upsample_nearest2x(h)))
        h = ad.relu(self.conv("backbone.up1", ad.upsample_nearest2x(h)))
        return self.conv("backbone.tail", h)

    def _filters(self, name: str, mode: str, size: tuple[int, int]) -> tuple[Tensor, Tensor]:
        wr, wi = self.p(name + ".wr"), self.p(name + ".wi")
        if mode == "hadamard" and wr.shape[-2:] != size:
            # off-resolution inference: resampled copies, no gradient
            wr = Tensor(resample_filter(wr.data, *size))
            wi = Tensor(resample_filter(wi.data, *size))
        return wr, wi

    def detect(self, h: Tensor, spec: Spectrum | None = None) -> tuple[Tensor, np.ndarray]:
        """Noise logits (N×2) and the softmax probability of the noisy class."""
        if not self.arch.nd:
            raise RuntimeError("noise detector is disabled in this architecture")
        spec = spec if spec is not None else dft2(h)
        mode = self.arch.detect_mode
        wr, wi = self._filters("tfd.detector", mode, h.shape[-2:])
        filt = spectral_filter(spec, wr, wi, mode)
        if mode == "hadamard":
            filt = Spectrum(ad.relu(filt.re), ad.relu(filt.im))
        pooled = ad.gap(idft2(filt))
        hidden = ad.relu(self.conv("tfd.detector.cls1", pooled))
        logits = self.conv("tfd.detector.cls2", hidden)
        logits = ad.reshape(logits, (h.shape[0], 2))
        conf = ad.softmax_np(logits.data)[:, 1]
        return logits, conf

    def rau(self, name: str, h: Tensor) -> Tensor:
        y = ad.layer_norm(h, self.p(name + ".ln.g"), self.p(name + ".ln.b"))
        y = ad.conv2d(y, self.p(name + ".pw1.w"))
        y = ad.depthwise_conv2d(y, self.p(name + ".dw.w"))
        y = ad.channel_attention(y, self.p(name + ".ca.w1"), self.p(name + ".ca.w2"))
        y = ad.conv2d(y, self.p(name + ".pw2.w"))
        return ad.add(y, h)

    def spatial(self, h: Tensor) -> Tensor:
        s = "tfd.spatial."
        e0 = self.rau(s + "enc0", h)
        e1 = self.rau(s + "enc1", ad.depthwise_conv2d(e0, self.p(s + "down0.w"), stride=2))
        b = self.rau(s + "bottleneck", ad.depthwise_conv2d(e1, self.p(s + "down1.w"), stride=2))
        d1 = self.rau(s + "dec1", ad.add(ad.upsample_nearest2x(b), e1))
        d0 = self.rau(s + "dec0", ad.add(ad.upsample_nearest2x(d1), e0))
        return self.conv(s + "fuse_in", ad.concat([d0, h], axis=1))

    def freq_mask(self, h: Tensor, spec: Spectrum | None = None) -> Tensor:
        spec = spec if spec is not None else dft2(h)
        mode = self.arch.freq_mode
        wr, wi = self._filters("tfd.freq", mode, h.shape[-2:])
        filt = spectral_filter(spec, wr, wi, mode)
        return ad.sigmoid(ad.add_scalar(idft2(filt), self.arch.mask_bias))

    def denoise(self, h: Tensor, spec: Spectrum | None = None) -> Tensor:
        a = self.arch
        if not a.denoiser_on:
            return h
        if not a.sd:
            return ad.mul(self.freq_mask(h, spec), h)
        h_spatial = self.spatial(h)
        if not a.fd:
            return h_spatial
        h_freq = self.freq_mask(h, spec)
        if a.fusion == "multiplication":
            return ad.mul(h_freq, h_spatial)
        if a.fusion == "addition":
            return ad.add(h_freq, h_spatial)
        return self.conv("tfd.fuse", ad.concat([h_freq, h_spatial], axis=1))

    # ---------------------------------------------------------------- routing

    def route(self, h: Tensor, gate_enabled: bool) -> tuple[Tensor, dict]:
        """Apply the add-on at the insertion point; returns the routed feature."""
        a = self.arch
        aux = {"logits": None, "confidence": None, "h_n": h, "h_denoised": None, "denoised_idx": np.array([], dtype=np.int64)}
        if not a.addon_on:
            return h, aux
        spec = dft2(h) if (a.nd or (a.fd and a.freq_mode == "hadamard")) else None
        if a.nd:
            logits, conf = self.detect(h, spec)
            aux["logits"], aux["confidence"] = logits, conf
        if not a.denoiser_on:
            return h, aux
        n = h.shape[0]
        if a.nd:
            if not gate_enabled:
                return h, aux
            idx = np.flatnonzero(aux["confidence"] > a.gate_threshold)
        else:
            idx = np.arange(n)
        if idx.size == 0:
            return h, aux
        if idx.size == n:
            den = self.denoise(h, spec)
            out = den
        else:
            sub = ad.take_batch(h, idx)
            sub_spec = Spectrum(ad.take_batch(spec.re, idx), ad.take_batch(spec.im, idx)) if spec is not None else None
            den = self.denoise(sub, sub_spec)
            out = ad.put_batch(h, idx, den)
        aux["h_denoised"], aux["denoised_idx"] = den, idx
        return out, aux

    def forward(self, lr: Tensor, gate_enabled: bool = True) -> tuple[Tensor, dict]:
        f0, h = self.prefix(lr)
        routed, aux = self.route(h, gate_enabled)
        return self.suffix(f0, routed), aux

    def backbone_forward(self, lr: Tensor) -> Tensor:
        f0, h = self.prefix(lr)
        return self.suffix(f0, h)

    def super_resolve(self, lr: Tensor, gate_enabled: bool | None = None) -> Tensor:
        """Inference; ``gate_enabled=None`` uses the gate state the model was trained to."""
        gate = self.gate_open if gate_enabled is None else gate_enabled
        with ad.no_grad():
            return self.forward(lr, gate)[0]

    def state(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters plus the schedule gate flag, for checkpoints."""
        out = self.params.state()
        out[self.GATE_KEY] = np.array(float(self.gate_open))
        return out

    def load_state(self, state) -> None:
        state = OrderedDict(state)
        # checkpoints without the flag predate it and always routed by confidence
        self.gate_open = bool(state.pop(self.GATE_KEY, np.array(1.0)))
        self.params.load_state(state)


def param_count(arch: ArchConfig) -> tuple[int, int]:
    return TFDNet(arch, seed=0).param_count()
