"""Tri-objective training: reconstruction, noise classification, feature consistency."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .degrade import DegradationConfig, degrade_tensor
from .imageio import Image8, PatchPair, PatchSet, extract_patches, from_tensor, to_tensor
from .model import TFDNet
from .rng import Rng, derive_seed

HISTORY_HEADER = ("step", "lr", "loss_rec", "loss_cls", "loss_feat", "det_acc", "gate")


class DataError(ValueError):
    """Training data cannot supervise the model (empty, single-class)."""


@dataclass
class TrainConfig:
    lambda_cls: float = 0.10
    lambda_feat: float = 0.01
    lr0: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    batch: int = 8
    iters: int = 2000
    gate_threshold: float = 0.75
    seed: int = 0
    eps_adam: float = 1e-8
    ema_decay: float = 0.99
    ema_init: float = 0.5

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lambda_cls < 0 or self.lambda_feat < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.gate_threshold < 1.0:
            raise ValueError("gate_threshold must lie in (0, 1)")
        if self.iters < 1 or self.batch < 1:
            raise ValueError("iters and batch must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out


@dataclass
class TrainState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    gate_active: bool = False
    det_acc: float = 0.5

    @classmethod
    def for_params(cls, params: ParamStore, ema_init: float = 0.5) -> "TrainState":
        m = {n: np.zeros_like(t.data) for n, t in params}
        v = {n: np.zeros_like(t.data) for n, t in params}
        return cls(m, v, det_acc=ema_init)


# --------------------------------------------------------------------------
# losses


def loss_rec(sr: Tensor, hr: Tensor) -> Tensor:
    return ad.l1_mean(sr, hr)


def loss_cls(logits: Tensor, labels) -> Tensor:
    return ad.cross_entropy(logits, labels)


def loss_feat(h_denoised: Tensor, h_ref: Tensor) -> Tensor:
    return ad.l1_mean(h_denoised, h_ref.detach())


def total_loss(rec, cls, feat, cfg: TrainConfig, gate_active: bool, sample_is_denoised: bool):
    """rec + lambda_cls*cls (+ lambda_feat*feat once the gate is on and denoising happened).

    Works on Tensors (tracked) and on plain floats alike; ``None`` terms are
    absent.
    """
    total = rec
    if cls is not None and cfg.lambda_cls:
        total = total + cls * cfg.lambda_cls
    if feat is not None and gate_active and sample_is_denoised and cfg.lambda_feat:
        total = total + feat * cfg.lambda_feat
    return total


# --------------------------------------------------------------------------
# optimizer


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * min(step, cfg.iters) / cfg.iters))


def adam_step(params: ParamStore, state: TrainState, cfg: TrainConfig) -> float:
    """One bias-corrected Adam update at the cosine-annealed rate; zeroes grads."""
    state.step += 1
    t = state.step
    lr = cosine_lr(t, cfg)
    b1, b2 = cfg.betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params:
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps_adam)
    params.zero_grad()
    return lr


# --------------------------------------------------------------------------
# data


def build_patchset(
    images: Sequence[Image8],
    presets: Sequence[str],
    patch_lr: int,
    seed: int,
    scale: int = 4,
    stride_lr: int | None = None,
    limit: int | None = None,
    copies: int = 1,
) -> PatchSet:
    """Cut HR patches and degrade each copy with a uniformly drawn preset."""
    if not presets:
        raise DataError("no degradation presets given")
    configs = [DegradationConfig.preset(p, scale) for p in presets]
    clean = DegradationConfig.preset("clean", scale)
    patch_hr = patch_lr * scale
    stride_hr = (stride_lr or patch_lr) * scale
    hr_patches: list[Image8] = []
    for img in images:
        hr_patches.extend(extract_patches(img, patch_hr, stride_hr))
    if limit is not None:
        hr_patches = hr_patches[:limit]
    out = PatchSet(scale)
    pick = Rng(derive_seed(seed, 0))
    for i, hr in enumerate(hr_patches):
        hr_t = to_tensor(hr)
        clean_lr = from_tensor(degrade_tensor(clean, hr_t, Rng(0)))
        for c in range(copies):
            cfg = configs[int(pick.integers(len(configs)))]
            lr = from_tensor(degrade_tensor(cfg, hr_t, Rng(derive_seed(seed, 1, i, c))))
            out.append(PatchPair(lr, hr, cfg.noise_label(), clean_lr, cfg.name))
    return out


def _stack(images: Sequence[Image8]) -> Tensor:
    return Tensor(np.stack([im.pixels.transpose(2, 0, 1) for im in images]).astype(np.float64) / 255.0)


@dataclass
class Batch:
    lr: Tensor
    hr: Tensor
    clean_lr: Tensor
    labels: np.ndarray


def make_batch(data: PatchSet, idx: Sequence[int]) -> Batch:
    pairs = [data.patches[i] for i in idx]
    return Batch(
        _stack([p.lr for p in pairs]),
        _stack([p.hr for p in pairs]),
        _stack([p.clean_lr if p.clean_lr is not None else p.lr for p in pairs]),
        np.array([p.label for p in pairs], dtype=np.int64),
    )


class BatchSampler:
    """Epoch-wise shuffled batches from a seeded stream."""

    def __init__(self, n: int, batch: int, seed: int):
        self.n, self.batch = n, batch
        self.rng = Rng(seed)
        self.order = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while self.order.size < self.batch:
            self.order = np.concatenate([self.order, self.rng.permutation(self.n)])
        idx, self.order = self.order[: self.batch], self.order[self.batch :]
        return idx


# --------------------------------------------------------------------------
# loop


@dataclass
class StepResult:
    loss_rec: float
    loss_cls: float
    loss_feat: float
    batch_acc: float | None


def composite_loss(model: TFDNet, batch: Batch, cfg: TrainConfig, gate_active: bool, h_ref: np.ndarray | None = None):
    """Total loss and its parts for one batch; records on the active tape.

    ``h_ref`` overrides the clean reference features (rows for the whole
    batch); by default they come from a no-grad pass on ``batch.clean_lr``.
    """
    sr, aux = model.forward(batch.lr, gate_enabled=gate_active)
    rec = loss_rec(sr, batch.hr)
    cls = loss_cls(aux["logits"], batch.labels) if aux["logits"] is not None else None
    feat = None
    idx = aux["denoised_idx"]
    if aux["h_denoised"] is not None:
        if h_ref is not None:
            ref = Tensor(h_ref[idx])
        else:
            with ad.no_grad():
                ref = model.features(Tensor(batch.clean_lr.data[idx]))
        feat = loss_feat(aux["h_denoised"], ref)
    # without a detector there is no schedule: the denoiser runs from the first step
    gated = gate_active if model.arch.nd else True
    total = total_loss(rec, cls, feat, cfg, gated, idx.size > 0)
    return total, rec, cls, feat, aux


def train_step(model: TFDNet, batch: Batch, state: TrainState, cfg: TrainConfig) -> StepResult:
    """Forward, tri-objective loss and backward (gradients accumulate in params)."""
    with ad.Tape():
        total, rec, cls, feat, aux = composite_loss(model, batch, cfg, state.gate_active)
        ad.backward(total)
    acc = None
    if aux["logits"] is not None:
        acc = float(np.mean(np.argmax(aux["logits"].data, axis=1) == batch.labels))
    return StepResult(
        rec.item(),
        cls.item() if cls is not None else float("nan"),
        feat.item() if feat is not None else float("nan"),
        acc,
    )


def run_training(
    data: PatchSet,
    model: TFDNet,
    cfg: TrainConfig,
    hooks: Sequence[Callable[[int, TFDNet], None]] = (),
    state: TrainState | None = None,
) -> tuple[TFDNet, list[dict]]:
    """Train in place; returns the model and one history row per step.

    Hooks are called as ``hook(step, model)`` before the first update
    (step 0) and after every update.
    """
    if len(data) == 0:
        raise DataError("empty training set")
    labels = data.labels()
    if model.arch.nd and len(set(labels.tolist())) < 2:
        raise DataError("training labels are single-class; the noise classifier is unsupervisable")
    state = state or TrainState.for_params(model.params, cfg.ema_init)
    model.gate_open = state.gate_active or not model.arch.nd
    sampler = BatchSampler(len(data), min(cfg.batch, len(data)), derive_seed(cfg.seed, 1))
    model.params.zero_grad()
    history = []
    for hook in hooks:
        hook(0, model)
    for _ in range(cfg.iters):
        batch = make_batch(data, sampler.next())
        res = train_step(model, batch, state, cfg)
        lr = adam_step(model.params, state, cfg)
        if res.batch_acc is not None:
            state.det_acc = cfg.ema_decay * state.det_acc + (1.0 - cfg.ema_decay) * res.batch_acc
            if state.det_acc > cfg.gate_threshold:
                state.gate_active = True
                model.gate_open = True
        history.append(
            {
                "step": state.step,
                "lr": lr,
                "loss_rec": res.loss_rec,
                "loss_cls": res.loss_cls,
                "loss_feat": res.loss_feat,
                "det_acc": state.det_acc,
                "gate": int(state.gate_active),
            }
        )
        for hook in hooks:
            hook(state.step, model)
    return model, history


def write_history(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for row in history:
            w.writerow([_fmt(row[k]) for k in HISTORY_HEADER])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
