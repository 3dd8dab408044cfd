"""Desk-scale toy protocol shared by the experiment scripts and the acceptance suite."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analyze, metrics
from .autodiff import load_checkpoint, save_checkpoint
from .degrade import PRESET_NAMES
from .imageio import Image8
from .model import ArchConfig, TFDNet
from .rng import derive_seed
from .synth import make_corpus
from .train import TrainConfig, build_patchset, run_training, write_history

VARIANTS = {
    "full": dict(nd=True, sd=True, fd=True, fusion="multiplication"),
    "baseline": dict(nd=False, sd=False, fd=False),
    "no_nd": dict(nd=False, sd=True, fd=True),
    "no_sd": dict(nd=True, sd=False, fd=True),
    "no_fd": dict(nd=True, sd=True, fd=False),
    "addition": dict(nd=True, sd=True, fd=True, fusion="addition"),
}

DRIFT_PRESETS = ("blur", "noise", "jpeg")


@dataclass
class ToyProtocol:
    train_seed: int = 11
    train_images: int = 64
    image_size: int = 96
    patch_lr: int = 12
    copies: int = 4
    test_seed: int = 29
    test_images: int = 16
    test_crop: int = 48
    probe_every: int = 100
    arch: dict = field(default_factory=lambda: dict(channels=16, blocks=4, insert_at=2, feat_size=12))
    train: dict = field(default_factory=lambda: dict(iters=2000, batch=8, lr0=1e-3))

    def arch_for(self, variant: str) -> ArchConfig:
        return ArchConfig(**{**self.arch, **VARIANTS[variant]})

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    def train_corpus(self) -> list[Image8]:
        return make_corpus(self.train_seed, self.train_images, self.image_size)

    def test_corpus(self) -> list[Image8]:
        # same generator and pixel scale as the training patches
        c = self.test_crop
        return [Image8(im.pixels[:c, :c]) for im in make_corpus(self.test_seed, self.test_images, self.image_size)]


@dataclass
class RunResult:
    variant: str
    seed: int
    noise_psnr: float
    final_det_acc: float
    gate_step: int | None
    drift: dict[str, float]
    acc_before: float | None = None
    acc_after: float | None = None


def train_run(protocol: ToyProtocol, variant: str, seed: int, out_dir=None):
    """Train one variant; returns (net, history, similarity trace)."""
    data = build_patchset(
        protocol.train_corpus(), PRESET_NAMES, protocol.patch_lr, seed=derive_seed(seed, 7), copies=protocol.copies
    )
    net = TFDNet(protocol.arch_for(variant), seed=seed)
    tracker = analyze.SimilarityTracker(
        protocol.test_corpus(), DRIFT_PRESETS, protocol.probe_every, seed=derive_seed(seed, 8)
    )
    net, history = run_training(data, net, protocol.train_config(seed), hooks=[tracker])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net.state(), out / "model.tfd1")
        write_history(history, out / "history.csv")
        analyze.write_csv(out / "cossim.csv", analyze.SIMILARITY_HEADER, tracker.trace.rows)
    return net, history, tracker.trace


def noise_psnr(net: TFDNet, images, seed: int) -> float:
    report = metrics.evaluate(metrics.net_model(net), [(f"t{i}", im) for i, im in enumerate(images)], ["noise"], seed)
    return report[0].mean_psnr


def summarize(protocol: ToyProtocol, variant: str, seed: int, net, history, trace) -> RunResult:
    test = protocol.test_corpus()
    gate_steps = [h["step"] for h in history if h["gate"]]
    res = RunResult(
        variant=variant,
        seed=seed,
        noise_psnr=noise_psnr(net, test, seed=derive_seed(seed, 9)),
        final_det_acc=history[-1]["det_acc"],
        gate_step=gate_steps[0] if gate_steps else None,
        drift={p: trace.final(p) for p in DRIFT_PRESETS},
    )
    if net.arch.nd:
        batch, labels = analyze.noisy_audit_batch(test, seed=derive_seed(seed, 10))
        audit = analyze.detection_audit(net, batch, labels)
        res.acc_before, res.acc_after = audit.acc_before, audit.acc_after
    return res


def run_grid(protocol: ToyProtocol, variants, seeds, cache_dir=None, log=print) -> list[RunResult]:
    """Train and summarize every (variant, seed); reuses cached summaries when given a directory."""
    results = []
    for variant in variants:
        for seed in seeds:
            cached = Path(cache_dir) / f"{variant}_s{seed}" / "summary.json" if cache_dir else None
            if cached is not None and cached.exists():
                stored = json.loads(cached.read_text())
                if stored.get("protocol") == asdict(protocol):
                    results.append(RunResult(**stored["result"]))
                    continue
            out = cached.parent if cached is not None else None
            net, history, trace = train_run(protocol, variant, seed, out)
            res = summarize(protocol, variant, seed, net, history, trace)
            if cached is not None:
                cached.write_text(json.dumps({"protocol": asdict(protocol), "result": asdict(res)}, indent=1))
            log(f"{variant} seed {seed}: {res}")
            results.append(res)
    return results


def summarize_dir(protocol: ToyProtocol, variant: str, seed: int, run_dir) -> RunResult:
    """Recompute a run's summary from its saved checkpoint, history and trace."""
    run_dir = Path(run_dir)
    net = load_net(protocol, variant, run_dir / "model.tfd1")
    with open(run_dir / "history.csv", newline="") as fh:
        history = [
            {"step": int(r["step"]), "det_acc": float(r["det_acc"]), "gate": int(r["gate"])} for r in csv.DictReader(fh)
        ]
    trace = analyze.SimilarityTrace()
    with open(run_dir / "cossim.csv", newline="") as fh:
        trace.rows = [(int(r["step"]), r["preset"], float(r["cossim"])) for r in csv.DictReader(fh)]
    return summarize(protocol, variant, seed, net, history, trace)


def mean_by_variant(results, key: str = "noise_psnr") -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for r in results:
        out.setdefault(r.variant, []).append(getattr(r, key))
    return {k: float(np.mean(v)) for k, v in out.items()}


def load_net(protocol: ToyProtocol, variant: str, path) -> TFDNet:
    net = TFDNet(protocol.arch_for(variant), seed=0)
    net.load_state(load_checkpoint(path))
    return net
