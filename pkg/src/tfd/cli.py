"""Command-line entry point: synth, degrade, train, eval, analyze, gradcheck.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical-check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import analyze, gradcheck, metrics
from .autodiff import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, SyntheticSource, load_config
from .degrade import PRESET_NAMES, DegradationConfig, DegradationError, apply
from .imageio import PPMError, crop_to_multiple, load_dir, load_ppm, save_ppm
from .model import TFDNet
from .rng import Rng, derive_seed
from .synth import make_corpus, probe_image, write_corpus
from .train import DataError, build_patchset, run_training, write_history

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _images(hr_dir, synthetic: SyntheticSource | None, scale: int):
    if hr_dir is not None:
        return [(name, crop_to_multiple(img, scale)) for name, img in load_dir(hr_dir)]
    if synthetic is None:
        raise UsageError("no image source: give --hr-dir or a synthetic source in the config")
    imgs = make_corpus(synthetic.seed, synthetic.count, synthetic.size)
    return [(f"synth{i:03d}", img) for i, img in enumerate(imgs)]


def _load_net(cfg: ExperimentConfig, checkpoint) -> TFDNet:
    path = Path(checkpoint)
    if not path.is_file():
        raise UsageError(f"missing checkpoint {path}")
    net = TFDNet(cfg.arch, seed=0)
    try:
        net.load_state(load_checkpoint(path))
    except KeyError as exc:
        raise UsageError(f"checkpoint {path} does not match the architecture: {exc}") from exc
    return net


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    paths = write_corpus(args.out, args.seed, args.count, args.size, args.channels)
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    try:
        cfg = DegradationConfig.preset(args.preset, args.scale)
    except DegradationError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (name, hr) in enumerate(load_dir(args.input)):
        seed = derive_seed(args.seed, i)
        lr, label = apply(cfg, crop_to_multiple(hr, args.scale), Rng(seed))
        save_ppm(lr, out / name)
        rows.append((name, args.preset, seed, label))
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("file", "preset", "seed", "label"))
        w.writerows(rows)
    print(f"degraded {len(rows)} images with preset {args.preset}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out_dir)
    d = cfg.data
    scale = 4
    images = [img for _, img in _images(d.hr_dir, d.synthetic, scale)]
    data = build_patchset(images, cfg.degradations, d.patch, d.seed, scale, d.stride, d.limit, d.copies)
    net = TFDNet(cfg.arch, seed=cfg.train.seed)
    net, history = run_training(data, net, cfg.train)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net.state(), out / "model.tfd1")
    write_history(history, out / "history.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    last = history[-1]
    print(f"trained {len(history)} steps on {len(data)} patches; final loss_rec {last['loss_rec']:.5f}, det_acc {last['det_acc']:.3f}")
    return EXIT_OK


def _eval_images(args, cfg: ExperimentConfig | None):
    if args.hr_dir is not None:
        return _images(args.hr_dir, None, 4)
    if cfg is None:
        raise UsageError("--hr-dir is required without --config")
    return _images(cfg.eval.hr_dir, cfg.eval.synthetic, 4)


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if args.bicubic:
        sr_fn = metrics.bicubic_model()
    else:
        if cfg is None or args.checkpoint is None:
            raise UsageError("eval needs --config and --checkpoint (or --bicubic)")
        sr_fn = metrics.net_model(_load_net(cfg, args.checkpoint))
    presets = args.presets or (cfg.eval.presets if cfg else list(PRESET_NAMES))
    bad = [p for p in presets if p not in PRESET_NAMES]
    if bad:
        raise UsageError(f"invalid presets {bad}; valid presets: {', '.join(PRESET_NAMES)}")
    seed = args.seed if args.seed is not None else (cfg.eval.seed if cfg else 0)
    reports = metrics.evaluate(sr_fn, _eval_images(args, cfg), presets, seed, y_only=args.y_only)
    metrics.write_report(reports, args.out)
    for rep in reports:
        print(f"{rep.preset:>16s}  PSNR {rep.mean_psnr:8.4f}  SSIM {rep.mean_ssim:.4f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    kind = args.kind
    if kind == "spectrum":
        imgs = [img for _, img in _images(args.hr_dir, SyntheticSource(args.seed, 10, 96) if args.hr_dir is None else None, 4)]
        rows = []
        for k, preset in enumerate(args.presets or ["blur", "noise"]):
            prof = analyze.mean_residual_profile(imgs, preset, args.bins, derive_seed(args.seed, k))
            rows += [(preset, b, float(f), float(m)) for b, f, m in prof.rows()]
        analyze.write_csv(args.out, analyze.SPECTRUM_HEADER, rows)
    elif kind == "freqp":
        target = load_ppm(args.image) if args.image else probe_image()
        trace = analyze.freq_principle_probe(target, steps=args.steps, seed=args.seed)
        analyze.write_csv(args.out, analyze.FREQ_HEADER, trace.rows)
        print(f"low band < 0.5 at step {trace.first_below('low')}, high band at {trace.first_below('high')}")
    elif kind == "snr":
        target = load_ppm(args.image) if args.image else probe_image()
        plane = target.pixels[..., 0].astype(float) / 255.0
        noise = analyze.gaussian_noise_plane(plane.shape, args.sigma, args.seed)
        try:
            curve = analyze.snr_curve(plane, noise, list(range(args.steps + 1)), args.weight, args.p_max)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        analyze.write_csv(args.out, analyze.SNR_HEADER, curve.rows)
    elif kind in ("cossim", "audit"):
        if args.config is None or args.checkpoint is None:
            raise UsageError(f"analyze {kind} needs --config and --checkpoint")
        cfg = load_config(args.config)
        net = _load_net(cfg, args.checkpoint)
        imgs = [img for _, img in _eval_images(args, cfg)]
        if kind == "cossim":
            tracker = analyze.SimilarityTracker(imgs, args.presets or ["blur", "noise", "jpeg"], 1, args.seed)
            tracker(0, net)
            analyze.write_csv(args.out, analyze.SIMILARITY_HEADER, tracker.trace.rows)
        else:
            if not cfg.arch.nd:
                raise UsageError("audit needs an architecture with the noise detector enabled")
            batch, labels = analyze.noisy_audit_batch(imgs, args.seed)
            res = analyze.detection_audit(net, batch, labels)
            analyze.write_csv(args.out, analyze.AUDIT_HEADER, [(res.n_noisy, res.acc_before, res.acc_after)])
            print(f"acc_before {res.acc_before:.3f}  acc_after {res.acc_after:.3f}  (n={res.n_noisy})")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.coords, args.seed)
    for r in results:
        print(f"{r.name:34s} coords {r.coords:4d}  kinks skipped {r.skipped:3d}  max rel {r.max_rel:.3e}  {'ok' if r.ok else 'FAIL'}")
    worst = max(r.max_rel for r in results)
    print(f"max relative error {worst:.3e} (tolerance {gradcheck.REL_TOL:g})")
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERIC


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tfd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a procedural HR image corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", help="degrade an HR directory with one preset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train from a JSON experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="overrides out_dir from the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM per preset into report.csv")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--bicubic", action="store_true", help="score bicubic upsampling instead of a model")
    p.add_argument("--hr-dir")
    p.add_argument("--presets", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--y-only", action="store_true", help="score BT.601 luma instead of RGB")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="diagnostics, one CSV each")
    p.add_argument("kind", choices=("cossim", "spectrum", "freqp", "snr", "audit"))
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--hr-dir")
    p.add_argument("--image", help="PGM/PPM target for freqp and snr (default: built-in probe)")
    p.add_argument("--presets", nargs="+")
    p.add_argument("--bins", type=int, default=16)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--sigma", type=float, default=20.0)
    p.add_argument("--weight", choices=("ramp", "uniform"), default="ramp")
    p.add_argument("--p-max", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference suite over every differentiable op")
    p.add_argument("--coords", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DegradationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PPMError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
