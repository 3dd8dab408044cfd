"""Train every ablation variant over several seeds and print the summary table.

Usage: python3 scripts/run_toy_grid.py [--out runs/toy] [--seeds 0 1 2] [--variants full baseline ...] [--set lambda_feat=1.0]
"""

import argparse
import json
import time

from tfd.experiments import VARIANTS, ToyProtocol, mean_by_variant, run_grid


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS))
    ap.add_argument("--iters", type=int, default=None)
    ap.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="override training fields, e.g. lambda_feat=1.0")
    args = ap.parse_args()
    protocol = ToyProtocol()
    if args.iters:
        protocol.train["iters"] = args.iters
    for item in args.set:
        key, value = item.split("=", 1)
        protocol.train[key] = json.loads(value)
    t0 = time.time()
    results = run_grid(protocol, args.variants, args.seeds, cache_dir=args.out, log=lambda m: print(m, flush=True))
    print(f"elapsed {time.time() - t0:.0f}s")
    print("variant,seed,noise_psnr,det_acc,gate_step,acc_before,acc_after,cos_blur,cos_noise,cos_jpeg")
    for r in results:
        print(
            f"{r.variant},{r.seed},{r.noise_psnr:.4f},{r.final_det_acc:.3f},{r.gate_step},"
            f"{r.acc_before},{r.acc_after},{r.drift['blur']:.4f},{r.drift['noise']:.4f},{r.drift['jpeg']:.4f}"
        )
    for v, p in mean_by_variant(results).items():
        print(f"mean {v}: {p:.4f} dB")


if __name__ == "__main__":
    main()
