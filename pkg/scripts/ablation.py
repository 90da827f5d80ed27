"""Train the four ablation arms at desk scale and print a results table.

usage: python3 scripts/ablation.py [--out runs/ablation] [--steps 2000] [--dataset-seed 0]
"""

import argparse
import logging
import time

from haanet.net import ARMS, NetConfig, net_param_count
from haanet.train import TrainConfig, run_ablation


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--dataset-seed", type=int, default=0)
    parser.add_argument("--arms", nargs="+", default=list(ARMS), choices=ARMS)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = TrainConfig(total_steps=args.steps)
    start = time.perf_counter()
    results = run_ablation(cfg, args.dataset_seed, tuple(args.arms), out_dir=args.out)
    elapsed = time.perf_counter() - start

    any_result = next(iter(results.values()))
    print(f"hazy input: {any_result.hazy_psnr:.3f} dB / SSIM {any_result.hazy_ssim:.4f}")
    print(f"{'arm':6s} {'params':>8s} {'PSNR':>8s} {'SSIM':>7s}")
    for arm, r in results.items():
        n = net_param_count(NetConfig.for_arm(arm, base_channels=16, num_haab=2))
        print(f"{arm:6s} {n:8d} {r.val_psnr:8.3f} {r.val_ssim:7.4f}")
    print(f"total time {elapsed / 60:.1f} min")


if __name__ == "__main__":
    main()
