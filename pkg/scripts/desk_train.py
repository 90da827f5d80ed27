"""Single desk-scale training run of the full network with a progress trace.

usage: python3 scripts/desk_train.py [--out runs/desk] [--steps 2000] [--lam 0.2]
"""

import argparse
import time

from haanet.net import NetConfig
from haanet.train import TrainConfig, train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/desk")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--lam", type=float, default=0.2)
    parser.add_argument("--lr", type=float, default=1.5e-4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = TrainConfig(total_steps=args.steps, lam=args.lam, lr_max=args.lr, seed=args.seed)
    start = time.perf_counter()

    def trace(row):
        if row["val_psnr"] is not None:
            print(f"step {row['step']:5d}  {time.perf_counter() - start:7.1f}s  "
                  f"val {row['val_psnr']:.3f} dB / {row['val_ssim']:.4f}", flush=True)

    r = train(cfg, NetConfig.desk(), 0, args.out, on_step=trace)
    print(f"hazy {r.hazy_psnr:.3f} dB / {r.hazy_ssim:.4f}; dehazed {r.val_psnr:.3f} dB / {r.val_ssim:.4f}")


if __name__ == "__main__":
    main()
