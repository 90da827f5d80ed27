"""Command-line entry point: synth, train, dehaze, eval, gradcheck."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import gradcheck
from .imageio import (FormatError, ManifestRow, coerce_fields, load_ppm, parse_config,
                      read_manifest, save_ppm, side_by_side, write_manifest, MANIFEST_NAME)
from .losses import psnr, ssim
from .net import NetConfig
from .physics import generate_scene, synthesize
from .train import PairSet, TrainConfig, dehaze_array, load_network, scene_seed, train

log = logging.getLogger("haanet")


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    if args.size % 4:
        print(f"error: --size must be a multiple of 4, got {args.size}", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for i in range(args.count):
            seed = scene_seed(args.seed, 0, i)
            pair = synthesize(generate_scene(seed, args.size))
            row = ManifestRow(f"pair{i:04d}", seed, pair.beta, tuple(pair.airlight))
            files = row.files()
            save_ppm(out / files["clean"], pair.clean)
            save_ppm(out / files["hazy"], pair.hazy)
            save_ppm(out / files["trans"], pair.transmission)
            rows.append(row)
        write_manifest(out / MANIFEST_NAME, rows)
    except OSError as err:
        print(f"error: cannot write dataset to {out}: {err}", file=sys.stderr)
        return 1
    print(f"wrote {args.count} pairs to {out}")
    return 0


def load_dataset(data_dir, quiet: bool = False) -> tuple[list[ManifestRow], PairSet, list[str]]:
    """Read every complete pair listed in the manifest; returns missing ids too."""
    data_dir = Path(data_dir)
    rows = read_manifest(data_dir / MANIFEST_NAME)
    kept, hazy, clean, missing = [], [], [], []
    for row in rows:
        files = row.files()
        try:
            h = load_ppm(data_dir / files["hazy"])
            c = load_ppm(data_dir / files["clean"])
        except (OSError, FormatError) as err:
            missing.append(row.pair_id)
            if not quiet:
                print(f"warning: skipping {row.pair_id}: {err}", file=sys.stderr)
            continue
        kept.append(row)
        hazy.append(h)
        clean.append(c)
    if not kept:
        return kept, PairSet(np.zeros((0, 3, 1, 1), np.float32), np.zeros((0, 3, 1, 1), np.float32), []), missing
    return kept, PairSet(np.stack(hazy).astype(np.float32), np.stack(clean).astype(np.float32),
                         [r.seed for r in kept]), missing


# ---------------------------------------------------------------- train


def load_train_config(path) -> tuple[TrainConfig, NetConfig]:
    raw = parse_config(Path(path).read_text()) if path else {}
    train_kw, net_kw = coerce_fields(raw, TrainConfig, NetConfig)
    net_kw = {**NetConfig.desk().as_dict(), **net_kw}
    return TrainConfig(**train_kw), NetConfig(**net_kw)


def cmd_train(args) -> int:
    try:
        cfg, net_cfg = load_train_config(args.config)
    except (FormatError, ValueError) as err:
        print(f"error: bad config: {err}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = [f"{k} = {v}" for k, v in {**asdict(cfg), **net_cfg.as_dict()}.items()]
    (out / "config_used.txt").write_text("\n".join(echo) + "\n")
    for line in echo:
        log.info("config %s", line)

    train_data = None
    if args.data_dir:
        _, train_data, _ = load_dataset(args.data_dir)
        if train_data.hazy.shape[-1] < cfg.crop or train_data.hazy.shape[-2] < cfg.crop:
            print(f"error: dataset images are smaller than crop {cfg.crop}", file=sys.stderr)
            return 2
    result = train(cfg, net_cfg, args.synth_seed, out, train_data=train_data)
    print(f"hazy   psnr {result.hazy_psnr:.3f} ssim {result.hazy_ssim:.4f}")
    print(f"dehazed psnr {result.val_psnr:.3f} ssim {result.val_ssim:.4f}")
    print(f"checkpoint: {out / 'checkpoint.haan'}")
    return 0


# ---------------------------------------------------------------- dehaze


def dehaze_image(net, img: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad to a multiple of 4, run the network, crop back."""
    _, h, w = img.shape
    ph, pw = -h % 4, -w % 4
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect") if ph or pw else img
    out = dehaze_array(net, padded[None])[0]
    return np.ascontiguousarray(out[:, :h, :w], dtype=np.float64), (ph, pw)


def cmd_dehaze(args) -> int:
    try:
        net, _ = load_network(args.checkpoint)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    img = load_ppm(args.input)
    out, (ph, pw) = dehaze_image(net, img)
    if ph or pw:
        print(f"note: reflect-padded input by ({ph}, {pw}) pixels and cropped back", file=sys.stderr)
    save_ppm(args.output, out)
    if args.panel:
        save_ppm(args.panel, side_by_side(img, out))
    return 0


# ---------------------------------------------------------------- eval


EVAL_FIELDS = ("pair_id", "psnr_hazy", "psnr_pred", "ssim_hazy", "ssim_pred")


def evaluate_dataset(net, data_dir) -> tuple[list[dict], list[str]]:
    rows, data, missing = load_dataset(data_dir)
    records = []
    for row, hz, cl in zip(rows, data.hazy, data.clean):
        hz64, cl64 = hz.astype(np.float64), cl.astype(np.float64)
        pred, _ = dehaze_image(net, hz64)
        records.append({
            "pair_id": row.pair_id,
            "psnr_hazy": psnr(hz64, cl64), "psnr_pred": psnr(pred, cl64),
            "ssim_hazy": ssim(hz64, cl64), "ssim_pred": ssim(pred, cl64),
        })
    return records, missing


def write_eval_csv(path, records: list[dict]) -> dict:
    mean = {"pair_id": "mean"}
    for key in EVAL_FIELDS[1:]:
        mean[key] = float(np.mean([r[key] for r in records])) if records else float("nan")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in records + [mean]:
            writer.writerow({k: (v if k == "pair_id" else repr(v)) for k, v in r.items()})
    return mean


def cmd_eval(args) -> int:
    net, _ = load_network(args.checkpoint)
    records, missing = evaluate_dataset(net, args.data_dir)
    if missing:
        print(f"missing pairs: {', '.join(missing)}", file=sys.stderr)
    mean = write_eval_csv(args.csv, records)
    print(f"{len(records)} pairs: hazy {mean['psnr_hazy']:.3f} dB / {mean['ssim_hazy']:.4f}, "
          f"dehazed {mean['psnr_pred']:.3f} dB / {mean['ssim_pred']:.4f}")
    return 0


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    results = gradcheck.run(args.module)
    failed = 0
    for r in results:
        status = "ok  " if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status} {r.suite:10s} {r.group:40s} max rel err {r.error:.3e} (tol {r.tol:.0e})")
    print(f"{len(results) - failed}/{len(results)} groups passed")
    return 1 if failed else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="haanet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write procedural hazy/clean/transmission triplets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network from a key = value config")
    p.add_argument("--config", help="config file; missing keys take desk-scale defaults")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data-dir", help="train on a dataset written by 'synth'")
    src.add_argument("--synth-seed", type=int, default=0, help="dataset seed for in-memory scenes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dehaze", help="dehaze one P6 image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--panel", help="also write a hazy|dehazed side-by-side image here")
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("eval", help="PSNR/SSIM over a synth dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--module", default="all", choices=("all",) + gradcheck.MODULES)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
