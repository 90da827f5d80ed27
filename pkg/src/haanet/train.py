"""Deterministic training: Adam with cosine-annealed learning rate on
procedurally synthesized hazy/clean pairs, plus the ablation harness."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint
from .losses import CrExtractor, psnr, ssim, total_loss
from .net import ARMS, NetConfig, NetWeights, net_forward
from .physics import generate_scene, synthesize
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "loss", "val_psnr", "val_ssim")


@dataclass
class TrainConfig:
    lr_max: float = 1.5e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    crop: int = 64
    total_steps: int = 2000
    lam: float = 0.2
    gamma: float = 0.25  # parsed and recorded; no loss term consumes it
    seed: int = 0
    cr_seed: int = 1234
    n_train: int = 200
    n_val: int = 50
    scene_size: int = 96
    val_every: int = 100

    def __post_init__(self):
        if self.crop % 4:
            raise ValueError(f"crop must be divisible by 4, got {self.crop}")
        if self.scene_size < self.crop:
            raise ValueError(f"scene_size {self.scene_size} is smaller than crop {self.crop}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        """Full-scale protocol; far beyond a CPU budget, kept for reference."""
        return cls(**{"batch_size": 64, "crop": 320, "total_steps": 80000,
                      "scene_size": 320, **overrides})


# ---------------------------------------------------------------- schedule / optimizer


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    cos = math.cos(math.pi * step / cfg.total_steps)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + cos)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")
        self.name = name


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: list[tuple[str, Tensor]], state: AdamState, lr: float,
              cfg: TrainConfig) -> None:
    """Bias-corrected Adam update, in place. Missing gradients count as zero."""
    grads = {}
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
        grads[name] = g
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params:
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.data = (p.data - lr * update).astype(p.dtype)


# ---------------------------------------------------------------- data


def scene_seed(dataset_seed: int, split: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, split, index]).generate_state(1)[0])


@dataclass
class PairSet:
    hazy: np.ndarray   # (n, 3, s, s) float32
    clean: np.ndarray
    seeds: list[int]


def make_pairs(dataset_seed: int, split: int, count: int, size: int) -> PairSet:
    hazy, clean, seeds = [], [], []
    for i in range(count):
        seed = scene_seed(dataset_seed, split, i)
        pair = synthesize(generate_scene(seed, size))
        hazy.append(pair.hazy)
        clean.append(pair.clean)
        seeds.append(seed)
    return PairSet(np.stack(hazy).astype(np.float32), np.stack(clean).astype(np.float32), seeds)


def sample_batch(rng: np.random.Generator, data: PairSet, batch: int, crop: int):
    idx = rng.integers(0, len(data.seeds), size=batch)
    span = data.hazy.shape[-1] - crop + 1
    offs = rng.integers(0, span, size=(batch, 2))
    hz = np.stack([data.hazy[i, :, y:y + crop, x:x + crop] for i, (y, x) in zip(idx, offs)])
    cl = np.stack([data.clean[i, :, y:y + crop, x:x + crop] for i, (y, x) in zip(idx, offs)])
    return hz, cl


def dehaze_array(net: NetWeights, hazy: np.ndarray, chunk: int = 10) -> np.ndarray:
    """Inference over an (n, 3, h, w) array, in fixed-size chunks."""
    outs = [net_forward(Tensor(hazy[i:i + chunk].astype(net.stem.weight.dtype)), net).data
            for i in range(0, len(hazy), chunk)]
    return np.concatenate(outs)


def evaluate(net: NetWeights, data: PairSet) -> tuple[float, float]:
    pred = dehaze_array(net, data.hazy)
    ps = [psnr(p, c) for p, c in zip(pred, data.clean)]
    ss = [ssim(p, c) for p, c in zip(pred, data.clean)]
    return float(np.mean(ps)), float(np.mean(ss))


def baseline_metrics(data: PairSet) -> tuple[float, float]:
    ps = [psnr(h, c) for h, c in zip(data.hazy, data.clean)]
    ss = [ssim(h, c) for h, c in zip(data.hazy, data.clean)]
    return float(np.mean(ps)), float(np.mean(ss))


# ---------------------------------------------------------------- checkpoints


def checkpoint_meta(cfg: TrainConfig, net_cfg: NetConfig, dataset_seed: int) -> dict:
    meta = {f"train.{k}": repr(v) for k, v in asdict(cfg).items()}
    meta.update({f"net.{k}": repr(v) for k, v in net_cfg.as_dict().items()})
    meta["dataset_seed"] = repr(dataset_seed)
    return meta


def save_network(path, net: NetWeights, meta: Optional[dict] = None) -> None:
    meta = dict(meta or {})
    meta.update({f"net.{k}": repr(v) for k, v in net.config.as_dict().items()})
    checkpoint.save(path, net.state(), meta)


def _parse_value(text: str):
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_network(path) -> tuple[NetWeights, dict[str, str]]:
    tensors, meta = checkpoint.load(path)
    net_keys = {f.name for f in fields(NetConfig)}
    kwargs = {k[4:]: _parse_value(v) for k, v in meta.items()
              if k.startswith("net.") and k[4:] in net_keys}
    net = NetWeights.create(NetConfig(**kwargs), seed=0)
    net.load_state(tensors)
    return net, meta


# ---------------------------------------------------------------- loop


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, reason: str, last_good: dict[str, np.ndarray]):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainResult:
    net: NetWeights
    log: list[dict]
    val_psnr: float
    val_ssim: float
    hazy_psnr: float
    hazy_ssim: float
    meta: dict

    def checkpoint_bytes(self) -> bytes:
        return checkpoint.encode(self.net.state(), self.meta)


def write_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else repr(row[k])) for k in LOG_FIELDS})


def train(cfg: TrainConfig, net_cfg: NetConfig, dataset_seed: int = 0,
          out_dir=None, on_step: Optional[Callable[[dict], None]] = None,
          train_data: Optional[PairSet] = None, val_data: Optional[PairSet] = None) -> TrainResult:
    """Train from scratch; identical arguments give bit-identical results."""
    train_data = train_data or make_pairs(dataset_seed, 0, cfg.n_train, cfg.scene_size)
    val_data = val_data or make_pairs(dataset_seed, 1, cfg.n_val, cfg.crop)
    hazy_psnr, hazy_ssim = baseline_metrics(val_data)

    net = NetWeights.create(net_cfg, seed=int(np.random.SeedSequence([cfg.seed, 0]).generate_state(1)[0]))
    params = net.parameters()
    for _, p in params:
        p.requires_grad = True
    ext = CrExtractor.create(cfg.cr_seed)
    data_rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState()
    meta = checkpoint_meta(cfg, net_cfg, dataset_seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def abort(step, reason):
        last_good = {k: v.copy() for k, v in net.state().items()}
        if out is not None:
            checkpoint.save(out / "last_good.haan", last_good, meta)
            write_log(out / "metrics.csv", rows)
        raise TrainingDiverged(step, reason, last_good)

    rows: list[dict] = []
    val_psnr = val_ssim = float("nan")
    for step in range(cfg.total_steps + 1):
        row = {"step": step, "lr": cosine_lr(step, cfg), "loss": None,
               "val_psnr": None, "val_ssim": None}
        if step % cfg.val_every == 0 or step == cfg.total_steps:
            val_psnr, val_ssim = evaluate(net, val_data)
            row["val_psnr"], row["val_ssim"] = val_psnr, val_ssim
        if step < cfg.total_steps:
            hz, cl = sample_batch(data_rng, train_data, cfg.batch_size, cfg.crop)
            hazy_t, clean_t = Tensor(hz), Tensor(cl)
            for _, p in params:
                p.grad = None
            with Tape() as tape:
                loss = total_loss(net_forward(hazy_t, net), clean_t, hazy_t, ext, cfg.lam)
            value = loss.item()
            if not math.isfinite(value):
                abort(step, f"loss is {value}")
            tape.backward(loss)
            try:
                adam_step(params, state, row["lr"], cfg)
            except NonFiniteGradient as err:
                abort(step, str(err))
            row["loss"] = value
        rows.append(row)
        if on_step is not None:
            on_step(row)
        if row["val_psnr"] is not None:
            log.info("step %d loss %s val psnr %.3f ssim %.4f", step, row["loss"], val_psnr, val_ssim)

    result = TrainResult(net, rows, val_psnr, val_ssim, hazy_psnr, hazy_ssim, meta)
    if out is not None:
        (out / "checkpoint.haan").write_bytes(result.checkpoint_bytes())
        write_log(out / "metrics.csv", rows)
    return result


def run_ablation(cfg: TrainConfig, dataset_seed: int = 0, arms=ARMS,
                 base_channels: int = 16, num_haab: int = 2,
                 out_dir=None) -> dict[str, TrainResult]:
    """Train every ablation arm on the same data stream and seeds."""
    train_data = make_pairs(dataset_seed, 0, cfg.n_train, cfg.scene_size)
    val_data = make_pairs(dataset_seed, 1, cfg.n_val, cfg.crop)
    results = {}
    for arm in arms:
        net_cfg = NetConfig.for_arm(arm, base_channels=base_channels, num_haab=num_haab)
        arm_dir = Path(out_dir) / arm if out_dir is not None else None
        results[arm] = train(cfg, net_cfg, dataset_seed, arm_dir,
                             train_data=train_data, val_data=val_data)
    return results
