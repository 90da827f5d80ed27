"""Encoder-decoder dehazing network with a cascade of attention blocks at 1/4 scale.

Layout (C = base channels)::

    stem 3x3 3->C/2            H
    down1 3x3/2 C/2->C/2       H/2   (skip s1)
    down2 3x3/2 C/2->C         H/4
    num_haab x [x + MFEM(core(norm(x)))]
    up1 (nearest + 1x1 C->C/2), fuse with s1, dec1 3x3
    up2 (nearest + 1x1 C/2->C/2), fuse with stem, dec2 3x3
    head 3x3 C/2->3, out = clamp(hazy + 0.5 tanh(head), 0, 1)

``core`` is the haze-aware attention module, or a plain conv-relu-conv block
for the ablation arms without it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .haam import REDUCTION, HaamWeights, haam_forward, haam_param_count
from .mfem import MfemWeights, mfem_forward, mfem_param_count
from .ops import ConvSpec, count_parameters, layer_norm, named_parameters, relu, sigmoid, tanh, upsample
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor, clamp, reduce_mean_spatial

ARMS = ("base", "haam", "mfem", "full")
RESIDUAL_SCALE = 0.5


@dataclass
class NetConfig:
    base_channels: int = 64
    num_haab: int = 4
    use_haam: bool = True
    use_mfem: bool = True
    use_skfusion: bool = True

    def __post_init__(self):
        if self.base_channels % (2 * REDUCTION) and self.use_haam:
            raise ValueError(f"base_channels must be a multiple of {2 * REDUCTION}")
        if self.base_channels % 2:
            raise ValueError("base_channels must be even")
        if self.num_haab < 0:
            raise ValueError("num_haab must be non-negative")

    @classmethod
    def desk(cls, **overrides) -> "NetConfig":
        return cls(**{"base_channels": 16, "num_haab": 2, **overrides})

    @classmethod
    def for_arm(cls, arm: str, **overrides) -> "NetConfig":
        """Ablation presets: base U-Net, +HAAM, +MFEM, full (both + SKFusion)."""
        flags = {
            "base": dict(use_haam=False, use_mfem=False, use_skfusion=False),
            "haam": dict(use_haam=True, use_mfem=False, use_skfusion=False),
            "mfem": dict(use_haam=False, use_mfem=True, use_skfusion=False),
            "full": dict(use_haam=True, use_mfem=True, use_skfusion=True),
        }
        if arm not in flags:
            raise ValueError(f"unknown ablation arm {arm!r}; choose from {ARMS}")
        return cls(**{**flags[arm], **overrides})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------- blocks


@dataclass
class HaabWeights:
    norm_scale: Tensor
    norm_shift: Tensor
    haam: Optional[HaamWeights] = None
    conv_a: Optional[ConvSpec] = None
    conv_b: Optional[ConvSpec] = None
    mfem: Optional[MfemWeights] = None

    @classmethod
    def create(cls, channels: int, cfg: NetConfig, rng, dtype=DEFAULT_DTYPE) -> "HaabWeights":
        w = cls(Tensor(np.ones((1, channels, 1, 1), dtype)),
                Tensor(np.zeros((1, channels, 1, 1), dtype)))
        if cfg.use_haam:
            w.haam = HaamWeights.create(channels, rng, dtype)
        else:
            w.conv_a = ConvSpec.create(channels, channels, 3, 1, rng, dtype)
            w.conv_b = ConvSpec.create(channels, channels, 3, 1, rng, dtype)
        if cfg.use_mfem:
            w.mfem = MfemWeights.create(channels, dtype)
        return w


def haab_forward(x: Tensor, w: HaabWeights, inject=None) -> Tensor:
    """y = x + MFEM(HAAM(norm(x))), with disabled modules skipped."""
    h = layer_norm(x, w.norm_scale, w.norm_shift)
    if w.haam is not None:
        h = haam_forward(h, w.haam, inject)
    else:
        h = w.conv_b(relu(w.conv_a(h)))
    if w.mfem is not None:
        h = mfem_forward(h, w.mfem)
    return x + h


@dataclass
class SkFusionWeights:
    squeeze: ConvSpec
    logit_a: ConvSpec
    logit_b: ConvSpec

    @classmethod
    def create(cls, channels: int, rng, dtype=DEFAULT_DTYPE) -> "SkFusionWeights":
        hidden = max(channels // REDUCTION, 4)
        # zero logit heads: equal branch weights at init
        return cls(ConvSpec.create(channels, hidden, 1, 1, rng, dtype),
                   ConvSpec.create(hidden, channels, 1, 1, None, dtype),
                   ConvSpec.create(hidden, channels, 1, 1, None, dtype))


def fusion_weights(a: Tensor, b: Tensor, w: SkFusionWeights) -> tuple[Tensor, Tensor]:
    """Per-channel softmax over the two branches; returns (w_a, w_b)."""
    if a.shape != b.shape:
        raise ShapeError(f"fusion inputs differ in shape: {a.shape} vs {b.shape}")
    s = relu(w.squeeze(reduce_mean_spatial(a + b)))
    # two-way softmax == sigmoid of the logit difference
    w_a = sigmoid(w.logit_a(s) - w.logit_b(s))
    return w_a, 1.0 - w_a


def sk_fusion(a: Tensor, b: Tensor, w: Optional[SkFusionWeights]) -> Tensor:
    if w is None:
        if a.shape != b.shape:
            raise ShapeError(f"fusion inputs differ in shape: {a.shape} vs {b.shape}")
        return (a + b) * 0.5
    w_a, _ = fusion_weights(a, b, w)
    return b + (a - b) * w_a


# ---------------------------------------------------------------- network


@dataclass
class NetWeights:
    config: NetConfig
    stem: ConvSpec
    down1: ConvSpec
    down2: ConvSpec
    haabs: list[HaabWeights]
    up1: ConvSpec
    fuse1: Optional[SkFusionWeights]
    dec1: ConvSpec
    up2: ConvSpec
    fuse2: Optional[SkFusionWeights]
    dec2: ConvSpec
    head: ConvSpec

    @classmethod
    def create(cls, cfg: NetConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> "NetWeights":
        rng = np.random.default_rng(seed)
        c, half = cfg.base_channels, cfg.base_channels // 2

        def conv(ci, co, k, s=1):
            return ConvSpec.create(ci, co, k, s, rng, dtype)

        stem = conv(3, half, 3)
        down1 = conv(half, half, 3, 2)
        down2 = conv(half, c, 3, 2)
        haabs = [HaabWeights.create(c, cfg, rng, dtype) for _ in range(cfg.num_haab)]
        up1 = conv(c, half, 1)
        fuse1 = SkFusionWeights.create(half, rng, dtype) if cfg.use_skfusion else None
        dec1 = conv(half, half, 3)
        up2 = conv(half, half, 1)
        fuse2 = SkFusionWeights.create(half, rng, dtype) if cfg.use_skfusion else None
        dec2 = conv(half, half, 3)
        head = conv(half, 3, 3)
        return cls(cfg, stem, down1, down2, haabs, up1, fuse1, dec1, up2, fuse2, dec2, head)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return named_parameters(self)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.parameters())
        theirs = {k: np.shape(v) for k, v in state.items()}
        mine = {k: t.shape for k, t in own.items()}
        if {k: tuple(v) for k, v in theirs.items()} != mine:
            raise ShapeError(_shape_table_diff(mine, theirs))
        for name, t in own.items():
            t.data = np.array(state[name], dtype=t.dtype)

    @property
    def num_params(self) -> int:
        return count_parameters(self)


def _shape_table_diff(mine: dict, theirs: dict) -> str:
    lines = ["checkpoint does not match network", f"{'tensor':40s} {'network':>20s} {'checkpoint':>20s}"]
    for name in sorted(set(mine) | set(theirs)):
        a, b = mine.get(name), theirs.get(name)
        if a is None or b is None or tuple(a) != tuple(b):
            lines.append(f"{name:40s} {str(a):>20s} {str(b):>20s}")
    return "\n".join(lines)


def conv_param_count(ci: int, co: int, k: int) -> int:
    return co * ci * k * k + co


def net_param_count(cfg: NetConfig) -> int:
    """Closed-form parameter count, independent of the weight containers."""
    c, half = cfg.base_channels, cfg.base_channels // 2
    total = conv_param_count(3, half, 3) + conv_param_count(half, half, 3) + conv_param_count(half, c, 3)
    block = 2 * c
    block += haam_param_count(c) if cfg.use_haam else 2 * conv_param_count(c, c, 3)
    block += mfem_param_count(c) if cfg.use_mfem else 0
    total += cfg.num_haab * block
    total += conv_param_count(c, half, 1) + conv_param_count(half, half, 3)
    total += conv_param_count(half, half, 1) + conv_param_count(half, half, 3)
    total += conv_param_count(half, 3, 3)
    if cfg.use_skfusion:
        hid = max(half // REDUCTION, 4)
        total += 2 * (conv_param_count(half, hid, 1) + 2 * conv_param_count(hid, half, 1))
    return total


def net_forward(hazy: Tensor, w: NetWeights) -> Tensor:
    n, c, h, wd = hazy.shape
    if c != 3:
        raise ShapeError(f"network expects 3-channel input, got {hazy.shape}")
    if h % 4 or wd % 4:
        raise ShapeError(
            f"spatial size {h}x{wd} not divisible by 4; pad by "
            f"({-h % 4}, {-wd % 4}) pixels (rows, cols)"
        )
    s0 = relu(w.stem(hazy))
    s1 = relu(w.down1(s0))
    z = relu(w.down2(s1))
    for block in w.haabs:
        z = haab_forward(z, block)
    u = upsample(z, w.up1)
    u = relu(w.dec1(sk_fusion(s1, u, w.fuse1)))
    u = upsample(u, w.up2)
    u = relu(w.dec2(sk_fusion(s0, u, w.fuse2)))
    residual = tanh(w.head(u)) * RESIDUAL_SCALE
    return clamp(hazy + residual, 0.0, 1.0)
