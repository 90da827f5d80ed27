"""Multiscale frequency enhancement.

The decoupler splits features into low/high sub-bands with parameter-free
box filters at 3, 5, 7 and global scale; the modulator re-weights every
sub-band with learnable per-channel vectors and sums the scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import GLOBAL, avg_pool
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor

SCALES = (3, 5, 7, GLOBAL)


def scale_key(k) -> str:
    return "kglobal" if k == GLOBAL else f"k{k}"


@dataclass
class MfemWeights:
    """Per-channel modulation vectors, each stored as (1, N, 1, 1)."""

    m_low: dict[str, Tensor] = field(default_factory=dict)
    m_high: dict[str, Tensor] = field(default_factory=dict)
    scale_weight: dict[str, Tensor] = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return next(iter(self.m_low.values())).shape[1]

    @classmethod
    def create(cls, channels: int = 64, dtype=DEFAULT_DTYPE) -> "MfemWeights":
        # identity at init: sum_k 0.25 * (X^l_k + X^h_k) = X
        def vec(v):
            return Tensor(np.full((1, channels, 1, 1), v, dtype=dtype))

        keys = [scale_key(k) for k in SCALES]
        return cls({k: vec(1.0) for k in keys}, {k: vec(1.0) for k in keys},
                   {k: vec(1.0 / len(SCALES)) for k in keys})


def mfem_param_count(channels: int) -> int:
    return 3 * len(SCALES) * channels


def decouple(x: Tensor) -> dict[str, tuple[Tensor, Tensor]]:
    bands = {}
    for k in SCALES:
        low = avg_pool(x, k)
        bands[scale_key(k)] = (low, x - low)
    return bands


def modulate(bands: dict[str, tuple[Tensor, Tensor]], w: MfemWeights) -> Tensor:
    y = None
    for key, (low, high) in bands.items():
        m_l, m_h, w_c = w.m_low[key], w.m_high[key], w.scale_weight[key]
        for vec in (m_l, m_h, w_c):
            if vec.shape[1] != low.shape[1]:
                raise ShapeError(
                    f"modulation vector for {key} has {vec.shape[1]} channels, features have {low.shape[1]}"
                )
        term = (low * m_l + high * m_h) * w_c
        y = term if y is None else y + term
    return y


def mfem_forward(x: Tensor, w: MfemWeights) -> Tensor:
    return modulate(decouple(x), w)
