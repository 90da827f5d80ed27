"""Haze-aware attention: feature-space scattering-model inversion.

Three sigmoid-gated branches estimate airlight ``A`` (global, from GAP),
transmission ``T`` and a learned stand-in ``T'`` for ``1/T``. Under the
scattering model ``X - A (1 - T)`` is ``J T``, so the output is
``(X - A (1 - T)) * T'``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .ops import ConvSpec, relu, sigmoid
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor, reduce_mean_spatial

REDUCTION = 8


@dataclass
class HaamWeights:
    a_down: ConvSpec
    a_up: ConvSpec
    t_conv: ConvSpec
    t_down: ConvSpec
    t_up: ConvSpec
    tp_conv: ConvSpec
    tp_down: ConvSpec
    tp_up: ConvSpec

    @property
    def channels(self) -> int:
        return self.a_down.in_channels

    @classmethod
    def create(cls, channels: int = 64, rng=0, dtype=DEFAULT_DTYPE) -> "HaamWeights":
        if channels % REDUCTION:
            raise ValueError(f"channel width must be divisible by {REDUCTION}, got {channels}")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        n, r = channels, channels // REDUCTION

        def conv(ci, co, k):
            return ConvSpec.create(ci, co, k, 1, rng, dtype)

        return cls(
            a_down=conv(n, r, 1), a_up=conv(r, n, 1),
            t_conv=conv(n, n, 3), t_down=conv(n, r, 1), t_up=conv(r, n, 1),
            tp_conv=conv(n, n, 3), tp_down=conv(n, r, 1), tp_up=conv(r, n, 1),
        )


def haam_param_count(channels: int) -> int:
    n, r = channels, channels // REDUCTION
    bottleneck = (n * r + r) + (r * n + n)
    return 2 * bottleneck + 2 * (n * n * 9 + n) + bottleneck


def _check(x: Tensor, w: HaamWeights) -> None:
    if x.shape[1] != w.channels:
        raise ShapeError(f"HAAM built for {w.channels} channels, got input {x.shape}")


def estimate_airlight(x: Tensor, w: HaamWeights) -> Tensor:
    _check(x, w)
    return sigmoid(w.a_up(relu(w.a_down(reduce_mean_spatial(x)))))


def _transmission_branch(x, conv, down, up):
    return sigmoid(up(relu(down(conv(x)))))


def estimate_T(x: Tensor, w: HaamWeights) -> Tensor:
    _check(x, w)
    return _transmission_branch(x, w.t_conv, w.t_down, w.t_up)


def estimate_T_recip(x: Tensor, w: HaamWeights) -> Tensor:
    _check(x, w)
    return _transmission_branch(x, w.tp_conv, w.tp_down, w.tp_up)


def _as_tensor(v, like: Tensor) -> Tensor:
    if isinstance(v, Tensor):
        return v
    return Tensor(np.asarray(v, dtype=like.dtype))


def haam_forward(x: Tensor, w: HaamWeights,
                 inject: Optional[Mapping[str, object]] = None) -> Tensor:
    """J = (X - A (1 - T)) T'.

    ``inject`` may override any of the branch outputs ``"A"`` (n|1, N, 1, 1),
    ``"T"`` and ``"Tp"`` (full feature shape); overridden branches are not run.
    """
    inject = inject or {}
    _check(x, w)
    a = _as_tensor(inject["A"], x) if "A" in inject else estimate_airlight(x, w)
    t = _as_tensor(inject["T"], x) if "T" in inject else estimate_T(x, w)
    tp = _as_tensor(inject["Tp"], x) if "Tp" in inject else estimate_T_recip(x, w)
    return (x - (1.0 - t) * a) * tp
