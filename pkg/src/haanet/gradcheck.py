"""Finite-difference suites for every differentiable piece, all in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .haam import HaamWeights, haam_forward
from .losses import CrExtractor, total_loss
from .mfem import MfemWeights, mfem_forward
from .net import HaabWeights, NetConfig, NetWeights, haab_forward, net_forward
from .ops import named_parameters
from .tensor import (Tensor, absolute, clamp, div, expand, finite_diff_check, mul,
                     param_grad_check, reduce_mean, reduce_mean_spatial)

F64 = np.float64
PRIMITIVE_TOL = 1e-6
MODULE_TOL = 1e-4
NETWORK_TOL = 1e-3
LOSS_TOL = 1e-5
# Projected and composite losses are means over many elements, so single
# gradient entries can be ~1e-7; a wider central-difference step keeps
# round-off in the loss evaluation well below the tolerances.
COMPOSITE_STEP = 1e-5
MODULES = ("primitives", "haam", "mfem", "backbone", "loss")


@dataclass
class CheckResult:
    suite: str
    group: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tol


def _rand(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), dtype=F64)


def _projected(fn: Callable[[Tensor], Tensor], proj: Tensor) -> Callable[[Tensor], Tensor]:
    """Scalarize through a fixed random projection so every output entry matters."""
    return lambda x: reduce_mean(mul(fn(x), proj))


def primitive_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    shape = (2, 3, 5, 4)
    x = _rand(rng, shape)
    other = _rand(rng, shape)
    chan = _rand(rng, (2, 3, 1, 1))
    pos = _rand(rng, shape, 0.5, 2.0)
    w3 = _rand(rng, (4, 3, 3, 3))
    b4 = _rand(rng, (1, 4, 1, 1))
    gamma, beta = _rand(rng, (1, 3, 1, 1)), _rand(rng, (1, 3, 1, 1))
    p_same = _rand(rng, shape)
    p_conv = _rand(rng, (2, 4, 5, 4))
    p_conv2 = _rand(rng, (2, 4, 3, 2))
    p_chan = _rand(rng, (2, 3, 1, 1))
    p_up = _rand(rng, (2, 3, 10, 8))

    cases = {
        "add": (lambda t: t + other, p_same, x),
        "sub": (lambda t: t - other, p_same, x),
        "mul": (lambda t: t * other, p_same, x),
        "mul_broadcast_lhs": (lambda t: t * chan, p_same, x),
        "mul_broadcast_rhs": (lambda t: mul(other, t), p_same, chan),
        "div": (lambda t: div(other, t), p_same, pos),
        "add_scalar": (lambda t: 1.0 - t, p_same, x),
        "abs": (absolute, p_same, pos * -1.0),
        "clamp": (lambda t: clamp(t, -0.5, 0.5), p_same, x),
        "reduce_mean_spatial": (reduce_mean_spatial, p_chan, x),
        "expand": (lambda t: expand(t, shape), p_same, chan),
        "conv2d_input": (lambda t: ops.conv2d(t, w3, b4), p_conv, x),
        "conv2d_weight": (lambda t: ops.conv2d(x, t, b4), p_conv, w3),
        "conv2d_bias": (lambda t: ops.conv2d(x, w3, t), p_conv, b4),
        "conv2d_stride2": (lambda t: ops.conv2d(t, w3, b4, stride=2), p_conv2, x),
        "avg_pool3": (lambda t: ops.avg_pool(t, 3), p_same, x),
        "avg_pool7": (lambda t: ops.avg_pool(t, 7), p_same, x),
        "avg_pool_global": (lambda t: ops.avg_pool(t, ops.GLOBAL), p_same, x),
        "relu": (ops.relu, p_same, x),
        "sigmoid": (ops.sigmoid, p_same, x * 3.0),
        "tanh": (ops.tanh, p_same, x * 2.0),
        "upsample_nearest": (ops.upsample_nearest, p_up, x),
        "layer_norm_input": (lambda t: ops.layer_norm(t, gamma, beta), p_same, x),
        "layer_norm_scale": (lambda t: ops.layer_norm(x, t, beta), p_same, gamma),
        "layer_norm_shift": (lambda t: ops.layer_norm(x, gamma, t), p_same, beta),
    }
    results = [CheckResult("primitives", "reduce_mean", finite_diff_check(reduce_mean, x),
                           PRIMITIVE_TOL)]
    for name, (fn, proj, arg) in cases.items():
        err = finite_diff_check(_projected(fn, proj), arg.detach(), step=COMPOSITE_STEP)
        results.append(CheckResult("primitives", name, err, PRIMITIVE_TOL))
    return results


def _param_results(suite, loss_fn, params, tol, max_elements=None, seed=0):
    report = param_grad_check(loss_fn, params, step=COMPOSITE_STEP, max_elements=max_elements,
                              seed=seed)
    return [CheckResult(suite, name, err, tol) for name, err in report.items()]


def haam_suite(seed: int = 0, channels: int = 16) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    w = HaamWeights.create(channels, rng, F64)
    x = _rand(rng, (1, channels, 5, 5))
    proj = _rand(rng, x.shape)
    params = {"input": x, **dict(named_parameters(w))}
    return _param_results("haam", lambda: reduce_mean(mul(haam_forward(x, w), proj)), params,
                          MODULE_TOL)


def mfem_suite(seed: int = 0, channels: int = 4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    w = MfemWeights.create(channels, F64)
    x = _rand(rng, (2, channels, 7, 6))
    identity_err = float(np.max(np.abs(mfem_forward(x, w).data - x.data)))
    results = [CheckResult("mfem", "identity_at_init", identity_err, 1e-12)]
    for _, t in named_parameters(w):
        t.data = t.data + rng.uniform(-0.5, 0.5, size=t.shape)
    proj = _rand(rng, x.shape)
    params = {"input": x, **dict(named_parameters(w))}
    results += _param_results("mfem", lambda: reduce_mean(mul(mfem_forward(x, w), proj)), params,
                              MODULE_TOL)
    return results


def backbone_suite(seed: int = 0, max_elements: int = 6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    # one attention block on its own
    cfg8 = NetConfig(base_channels=16, num_haab=1)
    block = HaabWeights.create(8, cfg8, rng, F64)
    xb = _rand(rng, (1, 8, 6, 6))
    proj = _rand(rng, xb.shape)
    params = {"input": xb, **{f"haab.{k}": v for k, v in named_parameters(block)}}
    results = _param_results("backbone", lambda: reduce_mean(mul(haab_forward(xb, block), proj)),
                             params, MODULE_TOL, max_elements, seed)

    net = NetWeights.create(NetConfig.desk(), seed=seed, dtype=F64)
    # nudge the zero-initialized fusion logits so their gradients are generic
    for fuse in (net.fuse1, net.fuse2):
        for conv in (fuse.logit_a, fuse.logit_b):
            conv.weight.data = rng.uniform(-0.5, 0.5, size=conv.weight.shape)
    hazy = _rand(rng, (1, 3, 8, 8), 0.3, 0.7)
    gt = _rand(rng, (1, 3, 8, 8), 0.0, 1.0)
    # the contrastive negative is a constant by contract, so finite differences
    # must not move it together with the network input
    negative = Tensor(hazy.data.copy())
    ext = CrExtractor.create(7, F64)
    params = {"hazy": hazy, **{f"net.{k}": v for k, v in net.parameters()}}
    results += _param_results("backbone",
                              lambda: total_loss(net_forward(hazy, net), gt, negative, ext, 0.2),
                              params, NETWORK_TOL, max_elements, seed)
    return results


def loss_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    shape = (1, 3, 8, 8)  # three stride-2 extractor stages still apply
    pred = _rand(rng, shape, 0.0, 1.0)
    gt = _rand(rng, shape, 0.0, 1.0)
    hazy = _rand(rng, shape, 0.0, 1.0)
    ext = CrExtractor.create(3, F64)
    err = finite_diff_check(lambda p: total_loss(p, gt, hazy, ext, 0.2), pred, step=COMPOSITE_STEP)
    return [CheckResult("loss", "total_loss_pred", err, LOSS_TOL)]


SUITES = {
    "primitives": primitive_suite,
    "haam": haam_suite,
    "mfem": mfem_suite,
    "backbone": backbone_suite,
    "loss": loss_suite,
}


def run(module: str = "all") -> list[CheckResult]:
    names = MODULES if module == "all" else (module,)
    results = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown gradcheck module {name!r}; choose from all, {', '.join(MODULES)}")
        results.extend(SUITES[name]())
    return results
