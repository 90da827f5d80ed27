"""Convolution, pooling, resampling, normalization and activation primitives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DEFAULT_DTYPE, ShapeError, Tensor, apply, expand, reduce_mean_spatial

GLOBAL = "global"


# ---------------------------------------------------------------- convolution


def _pad_hw(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Columns laid out (c, k, k, n, ho, wo) so the contraction is one matmul."""
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * k * k, n * ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Zero-padded 'same' cross-correlation with an odd square kernel."""
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d expects {ci} input channels, got {c} (input shape {x.shape})")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {weight.shape}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    p = (k - 1) // 2
    ho, wo = -(-h // stride), -(-w // stride)
    xp = _pad_hw(x.data, p)
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(o, c * k * k)
    out = (wmat @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
        inputs = (x, weight, bias)
    else:
        out = np.ascontiguousarray(out)
        inputs = (x, weight)

    def rule(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gw = (gmat @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(c, k, k, n, ho, wo)
            gxp = np.zeros((c, n) + xp.shape[2:], dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            gx = gxp.transpose(1, 0, 2, 3)[:, :, p:p + h, p:p + w]
            gx = np.ascontiguousarray(gx)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)).reshape(bias.shape))
        return grads

    return apply(out, inputs, rule)


@dataclass
class ConvSpec:
    """A convolution layer: geometry plus its weight (out, in, k, k) and bias."""

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int
    weight: Tensor
    bias: Tensor

    @classmethod
    def create(cls, in_channels: int, out_channels: int, kernel_size: int = 3,
               stride: int = 1, rng: np.random.Generator | int | None = 0,
               dtype=DEFAULT_DTYPE) -> "ConvSpec":
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        spec = cls(in_channels, out_channels, kernel_size, stride,
                   Tensor(np.zeros((out_channels, in_channels, kernel_size, kernel_size), dtype)),
                   Tensor(np.zeros((1, out_channels, 1, 1), dtype)))
        if rng is not None:
            init_weights(spec, rng)
        return spec

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride)

    @property
    def num_params(self) -> int:
        return self.weight.size + self.bias.size


def init_weights(spec: ConvSpec, seed: Union[int, np.random.Generator]) -> ConvSpec:
    """Fan-in uniform init in +-sqrt(6 / (in * k^2)); zero bias."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_in = spec.in_channels * spec.kernel_size ** 2
    bound = np.sqrt(6.0 / fan_in)
    shape = spec.weight.shape
    spec.weight.data = rng.uniform(-bound, bound, size=shape).astype(spec.weight.dtype)
    spec.bias.data = np.zeros(spec.bias.shape, dtype=spec.bias.dtype)
    return spec


# ---------------------------------------------------------------- pooling


def _box_sum(a: np.ndarray, k: int) -> np.ndarray:
    """Zero-padded k x k window sum, same spatial size (separable, fixed order)."""
    p = k // 2
    h, w = a.shape[2:]
    ap = np.pad(a, ((0, 0), (0, 0), (p, p), (0, 0)))
    rows = ap[:, :, 0:h].copy()
    for i in range(1, k):
        rows += ap[:, :, i:i + h]
    rp = np.pad(rows, ((0, 0), (0, 0), (0, 0), (p, p)))
    out = rp[:, :, :, 0:w].copy()
    for j in range(1, k):
        out += rp[:, :, :, j:j + w]
    return out


def _valid_counts(length: int, k: int) -> np.ndarray:
    p = k // 2
    i = np.arange(length)
    return (np.minimum(i + p, length - 1) - np.maximum(i - p, 0) + 1).astype(np.float64)


def avg_pool(x: Tensor, k: Union[int, str]) -> Tensor:
    """Stride-1 box filter normalized by the number of in-bounds taps.

    ``k == GLOBAL`` gives the spatial mean broadcast back over the plane.
    """
    if k == GLOBAL:
        return expand(reduce_mean_spatial(x), x.shape)
    if not isinstance(k, (int, np.integer)) or k < 1 or k % 2 == 0:
        raise ValueError(f"pooling kernel must be odd or GLOBAL, got {k!r}")
    _, _, h, w = x.shape
    counts = np.outer(_valid_counts(h, k), _valid_counts(w, k)).astype(x.dtype)
    out = _box_sum(x.data, k) / counts
    # box sum with zero padding is self-adjoint
    return apply(out, (x,), lambda g: (_box_sum(g / counts, k),))


# ---------------------------------------------------------------- activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    half = x.data.dtype.type(0.5)
    s = half * (np.tanh(half * x.data) + 1)
    return apply(s, (x,), lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return apply(t, (x,), lambda g: (g * (1 - t * t),))


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------- resampling


def upsample_nearest(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError(f"cannot upsample empty plane {x.shape}")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return apply(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def downsample(x: Tensor, spec: ConvSpec) -> Tensor:
    if spec.stride != 2:
        raise ValueError("downsample needs a stride-2 convolution")
    return spec(x)


def upsample(x: Tensor, spec: ConvSpec) -> Tensor:
    """Nearest-neighbour x2 followed by a 1x1 convolution."""
    if spec.kernel_size != 1:
        raise ValueError("upsample projection must be a 1x1 convolution")
    return spec(upsample_nearest(x))


# ---------------------------------------------------------------- normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each sample over (c, h, w), then per-channel scale and shift."""
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(f"norm parameters must be (1, {c}, 1, 1), got {gamma.shape}, {beta.shape}")
    axes = (1, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def rule(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        ggamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gbeta = g.sum(axis=(0, 2, 3), keepdims=True)
        return gx, ggamma, gbeta

    return apply(out.astype(x.dtype), (x, gamma, beta), rule)


# ---------------------------------------------------------------- parameter tables


def named_parameters(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Walk dataclasses / dicts / lists and collect tensors with dotted names.

    Order follows field declaration order, which fixes checkpoint layout.
    """
    from dataclasses import fields, is_dataclass

    out: list[tuple[str, Tensor]] = []
    if isinstance(obj, Tensor):
        out.append((prefix, obj))
    elif is_dataclass(obj):
        for f in fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, (int, float, str, type(None))):
                continue
            out.extend(named_parameters(val, f"{prefix}.{f.name}" if prefix else f.name))
    elif isinstance(obj, dict):
        for key, val in obj.items():
            out.extend(named_parameters(val, f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            out.extend(named_parameters(val, f"{prefix}.{i}" if prefix else str(i)))
    return out


def count_parameters(obj) -> int:
    return sum(t.size for _, t in named_parameters(obj))


def cast_parameters(obj, dtype) -> None:
    """Convert every tensor reachable from ``obj`` to ``dtype`` in place."""
    for _, t in named_parameters(obj):
        t.data = t.data.astype(dtype)
        t.grad = None
