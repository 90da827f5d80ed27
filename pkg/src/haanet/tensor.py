"""NCHW tensors with tape-based reverse-mode differentiation.

Operations are only recorded while a :class:`Tape` is active and at least one
input requires a gradient; outside a tape every op is plain inference.

    >>> x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = reduce_mean(x * x)
    >>> tape.backward(y)
"""

from __future__ import annotations

import contextvars
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "haanet_active_tape", default=None
)


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """Dense (n, c, h, w) array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are at most 4-D, got shape {arr.shape}")
        while arr.ndim < 4:
            arr = arr[np.newaxis]
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return mul_scalar(self, -1.0)


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, inputs: Sequence[Tensor], output: Tensor, rule: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record onto a tape that has already been backpropagated")
        output._tape = self
        self.nodes.append((tuple(inputs), output, rule))

    def backward(self, root: Tensor) -> None:
        if root.shape != (1, 1, 1, 1):
            raise ShapeError(f"backward needs a scalar (1, 1, 1, 1) root, got {root.shape}")
        if root._tape is not self:
            raise TapeError("root was not produced on this tape")
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward call")
        self.consumed = True

        cot: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for inputs, output, rule in reversed(self.nodes):
            g = cot.pop(id(output), None)
            if g is None:
                continue
            grads = rule(g)
            for t, gi in zip(inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    # leaf
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    cot[key] = gi if key not in cot else cot[key] + gi
        self.nodes.clear()


def current_tape() -> Optional[Tape]:
    return _active_tape.get()


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every requires_grad leaf feeding root."""
    if root._tape is None:
        raise TapeError("root was not recorded on any tape (was a Tape active?)")
    root._tape.backward(root)


def apply(out: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    """Wrap a forward result and record its backward rule if needed.

    ``rule(g)`` maps the output cotangent to one gradient (or None) per input.
    """
    result = Tensor(out, dtype=out.dtype)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.record(inputs, result, rule)
    return result


# ---------------------------------------------------------------- elementwise


def _broadcast_kind(a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    n, c, _, _ = a.shape
    if b.shape[1:] == (c, 1, 1) and b.shape[0] in (n, 1):
        return "channel"
    raise ShapeError(
        f"shape mismatch: {a.shape} vs {b.shape}; only equal shapes or a "
        f"(n, c, 1, 1) right operand broadcast over (h, w) are supported"
    )


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    g = g.sum(axis=(2, 3), keepdims=True)
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    return g


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Binary elementwise op; ``b`` may be (n|1, c, 1, 1) broadcast over (h, w)."""
    kind = _broadcast_kind(a, b)
    fit = (lambda g: g) if kind == "same" else (lambda g: _unbroadcast(g, b.shape))
    ad, bd = a.data, b.data
    if op == "add":
        return apply(ad + bd, (a, b), lambda g: (g, fit(g)))
    if op == "sub":
        return apply(ad - bd, (a, b), lambda g: (g, fit(-g)))
    if op == "mul":
        return apply(ad * bd, (a, b), lambda g: (g * bd, fit(g * ad)))
    if op == "div":
        out = ad / bd
        return apply(out, (a, b), lambda g: (g / bd, fit(-g * out / bd)))
    raise ValueError(f"unknown elementwise op {op!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("div", a, b)


def add_scalar(x: Tensor, s: float) -> Tensor:
    return apply(x.data + x.data.dtype.type(s), (x,), lambda g: (g,))


def mul_scalar(x: Tensor, s: float) -> Tensor:
    s = x.data.dtype.type(s)
    return apply(x.data * s, (x,), lambda g: (g * s,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return apply(np.abs(x.data), (x,), lambda g: (g * sign,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return apply(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions


def reduce_mean_spatial(x: Tensor) -> Tensor:
    """Per-(n, c) mean over the spatial plane; shape (n, c, 1, 1)."""
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError(f"empty spatial extent in {x.shape}")
    inv = x.data.dtype.type(1.0 / (h * w))
    out = x.data.sum(axis=(2, 3), keepdims=True) * inv
    return apply(out, (x,), lambda g: (np.broadcast_to(g * inv, x.shape).copy(),))


def reduce_mean(x: Tensor) -> Tensor:
    """Mean over every element; shape (1, 1, 1, 1)."""
    if x.size == 0:
        raise ShapeError(f"cannot average an empty tensor {x.shape}")
    inv = x.data.dtype.type(1.0 / x.size)
    out = np.reshape(x.data.sum() * inv, (1, 1, 1, 1)).astype(x.dtype)
    return apply(out, (x,), lambda g: (np.full(x.shape, g.item() * inv, dtype=x.dtype),))


def expand(x: Tensor, shape: tuple) -> Tensor:
    """Broadcast an (n, c, 1, 1) tensor to (n, c, h, w)."""
    if x.shape[2:] != (1, 1) or x.shape[:2] != tuple(shape[:2]):
        raise ShapeError(f"cannot expand {x.shape} to {tuple(shape)}")
    out = np.broadcast_to(x.data, shape).copy()
    return apply(out, (x,), lambda g: (g.sum(axis=(2, 3), keepdims=True),))


# ---------------------------------------------------------------- fd oracle


def _fd_max_error(loss, targets: Sequence[np.ndarray], analytic: Sequence[np.ndarray],
                  step: float, max_elements: Optional[int], rng) -> float:
    """Central differences on ``loss()`` by perturbing ``targets`` in place."""
    worst = 0.0
    for arr, g_ad in zip(targets, analytic):
        flat = arr.reshape(-1)
        g_flat = g_ad.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = loss()
            flat[i] = orig - step
            fm = loss()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(
                    f"non-finite loss while perturbing element {np.unravel_index(i, arr.shape)}"
                )
            g_fd = (fp - fm) / (2 * step)
            a = float(g_flat[i])
            if not np.isfinite(a):
                raise FloatingPointError(
                    f"non-finite analytic gradient at element {np.unravel_index(i, arr.shape)}"
                )
            err = abs(a - g_fd) / max(abs(a), abs(g_fd), 1e-8)
            worst = max(worst, err)
    return worst


def _check_step(step: float) -> None:
    if not 1e-7 <= step <= 1e-4:
        raise ValueError(f"finite-difference step must lie in [1e-7, 1e-4], got {step}")


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-6,
                      max_elements: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``x`` must be float64. With ``max_elements`` only a seeded subset of
    entries is probed.
    """
    _check_step(step)
    if x.dtype != np.float64:
        raise TypeError("finite_diff_check runs in 64-bit mode; pass a float64 tensor")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(leaf)
    tape.backward(y)
    g_ad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    probe = Tensor(x.data.copy())

    def loss():
        return f(probe).item()

    return _fd_max_error(loss, [probe.data], [g_ad], step, max_elements,
                         np.random.default_rng(seed))


def param_grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                     step: float = 1e-6, max_elements: Optional[int] = None,
                     seed: int = 0) -> dict[str, float]:
    """Per-parameter max relative error for a closure over float64 parameters."""
    _check_step(step)
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"parameter {name} is {p.dtype}; gradient checks need float64")
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        y = loss_fn()
    tape.backward(y)

    rng = np.random.default_rng(seed)
    report = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        report[name] = _fd_max_error(lambda: loss_fn().item(), [p.data], [g], step,
                                     max_elements, rng)
    return report
