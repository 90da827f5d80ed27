"""Training objective (L1 + contrastive regularization) and PSNR / SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ops import ConvSpec, relu
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor, absolute, reduce_mean

DEFAULT_LAMBDA = 0.2
PSNR_CAP = 100.0


def _same_shape(*ts: Tensor) -> None:
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"loss inputs differ in shape: {[t.shape for t in ts]}")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape(pred, target)
    return reduce_mean(absolute(pred - target))


@dataclass
class CrExtractor:
    """Frozen random conv pyramid standing in for pretrained VGG features.

    Stages 3->16->32->64 channels, 3x3 stride 2 + ReLU each.
    """

    seed: int
    stages: list[ConvSpec]
    stage_weights: tuple[float, ...] = (1 / 8, 1 / 4, 1 / 2)
    eps: float = 1e-7

    @classmethod
    def create(cls, seed: int = 1234, dtype=DEFAULT_DTYPE) -> "CrExtractor":
        rng = np.random.default_rng(seed)
        widths = (3, 16, 32, 64)
        stages = [ConvSpec.create(ci, co, 3, 2, rng, dtype) for ci, co in zip(widths, widths[1:])]
        return cls(seed, stages)

    def astype(self, dtype) -> "CrExtractor":
        stages = [ConvSpec(s.in_channels, s.out_channels, s.kernel_size, s.stride,
                           s.weight.astype(dtype), s.bias.astype(dtype)) for s in self.stages]
        return CrExtractor(self.seed, stages, self.stage_weights, self.eps)

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        for stage in self.stages:
            x = relu(stage(x))
            feats.append(x)
        return feats


def cr_loss(pred: Tensor, gt: Tensor, hazy: Tensor, ext: CrExtractor) -> Tensor:
    """sum_i w_i * L1(phi_i(pred), phi_i(gt)) / (L1(phi_i(pred), phi_i(hazy)) + eps)."""
    _same_shape(pred, gt, hazy)
    fp = ext.features(pred)
    fg = ext.features(gt.detach())
    fh = ext.features(hazy.detach())
    total = None
    for wi, a, p, n in zip(ext.stage_weights, fp, fg, fh):
        ratio = l1_loss(a, p) / (l1_loss(a, n) + ext.eps)
        term = ratio * wi
        total = term if total is None else total + term
    return total


def total_loss(pred: Tensor, gt: Tensor, hazy: Tensor, ext: CrExtractor,
               lam: float = DEFAULT_LAMBDA) -> Tensor:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    l1 = l1_loss(pred, gt)
    if lam == 0:
        return l1
    return cr_loss(pred, gt, hazy, ext) * lam + l1


# ---------------------------------------------------------------- metrics


def psnr(pred, target) -> float:
    """10 log10(1 / MSE) for images in [0, 1], capped at 100 dB."""
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"psnr inputs differ in shape: {pred.shape} vs {target.shape}")
    mse = np.mean((pred - target) ** 2)
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _gaussian_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    out = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(out, k, axis=-1) @ g


def ssim(pred, target) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), valid region.

    Inputs are (h, w), (c, h, w) or (n, c, h, w) arrays in [0, 1]; the map is
    averaged over every channel and position.
    """
    # contiguous copies keep the summation order independent of input layout
    x = np.ascontiguousarray(pred, dtype=np.float64)
    y = np.ascontiguousarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"ssim inputs differ in shape: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape[-2:]}")
    g = _gaussian_1d()
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x ** 2
    syy = _filter_valid(y * y, g) - mu_y ** 2
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))
