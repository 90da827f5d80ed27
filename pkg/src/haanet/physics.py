"""Atmospheric scattering: transmission, hazy synthesis, analytic inversion,
and a procedural scene generator standing in for real paired data.

Images here are plain float64 arrays shaped (3, h, w); maps are (h, w).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_T_FLOOR = 0.05
DEPTH_MAX = 3.0
BETA_RANGE = (0.4, 2.0)
AIRLIGHT_RANGE = (0.7, 1.0)


@dataclass
class SceneSpec:
    clean: np.ndarray      # (3, h, w) in [0, 1]
    depth: np.ndarray      # (h, w) >= 0
    beta: float
    airlight: np.ndarray   # (3,)
    seed: int | None = None

    @property
    def t(self) -> np.ndarray:
        return transmission(self.depth, self.beta)


@dataclass
class HazyPair:
    hazy: np.ndarray
    clean: np.ndarray
    transmission: np.ndarray
    airlight: np.ndarray
    beta: float
    seed: int | None = None


def transmission(depth, beta: float) -> np.ndarray:
    """t = exp(-beta * d)."""
    depth = np.asarray(depth, dtype=np.float64)
    if beta <= 0:
        raise ValueError(f"scattering coefficient must be positive, got {beta}")
    if np.any(depth < 0):
        raise ValueError("depth must be non-negative")
    return np.exp(-beta * depth)


def _airlight(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).reshape(-1, 1, 1)


def haze(clean, t, airlight) -> np.ndarray:
    """I = J * t + A * (1 - t), with t broadcast over channels."""
    return clean * t + _airlight(airlight) * (1.0 - t)


def synthesize(scene: SceneSpec) -> HazyPair:
    clean = np.asarray(scene.clean, dtype=np.float64)
    a = np.asarray(scene.airlight, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ValueError(f"clean image must be (3, h, w), got {clean.shape}")
    if clean.min() < 0 or clean.max() > 1:
        raise ValueError("clean image values must lie in [0, 1]")
    if a.shape != (3,) or a.min() < 0 or a.max() > 1:
        raise ValueError(f"airlight must be 3 values in [0, 1], got {scene.airlight}")
    t = transmission(scene.depth, scene.beta)
    hazy = haze(clean, t, a)
    return HazyPair(hazy, clean, t, a, float(scene.beta), scene.seed)


def invert_exact(hazy, t, airlight, t_floor: float = DEFAULT_T_FLOOR) -> np.ndarray:
    """J = (I - A (1 - t)) / max(t, t_floor), clipped to [0, 1]."""
    if not 0 < t_floor <= 0.2:
        raise ValueError(f"t_floor must lie in (0, 0.2], got {t_floor}")
    t = np.maximum(np.asarray(t, dtype=np.float64), t_floor)
    a = _airlight(airlight)
    j = (np.asarray(hazy, dtype=np.float64) - a * (1.0 - t)) / t
    return np.clip(j, 0.0, 1.0)


# ---------------------------------------------------------------- procedural scenes


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled coarse noise in [0, 1]."""
    coarse = rng.random((cells + 1, cells + 1))
    pos = np.linspace(0, cells, size)
    i0 = np.minimum(pos.astype(int), cells - 1)
    f = pos - i0
    rows = coarse[i0] * (1 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    return rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def generate_scene(seed: int, size: int) -> SceneSpec:
    """Reproducible synthetic scene with smooth and hard-edged content."""
    if size < 16:
        raise ValueError(f"scene size must be at least 16, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)

    # smooth colour gradient
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    # band-limited texture
    for cells, amp in ((4, 0.15), (size // 4, 0.08)):
        tex = np.stack([_smooth_noise(rng, size, cells) for _ in range(3)])
        img = img + amp * (tex - 0.5)

    # hard-edged shapes
    for _ in range(rng.integers(3, 7)):
        colour = rng.uniform(0, 1, 3)[:, None, None]
        cx, cy = rng.uniform(0, 1, 2)
        r = rng.uniform(0.05, 0.25)
        if rng.random() < 0.5:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < rng.uniform(0.05, 0.25))
        else:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        img = np.where(mask[None], colour, img)
    clean = np.clip(img, 0.0, 1.0)

    # depth: ramp plus blobs, normalized to [0, DEPTH_MAX]
    d_angle = rng.uniform(0, 2 * np.pi)
    depth = np.cos(d_angle) * xx + np.sin(d_angle) * yy
    for _ in range(rng.integers(1, 4)):
        bx, by = rng.uniform(0, 1, 2)
        s = rng.uniform(0.1, 0.3)
        depth = depth + rng.uniform(-1, 1) * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * s * s))
    depth = depth - depth.min()
    depth = DEPTH_MAX * depth / max(depth.max(), 1e-12)

    beta = float(rng.uniform(*BETA_RANGE))
    airlight = rng.uniform(*AIRLIGHT_RANGE, 3)
    return SceneSpec(clean, depth, beta, airlight, seed)
