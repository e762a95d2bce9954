"""Guided nonlinear diffusion solved with an explicit finite-difference update.

One step computes, for every pixel ``p`` and each neighbor ``q`` in an
``h x w`` window,

    U_tilde(p) = sum_q g(s(p, q)) * (U(q) - U(p))
    U_next(p)  = alpha * U(p) + beta * U_tilde(p)

where ``s`` is the channel-mean squared difference of the guidance ``V``
between ``q`` and ``p`` and ``g(s) = 1 / sqrt(1 + s / lambda**2)``. Out-of-range
neighbors are clamped to the border (replicate padding), which gives zero flux
across the image edge.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .parallel import for_row_blocks
from .tensor import as_feature_map, pad_replicate


@dataclass(frozen=True)
class DiffusivityConfig:
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class DiffusionSchedule:
    steps: int = 1
    alpha: float = 1.0
    beta: float | None = None
    neighborhood: tuple = (3, 3)

    def __post_init__(self):
        h, w = self.neighborhood
        if h % 2 == 0 or w % 2 == 0 or h < 1 or w < 1:
            raise ValueError(f"neighborhood extents must be odd and positive, got {self.neighborhood}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 / (h * w))
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.stable:
            warnings.warn(
                f"beta={self.beta} exceeds the stability bound 1/{h * w - 1} for a "
                f"{h}x{w} neighborhood",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def stable(self):
        h, w = self.neighborhood
        return self.beta * (h * w - 1) <= 1.0


def diffusivity(s, cfg):
    """Edge-stopping weight ``1 / sqrt(1 + s / lambda**2)``; accepts scalars or arrays."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("squared difference must be nonnegative")
    g = 1.0 / np.sqrt(1.0 + s / (cfg.lam * cfg.lam))
    return float(g) if g.ndim == 0 else g


def diffusivity_derivative(s, lam):
    """d g / d s."""
    return -0.5 * (1.0 + s / (lam * lam)) ** -1.5 / (lam * lam)


def update_field(U, V, cfg, neighborhood=(3, 3)):
    """The neighbor-difference sum ``U_tilde`` for one explicit step."""
    U = as_feature_map(U)
    V = as_feature_map(V)
    if U.shape[1:] != V.shape[1:]:
        raise ValueError(f"U and V spatial extents differ: {U.shape[1:]} vs {V.shape[1:]}")
    kh, kw = neighborhood
    ph, pw = kh // 2, kw // 2
    margin = max(ph, pw)
    _, H, W = U.shape
    Up = pad_replicate(U, margin)
    Vp = pad_replicate(V, margin)
    out = np.zeros_like(U)

    def rows(r0, r1):
        uc = Up[:, margin + r0:margin + r1, margin:margin + W]
        vc = Vp[:, margin + r0:margin + r1, margin:margin + W]
        acc = np.zeros_like(uc)
        for a in range(kh):
            dy = a - ph
            for b in range(kw):
                dx = b - pw
                un = Up[:, margin + r0 + dy:margin + r1 + dy, margin + dx:margin + dx + W]
                vn = Vp[:, margin + r0 + dy:margin + r1 + dy, margin + dx:margin + dx + W]
                s = np.mean((vn - vc) ** 2, axis=0)
                acc += diffusivity(s, cfg) * (un - uc)
        out[:, r0:r1] = acc

    for_row_blocks(rows, H)
    return out


def diffusion_step(U, V, sched, cfg):
    U_tilde = update_field(U, V, cfg, sched.neighborhood)
    return sched.alpha * as_feature_map(U) + sched.beta * U_tilde


def diffuse(U, V, sched, cfg, callback=None):
    """Run ``sched.steps`` explicit steps; ``callback(t, U_t)`` sees every state from t=0."""
    U = as_feature_map(U)
    if callback is not None:
        callback(0, U)
    for t in range(sched.steps):
        U = diffusion_step(U, V, sched, cfg)
        if callback is not None:
            callback(t + 1, U)
    return U


def region_contrast(U, regions):
    """Absolute gap between the mean of ``U`` on label 0 and on the other labels.

    Averaged over channels; ``regions`` is an integer ``(H, W)`` map.
    """
    inside = np.asarray(regions) != 0
    if inside.all() or not inside.any():
        raise ValueError("region map must contain both label 0 and a nonzero label")
    return float(np.mean(np.abs(U[:, inside].mean(axis=1) - U[:, ~inside].mean(axis=1))))
