"""Probability-flow ODE integration in the noise level sigma.

With zero drift and marginal noise std equal to time, the flow reads

    dx/dsigma = -sigma * score(x, sigma)

Encoding integrates it from ``sigma_min`` up to ``sigma_max``; decoding runs
the same Heun scheme back down. Both walk the Karras grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .tensor import NumericalError, Tensor, as_tensor

ScoreFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SigmaSchedule:
    sigma_min: float = 1e-3
    sigma_max: float = 80.0
    n_steps: int = 64
    rho: float = 7.0

    def __post_init__(self):
        if not self.sigma_min > 0:
            raise ValueError(f"sigma_min must be positive, got {self.sigma_min}")
        if self.sigma_max < self.sigma_min:
            raise ValueError(f"sigma_max ({self.sigma_max}) must not be below sigma_min ({self.sigma_min})")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be at least 2, got {self.n_steps}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")

    def contains(self, sigma: float) -> bool:
        return self.sigma_min <= sigma <= self.sigma_max

    def truncated(self, sigma_max: float) -> "SigmaSchedule":
        """Same grid rule and step count, topped at ``sigma_max``."""
        return replace(self, sigma_max=float(sigma_max))


@dataclass(frozen=True)
class OdeConfig:
    schedule: SigmaSchedule
    backend: ScoreFn


def karras_grid(schedule: SigmaSchedule) -> np.ndarray:
    """Decreasing grid from sigma_max to sigma_min, endpoints exact."""
    n = schedule.n_steps
    if n < 2:
        raise ValueError(f"n_steps must be at least 2, got {n}")
    if not schedule.sigma_min < schedule.sigma_max:
        raise ValueError("karras_grid needs sigma_min < sigma_max")
    inv = 1.0 / schedule.rho
    hi, lo = schedule.sigma_max**inv, schedule.sigma_min**inv
    i = np.arange(n) / (n - 1)
    sigmas = (hi + i * (lo - hi)) ** schedule.rho
    sigmas[0], sigmas[-1] = schedule.sigma_max, schedule.sigma_min
    return sigmas


def _velocity(backend: ScoreFn, x: np.ndarray, sigma: float) -> np.ndarray:
    return -sigma * np.asarray(backend(x, sigma), dtype=np.float64)


def heun_step(x: Tensor, sigma_from: float, sigma_to: float, backend: ScoreFn) -> Tensor:
    """One explicit trapezoidal (Heun) step; Euler only when landing on sigma=0."""
    if sigma_from == sigma_to:
        raise ValueError("heun_step needs sigma_from != sigma_to")
    if sigma_from < 0 or sigma_to < 0:
        raise ValueError("noise levels must be nonnegative")
    h = sigma_to - sigma_from
    d = _velocity(backend, x, sigma_from)
    x_pred = x + h * d
    if sigma_to == 0:
        out = x_pred
    else:
        if not np.all(np.isfinite(x_pred)):
            raise NumericalError(f"non-finite predictor in step {sigma_from:g} -> {sigma_to:g}")
        out = x + 0.5 * h * (d + _velocity(backend, x_pred, sigma_to))
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite state in step {sigma_from:g} -> {sigma_to:g}")
    return out


def integrate(x: Tensor, sigmas, backend: ScoreFn) -> Tensor:
    """Heun steps along consecutive entries of ``sigmas``."""
    x = as_tensor(x).copy()
    for i in range(len(sigmas) - 1):
        try:
            x = heun_step(x, float(sigmas[i]), float(sigmas[i + 1]), backend)
        except NumericalError as exc:
            raise NumericalError(f"step {i}/{len(sigmas) - 1}: {exc}") from None
    return x


def encode(x0: Tensor, config: OdeConfig, sigma_end: float | None = None) -> Tensor:
    """Map an image at sigma_min to its latent at sigma_end (default sigma_max)."""
    sched = config.schedule if sigma_end is None else config.schedule.truncated(sigma_end)
    if sched.sigma_max == sched.sigma_min:
        return as_tensor(x0).copy()
    return integrate(x0, karras_grid(sched)[::-1], config.backend)


def decode(xT: Tensor, config: OdeConfig, sigma_start: float | None = None) -> Tensor:
    """Map a latent at sigma_start (default sigma_max) back to sigma_min."""
    sched = config.schedule if sigma_start is None else config.schedule.truncated(sigma_start)
    if sched.sigma_max == sched.sigma_min:
        return as_tensor(xT).copy()
    return integrate(xT, karras_grid(sched), config.backend)


def gaussian_flow_map(x: Tensor, mean: Tensor, delta: float, sigma_from: float, sigma_to: float) -> Tensor:
    """Exact flow of a single isotropic Gaussian: affine rescale about the mean."""
    scale = np.sqrt((delta**2 + sigma_to**2) / (delta**2 + sigma_from**2))
    return mean + (np.asarray(x) - mean) * scale
