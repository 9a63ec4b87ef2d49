"""Latent interpolation: slerp, noise-injection (SDEdit style) and NoiseDiffusion.

Convention: ``alpha`` weights the latent of image ``a`` (the lambda = 0 end),
``beta`` the latent of image ``b``. The NoiseDiffusion latent is

    clip(alpha * clip(f(a)) + beta * clip(f(b))
         + (mu - alpha) * a + (nu - beta) * b + gamma * eps)

with ``eps ~ N(0, T^2 I)`` and ``f`` the probability-flow encoder to level T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ode import OdeConfig, decode, encode
from .tensor import Tensor, check_same_shape, linear_combine, norm, sample_gaussian

DEFAULT_CLIP = 2.2
DEFAULT_GAMMA = math.sqrt(0.1)
DEFAULT_COMPENSATION = 2.0
PARALLEL_TOL = 1e-6


@dataclass(frozen=True)
class InterpolationPlan:
    alpha: float
    beta: float
    gamma: float
    mu_comp: float
    nu_comp: float
    lam: float = 0.5
    clip_factor: float = DEFAULT_CLIP
    compensation: float = DEFAULT_COMPENSATION

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta and gamma must be nonnegative")
        total = self.alpha**2 + self.beta**2 + self.gamma**2
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"alpha^2 + beta^2 + gamma^2 must equal 1, got {total!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.clip_factor > 0:
            raise ValueError(f"clip factor must be positive, got {self.clip_factor}")


def plan_from_lambda(lam: float, gamma: float = DEFAULT_GAMMA, c: float = DEFAULT_COMPENSATION,
                     k: float = DEFAULT_CLIP) -> InterpolationPlan:
    """Style split by a quarter circle, compensation scaled to sum to ``c``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if not c > 0 or not k > 0:
        raise ValueError("compensation scale c and clip factor k must be positive")
    radius = math.sqrt(1.0 - gamma**2)
    alpha = math.cos(lam * math.pi / 2) * radius
    beta = math.sin(lam * math.pi / 2) * radius
    # cos/sin leave ~6e-17 instead of an exact zero at the endpoints
    if lam == 1.0:
        alpha = 0.0
    if lam == 0.0:
        beta = 0.0
    return InterpolationPlan(alpha, beta, gamma, c * alpha / (alpha + beta), c * beta / (alpha + beta),
                             lam=lam, clip_factor=k, compensation=c)


def slerp(x0: Tensor, x1: Tensor, lam: float) -> Tensor:
    """Great-circle interpolation; falls back to lerp for (anti)parallel inputs."""
    check_same_shape(x0, x1)
    n0, n1 = norm(x0), norm(x1)
    if n0 == 0 or n1 == 0:
        raise ValueError("slerp is undefined for a zero-norm input")
    cos = float(np.clip(np.vdot(x0, x1) / (n0 * n1), -1.0, 1.0))
    theta = math.acos(cos)
    if theta < PARALLEL_TOL or math.pi - theta < PARALLEL_TOL:
        return linear_combine([(1.0 - lam, x0), (lam, x1)])
    s = math.sin(theta)
    return linear_combine([(math.sin((1.0 - lam) * theta) / s, x0), (math.sin(lam * theta) / s, x1)])


@dataclass(frozen=True)
class ClipSpec:
    bound: float

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError(f"clip bound must be positive, got {self.bound}")

    @classmethod
    def from_factor(cls, k: float, sigma: float) -> "ClipSpec":
        return cls(k * sigma)


def clip_latent(x: Tensor, spec: ClipSpec | float) -> Tensor:
    bound = spec.bound if isinstance(spec, ClipSpec) else float(spec)
    if math.isinf(bound):
        return np.array(x, dtype=np.float64)
    return np.clip(x, -bound, bound)


def noise_inject_latent(xa: Tensor, xb: Tensor, lam: float, sigma: float, shared_noise: bool,
                        rng: np.random.Generator) -> Tensor:
    check_same_shape(xa, xb)
    eps_a = sample_gaussian(rng, np.shape(xa), sigma)
    eps_b = eps_a if shared_noise else sample_gaussian(rng, np.shape(xb), sigma)
    return slerp(xa + eps_a, xb + eps_b, lam)


def noise_inject_interpolate(xa: Tensor, xb: Tensor, lam: float, sigma: float, shared_noise: bool,
                             rng: np.random.Generator, ode: OdeConfig) -> Tensor:
    """Perturb both images at level ``sigma``, slerp, then decode from ``sigma``."""
    if not ode.schedule.contains(sigma):
        raise ValueError(f"sigma={sigma} lies outside the schedule range "
                         f"[{ode.schedule.sigma_min}, {ode.schedule.sigma_max}]")
    latent = noise_inject_latent(xa, xb, lam, sigma, shared_noise, rng)
    return decode(latent, ode, sigma_start=sigma)


def noise_diffusion_latent(xa: Tensor, xb: Tensor, plan: InterpolationPlan, rng: np.random.Generator,
                           ode: OdeConfig, latents: tuple[Tensor, Tensor] | None = None,
                           noise: Tensor | None = None) -> Tensor:
    """Combined, clipped latent at sigma_max (the input to the decoder).

    ``latents`` may carry precomputed encodings of ``xa`` and ``xb``; ``noise``
    may carry the N(0, T^2 I) draw, otherwise it is taken from ``rng``.
    """
    check_same_shape(xa, xb)
    T = ode.schedule.sigma_max
    spec = ClipSpec.from_factor(plan.clip_factor, T)
    if latents is None:
        za = encode(xa, ode) if plan.alpha else np.zeros_like(xa, dtype=np.float64)
        zb = encode(xb, ode) if plan.beta else np.zeros_like(xb, dtype=np.float64)
    else:
        za, zb = latents
    eps = sample_gaussian(rng, np.shape(xa), T) if noise is None else noise
    mixed = linear_combine([
        (plan.alpha, clip_latent(za, spec)),
        (plan.beta, clip_latent(zb, spec)),
        (plan.mu_comp - plan.alpha, xa),
        (plan.nu_comp - plan.beta, xb),
        (plan.gamma, eps),
    ])
    return clip_latent(mixed, spec)


def noise_diffusion_interpolate(xa: Tensor, xb: Tensor, plan: InterpolationPlan, rng: np.random.Generator,
                                ode: OdeConfig) -> Tensor:
    return decode(noise_diffusion_latent(xa, xb, plan, rng, ode), ode)


def slerp_interpolate(xa: Tensor, xb: Tensor, lam: float, ode: OdeConfig) -> Tensor:
    """Encode both images, slerp the latents, decode."""
    return decode(slerp(encode(xa, ode), encode(xb, ode), lam), ode)
