"""Isotropic Gaussian mixtures with closed-form noised marginals.

Under the variance-exploding setup used throughout the package, the marginal
at noise level ``t`` is the data mixture convolved with N(0, t^2 I), i.e. each
component keeps its center and has per-coordinate variance ``delta^2 + t^2``.
All functions accept either a single point with the center shape or a batch
with extra leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .tensor import ShapeError, Tensor

DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class GaussianMixtureModel:
    weights: np.ndarray
    centers: np.ndarray  # (K, *shape)
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        c = np.asarray(self.centers, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", c)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a non-empty 1-D sequence")
        if c.shape[0] != len(w) or c.ndim < 2:
            raise ShapeError(f"expected {len(w)} centers of a common shape, got array of shape {c.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @classmethod
    def single(cls, center, delta: float = DEFAULT_DELTA) -> "GaussianMixtureModel":
        return cls(np.ones(1), np.asarray(center, dtype=np.float64)[None], delta)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.centers.shape[1:]

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    def variance(self, t: float) -> float:
        return self.delta**2 + t**2

    def _flatten(self, x) -> tuple[np.ndarray, tuple[int, ...]]:
        x = np.asarray(x, dtype=np.float64)
        k = len(self.shape)
        if x.shape[x.ndim - k:] != self.shape or x.ndim < k:
            raise ShapeError(f"point shape {x.shape} does not end with center shape {self.shape}")
        batch = x.shape[: x.ndim - k]
        return x.reshape(-1, self.dim), batch

    def _component_logits(self, xf: np.ndarray, t: float) -> np.ndarray:
        # log w_k + log N(x; c_k, v I), shape (B, K)
        v = self.variance(t)
        c = self.centers.reshape(len(self.weights), -1)
        sq = ((xf[:, None, :] - c[None]) ** 2).sum(-1)
        return np.log(self.weights)[None, :] - 0.5 * sq / v - 0.5 * self.dim * np.log(2 * np.pi * v)

    def log_density(self, x, t: float = 0.0):
        xf, batch = self._flatten(x)
        out = logsumexp(self._component_logits(xf, t), axis=1)
        return float(out[0]) if batch == () else out.reshape(batch)

    def responsibilities(self, x, t: float = 0.0) -> np.ndarray:
        xf, batch = self._flatten(x)
        lg = self._component_logits(xf, t)
        r = np.exp(lg - logsumexp(lg, axis=1, keepdims=True))
        return r.reshape(*batch, len(self.weights))

    def score(self, x, t: float = 0.0) -> Tensor:
        """Sum_k r_k(x, t) (c_k - x) / (delta^2 + t^2)."""
        if t < 0:
            raise ValueError(f"noise level must be nonnegative, got {t}")
        x = np.asarray(x, dtype=np.float64)
        xf, batch = self._flatten(x)
        r = self.responsibilities(xf.reshape(-1, *self.shape), t)
        mean = r @ self.centers.reshape(len(self.weights), -1)
        return ((mean - xf) / self.variance(t)).reshape(x.shape)

    __call__ = score

    def denoise(self, x, t: float) -> Tensor:
        """Posterior mean E[x0 | x_t = x]."""
        return np.asarray(x, dtype=np.float64) + t**2 * self.score(x, t)

    def sample(self, rng: np.random.Generator, count: int, t: float = 0.0, return_labels: bool = False):
        labels = rng.choice(len(self.weights), size=count, p=self.weights)
        z = rng.standard_normal((count, *self.shape))
        x = self.centers[labels] + np.sqrt(self.variance(t)) * z
        return (x, labels) if return_labels else x

    def nearest_center_mse(self, x) -> np.ndarray:
        """Per-point mean squared error to the closest center."""
        xf, batch = self._flatten(x)
        c = self.centers.reshape(len(self.weights), -1)
        d = ((xf[:, None, :] - c[None]) ** 2).mean(-1)
        return d.min(1).reshape(batch)


def log_density(model: GaussianMixtureModel, x, t: float = 0.0):
    return model.log_density(x, t)


def responsibilities(model: GaussianMixtureModel, x, t: float = 0.0) -> np.ndarray:
    return model.responsibilities(x, t)


def score(model: GaussianMixtureModel, x, t: float = 0.0) -> Tensor:
    return model.score(x, t)


def template_images(size: int, count: int, rng: np.random.Generator, bumps: int = 3) -> np.ndarray:
    """Smooth grayscale templates in [0.1, 0.9]: sums of a few Gaussian bumps."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    out = np.empty((count, size, size))
    for k in range(count):
        img = np.zeros((size, size))
        for _ in range(bumps):
            cy, cx = rng.uniform(0.15, 0.85, 2)
            width = rng.uniform(0.12, 0.3)
            img += rng.uniform(0.4, 0.8) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        out[k] = 0.1 + 0.8 * np.clip(img, 0.0, 1.0)
    return out


def template_mixture(size: int, count: int, rng: np.random.Generator,
                     delta: float = DEFAULT_DELTA) -> GaussianMixtureModel:
    return GaussianMixtureModel(np.full(count, 1.0 / count), template_images(size, count, rng), delta)


def checkerboard(size: int, cell: int = 1, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """High-frequency test pattern far from any smooth template."""
    idx = np.indices((size, size)) // cell
    return np.where(idx.sum(0) % 2 == 0, low, high).astype(np.float64)
