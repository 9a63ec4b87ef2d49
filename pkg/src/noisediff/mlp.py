"""Small MLP score network trained by denoising score matching.

The network sees ``(x - mu) / sqrt(t^2 + v)`` concatenated with a 16-wide
sinusoidal embedding of ``log(t) / 4`` and has two SiLU hidden layers. Its raw
output ``F`` is a residual on top of the score of an isotropic Gaussian fitted
to the data (mean ``mu``, per-coordinate variance ``v``):

    score(x, t) = -(x - mu) / (v + t^2) + F / sqrt(v + t^2)

so ``t * score`` stays unit scale at every noise level. With
``baseline=False`` the output is read directly as ``score = F / t``.
Gradients are written out by hand and fed to Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .tensor import NumericalError, ShapeError, make_rng

log = logging.getLogger(__name__)

LAYER_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")
EMBED_WIDTH = 16
HIDDEN = 128


@dataclass
class ScoreNetParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    data_mean: np.ndarray  # (n,)
    data_var: float
    data_shape: tuple[int, ...]
    baseline: bool = True

    def __post_init__(self):
        self.data_shape = tuple(int(s) for s in self.data_shape)
        self.data_mean = np.asarray(self.data_mean, dtype=np.float64).reshape(-1)
        self.data_var = float(self.data_var)
        n = int(np.prod(self.data_shape))
        if self.W1.shape[0] != n + EMBED_WIDTH or self.W3.shape[1] != n or self.data_mean.shape != (n,):
            raise ShapeError("layer shapes do not match the data dimension")
        if self.W1.shape[1] != self.W2.shape[0] or self.W2.shape[1] != self.W3.shape[0]:
            raise ShapeError("hidden layer shapes are inconsistent")
        if self.b1.shape != (self.W1.shape[1],) or self.b2.shape != (self.W2.shape[1],) or self.b3.shape != (n,):
            raise ShapeError("bias shapes are inconsistent")
        if not self.data_var > 0:
            raise ValueError("data_var must be positive")

    @property
    def dim(self) -> int:
        return int(np.prod(self.data_shape))

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in LAYER_ORDER]

    def _rebuild(self, arrays) -> "ScoreNetParams":
        return ScoreNetParams(*arrays, data_mean=self.data_mean.copy(), data_var=self.data_var,
                              data_shape=self.data_shape, baseline=self.baseline)

    def copy(self) -> "ScoreNetParams":
        return self._rebuild([a.copy() for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, v: np.ndarray) -> "ScoreNetParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(v[i:i + a.size].reshape(a.shape).copy())
            i += a.size
        return self._rebuild(out)

    def __call__(self, x, t: float) -> np.ndarray:
        return net_score(self, x, t)


def init_params(data_shape, rng: np.random.Generator, data_mean=None, data_var: float = 1.0,
                hidden: int = HIDDEN, baseline: bool = True) -> ScoreNetParams:
    data_shape = tuple(np.atleast_1d(data_shape).tolist())
    n = int(np.prod(data_shape))
    sizes = [(n + EMBED_WIDTH, hidden), (hidden, hidden), (hidden, n)]
    ws = [rng.standard_normal(s) / np.sqrt(s[0]) for s in sizes]
    mean = np.zeros(n) if data_mean is None else data_mean
    return ScoreNetParams(ws[0], np.zeros(hidden), ws[1], np.zeros(hidden), ws[2], np.zeros(n),
                          data_mean=mean, data_var=data_var, data_shape=data_shape, baseline=baseline)


def init_for_data(data, rng: np.random.Generator, hidden: int = HIDDEN, baseline: bool = True) -> ScoreNetParams:
    """Random weights plus the Gaussian baseline fitted to ``data``."""
    data = np.asarray(data, dtype=np.float64)
    flat = data.reshape(len(data), -1)
    mean = flat.mean(0)
    var = float(np.mean((flat - mean) ** 2))
    return init_params(data.shape[1:], rng, data_mean=mean, data_var=max(var, 1e-12), hidden=hidden,
                       baseline=baseline)


def embed_noise(t: np.ndarray) -> np.ndarray:
    c = np.log(t)[:, None] / 4.0
    freqs = 2.0 ** (np.arange(EMBED_WIDTH // 2) / 2.0)
    return np.concatenate([np.sin(c * freqs), np.cos(c * freqs)], axis=1)


def _silu(a):
    s = expit(a)
    return a * s, s * (1.0 + a * (1.0 - s))


def _forward(params: ScoreNetParams, xf: np.ndarray, t: np.ndarray):
    scale = 1.0 / np.sqrt(t**2 + params.data_var)
    dev = xf - params.data_mean
    h0 = np.concatenate([scale[:, None] * dev, embed_noise(t)], axis=1)
    h1, g1 = _silu(h0 @ params.W1 + params.b1)
    h2, g2 = _silu(h1 @ params.W2 + params.b2)
    F = h2 @ params.W3 + params.b3
    if params.baseline:
        score, gain = scale[:, None] * (F - scale[:, None] * dev), t * scale
    else:
        score, gain = F / t[:, None], np.ones_like(t)
    # gain = d(t * score) / dF
    return score, (h0, h1, g1, h2, g2, gain)


def _flatten(params: ScoreNetParams, x) -> tuple[np.ndarray, tuple[int, ...]]:
    x = np.asarray(x, dtype=np.float64)
    k = len(params.data_shape)
    if x.ndim < k or x.shape[x.ndim - k:] != params.data_shape:
        raise ShapeError(f"input shape {x.shape} does not match network data shape {params.data_shape}")
    return x.reshape(-1, params.dim), x.shape


def net_score(params: ScoreNetParams, x, t) -> np.ndarray:
    """Learned score at noise level ``t`` (scalar or one per batch row)."""
    xf, shape = _flatten(params, x)
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (xf.shape[0],))
    if np.any(tt <= 0):
        raise ValueError("net_score needs t > 0")
    return _forward(params, xf, tt)[0].reshape(shape)


def _loss_and_grad(params: ScoreNetParams, x0: np.ndarray, t: np.ndarray, z: np.ndarray, need_grad=True):
    xt = x0 + t[:, None] * z
    score, (h0, h1, g1, h2, g2, gain) = _forward(params, xt, t)
    r = t[:, None] * score + z
    B = x0.shape[0]
    loss = float((r**2).sum() / B)
    if not need_grad:
        return loss, None
    dF = (2.0 / B) * r * gain[:, None]
    gW3, gb3 = h2.T @ dF, dF.sum(0)
    da2 = (dF @ params.W3.T) * g2
    gW2, gb2 = h1.T @ da2, da2.sum(0)
    da1 = (da2 @ params.W2.T) * g1
    gW1, gb1 = h0.T @ da1, da1.sum(0)
    return loss, [gW1, gb1, gW2, gb2, gW3, gb3]


def _as_batch(params: ScoreNetParams, batch) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("dsm_loss needs a non-empty batch")
    return _flatten(params, np.asarray(batch, dtype=np.float64))[0]


def dsm_loss(params, batch, t_samples, rng: np.random.Generator) -> float:
    """Mean over the batch of t^2 ||score(x0 + t z, t) + z / t||^2.

    ``params`` is normally a :class:`ScoreNetParams`; any ``score(x, t)``
    callable is accepted too and evaluated one sample at a time.
    """
    if len(batch) == 0:
        raise ValueError("dsm_loss needs a non-empty batch")
    x0 = np.asarray(batch, dtype=np.float64)
    t = np.asarray(t_samples, dtype=np.float64).reshape(-1)
    if t.shape[0] != x0.shape[0]:
        raise ShapeError(f"{t.shape[0]} noise levels for a batch of {x0.shape[0]}")
    if isinstance(params, ScoreNetParams):
        x0 = _as_batch(params, x0)
        z = rng.standard_normal(x0.shape)
        return _loss_and_grad(params, x0, t, z, need_grad=False)[0]
    z = rng.standard_normal(x0.shape)
    total = 0.0
    for xi, ti, zi in zip(x0, t, z):
        r = ti * np.asarray(params(xi + ti * zi, float(ti))) + zi
        total += float(np.sum(r**2))
    return total / len(x0)


def dsm_grad(params: ScoreNetParams, batch, t_samples, noise) -> tuple[float, list[np.ndarray]]:
    """Loss and parameter gradients (in ``LAYER_ORDER``) for fixed noise draws."""
    x0 = _as_batch(params, batch)
    t = np.asarray(t_samples, dtype=np.float64).reshape(-1)
    z = np.asarray(noise, dtype=np.float64).reshape(x0.shape)
    return _loss_and_grad(params, x0, t, z)


def grad_check(params: ScoreNetParams, x, t, rng: np.random.Generator | None = None,
               n_coords: int = 32, eps: float = 1e-6) -> float:
    """Max relative error between backprop and central differences of the DSM loss.

    ``x`` is a batch of clean samples and ``t`` their noise levels; the noise
    draw and the coordinate subset come from ``rng``.
    """
    rng = make_rng(0) if rng is None else rng
    x0 = _as_batch(params, np.atleast_2d(x) if np.ndim(x) == 1 and len(params.data_shape) == 1 else x)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x0.shape[0],)).copy()
    z = rng.standard_normal(x0.shape)
    _, grads = _loss_and_grad(params, x0, t, z)
    g = np.concatenate([a.ravel() for a in grads])
    theta = params.flat()
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)
    worst = 0.0
    for i in coords:
        plus, minus = theta.copy(), theta.copy()
        plus[i] += eps
        minus[i] -= eps
        fd = (_loss_and_grad(params.with_flat(plus), x0, t, z, False)[0]
              - _loss_and_grad(params.with_flat(minus), x0, t, z, False)[0]) / (2 * eps)
        scale = max(abs(fd), abs(g[i]))
        if scale > 1e-10:
            worst = max(worst, abs(fd - g[i]) / scale)
    return worst


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 256
    lr: float = 1e-3
    t_min: float = 1e-3
    t_max: float = 80.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = HIDDEN
    baseline: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_size <= 0 or self.lr <= 0:
            raise ValueError("batch_size and lr must be positive")
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")


def sample_noise_levels(rng: np.random.Generator, count: int, t_min: float, t_max: float) -> np.ndarray:
    """Log-uniform noise levels on [t_min, t_max]."""
    return np.exp(rng.uniform(np.log(t_min), np.log(t_max), size=count))


def train(config: TrainConfig, dataset, rng: np.random.Generator | None = None,
          init: ScoreNetParams | None = None, return_history: bool = False):
    """Adam on the DSM loss; raises NumericalError on a non-finite loss."""
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim < 2 or len(data) == 0:
        raise ValueError("dataset must be a non-empty stack of samples")
    rng = make_rng(config.seed) if rng is None else rng
    if init is None:
        init = init_for_data(data, rng, hidden=config.hidden, baseline=config.baseline)
    params = init.copy()
    flat = data.reshape(len(data), -1)
    arrays = params.arrays()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    history = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(flat), size=config.batch_size)
        t = sample_noise_levels(rng, config.batch_size, config.t_min, config.t_max)
        z = rng.standard_normal((config.batch_size, flat.shape[1]))
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = _loss_and_grad(params, flat[idx], t, z)
        if not np.isfinite(loss):
            raise NumericalError(f"training diverged at step {step}: loss={loss}")
        history.append(loss)
        b1c = 1.0 - config.beta1**step
        b2c = 1.0 - config.beta2**step
        for a, g, mi, vi in zip(arrays, grads, m, v):
            mi *= config.beta1
            mi += (1.0 - config.beta1) * g
            vi *= config.beta2
            vi += (1.0 - config.beta2) * g * g
            a -= config.lr * (mi / b1c) / (np.sqrt(vi / b2c) + config.adam_eps)
        if step % 1000 == 0:
            log.info("step %d loss %.4f", step, float(np.mean(history[-1000:])))
    return (params, history) if return_history else params
