"""Finite-sample checks of high-dimensional Gaussian geometry.

Each experiment is a pure function of its arguments and an integer seed and
returns a :class:`StatReport`. Large trial counts are processed in chunks; the
chunk boundaries never change the stream, so results do not depend on memory
limits.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm as std_normal

from .mixture import GaussianMixtureModel
from .ode import OdeConfig, decode
from .tensor import make_rng

QUANTILES = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)
CHUNK = 2**22


@dataclass
class StatReport:
    name: str
    n_samples: int
    mean: float
    std: float
    quantiles: dict[str, float]
    checks: dict[str, bool]
    seed: int
    params: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _summary(name: str, samples: np.ndarray, seed: int, checks: dict, params: dict,
             values: dict | None = None) -> StatReport:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("a report needs at least one sample")
    qs = np.quantile(samples, QUANTILES)
    return StatReport(name=name, n_samples=int(samples.size), mean=float(samples.mean()),
                      std=float(samples.std(ddof=1)) if samples.size > 1 else 0.0,
                      quantiles={f"q{int(q * 100):02d}": float(v) for q, v in zip(QUANTILES, qs)},
                      checks={k: bool(v) for k, v in checks.items()}, seed=seed, params=params,
                      values=values or {})


def _gaussian_rows(rng: np.random.Generator, trials: int, n: int, fn) -> np.ndarray:
    """Apply ``fn`` to row blocks of a (trials, n) standard normal matrix."""
    rows = max(1, CHUNK // n)
    out = []
    for start in range(0, trials, rows):
        out.append(fn(rng.standard_normal((min(rows, trials - start), n))))
    return np.concatenate(out)


def norm_concentration(n: int, trials: int, seed: int, std: float = 1.0) -> StatReport:
    """Distribution of ||X|| - std * sqrt(n) for X ~ N(0, std^2 I_n)."""
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be positive")
    rng = make_rng(seed)
    dev = _gaussian_rows(rng, trials, n, lambda z: np.linalg.norm(std * z, axis=1)) - std * math.sqrt(n)
    absdev = np.abs(dev)
    checks = {}
    if n >= 100 and std == 1.0:
        checks["mean_abs_dev<=1.0"] = absdev.mean() <= 1.0
        checks["frac_within_5>=0.99"] = np.mean(absdev <= 5.0) >= 0.99
    return _summary("norm_concentration", dev, seed, checks, {"n": n, "trials": trials, "std": std},
                    {"mean_abs_dev": float(absdev.mean()), "max_abs_dev": float(absdev.max()),
                     "frac_within_5": float(np.mean(absdev <= 5.0))})


def orthogonality_stats(n: int, trials: int, seed: int, same: bool = False) -> StatReport:
    """Distribution of sqrt(n) * cos(X, Y) for independent Gaussian pairs.

    ``same=True`` reuses X for Y, which pins every cosine at 1 and marks the
    report as non-independent. The variance window is only checked for n >= 100.
    """
    if n < 2 or trials < 1:
        raise ValueError("need n >= 2 and trials >= 1")
    rng = make_rng(seed)

    def scaled_cos(block):
        half = block.shape[1] // 2
        x, y = block[:, :half], (block[:, :half] if same else block[:, half:])
        c = (x * y).sum(1) / (np.linalg.norm(x, axis=1) * np.linalg.norm(y, axis=1))
        return np.sqrt(n) * c

    vals = _gaussian_rows(rng, trials, 2 * n, scaled_cos)
    checks = {"independent": not same}
    if not same:
        checks["abs_mean<=0.1"] = abs(vals.mean()) <= 0.1
        if n >= 100:
            checks["var_in_[0.8,1.2]"] = 0.8 <= vals.var(ddof=1) <= 1.2
    return _summary("orthogonality", vals, seed, checks, {"n": n, "trials": trials, "same": same},
                    {"variance": float(vals.var(ddof=1)) if trials > 1 else 0.0,
                     "cosine_mean": float(vals.mean() / math.sqrt(n))})


def weighted_norm_ratio(alpha: float, beta: float, gamma: float, n: int, trials: int, seed: int) -> StatReport:
    """||a v1 + b v2 + g v3|| / (sqrt(a^2 + b^2 + g^2) sqrt(n)) over Gaussian triples."""
    if n < 100:
        raise ValueError("weighted_norm_ratio needs n >= 100")
    scale = math.sqrt(alpha**2 + beta**2 + gamma**2)
    if scale == 0:
        raise ValueError("at least one coefficient must be nonzero")
    rng = make_rng(seed)

    def ratio(block):
        v1, v2, v3 = block[:, :n], block[:, n:2 * n], block[:, 2 * n:]
        return np.linalg.norm(alpha * v1 + beta * v2 + gamma * v3, axis=1) / (scale * math.sqrt(n))

    vals = _gaussian_rows(rng, trials, 3 * n, ratio)
    return _summary("weighted_norm_ratio", vals, seed, {"mean_in_[0.99,1.01]": 0.99 <= vals.mean() <= 1.01},
                    {"alpha": alpha, "beta": beta, "gamma": gamma, "n": n, "trials": trials})


EMPIRICAL_RULE = {k: float(2 * std_normal.cdf(k) - 1) for k in (1, 2, 3)}


def empirical_rule_check(trials: int, seed: int, tol: float = 0.002) -> StatReport:
    """Fractions of N(0, 1) draws within 1, 2 and 3 standard deviations."""
    if trials < 1:
        raise ValueError("trials must be positive")
    z = np.abs(make_rng(seed).standard_normal(trials))
    fracs = {f"within_{k}sd": float(np.mean(z <= k)) for k in (1, 2, 3)}
    checks = {f"within_{k}sd~{EMPIRICAL_RULE[k]:.4f}": abs(fracs[f"within_{k}sd"] - EMPIRICAL_RULE[k]) <= tol
              for k in (1, 2, 3)}
    return _summary("empirical_rule", z, seed, checks, {"trials": trials, "tol": tol}, fracs)


def sphere_radius_diag(latent, sigma: float) -> float:
    """||latent|| / (sigma * sqrt(n)); about 1 for a typical N(0, sigma^2 I) draw."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    latent = np.asarray(latent, dtype=np.float64)
    return float(np.linalg.norm(latent) / (sigma * math.sqrt(latent.size)))


def mismatch_experiment(model: GaussianMixtureModel, levels, denoise_level: float, ode: OdeConfig,
                        seed: int, trials: int = 64) -> StatReport:
    """Noise at each level, always decode from ``denoise_level``.

    For every level L the same clean draws x0 and unit noises z are used,
    so the levels differ only in the amount of noise. Per level the report
    records the mean MSE to the nearest mixture center (``mse_center``), the
    mean MSE to the originating x0 (``mse_source``), and the mean absolute gap
    between the nearest-center MSE and the in-distribution value delta^2
    (``spread_gap``).
    """
    levels = [float(v) for v in levels]
    sched = ode.schedule
    for v in levels + [denoise_level]:
        if v < 0 or v > sched.sigma_max:
            raise ValueError(f"noise level {v} lies outside the schedule range")
    if not sched.contains(denoise_level):
        raise ValueError(f"denoise level {denoise_level} lies outside the schedule range")
    rng = make_rng(seed)
    x0 = model.sample(rng, trials)
    z = rng.standard_normal(x0.shape)
    rows = {}
    for level in levels:
        out = decode(x0 + level * z, ode, sigma_start=denoise_level)
        center = model.nearest_center_mse(out)
        source = ((out - x0) ** 2).reshape(trials, -1).mean(1)
        rows[repr(level)] = {
            "level": level,
            "mse_center": float(center.mean()),
            "mse_source": float(source.mean()),
            "spread_gap": float(np.abs(center - model.delta**2).mean()),
        }
    matched = [r for r in rows.values() if r["level"] == denoise_level]
    checks = {}
    if matched:
        m = matched[0]
        under = [r for r in rows.values() if r["level"] < denoise_level]
        over = [r for r in rows.values() if r["level"] > denoise_level]
        checks["under_noise_worse"] = all(r["mse_center"] > m["mse_center"] for r in under)
        checks["over_noise_worse"] = all(r["mse_center"] > m["mse_center"] for r in over)
    per_level = np.array([r["mse_center"] for r in rows.values()])
    return _summary("mismatch", per_level, seed, checks,
                    {"levels": levels, "denoise_level": denoise_level, "trials": trials}, rows)
