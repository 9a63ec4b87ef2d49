"""Dense float64 tensor helpers and the seeded Gaussian sampler.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Shapes are never
broadcast against each other: every binary operation requires equal shapes.

Randomness comes from ``numpy.random.Generator`` backed by the PCG64 bit
generator. Normal variates use numpy's ziggurat transform
(``Generator.standard_normal``). Child streams for parallel trials are derived
with :func:`child_rng`, which hashes ``(seed, index)`` through
``numpy.random.SeedSequence``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when tensors that must share a shape do not."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces NaN or Inf."""


def as_tensor(x) -> Tensor:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalError("tensor contains non-finite entries")
    return arr


def check_same_shape(a: Tensor, b: Tensor) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit unsigned seed."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def child_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream number ``index`` derived from ``seed``.

    The derivation is ``PCG64(SeedSequence([seed, index]))`` and does not
    depend on how many other children were created.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def dot(a: Tensor, b: Tensor) -> float:
    check_same_shape(a, b)
    return float(np.dot(np.ravel(a), np.ravel(b)))


def norm(a: Tensor) -> float:
    return float(np.sqrt(dot(a, a)))


def linear_combine(terms: Iterable[tuple[float, Tensor]]) -> Tensor:
    """Elementwise sum of ``c * t`` over ``terms``, accumulated left to right."""
    terms = list(terms)
    if not terms:
        raise ValueError("linear_combine needs at least one term")
    shape = np.shape(terms[0][1])
    out = np.zeros(shape, dtype=np.float64)
    for c, t in terms:
        if np.shape(t) != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {np.shape(t)}")
        out += float(c) * np.asarray(t, dtype=np.float64)
    return out


def sample_gaussian(rng: np.random.Generator, shape: Sequence[int] | int, std: float = 1.0) -> Tensor:
    """I.i.d. N(0, std**2) entries. ``std == 0`` still advances the stream."""
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    z = rng.standard_normal(shape)
    return z * std if std > 0 else np.zeros_like(z)
