"""Service-time distributions and the order statistics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Uniform:
    l_min: float
    l_max: float

    def __post_init__(self):
        if not (0 <= self.l_min < self.l_max):
            raise ValueError(f"Uniform needs 0 <= l_min < l_max, got [{self.l_min}, {self.l_max}]")


@dataclass(frozen=True)
class Exponential:
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"Exponential rate must be positive, got {self.mu}")


@dataclass(frozen=True)
class Empirical:
    """Finite sample of service times, replayed with replacement."""

    samples: tuple

    def __init__(self, samples: Sequence[float]):
        values = tuple(sorted(float(s) for s in samples))
        if not values:
            raise ValueError("Empirical distribution needs at least one sample")
        if values[0] <= 0:
            raise ValueError(f"Empirical samples must be positive, smallest is {values[0]}")
        object.__setattr__(self, "samples", values)

    def __repr__(self):
        return f"Empirical(n={len(self.samples)}, min={self.samples[0]}, max={self.samples[-1]})"


ServiceDistribution = Union[Uniform, Exponential, Empirical]


def mean(dist: ServiceDistribution) -> float:
    """Expected service time of a single request."""
    if isinstance(dist, Uniform):
        return (dist.l_min + dist.l_max) / 2
    if isinstance(dist, Exponential):
        return 1.0 / dist.mu
    if isinstance(dist, Empirical):
        return math.fsum(dist.samples) / len(dist.samples)
    raise TypeError(f"unknown distribution {dist!r}")


def support(dist: ServiceDistribution) -> tuple[float, float]:
    if isinstance(dist, Uniform):
        return dist.l_min, dist.l_max
    if isinstance(dist, Exponential):
        return 0.0, math.inf
    if isinstance(dist, Empirical):
        return dist.samples[0], dist.samples[-1]
    raise TypeError(f"unknown distribution {dist!r}")


def expected_max_uniform(B: int, lo: float, hi: float) -> float:
    """Expected maximum of ``B`` i.i.d. draws from U[lo, hi]."""
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    return (B / (B + 1)) * hi + (1 / (B + 1)) * lo


def harmonic(B: int) -> float:
    """B-th harmonic number by direct summation."""
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    return math.fsum(1.0 / j for j in range(1, B + 1))


def sample_from_uniform01(dist: ServiceDistribution, u):
    """Map unit-uniform draw(s) ``u`` onto ``dist``; works on scalars and arrays."""
    if isinstance(dist, Uniform):
        return dist.l_min + (dist.l_max - dist.l_min) * u
    if isinstance(dist, Exponential):
        # 1 - u lies in (0, 1] so the log is finite
        return -np.log1p(-u) / dist.mu
    if isinstance(dist, Empirical):
        n = len(dist.samples)
        idx = np.minimum((np.asarray(u) * n).astype(np.int64), n - 1)
        out = np.asarray(dist.samples)[idx]
        return float(out) if out.ndim == 0 else out
    raise TypeError(f"unknown distribution {dist!r}")


def sample(dist: ServiceDistribution, rng: np.random.Generator) -> float:
    """One i.i.d. service-time draw. Consumes exactly one uniform from ``rng``."""
    return float(sample_from_uniform01(dist, rng.random()))


def sample_many(dist: ServiceDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` draws; identical to ``size`` successive :func:`sample` calls on the same stream."""
    return np.asarray(sample_from_uniform01(dist, rng.random(size)), dtype=float)
