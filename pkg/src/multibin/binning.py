"""Bin boundaries, bin assignment, and length-prediction error models.

Bins are numbered 1..k. Bin ``i`` covers ``[l_{i-1}, l_i)``; the top
boundary ``l_k`` is closed into bin ``k`` so every value in the support
has a bin.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .service_models import (
    Empirical,
    Exponential,
    ServiceDistribution,
    Uniform,
    harmonic,
)


@dataclass(frozen=True)
class BinConfig:
    boundaries: tuple

    def __init__(self, boundaries: Sequence[float]):
        values = tuple(float(b) for b in boundaries)
        if len(values) < 2:
            raise ValueError("need at least two boundaries (k >= 1)")
        for lo, hi in zip(values, values[1:]):
            if not lo < hi:
                raise ValueError(f"boundaries must be strictly increasing, got {values}")
        object.__setattr__(self, "boundaries", values)

    @property
    def k(self) -> int:
        return len(self.boundaries) - 1

    @property
    def interior(self) -> tuple:
        return self.boundaries[1:-1]

    def interval(self, i: int) -> tuple[float, float]:
        """Boundary pair of bin ``i`` (1-based)."""
        return self.boundaries[i - 1], self.boundaries[i]


# ---------------------------------------------------------------------------
# Error models


@dataclass(frozen=True)
class Perfect:
    pass


@dataclass(frozen=True)
class Symmetric:
    p_e: float

    def __post_init__(self):
        if not 0 <= self.p_e <= 0.5:
            raise ValueError(f"p_e must lie in [0, 0.5], got {self.p_e}")


@dataclass(frozen=True)
class Confusion:
    """Row-stochastic matrix; row ``i`` is the predicted-bin distribution for true bin ``i + 1``."""

    matrix: tuple
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"confusion matrix must be square and non-empty, got shape {m.shape}")
        if (m < 0).any():
            raise ValueError("confusion matrix has negative entries")
        sums = m.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
        if bad.size:
            raise ValueError(f"row {bad[0] + 1} of confusion matrix sums to {sums[bad[0]]!r}, not 1")
        object.__setattr__(self, "matrix", tuple(tuple(row) for row in m))
        object.__setattr__(self, "_cdf", np.cumsum(m, axis=1))

    @property
    def k(self) -> int:
        return len(self.matrix)


ErrorModel = Union[Perfect, Symmetric, Confusion]


def load_confusion_matrix(path) -> Confusion:
    """Read a k x k whitespace-separated probability matrix, one row per true bin."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if any(len(r) != len(rows) for r in rows):
        raise ValueError(f"{path}: expected a square matrix, got row lengths {[len(r) for r in rows]}")
    return Confusion(rows)


# ---------------------------------------------------------------------------
# Boundaries


def uniform_boundaries(k: int, l_min: float, l_max: float) -> BinConfig:
    """Equal-width (hence equal-mass) bins over ``[l_min, l_max]``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0 <= l_min < l_max:
        raise ValueError(f"need 0 <= l_min < l_max, got [{l_min}, {l_max}]")
    width = l_max - l_min
    inner = [l_min + (i / k) * width for i in range(1, k)]
    return BinConfig([l_min, *inner, l_max])


def l_sequence(k: int, B: int) -> list[float]:
    """``[L_1, ..., L_{k-1}]`` with ``L_1 = H_B`` and ``L_m = 1 + ln(L_{m-1})``."""
    if k < 1 or B < 1:
        raise ValueError(f"need k >= 1 and B >= 1, got k={k}, B={B}")
    out: list[float] = []
    for m in range(1, k):
        if m == 1:
            out.append(harmonic(B))
            continue
        prev = out[-1]
        if prev <= 0:
            raise ValueError(f"L_{m - 1} = {prev} is not positive; cannot continue recursion")
        out.append(1.0 + math.log(prev))
    return out


def exponential_boundaries(k: int, mu: float, B: int) -> BinConfig:
    """Boundaries minimizing the upper bound on batch service time for Exp(mu) requests.

    ``l_i = (1/mu) * sum_{j=1..i} ln(L_{k-j})`` for ``i = 1..k-1``, with
    ``l_0 = 0`` and ``l_k = inf``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if B == 1 and k > 1:
        raise ValueError("with B=1 the optimal interior boundaries all collapse to 0; use k=1")
    return BinConfig([0.0, *exponential_interior(k, mu, B), math.inf])


def exponential_interior(k: int, mu: float, B: int) -> list[float]:
    """Interior boundaries ``l_1..l_{k-1}`` without the strict-ordering check."""
    L = l_sequence(k, B)
    inner = []
    acc = 0.0
    for j in range(1, k):
        acc += math.log(L[k - j - 1])  # L is 0-based: L[m-1] == L_m
        inner.append(acc / mu)
    return inner


def empirical_boundaries(k: int, samples: Sequence[float]) -> BinConfig:
    """Equiprobable bins at the interpolated j/k quantiles of ``samples``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    data = np.sort(np.asarray(samples, dtype=float))
    if data.size == 0:
        raise ValueError("need at least one sample")
    distinct = np.unique(data).size
    if k > distinct:
        raise ValueError(f"k={k} exceeds the {distinct} distinct sample values; bins would collapse")
    qs = np.quantile(data, np.arange(1, k) / k) if k > 1 else np.array([])
    values = [float(data[0]), *map(float, qs), float(data[-1])]
    try:
        return BinConfig(values)
    except ValueError:
        raise ValueError(
            f"k={k} quantile boundaries collapse on tied samples: {values}"
        ) from None


def boundaries_for(dist: ServiceDistribution, k: int, B: int) -> BinConfig:
    """Default optimal boundaries for each distribution family."""
    if isinstance(dist, Uniform):
        return uniform_boundaries(k, dist.l_min, dist.l_max)
    if isinstance(dist, Exponential):
        return exponential_boundaries(k, dist.mu, B)
    if isinstance(dist, Empirical):
        return empirical_boundaries(k, dist.samples)
    raise TypeError(f"unknown distribution {dist!r}")


# ---------------------------------------------------------------------------
# Assignment and prediction


def assign_bin(config: BinConfig, length: float) -> int:
    """Bin index (1-based) holding ``length``; raises if it falls outside the boundaries."""
    b = config.boundaries
    if not (b[0] <= length <= b[-1]) or (length == math.inf):
        raise ValueError(f"length {length} outside bin support [{b[0]}, {b[-1]}]")
    if length == b[-1]:
        return config.k
    return bisect.bisect_right(b, length)


def predict_from_uniform(model: ErrorModel, true_bin: int, k: int, u: float) -> int:
    """Deterministic core of :func:`predict_bin` given one unit-uniform draw.

    The Symmetric mapping is nested in ``p_e``: a request mispredicted at
    some ``p_e`` is mispredicted the same way at every larger ``p_e``.
    """
    if isinstance(model, Perfect) or k == 1:
        return true_bin
    if isinstance(model, Symmetric):
        p = model.p_e
        if true_bin > 1 and u < p:
            return true_bin - 1
        if true_bin < k and u >= 1.0 - p:
            return true_bin + 1
        return true_bin
    if isinstance(model, Confusion):
        if model.k != k:
            raise ValueError(f"confusion matrix is {model.k}x{model.k} but k={k}")
        return min(int(np.searchsorted(model._cdf[true_bin - 1], u, side="right")), k - 1) + 1
    raise TypeError(f"unknown error model {model!r}")


def predict_bin(model: ErrorModel, true_bin: int, k: int, rng: np.random.Generator) -> int:
    """Predicted bin for a request whose true bin is ``true_bin``.

    Always consumes one uniform from ``rng`` so that streams stay aligned
    across error models.
    """
    if not 1 <= true_bin <= k:
        raise ValueError(f"true_bin {true_bin} outside 1..{k}")
    return predict_from_uniform(model, true_bin, k, rng.random())


# ---------------------------------------------------------------------------
# Exhaustive oracle


def _uniform_objective(bounds: np.ndarray, lo: float, hi: float, B: int) -> np.ndarray:
    # bounds: (..., k+1) including the outer edges
    a, b = bounds[..., :-1], bounds[..., 1:]
    prob = (b - a) / (hi - lo)
    emax = (B / (B + 1)) * b + (1 / (B + 1)) * a
    return (prob * emax).sum(axis=-1)


def _exponential_objective(inner: np.ndarray, mu: float, B: int) -> np.ndarray:
    # inner: (..., k-1) interior boundaries
    zeros = np.zeros(inner.shape[:-1] + (1,))
    edges = np.concatenate([zeros, inner], axis=-1)
    surv = np.exp(-mu * edges)  # P(l >= l_i), i = 0..k-1
    prob_inner = surv[..., :-1] - surv[..., 1:]
    total = (prob_inner * inner).sum(axis=-1)
    return total + surv[..., -1] * (inner[..., -1] + harmonic(B) / mu)


def brute_force_boundaries(k: int, dist: ServiceDistribution, B: int, grid_points: int = 400) -> BinConfig:
    """Grid-search the boundaries minimizing expected batch service time.

    Uniform: exact per-bin expected maximum. Exponential: the upper bound
    whose minimizer is :func:`exponential_boundaries`. Test oracle only.
    """
    if k not in (2, 3):
        raise ValueError(f"brute-force oracle supports k in {{2, 3}}, got {k}")
    if not 2 <= grid_points <= 400:
        raise ValueError(f"grid_points must be in [2, 400], got {grid_points}")

    if isinstance(dist, Uniform):
        lo, hi = dist.l_min, dist.l_max
    elif isinstance(dist, Exponential):
        lo, hi = 0.0, 2.0 * harmonic(B) / dist.mu
    else:
        raise ValueError(f"brute-force oracle supports Uniform or Exponential, got {dist!r}")

    grid = lo + (hi - lo) * np.arange(1, grid_points) / grid_points
    candidates = np.array(
        [c for c in itertools.combinations(grid, k - 1)], dtype=float
    )

    if isinstance(dist, Uniform):
        full = np.column_stack([np.full(len(candidates), lo), candidates, np.full(len(candidates), hi)])
        cost = _uniform_objective(full, lo, hi, B)
        best = candidates[int(np.argmin(cost))]
        return BinConfig([lo, *best, hi])

    cost = _exponential_objective(candidates, dist.mu, B)
    best = candidates[int(np.argmin(cost))]
    return BinConfig([0.0, *best, math.inf])


def grid_step(dist: ServiceDistribution, B: int, grid_points: int = 400) -> float:
    """Spacing of the candidate grid used by :func:`brute_force_boundaries`."""
    if isinstance(dist, Uniform):
        return (dist.l_max - dist.l_min) / grid_points
    if isinstance(dist, Exponential):
        return 2.0 * harmonic(B) / dist.mu / grid_points
    raise ValueError(f"no grid for {dist!r}")
