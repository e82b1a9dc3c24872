"""Closed-form throughput and latency of k-bin batching.

Uniform-service results assume equal-mass boundaries; the exponential
result is an upper bound on batch service time evaluated at the
boundaries that minimize it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .binning import BinConfig, exponential_interior
from .service_models import (
    ServiceDistribution,
    expected_max_uniform,
    harmonic,
    sample_from_uniform01,
)

MAX_K = 10**6


@dataclass(frozen=True)
class SystemParams:
    B: int
    k: int
    dist: ServiceDistribution
    lam: Optional[float] = None

    def __post_init__(self):
        _check_bk(self.B, self.k)
        if self.lam is not None and not self.lam > 0:
            raise ValueError(f"arrival rate must be positive, got {self.lam}")


def _check_bk(B: int, k: int) -> None:
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if not 1 <= k <= MAX_K:
        raise ValueError(f"k must be in [1, {MAX_K}], got {k}")


def _check_range(l_min: float, l_max: float) -> None:
    if not 0 <= l_min < l_max:
        raise ValueError(f"need 0 <= l_min < l_max, got [{l_min}, {l_max}]")


def _batching_gap(B: int, l_min: float, l_max: float) -> float:
    """Expected max of B uniforms minus the single-request mean."""
    return expected_max_uniform(B, l_min, l_max) - (l_max + l_min) / 2


def expected_service_time_k(B: int, k: int, l_min: float, l_max: float) -> float:
    """Expected batch service time with k equal-mass bins over U[l_min, l_max]."""
    _check_bk(B, k)
    _check_range(l_min, l_max)
    return (l_max + l_min) / 2 + _batching_gap(B, l_min, l_max) / k


def throughput_k(B: int, k: int, l_min: float, l_max: float) -> float:
    return B / expected_service_time_k(B, k, l_min, l_max)


def c_max(B: int, l_min: float, l_max: float) -> float:
    """Throughput ceiling: batch size over the single-request mean."""
    _check_bk(B, 1)
    _check_range(l_min, l_max)
    return B / ((l_max + l_min) / 2)


def min_bins_for_throughput(B: int, l_min: float, l_max: float, epsilon: float) -> int:
    """Smallest k whose throughput reaches ``c_max - epsilon``."""
    cap = c_max(B, l_min, l_max)
    if not 0 < epsilon < cap:
        raise ValueError(f"epsilon must lie in (0, c_max={cap}), got {epsilon}")
    mean = (l_max + l_min) / 2
    k = max(1, math.ceil((cap - epsilon) * _batching_gap(B, l_min, l_max) / (epsilon * mean)))
    # the ceiling can land one off when the ratio is an integer up to rounding
    target = cap - epsilon
    if k > 1 and throughput_k(B, k - 1, l_min, l_max) >= target:
        k -= 1
    elif throughput_k(B, k, l_min, l_max) < target:
        k += 1
    return k


def expected_latency(B: int, k: int, l_min: float, l_max: float, lam: float) -> float:
    """Batch-formation wait plus service time, assuming no wait for a server."""
    if not lam > 0:
        raise ValueError(f"arrival rate must be positive, got {lam}")
    return expected_service_time_k(B, k, l_min, l_max) + batch_formation_wait(B, k, lam)


def batch_formation_wait(B: int, k: int, lam: float) -> float:
    """Mean time a request waits for its bin to collect B requests."""
    return (B - 1) * k / (2 * lam)


def exp_service_upper_bound(B: int, k: int, mu: float) -> float:
    """Upper bound on E[batch service] for Exp(mu) requests at the optimal boundaries.

    Bins below the last are charged their upper boundary; the last bin is
    charged ``l_{k-1} + H_B / mu`` (max of B shifted exponentials).
    """
    _check_bk(B, k)
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    # B = 1 puts every interior boundary at 0, which a BinConfig cannot hold
    return _exp_bound([0.0, *exponential_interior(k, mu, B), math.inf], B, mu)


def exp_service_bound_at(config: BinConfig, B: int, mu: float) -> float:
    """The same bound evaluated at arbitrary exponential-case boundaries."""
    return _exp_bound(config.boundaries, B, mu)


def _exp_bound(b, B: int, mu: float) -> float:
    k = len(b) - 1
    total = 0.0
    for i in range(1, k):
        prob = math.exp(-mu * b[i - 1]) - math.exp(-mu * b[i])
        total += prob * b[i]
    last = b[k - 1]
    return total + math.exp(-mu * last) * (last + harmonic(B) / mu)


def exp_throughput_lower_bound(B: int, k: int, mu: float) -> float:
    return B / exp_service_upper_bound(B, k, mu)


def monte_carlo_batch_service(
    dist: ServiceDistribution,
    config: BinConfig,
    B: int,
    n_batches: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte-Carlo estimate of E[batch service] when each batch holds B same-bin requests.

    Requests are drawn from ``dist`` and sorted into bins; a batch's bin is
    chosen with probability equal to that bin's request mass, matching the
    long-run share of batches each bin produces. Returns ``(mean, stderr)``.
    """
    # about n_batches full batches in total, split across bins by request mass
    pool = np.asarray(sample_from_uniform01(dist, rng.random(n_batches * B)), dtype=float)
    edges = np.asarray(config.boundaries)
    idx = np.clip(np.searchsorted(edges, pool, side="right"), 1, config.k)
    idx[pool == edges[-1]] = config.k
    maxima = []
    for i in range(1, config.k + 1):
        members = pool[idx == i]
        full = (members.size // B) * B
        if full:
            maxima.append(members[:full].reshape(-1, B).max(axis=1))
    values = np.concatenate(maxima)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))
