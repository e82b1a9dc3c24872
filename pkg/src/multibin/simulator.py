"""Discrete-event simulation of k-bin batching.

Poisson arrivals are sorted into bins by (possibly mispredicted) service
time, each bin cuts a batch whenever it holds B requests, and batches wait
in one central queue served first-formed-first-served by ``n_servers``
identical servers. A batch occupies its server for the largest true
service time among its members.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .binning import BinConfig, Confusion, ErrorModel, Perfect, assign_bin, predict_from_uniform
from .service_models import ServiceDistribution, sample_from_uniform01

# Tie-break order for events sharing a timestamp.
COMPLETE, ARRIVAL, FORM, FLUSH = 0, 1, 2, 3

OVERLOAD = math.inf


@dataclass(frozen=True)
class TraceReplay:
    """Service times replayed from a fixed list.

    ``cyclic=True`` walks the list in order (wrapping around); otherwise
    values are sampled with replacement from the service stream.
    """

    lengths: tuple
    cyclic: bool = True

    def __init__(self, lengths: Sequence[float], cyclic: bool = True):
        values = tuple(float(x) for x in lengths)
        if not values:
            raise ValueError("trace must contain at least one length")
        if min(values) <= 0:
            raise ValueError("trace lengths must be positive")
        object.__setattr__(self, "lengths", values)
        object.__setattr__(self, "cyclic", bool(cyclic))


@dataclass(slots=True)
class Request:
    id: int
    arrival_time: float
    true_service_time: float
    true_bin: int
    predicted_bin: int
    batch_id: int = -1
    completion_time: Optional[float] = None


@dataclass(slots=True)
class BatchRecord:
    id: int
    bin: int
    members: list
    formed_time: float
    service_time: float
    start_time: Optional[float] = None
    finish_time: Optional[float] = None


@dataclass
class SimConfig:
    lam: float
    n_requests: int
    B: int
    bins: BinConfig
    service: Union[ServiceDistribution, TraceReplay]
    error_model: ErrorModel = field(default_factory=Perfect)
    n_servers: int = 1
    seed: int = 0
    flush_partial: bool = True
    max_batch_wait: Optional[float] = None

    def validate(self) -> None:
        if not self.lam > 0:
            raise ValueError(f"arrival rate must be positive (inf for overload), got {self.lam}")
        if self.B < 1:
            raise ValueError(f"B must be >= 1, got {self.B}")
        if self.n_requests < self.B:
            raise ValueError(f"n_requests ({self.n_requests}) must be >= B ({self.B})")
        if self.n_servers < 1:
            raise ValueError(f"n_servers must be >= 1, got {self.n_servers}")
        if self.max_batch_wait is not None and not self.max_batch_wait > 0:
            raise ValueError(f"max_batch_wait must be positive, got {self.max_batch_wait}")
        if isinstance(self.error_model, Confusion) and self.error_model.k != self.bins.k:
            raise ValueError(
                f"confusion matrix is {self.error_model.k}x{self.error_model.k} but there are {self.bins.k} bins"
            )

    @property
    def overload(self) -> bool:
        return math.isinf(self.lam)


@dataclass(frozen=True)
class SimMetrics:
    throughput: float
    makespan: float
    latency_mean: float
    latency_p50: float
    latency_p99: float
    per_bin_batch_counts: tuple
    server_busy_fraction: float
    n_completed: int
    mean_batch_service: float

    def as_dict(self) -> dict:
        d = asdict(self)
        d["per_bin_batch_counts"] = list(self.per_bin_batch_counts)
        return d


@dataclass
class SimRun:
    """Everything a run produced: metrics plus the per-request and per-batch logs."""

    config: SimConfig
    metrics: SimMetrics
    requests: list
    batches: list

    def write_jsonl(self, path) -> None:
        """Per-request records, one JSON object per line."""
        with open(path, "w") as fh:
            for rec in self.request_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def request_records(self) -> Iterable[dict]:
        batches = self.batches
        for r in self.requests:
            b = batches[r.batch_id] if r.batch_id >= 0 else None
            yield {
                "id": r.id,
                "arrival": r.arrival_time,
                "service_time": r.true_service_time,
                "true_bin": r.true_bin,
                "predicted_bin": r.predicted_bin,
                "batch_id": r.batch_id if b is not None else None,
                "start": b.start_time if b is not None else None,
                "finish": b.finish_time if b is not None else None,
            }


def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent arrival, service, and error-model streams from one master seed."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def _arrival_times(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    if config.overload:
        return np.zeros(config.n_requests)
    return np.cumsum(rng.exponential(1.0 / config.lam, size=config.n_requests))


def _service_times(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    n = config.n_requests
    src = config.service
    if isinstance(src, TraceReplay):
        lengths = np.asarray(src.lengths)
        if src.cyclic:
            return lengths[np.arange(n) % lengths.size]
        idx = np.minimum((rng.random(n) * lengths.size).astype(np.int64), lengths.size - 1)
        return lengths[idx]
    return np.asarray(sample_from_uniform01(src, rng.random(n)), dtype=float)


class _Engine:
    def __init__(self, config: SimConfig):
        self.cfg = config
        self.k = config.bins.k
        self.events: list = []
        self._seq = 0
        self.bins: list[list[Request]] = [[] for _ in range(self.k + 1)]  # index 0 unused
        self.bin_generation = [0] * (self.k + 1)
        self.queue: deque[BatchRecord] = deque()
        self.free_servers = list(range(config.n_servers))
        heapq.heapify(self.free_servers)
        self.batches: list[BatchRecord] = []
        self.busy_time = 0.0

    def push(self, time: float, kind: int, payload) -> None:
        heapq.heappush(self.events, (time, kind, self._seq, payload))
        self._seq += 1

    def make_batch(self, bin_idx: int, members: list[Request], now: float) -> BatchRecord:
        batch = BatchRecord(
            id=len(self.batches),
            bin=bin_idx,
            members=[r.id for r in members],
            formed_time=now,
            service_time=max(r.true_service_time for r in members),
        )
        for r in members:
            r.batch_id = batch.id
        self.batches.append(batch)
        return batch

    def take_bin(self, bin_idx: int) -> list[Request]:
        members = self.bins[bin_idx]
        self.bins[bin_idx] = []
        self.bin_generation[bin_idx] += 1
        return members

    def enqueue(self, batch: BatchRecord, now: float) -> None:
        self.queue.append(batch)
        self.dispatch(now)

    def dispatch(self, now: float) -> None:
        while self.free_servers and self.queue:
            server = heapq.heappop(self.free_servers)
            batch = self.queue.popleft()
            batch.start_time = now
            batch.finish_time = now + batch.service_time
            self.busy_time += batch.service_time
            self.push(batch.finish_time, COMPLETE, (server, batch))

    def run(self, requests: list[Request]) -> None:
        cfg = self.cfg
        for r in requests:
            self.push(r.arrival_time, ARRIVAL, r)
        if cfg.flush_partial:
            self.push(requests[-1].arrival_time, FLUSH, None)

        by_id = requests
        while self.events:
            now, kind, _, payload = heapq.heappop(self.events)
            if kind == COMPLETE:
                server, batch = payload
                for rid in batch.members:
                    by_id[rid].completion_time = now
                heapq.heappush(self.free_servers, server)
                self.dispatch(now)
            elif kind == ARRIVAL:
                self._arrive(payload, now)
            elif kind == FORM:
                bin_idx, members, generation = payload
                if members is None:
                    # max_batch_wait timer: fire only if the same partial batch is still waiting
                    if generation != self.bin_generation[bin_idx] or not self.bins[bin_idx]:
                        continue
                    members = self.take_bin(bin_idx)
                self.enqueue(self.make_batch(bin_idx, members, now), now)
            elif kind == FLUSH:
                for bin_idx in range(1, self.k + 1):
                    if self.bins[bin_idx]:
                        self.enqueue(self.make_batch(bin_idx, self.take_bin(bin_idx), now), now)

    def _arrive(self, r: Request, now: float) -> None:
        cfg = self.cfg
        waiting = self.bins[r.predicted_bin]
        waiting.append(r)
        if len(waiting) == 1 and cfg.max_batch_wait is not None and cfg.B > 1:
            self.push(now + cfg.max_batch_wait, FORM, (r.predicted_bin, None, self.bin_generation[r.predicted_bin]))
        if len(waiting) == cfg.B:
            self.push(now, FORM, (r.predicted_bin, self.take_bin(r.predicted_bin), None))


def simulate(config: SimConfig) -> SimRun:
    """Run one simulation and keep the full request and batch logs."""
    config.validate()
    arrival_rng, service_rng, error_rng = _streams(config.seed)
    arrivals = _arrival_times(config, arrival_rng)
    services = _service_times(config, service_rng)
    error_u = error_rng.random(config.n_requests)

    k = config.bins.k
    requests = []
    for i in range(config.n_requests):
        length = float(services[i])
        try:
            true_bin = assign_bin(config.bins, length)
        except ValueError as exc:
            raise ValueError(f"request {i}: {exc}") from None
        predicted = predict_from_uniform(config.error_model, true_bin, k, float(error_u[i]))
        requests.append(Request(i, float(arrivals[i]), length, true_bin, predicted))

    engine = _Engine(config)
    engine.run(requests)
    return SimRun(config, _metrics(config, requests, engine), requests, engine.batches)


def run_simulation(config: SimConfig) -> SimMetrics:
    return simulate(config).metrics


def replay_trace(config: SimConfig, lengths: Sequence[float], cyclic: bool = False) -> SimMetrics:
    """Run the same engine with service times taken from ``lengths``."""
    return simulate(replace(config, service=TraceReplay(lengths, cyclic=cyclic))).metrics


def _metrics(config: SimConfig, requests: list[Request], engine: _Engine) -> SimMetrics:
    done = [r for r in requests if r.completion_time is not None]
    if not done:
        raise RuntimeError("no request completed; check B, n_requests and flush settings")
    latency = np.array([r.completion_time - r.arrival_time for r in done])
    first_arrival = requests[0].arrival_time
    makespan = max(r.completion_time for r in done) - first_arrival
    counts = [0] * config.bins.k
    served = [b for b in engine.batches if b.finish_time is not None]
    for b in served:
        counts[b.bin - 1] += 1
    busy = engine.busy_time / (config.n_servers * makespan) if makespan > 0 else 1.0
    return SimMetrics(
        throughput=len(done) / makespan,
        makespan=makespan,
        latency_mean=float(latency.mean()),
        latency_p50=float(np.percentile(latency, 50)),
        latency_p99=float(np.percentile(latency, 99)),
        per_bin_batch_counts=tuple(counts),
        server_busy_fraction=min(busy, 1.0),
        n_completed=len(done),
        mean_batch_service=float(np.mean([b.service_time for b in served])),
    )
