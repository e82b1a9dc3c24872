"""Parameter sweeps over simulation configs, with analytic predictions alongside."""

from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analytics
from .binning import Confusion, Perfect, Symmetric, boundaries_for, load_confusion_matrix
from .service_models import Empirical, Exponential, Uniform, mean
from .simulator import SimConfig, run_simulation
from .workload import (
    LinearTimeModel,
    load_trace,
    synthetic_long_tail_tokens,
    tokens_to_time,
    trace_service_times,
)

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("lambda", "k", "B", "p_e", "n_servers")

COLUMNS = [
    "experiment", "lambda", "k", "B", "p_e", "n_servers", "n_requests", "replications",
    "throughput_mean", "throughput_std", "latency_mean", "latency_mean_std",
    "latency_p50", "latency_p99", "server_busy_fraction", "mean_batch_service",
    "analytic_throughput", "analytic_latency", "c_max", "analytic_kind",
]
RAW_COLUMNS = [
    "experiment", "lambda", "k", "B", "p_e", "n_servers", "n_requests", "seed",
    "throughput", "latency_mean", "latency_p50", "latency_p99", "server_busy_fraction",
    "mean_batch_service",
]

DESK_REQUESTS = 12_800


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    name: str
    base: dict
    axes: list = field(default_factory=list)  # [(param, [values...]), ...]
    replications: int = 10
    seed: int = 0
    output: Optional[str] = None

    def __post_init__(self):
        self.axes = [(str(p), list(v)) for p, v in self.axes]
        if len(self.axes) > 2:
            raise SpecError(f"at most 2 sweep axes are allowed, got {len(self.axes)}")
        for param, values in self.axes:
            if param not in SWEEP_PARAMS:
                raise SpecError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
            if not values:
                raise SpecError(f"sweep axis {param!r} has no values")
        if self.replications < 1:
            raise SpecError(f"replications must be >= 1, got {self.replications}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        axes = d.get("axes", [])
        if isinstance(axes, dict):
            axes = list(axes.items())
        else:
            axes = [(a["param"], a["values"]) if isinstance(a, dict) else tuple(a) for a in axes]
        return cls(
            name=d.get("name", "experiment"),
            base=dict(d.get("base", {})),
            axes=axes,
            replications=int(d.get("replications", 10)),
            seed=int(d.get("seed", 0)),
            output=d.get("output"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def points(self) -> list[dict]:
        """Sweep points in sorted axis order (first axis varies slowest)."""
        names = [p for p, _ in self.axes]
        grids = [sorted(v, key=_sort_key) for _, v in self.axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*grids)]


def _sort_key(v):
    return math.inf if _is_inf(v) else float(v)


def _is_inf(v) -> bool:
    return isinstance(v, str) and v.lower() in ("inf", "infinity", "overload") or v == math.inf


def parse_lambda(v) -> float:
    return math.inf if _is_inf(v) else float(v)


def _fmt_lambda(lam: float):
    return "inf" if math.isinf(lam) else lam


# ---------------------------------------------------------------------------
# Building configs from plain dicts


def build_service(spec: dict, base_dir: Path = Path(".")):
    kind = spec.get("type", "uniform").lower()
    if kind == "uniform":
        return Uniform(float(spec["l_min"]), float(spec["l_max"]))
    if kind == "exponential":
        return Exponential(float(spec["mu"]))
    if kind == "trace":
        trace = load_trace(base_dir / spec["path"], spec.get("format"))
        model = LinearTimeModel(float(spec.get("slope", 1.0)), float(spec.get("intercept", 0.0)))
        return Empirical(trace_service_times(trace, model))
    if kind == "empirical":
        return Empirical(spec["samples"])
    if kind == "synthetic":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        tokens = synthetic_long_tail_tokens(
            int(spec.get("n", 5000)), rng, float(spec.get("median", 180)), float(spec.get("sigma", 0.8))
        )
        model = LinearTimeModel(float(spec.get("slope", 0.03)), float(spec.get("intercept", 0.5)))
        return Empirical(tokens_to_time(model, tokens))
    raise SpecError(f"unknown service type {kind!r}")


def build_error_model(spec: Optional[dict], p_e=None, base_dir: Path = Path(".")):
    if p_e is not None:
        return Symmetric(float(p_e)) if float(p_e) > 0 else Perfect()
    if not spec:
        return Perfect()
    kind = spec.get("type", "perfect").lower()
    if kind == "perfect":
        return Perfect()
    if kind == "symmetric":
        return Symmetric(float(spec["p_e"]))
    if kind == "confusion":
        if "path" in spec:
            return load_confusion_matrix(base_dir / spec["path"])
        return Confusion(spec["matrix"])
    raise SpecError(f"unknown error model {kind!r}")


def resolve_params(base: dict, point: dict) -> dict:
    params = copy.deepcopy(base)
    params.update(point)
    params.setdefault("lambda", "inf")
    params.setdefault("n_requests", DESK_REQUESTS)
    params.setdefault("B", 128)
    params.setdefault("k", 1)
    params.setdefault("n_servers", 1)
    params.setdefault("service", {"type": "uniform", "l_min": 1, "l_max": 20})
    return params


def build_sim_config(params: dict, seed: int, base_dir: Path = Path(".")) -> SimConfig:
    dist = build_service(params["service"], base_dir)
    B, k = int(params["B"]), int(params["k"])
    return SimConfig(
        lam=parse_lambda(params["lambda"]),
        n_requests=int(params["n_requests"]),
        B=B,
        bins=boundaries_for(dist, k, B),
        service=dist,
        error_model=build_error_model(params.get("error"), params.get("p_e"), base_dir),
        n_servers=int(params["n_servers"]),
        seed=seed,
        flush_partial=bool(params.get("flush_partial", True)),
        max_batch_wait=params.get("max_batch_wait"),
    )


def point_seed(master: int, point: dict, replication: int) -> int:
    """Seed that depends only on the master seed, the point's parameters and the replication."""
    tag = zlib.crc32(json.dumps(point, sort_keys=True, default=str).encode())
    return int(np.random.SeedSequence([master, tag, replication]).generate_state(1)[0])


def analytic_columns(params: dict, dist) -> dict:
    """Formula predictions for one sweep point, blank where no formula applies.

    Both predictions assume perfect binning, so points with prediction errors get
    blanks. Throughput is capped by the arrival rate. The latency formula ignores
    waiting for a server, so it is only reported for a stable system.
    """
    B, k, servers = int(params["B"]), int(params["k"]), int(params.get("n_servers", 1))
    lam = parse_lambda(params["lambda"])
    out = {"analytic_throughput": "", "analytic_latency": "", "c_max": B / mean(dist), "analytic_kind": ""}
    if float(params.get("p_e") or 0) > 0 or params.get("error"):
        return out
    if isinstance(dist, Uniform):
        capacity = servers * analytics.throughput_k(B, k, dist.l_min, dist.l_max)
        out["analytic_throughput"] = min(lam, capacity)
        if lam < capacity:
            out["analytic_latency"] = analytics.expected_latency(B, k, dist.l_min, dist.l_max, lam)
        out["analytic_kind"] = "exact"
    elif isinstance(dist, Exponential) and math.isinf(lam):
        # lower bound on throughput, not an exact prediction
        out["analytic_throughput"] = servers * analytics.exp_throughput_lower_bound(B, k, dist.mu)
        out["analytic_kind"] = "lower_bound"
    return out


# ---------------------------------------------------------------------------
# Running


def _run_one(task):
    params, seed, base_dir = task
    cfg = build_sim_config(params, seed, Path(base_dir))
    return run_simulation(cfg)


def run_experiment(spec: ExperimentSpec, workers: int = 1, base_dir=".",
                   raw_rows: Optional[list] = None) -> list[dict]:
    """One aggregated row per sweep point; per-seed rows go to ``raw_rows`` when given."""
    points = spec.points()
    tasks, meta = [], []
    for point in points:
        params = resolve_params(spec.base, point)
        for rep in range(spec.replications):
            seed = point_seed(spec.seed, point, rep)
            tasks.append((params, seed, str(base_dir)))
            meta.append((point, params, seed))

    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
        else:
            results = [_run_one(t) for t in tasks]
    except Exception as exc:
        raise RuntimeError(f"experiment {spec.name!r} failed: {exc}") from exc

    rows = []
    for idx, point in enumerate(points):
        chunk = results[idx * spec.replications:(idx + 1) * spec.replications]
        params = meta[idx * spec.replications][1]
        dist = build_service(params["service"], Path(base_dir))
        thr = np.array([m.throughput for m in chunk])
        lat = np.array([m.latency_mean for m in chunk])
        row = {
            "experiment": spec.name,
            "lambda": _fmt_lambda(parse_lambda(params["lambda"])),
            "k": int(params["k"]),
            "B": int(params["B"]),
            "p_e": params.get("p_e", (params.get("error") or {}).get("p_e", 0.0)),
            "n_servers": int(params["n_servers"]),
            "n_requests": int(params["n_requests"]),
            "replications": spec.replications,
            "throughput_mean": float(thr.mean()),
            "throughput_std": float(thr.std(ddof=1)) if thr.size > 1 else 0.0,
            "latency_mean": float(lat.mean()),
            "latency_mean_std": float(lat.std(ddof=1)) if lat.size > 1 else 0.0,
            "latency_p50": float(np.mean([m.latency_p50 for m in chunk])),
            "latency_p99": float(np.mean([m.latency_p99 for m in chunk])),
            "server_busy_fraction": float(np.mean([m.server_busy_fraction for m in chunk])),
            "mean_batch_service": float(np.mean([m.mean_batch_service for m in chunk])),
        }
        row.update(analytic_columns(params, dist))
        rows.append(row)
        if raw_rows is not None:
            seeds = [meta[idx * spec.replications + r][2] for r in range(spec.replications)]
            for seed, m in sorted(zip(seeds, chunk), key=lambda t: t[0]):
                raw_rows.append({
                    **{c: row[c] for c in ("experiment", "lambda", "k", "B", "p_e", "n_servers", "n_requests")},
                    "seed": seed, "throughput": m.throughput, "latency_mean": m.latency_mean,
                    "latency_p50": m.latency_p50, "latency_p99": m.latency_p99,
                    "server_busy_fraction": m.server_busy_fraction,
                    "mean_batch_service": m.mean_batch_service,
                })
        log.info("%s %s: throughput %.4f", spec.name, point, row["throughput_mean"])
    return rows


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(rows: list[dict], path, columns=COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: _fmt(row.get(c, "")) for c in columns})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Oracle comparison

METRICS = {
    "throughput": ("throughput_mean", "analytic_throughput"),
    "latency": ("latency_mean", "analytic_latency"),
}


@dataclass
class ComparisonRow:
    index: int
    params: dict
    measured: float
    analytic: float
    rel_error: float
    passed: bool


@dataclass
class ComparisonReport:
    metric: str
    tolerance: float
    rows: list
    skipped: int

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 2

    def format(self) -> str:
        lines = [f"{'row':>4}  {'params':<48} {'measured':>12} {'analytic':>12} {'rel_err':>9}  result"]
        for r in self.rows:
            p = ", ".join(f"{k}={v}" for k, v in r.params.items())
            lines.append(
                f"{r.index:>4}  {p:<48} {r.measured:>12.5g} {r.analytic:>12.5g} {r.rel_error:>9.4f}  "
                + ("PASS" if r.passed else "FAIL")
            )
        n_fail = sum(not r.passed for r in self.rows)
        lines.append(
            f"{self.metric}: {len(self.rows) - n_fail}/{len(self.rows)} rows within {self.tolerance:g}"
            + (f", {self.skipped} without an analytic value skipped" if self.skipped else "")
        )
        return "\n".join(lines)


def compare(rows: list[dict], metric: str = "throughput", tolerance: float = 0.02) -> ComparisonReport:
    """Relative error of each measured value against its analytic prediction.

    Rows whose ``analytic_kind`` is ``lower_bound`` pass when the measured value
    is no more than ``tolerance`` (relative) below the bound.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    measured_col, analytic_col = METRICS[metric]
    if rows:
        missing = [c for c in (measured_col, analytic_col) if c not in rows[0]]
        if missing:
            raise ValueError(f"results table lacks column(s): {', '.join(missing)}")
    out, skipped = [], 0
    for i, row in enumerate(rows):
        analytic = row[analytic_col]
        if analytic in ("", None):
            skipped += 1
            continue
        measured, analytic = float(row[measured_col]), float(analytic)
        err = abs(measured - analytic) / abs(analytic)
        if row.get("analytic_kind") == "lower_bound":
            passed = measured >= analytic * (1 - tolerance)
        else:
            passed = err < tolerance
        params = {p: row[p] for p in ("lambda", "k", "B", "p_e", "n_servers") if p in row}
        out.append(ComparisonRow(i, params, measured, analytic, err, passed))
    return ComparisonReport(metric, tolerance, out, skipped)


# ---------------------------------------------------------------------------
# Desk-scale versions of the published experiments

UNIFORM_1_20 = {"type": "uniform", "l_min": 1, "l_max": 20}

# The all-at-once presets leave partial batches unserved at the end of a run: each
# flushed batch costs a full batch time and biases throughput low by about k*B/(2n).
# With Poisson arrivals the leftovers instead go missing from the completed count.
# fig3 keeps the flush for its latency rows; fig10 drops it because its only
# analytic value is the all-at-once bound, and its top bin forms so few batches
# that one flushed batch moves throughput by about 2%.
PRESETS = {
    "fig3": {
        "name": "fig3",
        "base": {"B": 128, "service": UNIFORM_1_20, "n_servers": 1},
        "axes": [["k", [1, 2, 3, 4, 5]], ["lambda", [2, 4, 6, 8, 10, 12, 14, "inf"]]],
        "replications": 10,
    },
    "fig4": {
        "name": "fig4",
        "base": {"B": 128, "service": UNIFORM_1_20, "n_servers": 64},
        "axes": [["k", [1, 2, 3]], ["lambda", [1, 2, 5, 10, 20]]],
        "replications": 10,
    },
    "fig7": {
        "name": "fig7",
        "base": {"B": 8, "lambda": "inf", "n_servers": 1, "flush_partial": False,
                 "service": {"type": "synthetic", "n": 5000, "seed": 7, "slope": 0.03, "intercept": 0.5}},
        "axes": [["k", [1, 2, 4, 8, 16, 32]]],
        "replications": 10,
    },
    "fig9": {
        "name": "fig9",
        "base": {"B": 128, "lambda": "inf", "service": UNIFORM_1_20, "n_servers": 1, "flush_partial": False},
        "axes": [["k", [2, 4, 8]], ["p_e", [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]]],
        "replications": 10,
    },
    "fig10": {
        "name": "fig10",
        "base": {"B": 200, "n_requests": 20_000, "service": {"type": "exponential", "mu": 0.1}, "n_servers": 1,
                 "flush_partial": False},
        "axes": [["k", [1, 2, 3]], ["lambda", [0.5, 1, 1.5, 2, "inf"]]],
        "replications": 10,
    },
}
