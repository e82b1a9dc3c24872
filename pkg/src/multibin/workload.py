"""Request-length traces and the linear token-count to service-time model."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class TraceError(ValueError):
    """Malformed trace file; the message names the offending line."""


@dataclass(frozen=True)
class TraceEntry:
    id: str
    token_count: int
    measured_time: Optional[float] = None


@dataclass(frozen=True)
class Trace:
    entries: tuple

    def __init__(self, entries: Sequence[TraceEntry]):
        entries = tuple(entries)
        for e in entries:
            if e.token_count < 1:
                raise TraceError(f"entry {e.id}: token_count must be >= 1, got {e.token_count}")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    @property
    def token_counts(self) -> np.ndarray:
        return np.array([e.token_count for e in self.entries], dtype=float)


@dataclass(frozen=True)
class LinearTimeModel:
    slope: float
    intercept: float = 0.0

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"slope must be positive, got {self.slope}")
        if self.intercept < 0:
            raise ValueError(f"intercept must be non-negative, got {self.intercept}")

    def to_json(self) -> str:
        return json.dumps({"slope": self.slope, "intercept": self.intercept})

    @classmethod
    def from_json(cls, text: str) -> "LinearTimeModel":
        d = json.loads(text)
        return cls(float(d["slope"]), float(d["intercept"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "LinearTimeModel":
        return cls.from_json(Path(path).read_text())


def _parse_token_count(raw, where: str) -> int:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise TraceError(f"{where}: token_count {raw!r} is not a number") from None
    if value != int(value):
        raise TraceError(f"{where}: token_count {raw!r} is not an integer")
    if value < 1:
        raise TraceError(f"{where}: token_count must be >= 1, got {raw!r}")
    return int(value)


def _parse_time(raw, where: str) -> Optional[float]:
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return None
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise TraceError(f"{where}: measured_time {raw!r} is not a number") from None


def load_trace(path, format: Optional[str] = None) -> Trace:
    """Load a CSV (``id,token_count[,measured_time]``) or JSON-lines trace.

    The format is inferred from the file suffix when not given. A CSV
    header row is allowed. Errors carry ``path:line`` (and column for CSV).
    """
    path = Path(path)
    fmt = (format or ("jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv")).lower()
    text = path.read_text()
    if not text.strip():
        raise TraceError(f"{path}: trace file is empty")
    if fmt == "csv":
        entries = _read_csv(path, text)
    elif fmt == "jsonl":
        entries = _read_jsonl(path, text)
    else:
        raise ValueError(f"unknown trace format {format!r}; expected csv or jsonl")
    if not entries:
        raise TraceError(f"{path}: trace has no entries")
    return Trace(entries)


def _read_csv(path: Path, text: str) -> list[TraceEntry]:
    entries = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        row = [c.strip() for c in row]
        if lineno == 1 and row[0].lower() == "id":
            continue
        if len(row) not in (2, 3):
            raise TraceError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(row)}")
        tokens = _parse_token_count(row[1], f"{path}:{lineno}:col 2")
        measured = _parse_time(row[2], f"{path}:{lineno}:col 3") if len(row) == 3 else None
        entries.append(TraceEntry(row[0], tokens, measured))
    return entries


def _read_jsonl(path: Path, text: str) -> list[TraceEntry]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"{path}:{lineno}:col {exc.colno}: {exc.msg}") from None
        if "token_count" not in obj:
            raise TraceError(f"{path}:{lineno}: missing token_count")
        tokens = _parse_token_count(obj["token_count"], f"{path}:{lineno}")
        measured = _parse_time(obj.get("measured_time"), f"{path}:{lineno}")
        entries.append(TraceEntry(str(obj.get("id", lineno)), tokens, measured))
    return entries


def fit_linear_model(trace: Trace) -> LinearTimeModel:
    """Ordinary least squares of measured time on token count."""
    points = [(e.token_count, e.measured_time) for e in trace.entries if e.measured_time is not None]
    if len(points) < 2:
        raise ValueError(f"need at least 2 entries with measured_time, got {len(points)}")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if np.unique(x).size < 2:
        raise ValueError("all token counts are equal; slope is undetermined")
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    intercept = float(y.mean() - slope * x.mean())
    # exact-line fits can land a hair below zero
    if -1e-12 < intercept < 0:
        intercept = 0.0
    return LinearTimeModel(slope, intercept)


def tokens_to_time(model: LinearTimeModel, tokens):
    """Service time for ``tokens`` generated tokens; accepts scalars or arrays."""
    arr = np.asarray(tokens)
    if (arr < 1).any():
        raise ValueError(f"token count must be >= 1, got {tokens!r}")
    out = model.slope * arr + model.intercept
    return float(out) if out.ndim == 0 else out


def trace_service_times(trace: Trace, model: LinearTimeModel) -> np.ndarray:
    return np.asarray(tokens_to_time(model, trace.token_counts), dtype=float)


def synthetic_long_tail_tokens(n: int, rng: np.random.Generator, median: float = 180.0,
                               sigma: float = 0.8, max_tokens: int = 1024) -> np.ndarray:
    """Lognormal token counts clipped to ``[1, max_tokens]``, a stand-in for chat answer lengths."""
    raw = rng.lognormal(mean=np.log(median), sigma=sigma, size=n)
    return np.clip(np.rint(raw), 1, max_tokens).astype(int)
