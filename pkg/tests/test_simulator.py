import json
import math
from dataclasses import replace

import numpy as np
import pytest

from multibin.analytics import expected_latency, throughput_k
from multibin.binning import BinConfig, Confusion, Perfect, Symmetric, uniform_boundaries
from multibin.service_models import Empirical, Exponential, Uniform, expected_max_uniform
from multibin.simulator import (
    OVERLOAD,
    SimConfig,
    TraceReplay,
    replay_trace,
    run_simulation,
    simulate,
)


def uniform_config(k=1, B=8, n=800, lam=OVERLOAD, servers=1, seed=0, **kw):
    return SimConfig(
        lam=lam, n_requests=n, B=B, bins=uniform_boundaries(k, 1, 20), service=Uniform(1, 20),
        n_servers=servers, seed=seed, **kw,
    )


def toy_config(lengths, bins, B=2):
    return SimConfig(lam=OVERLOAD, n_requests=len(lengths), B=B, bins=BinConfig(bins),
                     service=TraceReplay(lengths, cyclic=True))


# --- worked example: four requests of 1, 5, 2, 6 seconds, batch size 2


def test_worked_example_single_bin():
    run = simulate(toy_config([1, 5, 2, 6], [1, 6]))
    assert [b.members for b in run.batches] == [[0, 1], [2, 3]]
    assert run.metrics.makespan == 11.0


def test_worked_example_two_bins():
    run = simulate(toy_config([1, 5, 2, 6], [1, 3.5, 6]))
    assert sorted(sorted(b.members) for b in run.batches) == [[0, 2], [1, 3]]
    assert run.metrics.makespan == 8.0


def test_worked_example_via_replay_trace():
    base = toy_config([1, 5, 2, 6], [1, 6])
    assert replay_trace(base, [1, 5, 2, 6], cyclic=True).makespan == 11.0
    two = replace(base, bins=BinConfig([1, 3.5, 6]))
    assert replay_trace(two, [1, 5, 2, 6], cyclic=True).makespan == 8.0


def test_two_length_trace_busy_time_drops_with_bins():
    lengths = [1, 6, 1, 6]
    one = simulate(toy_config(lengths, [1, 6]))
    two = simulate(toy_config(lengths, [1, 3, 6]))
    busy_one = sum(b.service_time for b in one.batches)
    busy_two = sum(b.service_time for b in two.batches)
    assert (busy_one, busy_two) == (12.0, 7.0)


def test_constant_trace_has_no_batching_loss():
    for k, B, servers in ((1, 4, 1), (3, 8, 2), (5, 2, 3)):
        cfg = SimConfig(lam=OVERLOAD, n_requests=B * 60, B=B, bins=uniform_boundaries(k, 2.0, 3.0),
                        service=TraceReplay([2.5]), n_servers=servers)
        m = run_simulation(cfg)
        assert all(b.service_time == 2.5 for b in simulate(cfg).batches)
        assert m.throughput == pytest.approx(B * servers / 2.5)


# --- invariants


@pytest.mark.parametrize("k, servers, lam, err", [
    (1, 1, OVERLOAD, Perfect()),
    (3, 2, 0.5, Symmetric(0.2)),
    (4, 4, 2.0, Perfect()),
    (5, 1, 1.0, Symmetric(0.5)),
])
def test_conservation_and_batch_invariants(k, servers, lam, err):
    cfg = uniform_config(k=k, B=8, n=1003, lam=lam, servers=servers, error_model=err, seed=42)
    run = simulate(cfg)
    ids = sorted(rid for b in run.batches for rid in b.members)
    assert ids == list(range(cfg.n_requests))
    assert run.metrics.n_completed == cfg.n_requests
    by_id = run.requests
    for b in run.batches:
        assert len(b.members) <= cfg.B
        assert b.formed_time <= b.start_time <= b.finish_time
        assert b.service_time == max(by_id[r].true_service_time for r in b.members)
        assert b.finish_time == b.start_time + b.service_time
        assert all(by_id[r].predicted_bin == b.bin for r in b.members)
        for r in b.members:
            assert by_id[r].completion_time == b.finish_time >= by_id[r].arrival_time
    # only flush batches may be short, and at most one per bin
    short = [b for b in run.batches if len(b.members) < cfg.B]
    assert len(short) == len({b.bin for b in short}) <= k


def test_without_flush_partial_requests_stay_unserved():
    cfg = uniform_config(k=3, B=8, n=1003, flush_partial=False)
    run = simulate(cfg)
    assert all(len(b.members) == 8 for b in run.batches)
    assert run.metrics.n_completed == sum(len(b.members) for b in run.batches) < 1003


def test_perfect_predictions_keep_members_inside_their_bin():
    cfg = uniform_config(k=6, B=16, n=2000, lam=3.0, seed=5)
    run = simulate(cfg)
    for b in run.batches:
        lo, hi = cfg.bins.interval(b.bin)
        for r in b.members:
            t = run.requests[r].true_service_time
            assert lo <= t < hi or (b.bin == cfg.bins.k and t == hi)


def test_symmetric_errors_stay_adjacent():
    run = simulate(uniform_config(k=8, B=8, n=4000, error_model=Symmetric(0.5), seed=3))
    diffs = {r.predicted_bin - r.true_bin for r in run.requests}
    assert diffs <= {-1, 0, 1} and {-1, 1} <= diffs


def test_confusion_error_model_runs():
    cm = Confusion([[0.8, 0.2, 0.0], [0.1, 0.8, 0.1], [0.0, 0.2, 0.8]])
    run = simulate(uniform_config(k=3, B=8, n=3000, error_model=cm, seed=8))
    moved = np.mean([r.predicted_bin != r.true_bin for r in run.requests])
    assert abs(moved - (0.2 + 0.2 + 0.2) / 3) < 0.03


def test_single_server_serves_in_formation_order_without_idling():
    run = simulate(uniform_config(k=4, B=8, n=2000, seed=11))
    starts = sorted(run.batches, key=lambda b: b.start_time)
    formed = [b.formed_time for b in starts]
    assert formed == sorted(formed)
    assert [b.id for b in starts] == sorted(b.id for b in starts)
    # overload: the next batch starts the instant the previous one finishes
    for prev, nxt in zip(starts, starts[1:]):
        assert nxt.start_time == prev.finish_time
    assert run.metrics.server_busy_fraction == pytest.approx(1.0)


def test_work_conservation_with_queueing():
    run = simulate(uniform_config(k=2, B=4, n=3000, lam=0.9, servers=2, seed=4))
    events = sorted((b.start_time, b.finish_time) for b in run.batches)
    # whenever a batch waited, every server must have been busy at its formation time
    for b in run.batches:
        if b.start_time > b.formed_time:
            t = b.formed_time
            busy = sum(1 for s, f in events if s <= t < f)
            assert busy == 2


def test_determinism():
    cfg = uniform_config(k=3, B=8, n=1500, lam=2.0, servers=2, error_model=Symmetric(0.1), seed=99)
    a, b = simulate(cfg), simulate(cfg)
    assert a.metrics == b.metrics
    assert [(r.arrival_time, r.completion_time) for r in a.requests] == \
           [(r.arrival_time, r.completion_time) for r in b.requests]
    assert run_simulation(replace(cfg, seed=100)) != a.metrics


def test_error_model_does_not_perturb_arrivals_or_service():
    base = uniform_config(k=4, B=8, n=500, lam=1.5, seed=21)
    a = simulate(base)
    b = simulate(replace(base, error_model=Symmetric(0.3)))
    assert [(r.arrival_time, r.true_service_time) for r in a.requests] == \
           [(r.arrival_time, r.true_service_time) for r in b.requests]


def test_jsonl_records(tmp_path):
    run = simulate(uniform_config(k=2, B=4, n=40, lam=1.0, seed=1))
    path = tmp_path / "records.jsonl"
    run.write_jsonl(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 40
    first = json.loads(lines[0])
    assert set(first) == {"id", "arrival", "service_time", "true_bin", "predicted_bin", "batch_id", "start", "finish"}
    for line in lines:
        rec = json.loads(line)
        batch = run.batches[rec["batch_id"]]
        assert rec["finish"] == batch.finish_time and rec["id"] in batch.members


def test_poisson_arrivals():
    lam = 4.0
    run = simulate(uniform_config(k=1, B=8, n=20_000, lam=lam, servers=50, seed=2))
    gaps = np.diff([0.0] + [r.arrival_time for r in run.requests])
    assert abs(gaps.mean() - 1 / lam) < 4 * gaps.std() / math.sqrt(gaps.size)
    # exponential gaps: coefficient of variation near 1
    assert abs(gaps.std() / gaps.mean() - 1) < 0.03


def test_max_batch_wait_dispatches_partial_batches():
    cfg = uniform_config(k=2, B=50, n=200, lam=1.0, servers=10, seed=6, max_batch_wait=5.0, flush_partial=False)
    run = simulate(cfg)
    assert run.metrics.n_completed == 200 or run.metrics.n_completed > 190
    for b in run.batches:
        oldest = min(run.requests[r].arrival_time for r in b.members)
        assert b.formed_time - oldest <= 5.0 + 1e-9
    assert any(len(b.members) < 50 for b in run.batches)


def test_max_batch_wait_not_triggered_by_stale_timer():
    # full batches form well before the timer; the stale timer must not emit an empty batch
    cfg = uniform_config(k=1, B=4, n=400, lam=100.0, servers=4, seed=6, max_batch_wait=1.0)
    run = simulate(cfg)
    assert all(len(b.members) >= 1 for b in run.batches)
    assert sum(len(b.members) for b in run.batches) == 400


def test_b1_serial_service_rate():
    cfg = uniform_config(k=1, B=1, n=10_000, lam=1e6, seed=3)
    assert run_simulation(cfg).throughput == pytest.approx(1 / 10.5, rel=0.02)


def test_k1_mean_batch_service_matches_order_statistic():
    run = simulate(uniform_config(k=1, B=32, n=32 * 1500, seed=12))
    times = np.array([b.service_time for b in run.batches])
    se = times.std(ddof=1) / math.sqrt(times.size)
    assert abs(times.mean() - expected_max_uniform(32, 1, 20)) < 3 * se


def test_overload_throughput_tracks_formula():
    for k in (1, 3):
        cfg = uniform_config(k=k, B=128, n=12_800, flush_partial=False, seed=k)
        assert run_simulation(cfg).throughput == pytest.approx(throughput_k(128, k, 1, 20), rel=0.03)


def test_low_load_latency_tracks_formula():
    cfg = uniform_config(k=2, B=32, n=6400, lam=4.0, servers=64, seed=13)
    assert run_simulation(cfg).latency_mean == pytest.approx(expected_latency(32, 2, 1, 20, 4.0), rel=0.05)


def test_latency_at_least_service_time():
    run = simulate(uniform_config(k=3, B=8, n=2000, lam=2.0, servers=3, seed=14))
    mean_service = np.mean([r.true_service_time for r in run.requests])
    assert run.metrics.latency_mean >= mean_service
    assert run.metrics.latency_p50 <= run.metrics.latency_p99


def test_per_bin_batch_counts():
    m = run_simulation(uniform_config(k=4, B=10, n=4000, seed=15))
    assert len(m.per_bin_batch_counts) == 4 and sum(m.per_bin_batch_counts) >= 400


def test_exponential_service_runs():
    from multibin.binning import exponential_boundaries

    cfg = SimConfig(lam=OVERLOAD, n_requests=2000, B=20, bins=exponential_boundaries(3, 0.5, 20),
                    service=Exponential(0.5), seed=2)
    assert run_simulation(cfg).throughput > 0


def test_sampled_trace_replay():
    lengths = [1.0, 2.0, 4.0, 8.0]
    cfg = SimConfig(lam=OVERLOAD, n_requests=400, B=4, bins=BinConfig([1, 3, 8]), service=Empirical(lengths), seed=1)
    run = simulate(replace(cfg, service=TraceReplay(lengths, cyclic=False)))
    assert {r.true_service_time for r in run.requests} == set(lengths)


def test_rejects_invalid_configs():
    with pytest.raises(ValueError):
        run_simulation(uniform_config(n=4, B=8))
    with pytest.raises(ValueError):
        run_simulation(uniform_config(lam=0.0))
    with pytest.raises(ValueError):
        run_simulation(uniform_config(servers=0))
    with pytest.raises(ValueError):
        run_simulation(uniform_config(k=3, error_model=Confusion([[1, 0], [0, 1]])))
    with pytest.raises(ValueError):
        TraceReplay([])


def test_service_time_outside_bins_is_an_error():
    cfg = SimConfig(lam=OVERLOAD, n_requests=8, B=2, bins=BinConfig([1, 5]), service=TraceReplay([2, 7]))
    with pytest.raises(ValueError, match="request 1"):
        run_simulation(cfg)
