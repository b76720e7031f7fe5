import pytest

from routescout.bench import (
    OBJECTIVE_SETS,
    bench_delay,
    bench_loss,
    bench_solver,
    delay_workload,
    percentile,
    solver_instance,
)
from routescout.core import ACK, SYN


def test_percentile():
    assert percentile([], 70) == 0.0
    assert percentile([1, 2, 3, 4], 50) == 2.5


def test_delay_workload_shape():
    import random

    work = delay_workload(200, 0.5, 5.0, random.Random(1))
    syns = [p for p in work if p.flags == SYN]
    acks = [p for p in work if p.flags == ACK]
    assert [p.ts for p in work] == sorted(p.ts for p in work)
    assert 0.4 < len(acks) / len(syns) < 0.6
    first = {p.flow: p.ts for p in syns}
    assert all(10e6 <= a.ts - first[a.flow] <= 250e6 for a in acks)


def test_bench_delay_small_and_noise_free():
    res = bench_delay(4096, noise=0.0, rate=50, duration_s=3, seeds=range(2), bin_s=1.0)
    assert res.overall == [1.0, 1.0] and len(res.bins_s) == 3
    rows = list(res.rows())
    assert rows[0]["m"] == 4096 and rows[-1]["median"] == 1.0


def test_bench_delay_undersized_memory_degrades():
    small = bench_delay(64, rate=200, duration_s=3, seeds=range(2))
    big = bench_delay(8192, rate=200, duration_s=3, seeds=range(2))
    assert small.median < big.median


def test_bench_loss_lossless_has_zero_error():
    res = bench_loss(65536, 0.0, flows_per_s=200, duration_s=3)
    assert res.finished and res.p70() == 0.0 and max(e for _, e in res.finished) == 0.0


def test_bench_loss_reports_series():
    res = bench_loss(65536, 0.05, flows_per_s=200, duration_s=4)
    series = res.series(1.0)
    assert sum(n for *_, n in series) == len(res.finished)
    assert all(0 <= p70 <= 1 for _, p70, _, _ in series)


@pytest.mark.parametrize("bad", [dict(m=0, loss=0.1), dict(m=10, loss=1.0), dict(m=10, loss=0.1, flows_per_s=-1)])
def test_bench_loss_rejects_bad_parameters(bad):
    with pytest.raises(ValueError):
        bench_loss(**bad)


def test_solver_instance_shape():
    inp = solver_instance(3, ["moves"], prefixes=20, next_hops=3, slots=10)
    for p, d in inp.demands.items():
        assert d == 10 and sum(c for (q, _), c in inp.previous.items() if q == p) == 10
    assert sum(inp.capacities.values()) >= 1.25 * 200
    assert inp.previous == solver_instance(3, ["moves"], prefixes=20, next_hops=3, slots=10).previous


def test_bench_solver_small():
    res = bench_solver("combined", instances=2, prefixes=20, next_hops=3, slots=10)
    s = res.summary()
    assert s["instances"] == 2 and s["all_proven_optimal"] and s["p95_s"] >= s["p50_s"]
    with pytest.raises(ValueError):
        bench_solver("fastest")
    assert set(OBJECTIVE_SETS) == {"moves", "balance", "performance", "combined"}
