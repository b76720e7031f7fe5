import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from routescout.selector import (
    K,
    ConfigError,
    ConsistencyError,
    ForwardingRule,
    HashRange,
    MonitoringRule,
    RuleTable,
    Selector,
    SlotPlan,
    TableCorruption,
    compile_rules,
    hash_point,
    partition_slots,
)

from helpers import random_flow


def fig_table():
    # three forwarding and three monitoring rules for prefX over a 0..100 domain;
    # 30% of the range goes to port 4 and a third of that is monitored into index 1
    fwd = [
        ForwardingRule("prefX", HashRange(0, 30), "4"),
        ForwardingRule("prefX", HashRange(30, 60), "2"),
        ForwardingRule("prefX", HashRange(60, 100), "3"),
    ]
    mon = [
        MonitoringRule("prefX", HashRange(0, 10), 1),
        MonitoringRule("prefX", HashRange(30, 40), 2),
        MonitoringRule("prefX", HashRange(60, 70), 3),
    ]
    return RuleTable(fwd, mon, domain=100)


def test_select_monitored_and_unmonitored_points():
    t = fig_table()
    assert t.select("prefX", 5) == ("4", 1)
    assert t.select("prefX", 20) == ("4", None)
    assert t.select("prefX", 99) == ("3", None)
    assert t.index_map() == {1: ("prefX", "4"), 2: ("prefX", "2"), 3: ("prefX", "3")}


def test_same_rules_from_compiler():
    plan = SlotPlan({"prefX": 10}, domain=100)
    c = compile_rules(
        plan, {("prefX", "4"): 3, ("prefX", "2"): 3, ("prefX", "3"): 4}, [("prefX", n, 1) for n in "423"], ["4", "2", "3"], first_agg_index=1
    )
    ref = fig_table()
    assert c.forwarding == list(ref.forwarding) and c.monitoring == list(ref.monitoring)


def test_withdrawn_next_hop_is_absorbed():
    plan = SlotPlan({"prefX": 10}, domain=100)
    c = compile_rules(plan, {("prefX", "2"): 6, ("prefX", "3"): 4}, [("prefX", "2", 1), ("prefX", "3", 1)], ["4", "2", "3"])
    assert c.forwarding[0] == ForwardingRule("prefX", HashRange(0, 60), "2")
    assert all(r.next_hop != "4" for r in c.forwarding)
    t = c.table(100)
    assert t.select("prefX", 5)[0] == "2"


def test_single_rule_covers_domain():
    t = RuleTable([ForwardingRule("p", HashRange(0, K), "n")])
    rng = random.Random(0)
    assert all(t.select("p", rng.randrange(K)) == ("n", None) for _ in range(100))
    c = compile_rules(SlotPlan({"p": 16}), {("p", "n"): 16})
    assert c.forwarding == [ForwardingRule("p", HashRange(0, K), "n")]


@pytest.mark.parametrize(
    "fwd,msg",
    [
        ([(0, 40, "a"), (50, 100, "b")], "gap"),
        ([(0, 60, "a"), (50, 100, "b")], "overlap"),
        ([(0, 60, "a")], "stop"),
        ([(0, 0, "a"), (0, 100, "b")], "bad range"),
    ],
)
def test_table_corruption(fwd, msg):
    with pytest.raises(TableCorruption, match=msg):
        RuleTable([ForwardingRule("p", HashRange(lo, hi), n) for lo, hi, n in fwd], domain=100)


def test_monitoring_invariants():
    fwd = [ForwardingRule("p", HashRange(0, 50), "a"), ForwardingRule("p", HashRange(50, 100), "b")]
    with pytest.raises(TableCorruption, match="spans"):
        RuleTable(fwd, [MonitoringRule("p", HashRange(40, 60), 0)], domain=100)
    with pytest.raises(TableCorruption, match="twice"):
        RuleTable(fwd, [MonitoringRule("p", HashRange(0, 5), 0), MonitoringRule("p", HashRange(50, 55), 0)], domain=100)
    with pytest.raises(TableCorruption, match="unrouted"):
        RuleTable(fwd, [MonitoringRule("q", HashRange(0, 5), 0)], domain=100)


def test_unknown_prefix_is_corruption():
    with pytest.raises(TableCorruption):
        fig_table().select("other", 1)


def test_document_round_trip():
    t = fig_table()
    again = RuleTable.from_document(t.to_document())
    assert again.forwarding == t.forwarding and again.monitoring == t.monitoring and again.domain == 100
    with pytest.raises(ConfigError):
        RuleTable.from_document({"forwarding": [{"prefix": "p"}]})


def test_partition_examples():
    assert partition_slots({"ASC": 100e9, "ASD": 200e9}, 3000).counts == {"ASC": 1000, "ASD": 2000}
    assert partition_slots({"only": 5}, 16).counts == {"only": 16}
    assert partition_slots({"a": 1, "b": 1, "c": 1}, 10).counts == {"a": 4, "b": 3, "c": 3}
    # tiny demand still gets a slot
    assert partition_slots({"big": 1000, "tiny": 1}, 4).counts == {"big": 3, "tiny": 1}


def test_partition_errors():
    with pytest.raises(ConfigError):
        partition_slots({"a": 1, "b": 1}, 1)
    with pytest.raises(ConfigError):
        partition_slots({"a": 0}, 3)


def apportion_oracle(demands, total):
    """Hamilton method on exact rationals, ties to earlier names."""
    from fractions import Fraction

    s = sum(Fraction(v) for v in demands.values())
    q = {p: Fraction(v) * total / s for p, v in demands.items()}
    base = {p: int(x) for p, x in q.items()}
    rest = total - sum(base.values())
    names = list(demands)
    for p in sorted(names, key=lambda p: (-(q[p] - base[p]), names.index(p)))[:rest]:
        base[p] += 1
    return base


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=1, max_size=8), st.integers(0, 500))
def test_partition_matches_hamilton(demands, extra):
    d = {f"p{i}": v for i, v in enumerate(demands)}
    total = len(d) + extra
    got = partition_slots(d, total).counts
    assert sum(got.values()) == total and min(got.values()) >= 1
    want = apportion_oracle(d, total)
    if min(want.values()) >= 1:
        assert got == want


def test_slot_plan_remainder_goes_to_last_slot():
    plan = SlotPlan({"p": 3}, domain=100)
    assert [plan.slot_range("p", j) for j in range(3)] == [HashRange(0, 33), HashRange(33, 66), HashRange(66, 100)]
    assert plan.slot_of("p", 99) == 2
    with pytest.raises(ConfigError):
        SlotPlan({"p": 0})


def test_compile_errors():
    plan = SlotPlan({"p": 4})
    with pytest.raises(ConsistencyError, match="plan has"):
        compile_rules(plan, {("p", "a"): 3})
    with pytest.raises(ConsistencyError, match="exceed"):
        compile_rules(plan, {("p", "a"): 4}, [("p", "a", 5)])
    with pytest.raises(ConsistencyError, match="unknown prefix"):
        compile_rules(plan, {("p", "a"): 4, ("q", "a"): 1})
    with pytest.raises(ConsistencyError, match="aggregator index"):
        compile_rules(plan, {("p", "a"): 4}, [("p", "a", 1)], agg_index_of={})


allocs = st.lists(st.integers(0, 40), min_size=1, max_size=4).filter(lambda xs: sum(xs) > 0)


@settings(max_examples=80, deadline=None)
@given(st.lists(allocs, min_size=1, max_size=4), st.integers(0, 2**16))
def test_compiled_tables_cover_and_contain(per_prefix, seed):
    rng = random.Random(seed)
    hops = ["a", "b", "c", "d"]
    counts, alloc, mon = {}, {}, []
    for i, xs in enumerate(per_prefix):
        p = f"p{i}"
        counts[p] = sum(xs)
        for n, c in zip(hops, xs):
            if c:
                alloc[(p, n)] = c
                mon.append((p, n, rng.randint(0, c)))
    plan = SlotPlan(counts)
    compiled = compile_rules(plan, alloc, mon, hops)
    table = compiled.table()  # validates coverage, disjointness and containment
    for r in compiled.forwarding:
        assert r.range.width == sum(plan.slot_range(r.prefix_id, j).width for j in range(plan.slot_of(r.prefix_id, r.range.lo), plan.slot_of(r.prefix_id, r.range.hi - 1) + 1))
    for _ in range(200):
        p = rng.choice(list(counts))
        pt = rng.randrange(K)
        hop, idx = table.select(p, pt)
        if idx is not None:
            assert compiled.index_map[idx] == (p, hop)
    # monitored sub-ranges start at the low end of their pair's range
    starts = {(r.prefix_id, r.next_hop): r.range.lo for r in compiled.forwarding}
    for r in compiled.monitoring:
        assert r.range.lo == starts[compiled.index_map[r.agg_index]]


def test_hash_point_uniform_and_affine():
    rng = random.Random(21)
    flows = [random_flow(rng) for _ in range(100_000)]
    pts = [hash_point(f) for f in flows]
    assert pts[:50] == [hash_point(f) for f in flows[:50]]
    bins = Counter(p * 256 // K for p in pts)
    assert stats.chisquare([bins[i] for i in range(256)]).pvalue > 1e-4


def test_proportional_slot_traffic():
    """Per-slot flow counts within 20% of the mean at 10^4+ flows."""
    plan = SlotPlan({"p": 16})
    rng = random.Random(3)
    counts = Counter(plan.slot_of("p", hash_point(random_flow(rng))) for _ in range(20_000))
    mean = 20_000 / 16
    assert all(abs(counts[j] - mean) <= 0.2 * mean for j in range(16))


def test_selector_affinity_and_swap():
    plan = SlotPlan({"p": 2})
    s = Selector(compile_rules(plan, {("p", "a"): 1, ("p", "b"): 1}).table())
    rng = random.Random(9)
    flows = [random_flow(rng) for _ in range(200)]
    first = [s.route("p", f) for f in flows]
    assert [s.route("p", f) for f in flows] == first
    s.install(compile_rules(plan, {("p", "b"): 2}).table())
    assert {s.route("p", f)[0] for f in flows} == {"b"}
