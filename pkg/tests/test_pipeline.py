import pytest

from routescout.pipeline import AccessLog, Pipeline, PipelineViolation, StagePlan, check_access


def test_in_order_single_accesses_ok():
    log = AccessLog(packet="p")
    for stage, chunk in enumerate(["a", "b", "c"]):
        assert check_access(log, stage, chunk, 3, "rmw")
    assert [e[1] for e in log.entries] == ["a", "b", "c"]


def test_second_access_to_chunk_is_violation():
    log = AccessLog(packet="pkt7")
    check_access(log, 0, "a", 1, "read")
    with pytest.raises(PipelineViolation) as exc:
        check_access(log, 0, "a", 2, "write")
    v = exc.value
    assert (v.packet, v.stage, v.chunk) == ("pkt7", 0, "a")
    assert "pkt7" in v.diagnostic() and "chunk=a" in v.diagnostic()


def test_out_of_order_stage_is_violation():
    log = AccessLog(packet="p")
    check_access(log, 2, "c", 0, "read")
    with pytest.raises(PipelineViolation, match="after stage 2"):
        check_access(log, 1, "b", 0, "read")


def test_chunk_in_two_stages_rejected():
    with pytest.raises(ValueError):
        StagePlan([["a"], ["a"]])


def test_recirculation_resets_pass_and_counts():
    pipe = Pipeline(StagePlan([["a"], ["b"]]))
    pipe.begin("p")
    pipe.access("a", 0, "read")
    pipe.recirculate()
    pipe.access("a", 0, "write")  # a new pass may touch the chunk again
    assert pipe.recirculations == 1 and pipe.packets == 1
    assert pipe.violations == []


def test_budget_exceeded():
    pipe = Pipeline(StagePlan([["a"]]), max_passes=2)
    pipe.begin("p")
    pipe.recirculate()
    with pytest.raises(PipelineViolation, match="budget"):
        pipe.recirculate()
    assert len(pipe.violations) == 1 and pipe.violations[0].startswith("VIOLATION")


def test_unplaced_chunk():
    pipe = Pipeline(StagePlan([["a"]]))
    pipe.begin("p")
    with pytest.raises(PipelineViolation, match="not placed"):
        pipe.access("zz", 0, "read")


def test_unchecked_pipeline_only_counts():
    pipe = Pipeline(StagePlan([["a"]]), checked=False)
    pipe.begin("p")
    pipe.access("a", 0, "read")
    pipe.access("a", 1, "read")
    assert pipe.violations == []
    pipe.reset_counters()
    assert pipe.packets == 0
