import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchgap.core import Request, WorkloadSpec, generate_workload
from batchgap.errors import (
    DuplicateRequestError,
    InsufficientMemoryError,
    InvalidWorkloadError,
    StallDetectedError,
)
from batchgap.kvcache import PagedAllocator
from batchgap.scheduler import Scheduler, SchedulerConfig, drain


def make(cap=256, blocks=10_000, tokens=4096, **kw) -> Scheduler:
    return Scheduler(SchedulerConfig(max_num_seqs=cap, max_batched_tokens=tokens, **kw),
                     PagedAllocator(blocks))


def r(i, n_in=4, n_out=2, t=0.0):
    return Request(i, t, n_in, n_out)


def test_submit_is_fifo():
    s = make()
    for i, t in enumerate([0.0, 1.0, 2.0], start=1):
        s.submit(r(i, t=t))
    assert [q.id for q in s.queue] == [1, 2, 3]


def test_duplicate_submit():
    s = make()
    s.submit(r(1))
    with pytest.raises(DuplicateRequestError):
        s.submit(r(1))


def test_queue_holds_full_workload():
    s = make()
    for q in generate_workload(WorkloadSpec()):
        s.submit(q)
    assert len(s.queue) == 2000


def test_batch_cap_limits_prefill():
    s = make(cap=2)
    for i in (1, 2, 3):
        s.submit(r(i))
    plan = s.next_step()
    assert plan.kind == "prefill" and plan.members == (1, 2)
    assert [q.id for q in s.queue] == [3]


def test_decode_covers_every_running_request():
    s = make(cap=8)
    for i in range(5):
        s.submit(r(i, n_out=3))
    s.next_step()
    plan = s.next_step()
    assert plan.kind == "decode" and plan.members == tuple(range(5))
    assert plan.seq_lens == (5,) * 5


def test_token_cap_limits_prefill():
    s = make(tokens=10)
    for i in range(4):
        s.submit(r(i, n_in=4))
    assert s.next_step().members == (0, 1)


def test_oversized_prompt_rejected_at_submit():
    with pytest.raises(InvalidWorkloadError):
        make(tokens=8).submit(r(1, n_in=9))


def test_request_that_can_never_fit():
    with pytest.raises(InsufficientMemoryError):
        make(blocks=2).submit(r(1, n_in=30, n_out=10))


def test_admission_deferred_until_blocks_free():
    # 11 blocks hold the first 161-token prompt exactly, leaving nothing for the next one
    s = make(blocks=11, reserve_full_length=False)
    s.submit(r(1, n_in=161, n_out=5))
    s.submit(r(2, n_in=161, n_out=5))
    assert s.next_step().members == (1,)
    assert s.allocator.free_blocks == 0
    kinds = [s.next_step().kind for _ in range(5)]
    assert kinds == ["decode"] * 5
    plan = s.next_step()
    assert plan.kind == "prefill" and plan.members == (2,)


def test_reservation_defers_admission_for_final_length():
    # 32 blocks = ceil(499/16): one full request at a time
    s = make(blocks=32)
    s.submit(r(1, n_in=161, n_out=338))
    s.submit(r(2, n_in=161, n_out=338))
    assert s.next_step().members == (1,)
    plans = [s.next_step() for _ in range(338)]
    assert all(p.kind == "decode" for p in plans)
    assert plans[-1].completed == (1,)
    assert plans[-1].kv_blocks == 32
    assert s.next_step().members == (2,)


def test_single_tiny_request_drains_in_two_steps():
    s = make(cap=1)
    s.submit(r(1, n_in=1, n_out=1))
    plans = drain(s)
    assert [p.kind for p in plans] == ["prefill", "decode"]
    assert plans[1].seq_lens == (2,) and plans[1].completed == (1,)


def test_batch_one_is_strictly_serial():
    s = make(cap=1)
    for i in range(4):
        s.submit(r(i, n_out=3))
    plans = drain(s)
    owners = [p.members for p in plans]
    assert owners == [(i,) for i in range(4) for _ in range(4)]


def test_full_default_workload_at_256_conserves_tokens():
    s = Scheduler(SchedulerConfig(max_num_seqs=256), PagedAllocator(18_824))
    reqs = generate_workload(WorkloadSpec())
    for q in reqs:
        s.submit(q)
    plans = drain(s)
    generated = sum(len(p.members) for p in plans if p.kind == "decode")
    completed = [rid for p in plans for rid in p.completed]
    assert generated == 2000 * 338
    assert sorted(completed) == list(range(2000))


def test_full_stall_detected():
    s = make(blocks=2, reserve_full_length=False)
    s.submit(r(1, n_in=16, n_out=4))
    s.submit(r(2, n_in=16, n_out=4))
    with pytest.raises(StallDetectedError):
        drain(s)


def test_partial_stall_retries_next_step():
    s = make(blocks=3, reserve_full_length=False)
    s.submit(r(1, n_in=16, n_out=2))
    s.submit(r(2, n_in=16, n_out=2))
    drain_plans = drain(s)
    decode = [p for p in drain_plans if p.kind == "decode"]
    assert decode[0].stalled == (2,) and decode[0].members == (1,)
    assert sum(len(p.members) for p in decode) == 4


def test_drain_before_arrival_is_a_stall():
    s = make()
    s.submit(r(1, t=5.0))
    with pytest.raises(StallDetectedError):
        drain(s, now=1.0)


@st.composite
def workloads(draw):
    n = draw(st.integers(1, 25))
    reqs = [Request(i, 0.0, draw(st.integers(1, 40)), draw(st.integers(1, 30)))
            for i in range(n)]
    return reqs


@given(reqs=workloads(), cap=st.integers(1, 8), tokens=st.integers(40, 120),
       blocks=st.integers(5, 60), reserve=st.booleans())
def test_scheduler_invariants(reqs, cap, tokens, blocks, reserve):
    s = make(cap=cap, blocks=blocks, tokens=tokens, reserve_full_length=reserve)
    try:
        for q in reqs:
            s.submit(q)
        plans = drain(s)
    except (InsufficientMemoryError, StallDetectedError):
        if reserve:
            # reservation guarantees progress once every request fits alone
            assert any(-(-q.total_len // 16) > blocks for q in reqs)
        return
    by_id = {q.id: q for q in reqs}
    admitted = [rid for p in plans for rid in p.admitted]
    assert admitted == sorted(admitted)  # FIFO
    running: set[int] = set()
    for p in plans:
        assert len(p.members) <= cap
        assert len(set(p.members)) == len(p.members)
        if p.kind == "prefill":
            assert sum(p.seq_lens) <= tokens
            running |= set(p.members)
        else:
            assert set(p.members) <= running
            running -= set(p.completed)
        assert len(running) <= cap
    generated = sum(len(p.members) for p in plans if p.kind == "decode")
    assert generated == sum(q.output_len for q in reqs)
    assert s.allocator.allocated_blocks == 0
    assert sorted(rid for p in plans for rid in p.completed) == sorted(by_id)
