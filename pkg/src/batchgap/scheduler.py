"""Continuous-batching scheduler: FCFS admission and per-step join/leave."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Literal

from batchgap.core import Request
from batchgap.errors import (
    DuplicateRequestError,
    InsufficientMemoryError,
    InvalidSpecError,
    InvalidWorkloadError,
    StallDetectedError,
)
from batchgap.kvcache import PagedAllocator


@dataclass(frozen=True)
class SchedulerConfig:
    """Batching knobs.

    With ``reserve_full_length`` (the default) a prompt is admitted only if
    the cache can hold every admitted request at its final length, so decode
    appends never hit a full cache and a drain always terminates. Turning it
    off admits on prompt blocks alone; members that then hit a full cache at
    a block boundary stall until blocks are freed.
    """

    max_num_seqs: int = 256
    max_batched_tokens: int = 4096
    prefill_priority: bool = True
    reserve_full_length: bool = True
    max_steps: int | None = None

    def __post_init__(self) -> None:
        if self.max_num_seqs < 1 or self.max_batched_tokens < 1:
            raise InvalidSpecError("scheduler caps must be >= 1")


@dataclass(frozen=True)
class StepPlan:
    kind: Literal["prefill", "decode"]
    members: tuple[int, ...]
    # prompt lengths for prefill; context length including the new token for decode
    seq_lens: tuple[int, ...]
    admitted: tuple[int, ...] = ()
    completed: tuple[int, ...] = ()
    stalled: tuple[int, ...] = ()
    # blocks held while the step runs (before completed requests are released)
    kv_blocks: int = 0


class _Running:
    __slots__ = ("req", "generated")

    def __init__(self, req: Request):
        self.req = req
        self.generated = 0


class Scheduler:
    def __init__(self, config: SchedulerConfig, allocator: PagedAllocator):
        self.config = config
        self.allocator = allocator
        self.queue: deque[Request] = deque()
        self.running: dict[int, _Running] = {}
        self._seen: set[int] = set()
        # blocks promised to running requests at their final length
        self._reserved = 0
        self.steps = 0

    def submit(self, req: Request) -> None:
        if req.id in self._seen:
            raise DuplicateRequestError(f"request {req.id} was already submitted")
        if req.input_len > self.config.max_batched_tokens:
            raise InvalidWorkloadError(
                f"prompt of {req.input_len} tokens exceeds max_batched_tokens "
                f"{self.config.max_batched_tokens}"
            )
        need = (self.allocator.blocks_for(req.total_len) if self.config.reserve_full_length
                else self.allocator.blocks_for(req.input_len))
        if need > self.allocator.total_blocks:
            raise InsufficientMemoryError(
                f"request {req.id} needs {need} KV blocks but the cache holds "
                f"{self.allocator.total_blocks}"
            )
        self._seen.add(req.id)
        self.queue.append(req)

    @property
    def done(self) -> bool:
        return not self.queue and not self.running

    def next_arrival(self) -> float | None:
        return self.queue[0].arrival_time if self.queue else None

    def next_step(self, now: float = math.inf) -> StepPlan | None:
        """Plan the next forward pass, or None when nothing is runnable at ``now``."""
        if self.config.prefill_priority or not self.running:
            plan = self._plan_prefill(now)
            if plan is not None:
                self.steps += 1
                return plan
        if self.running:
            self.steps += 1
            return self._plan_decode()
        return None

    def _plan_prefill(self, now: float) -> StepPlan | None:
        cfg, alloc = self.config, self.allocator
        slots = cfg.max_num_seqs - len(self.running)
        tokens = 0
        admitted: list[Request] = []
        while self.queue and len(admitted) < slots:
            req = self.queue[0]
            if req.arrival_time > now or tokens + req.input_len > cfg.max_batched_tokens:
                break
            if cfg.reserve_full_length:
                final = alloc.blocks_for(req.total_len)
                if self._reserved + final > alloc.total_blocks:
                    break
            if not alloc.allocate_prompt(req):
                break
            if cfg.reserve_full_length:
                self._reserved += final
            self.queue.popleft()
            admitted.append(req)
            tokens += req.input_len
        if not admitted:
            return None
        for req in admitted:
            self.running[req.id] = _Running(req)
        ids = tuple(r.id for r in admitted)
        return StepPlan("prefill", ids, tuple(r.input_len for r in admitted), admitted=ids,
                        kv_blocks=alloc.allocated_blocks)

    def _plan_decode(self) -> StepPlan:
        alloc = self.allocator
        members: list[int] = []
        lens: list[int] = []
        stalled: list[int] = []
        completed: list[int] = []
        for rid, state in self.running.items():
            if not alloc.append_token(rid):
                stalled.append(rid)
                continue
            state.generated += 1
            members.append(rid)
            lens.append(state.req.input_len + state.generated)
            if state.generated == state.req.output_len:
                completed.append(rid)
        held = alloc.allocated_blocks
        for rid in completed:
            req = self.running.pop(rid).req
            alloc.release(rid)
            if self.config.reserve_full_length:
                self._reserved -= alloc.blocks_for(req.total_len)
        return StepPlan("decode", tuple(members), tuple(lens), completed=tuple(completed),
                        stalled=tuple(stalled), kv_blocks=held)


def step_ceiling(requests: list[Request]) -> int:
    return 2 * sum(r.output_len + 1 for r in requests) + 1000


def guard_progress(plan: StepPlan, steps: int, ceiling: int) -> None:
    """Raise when a plan can never lead to a completion.

    A decode step whose members all stalled frees no blocks, so the next
    step would see the same cache and stall again.
    """
    if plan.kind == "decode" and not plan.members:
        raise StallDetectedError(
            f"all {len(plan.stalled)} running requests stalled on a full KV cache"
        )
    if steps > ceiling:
        raise StallDetectedError(f"no drain after {ceiling} steps")


def drain(sched: Scheduler, now: float = math.inf) -> list[StepPlan]:
    """Run the scheduler to completion, treating every request as arrived by ``now``."""
    plans: list[StepPlan] = []
    ceiling = sched.config.max_steps or step_ceiling(list(sched.queue)) + sched.steps
    while not sched.done:
        plan = sched.next_step(now)
        if plan is None:
            raise StallDetectedError("queued requests have not arrived by the drain horizon")
        plans.append(plan)
        guard_progress(plan, len(plans), ceiling)
    return plans
