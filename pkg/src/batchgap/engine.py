"""Time simulation of batched serving on one device.

Step plans from the scheduler are turned into kernel-group segments timed
with ``max(T_C, T_M)`` per group and preceded by a host-side CPU gap. One or
more replicas are then laid out on the device timeline:

* ``timeshared`` -- GPU phases of all replicas are served first-come,
  first-served on a single timeline; CPU gaps overlap other replicas' GPU
  work.
* ``parallel`` -- GPU segments of different replicas run concurrently and
  share DRAM bandwidth and compute max-min fairly (see ``sharing``). A lone
  segment is held to its efficiency-scaled solo speed while the shared pools
  are the raw device capacities, so concurrent memory-bound kernels together
  draw more bandwidth than any one of them alone.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import asdict, dataclass, replace
from typing import TYPE_CHECKING, Iterable, Literal

import numpy as np

from batchgap.core import (
    HardwareProfile,
    ModelGeometry,
    ModelSpec,
    Request,
    derive_geometry,
    generate_workload,
    kv_capacity_bytes,
)
from batchgap.costmodel import KernelCost, decode_costs, prefill_cost
from batchgap.errors import InsufficientMemoryError, InvalidSpecError
from batchgap.kvcache import PagedAllocator
from batchgap.scheduler import Scheduler, StepPlan, guard_progress, step_ceiling
from batchgap.sharing import fair_speeds

if TYPE_CHECKING:
    from batchgap.config import RunConfig

SCHEMA_VERSION = 1
GROUP_ORDER = ("matmul", "attention", "other")
Mode = Literal["timeshared", "parallel"]


@dataclass(frozen=True)
class CpuOverheadModel:
    """Host time per step: ``c0`` always, plus ``c1`` per request in decode steps."""

    c0: float = 0.002
    c1: float = 0.00005

    def __post_init__(self) -> None:
        if self.c0 < 0 or self.c1 < 0:
            raise InvalidSpecError("CPU overhead coefficients must be non-negative")

    def overhead(self, kind: str, batch: int) -> float:
        return self.c0 + self.c1 * batch if kind == "decode" else self.c0


@dataclass(frozen=True)
class GroupTiming:
    t_compute: float
    t_memory: float

    @property
    def duration(self) -> float:
        return max(self.t_compute, self.t_memory)


@dataclass(frozen=True)
class StepTiming:
    t_matmul: float
    t_attention: float
    t_other: float
    t_cpu: float
    groups: dict[str, GroupTiming]

    @property
    def t_gpu(self) -> float:
        return self.t_matmul + self.t_attention + self.t_other

    @property
    def wall(self) -> float:
        return self.t_gpu + self.t_cpu


@dataclass(frozen=True, slots=True)
class TraceEvent:
    replica: int
    start: float
    end: float
    phase: str
    kernel_group: str | None = None
    bytes: float = 0.0
    flops: float = 0.0
    bandwidth_share: float = 0.0


@dataclass(frozen=True)
class Metrics:
    throughput: float
    itl: float
    e2e: float
    kv_usage_peak: float
    kv_usage_mean: float
    decode_time_fraction: float
    cpu_time_fraction: float
    dram_util_mean: float
    dram_util_peak: float
    compute_util_mean: float
    compute_util_peak: float
    makespan: float
    total_tokens: int
    num_requests: int
    num_steps: int
    mean_decode_batch: float

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


@dataclass(frozen=True)
class ReplicatedResult:
    mode: str
    replicas: int
    per_replica: list[Metrics]
    aggregate: Metrics
    trace: list[TraceEvent]


# ---------------------------------------------------------------------------
# step costing


def step_costs(plan: StepPlan, geom: ModelGeometry, spec: ModelSpec,
               fused: bool = True) -> dict[str, KernelCost]:
    if plan.kind == "prefill":
        return prefill_cost(geom, spec, plan.seq_lens, fused=fused)
    return decode_costs(geom, spec, plan.seq_lens)


def time_costs(costs: dict[str, KernelCost], hw: HardwareProfile) -> dict[str, GroupTiming]:
    mem_rate = hw.mem_efficiency * hw.dram_bandwidth
    out = {}
    for group in GROUP_ORDER:
        if group in costs:
            cost = costs[group]
            compute_rate = hw.compute_efficiency * hw.group_peak_flops(group)
            out[group] = GroupTiming(cost.flops / compute_rate, cost.bytes / mem_rate)
    return out


def step_time(plan: StepPlan, hw: HardwareProfile, geom: ModelGeometry, spec: ModelSpec,
              cpu_model: CpuOverheadModel, fused: bool = True) -> StepTiming:
    groups = time_costs(step_costs(plan, geom, spec, fused), hw)
    dur = {g: (groups[g].duration if g in groups else 0.0) for g in GROUP_ORDER}
    return StepTiming(dur["matmul"], dur["attention"], dur["other"],
                      cpu_model.overhead(plan.kind, len(plan.members)), groups)


# ---------------------------------------------------------------------------
# simulation state


class _Segment:
    __slots__ = ("group", "flops", "bytes", "solo", "remaining", "bw", "cp", "done_bytes",
                 "done_flops")

    def __init__(self, group: str, cost: KernelCost, timing: GroupTiming, peak: float):
        self.group = group
        self.flops = float(cost.flops)
        self.bytes = float(cost.bytes)
        self.solo = timing.duration
        self.remaining = self.solo
        # consumption at solo speed: bytes/s and fraction of device compute
        self.bw = cost.bytes / self.solo if self.solo > 0 else 0.0
        self.cp = cost.flops / (self.solo * peak) if self.solo > 0 else 0.0
        self.done_bytes = 0.0
        self.done_flops = 0.0


class _Sim:
    """Shared context: hardware, cost inputs, trace sink and device-wide counters."""

    def __init__(self, hw, spec, geom, cpu, fused, record):
        self.hw = hw
        self.spec = spec
        self.geom = geom
        self.cpu = cpu
        self.fused = fused
        self.record = record
        self.trace: list[TraceEvent] = []
        self.dram_area = 0.0
        self.compute_area = 0.0
        self.dram_peak = 0.0
        self.compute_peak = 0.0
        self.cpu_only_time = 0.0

    def emit(self, rid, start, end, phase, group=None, nbytes=0.0, flops=0.0, share=0.0):
        if self.record:
            self.trace.append(TraceEvent(rid, start, end, phase, group, nbytes, flops, share))


class _Replica:
    def __init__(self, rid: int, requests: list[Request], sched: Scheduler, sim: _Sim):
        self.id = rid
        self.sched = sched
        self.sim = sim
        self.requests = {r.id: r for r in requests}
        self.ceiling = step_ceiling(requests)
        for r in requests:
            sched.submit(r)
        self.last_emit: dict[int, float] = {}
        self.itl_acc: dict[int, float] = {}
        self.itl: list[float] = []
        self.e2e: list[float] = []
        self.state = "plan"
        self.phase_end = 0.0
        self.plan: StepPlan | None = None
        self.step_start = 0.0
        self.gpu_ready = 0.0
        self.gpu_start = 0.0
        self.segments: list[_Segment] = []
        self.seg = 0
        self.kv_usage = 0.0
        self.kv_peak = 0.0
        self.kv_area = 0.0
        self.step_wall = {"prefill": 0.0, "decode": 0.0}
        self.decode_members = 0
        self.decode_steps = 0
        self.steps = 0
        self.cpu_time = 0.0
        self.tokens = 0
        self.finish = 0.0
        self.dram_area = 0.0
        self.compute_area = 0.0
        self.dram_peak = 0.0
        self.compute_peak = 0.0

    def begin_step(self, t: float) -> None:
        """Plan the next step at time ``t`` and enter its CPU phase."""
        sched, sim = self.sched, self.sim
        plan = sched.next_step(t)
        if plan is None:
            if sched.done:
                self.state = "done"
            else:
                self.state = "sleep"
                self.phase_end = sched.next_arrival()
                sim.emit(self.id, t, self.phase_end, "idle")
            return
        self.steps += 1
        guard_progress(plan, self.steps, self.ceiling)
        costs = step_costs(plan, sim.geom, sim.spec, sim.fused)
        timings = time_costs(costs, sim.hw)
        self.segments = [_Segment(g, costs[g], timings[g], sim.hw.group_peak_flops(g))
                         for g in GROUP_ORDER if g in costs]
        self.seg = 0
        self.plan = plan
        self.step_start = t
        self.kv_usage = plan.kv_blocks / sched.allocator.total_blocks
        if self.kv_usage > self.kv_peak:
            self.kv_peak = self.kv_usage
        t_cpu = sim.cpu.overhead(plan.kind, len(plan.members))
        self.cpu_time += t_cpu
        self.state = "cpu"
        self.phase_end = t + t_cpu
        sim.emit(self.id, t, self.phase_end, "cpu")

    def finish_step(self, t: float) -> None:
        plan = self.plan
        wall = (self.gpu_ready - self.step_start) + (t - self.gpu_start)
        self.step_wall[plan.kind] += wall
        self.kv_area += self.kv_usage * wall
        if plan.kind == "prefill":
            for rid in plan.admitted:
                self.last_emit[rid] = t
                self.itl_acc[rid] = 0.0
                self.tokens += self.requests[rid].input_len
        else:
            self.decode_steps += 1
            self.decode_members += len(plan.members)
            self.tokens += len(plan.members)
            last, acc = self.last_emit, self.itl_acc
            for rid in plan.members:
                acc[rid] += t - last[rid]
                last[rid] = t
            for rid in plan.completed:
                req = self.requests[rid]
                self.itl.append(acc.pop(rid) / req.output_len)
                self.e2e.append(t - req.arrival_time)
                del last[rid]
        self.finish = t
        self.plan = None


def _account(sim: _Sim, rep: _Replica, seg: _Segment, speed: float, dt: float) -> tuple[float, float]:
    """Book ``dt`` seconds of ``seg`` at ``speed``; returns its bandwidth and compute shares."""
    bw_share = speed * seg.bw / sim.hw.dram_bandwidth
    cp_share = speed * seg.cp
    rep.dram_area += bw_share * dt
    rep.compute_area += cp_share * dt
    if dt > 0:
        rep.dram_peak = max(rep.dram_peak, bw_share)
        rep.compute_peak = max(rep.compute_peak, cp_share)
    return bw_share, cp_share


def _run_serial(rep: _Replica, sim: _Sim) -> None:
    """Single replica: every segment runs at solo speed back to back."""
    t = 0.0
    rep.begin_step(t)
    while rep.state != "done":
        if rep.state == "sleep":
            t = rep.phase_end
            rep.begin_step(t)
            continue
        t_cpu_end = rep.phase_end
        sim.cpu_only_time += t_cpu_end - t
        t = t_cpu_end
        rep.gpu_ready = rep.gpu_start = t
        for seg in rep.segments:
            end = t + seg.remaining
            dt = end - t
            bw_share, cp_share = _account(sim, rep, seg, 1.0, dt)
            sim.emit(rep.id, t, end, rep.plan.kind, seg.group, seg.bytes, seg.flops, bw_share)
            t = end
        rep.finish_step(t)
        rep.begin_step(t)
    sim.dram_area = rep.dram_area
    sim.compute_area = rep.compute_area
    sim.dram_peak = rep.dram_peak
    sim.compute_peak = rep.compute_peak


def launch_offsets(reps: list[_Replica], sim: _Sim) -> list[float]:
    """Start times that spread replicas evenly over one full-batch decode step.

    Identical replicas launched together stay phase-locked under fair
    sharing: their CPU gaps coincide and nothing fills them. Independent
    serving processes are never started in the same instant, so replica
    ``r`` of ``R`` is launched ``r/R`` of a step period after the first.
    """
    n = len(reps)
    if n == 1:
        return [0.0]
    rep = reps[0]
    first = list(rep.requests.values())[: rep.sched.config.max_num_seqs]
    plan = StepPlan("decode", tuple(r.id for r in first),
                    tuple(r.input_len + 1 for r in first))
    period = step_time(plan, sim.hw, sim.geom, sim.spec, sim.cpu, sim.fused).wall
    return [period * r / n for r in range(n)]


def _run_event_loop(reps: list[_Replica], sim: _Sim, mode: Mode) -> None:
    """Co-simulate replicas on one device; see the module docstring for modes."""
    hw = sim.hw
    t = 0.0
    fifo: deque[_Replica] = deque()
    holder: _Replica | None = None
    for rep, offset in zip(reps, launch_offsets(reps, sim)):
        if offset > 0:
            rep.state = "sleep"
            rep.phase_end = offset
            sim.emit(rep.id, t, offset, "idle")
        else:
            rep.begin_step(t)

    while True:
        if mode == "timeshared" and holder is None and fifo:
            holder = fifo.popleft()
            holder.state = "gpu"
            holder.gpu_start = t
            if t > holder.gpu_ready:
                sim.emit(holder.id, holder.gpu_ready, t, "idle")
        live = [r for r in reps if r.state != "done"]
        if not live:
            break
        if mode == "timeshared":
            active = [holder] if holder is not None else []
        else:
            active = [r for r in reps if r.state == "gpu"]
        segs = [r.segments[r.seg] for r in active]
        if len(segs) > 1:
            speeds = fair_speeds([s.bw for s in segs], [s.cp for s in segs], hw.dram_bandwidth)
        else:
            speeds = [1.0] * len(segs)

        t_next = float("inf")
        finish_at = []
        for seg, speed in zip(segs, speeds):
            end = t + seg.remaining / speed
            finish_at.append(end)
            t_next = min(t_next, end)
        for r in live:
            if r.state in ("cpu", "sleep"):
                t_next = min(t_next, r.phase_end)
        dt = t_next - t

        if segs:
            total_bw = total_cp = 0.0
            for rep, seg, speed, end in zip(active, segs, speeds, finish_at):
                bw_share, cp_share = _account(sim, rep, seg, speed, dt)
                total_bw += bw_share
                total_cp += cp_share
                if end == t_next:
                    nbytes = seg.bytes - seg.done_bytes
                    nflops = seg.flops - seg.done_flops
                    seg.remaining = 0.0
                else:
                    frac = speed * dt / seg.solo
                    nbytes = seg.bytes * frac
                    nflops = seg.flops * frac
                    seg.remaining -= speed * dt
                seg.done_bytes += nbytes
                seg.done_flops += nflops
                if dt > 0 or end == t_next:
                    sim.emit(rep.id, t, t_next, rep.plan.kind, seg.group, nbytes, nflops, bw_share)
            sim.dram_area += total_bw * dt
            sim.compute_area += total_cp * dt
            if dt > 0:
                sim.dram_peak = max(sim.dram_peak, total_bw)
                sim.compute_peak = max(sim.compute_peak, total_cp)
        elif any(r.state == "cpu" for r in live):
            sim.cpu_only_time += dt
        t = t_next

        for rep in live:
            if rep.state == "gpu" and rep.segments[rep.seg].remaining == 0.0:
                rep.seg += 1
                if rep.seg == len(rep.segments):
                    rep.finish_step(t)
                    if rep is holder:
                        holder = None
                    rep.begin_step(t)
                else:
                    continue
            if rep.state == "sleep" and rep.phase_end == t:
                rep.begin_step(t)
            if rep.state == "cpu" and rep.phase_end == t:
                rep.gpu_ready = t
                if mode == "timeshared":
                    rep.state = "wait"
                    fifo.append(rep)
                else:
                    rep.state = "gpu"
                    rep.gpu_start = t


# ---------------------------------------------------------------------------
# metrics


def _replica_metrics(rep: _Replica, makespan: float, cpu_fraction: float,
                     dram: tuple[float, float], compute: tuple[float, float]) -> Metrics:
    step_total = rep.step_wall["prefill"] + rep.step_wall["decode"]
    return Metrics(
        throughput=rep.tokens / makespan,
        itl=float(np.mean(rep.itl)),
        e2e=float(np.mean(rep.e2e)),
        kv_usage_peak=rep.kv_peak,
        kv_usage_mean=rep.kv_area / step_total if step_total > 0 else 0.0,
        decode_time_fraction=rep.step_wall["decode"] / step_total if step_total > 0 else 0.0,
        cpu_time_fraction=cpu_fraction,
        dram_util_mean=dram[0],
        dram_util_peak=dram[1],
        compute_util_mean=compute[0],
        compute_util_peak=compute[1],
        makespan=makespan,
        total_tokens=rep.tokens,
        num_requests=len(rep.requests),
        num_steps=rep.steps,
        mean_decode_batch=rep.decode_members / rep.decode_steps if rep.decode_steps else 0.0,
    )


def _aggregate(reps: list[_Replica], sim: _Sim, makespan: float) -> Metrics:
    itl = [x for r in reps for x in r.itl]
    e2e = [x for r in reps for x in r.e2e]
    prefill = sum(r.step_wall["prefill"] for r in reps)
    decode = sum(r.step_wall["decode"] for r in reps)
    kv_means = [r.kv_area / (r.step_wall["prefill"] + r.step_wall["decode"]) for r in reps]
    tokens = sum(r.tokens for r in reps)
    dsteps = sum(r.decode_steps for r in reps)
    return Metrics(
        throughput=tokens / makespan,
        itl=float(np.mean(itl)),
        e2e=float(np.mean(e2e)),
        kv_usage_peak=max(r.kv_peak for r in reps),
        kv_usage_mean=float(np.mean(kv_means)),
        decode_time_fraction=decode / (prefill + decode),
        cpu_time_fraction=sim.cpu_only_time / makespan,
        dram_util_mean=sim.dram_area / makespan,
        dram_util_peak=sim.dram_peak,
        compute_util_mean=sim.compute_area / makespan,
        compute_util_peak=sim.compute_peak,
        makespan=makespan,
        total_tokens=tokens,
        num_requests=sum(len(r.requests) for r in reps),
        num_steps=sum(r.steps for r in reps),
        mean_decode_batch=sum(r.decode_members for r in reps) / dsteps if dsteps else 0.0,
    )


# ---------------------------------------------------------------------------
# public entry points


def _build_replicas(config: RunConfig, replicas: int, sim: _Sim,
                    requests: list[Request] | None = None) -> list[_Replica]:
    if replicas < 1:
        raise InvalidSpecError("replica count must be >= 1")
    requests = generate_workload(config.workload) if requests is None else requests
    capacity = kv_capacity_bytes(config.hardware, sim.geom, replicas)
    block_bytes = config.block_size * sim.geom.kv_bytes_per_token
    if capacity < block_bytes:
        raise InsufficientMemoryError(
            f"{replicas} replica(s) of {config.model.name} do not fit: each gets "
            f"{config.hardware.engine_memory / replicas:.3e} bytes for "
            f"{sim.geom.weight_bytes:.3e} bytes of weights plus at least one KV block"
        )
    out = []
    for rid in range(replicas):
        alloc = PagedAllocator.from_capacity(capacity, config.block_size,
                                             sim.geom.kv_bytes_per_token)
        share = requests[rid::replicas]
        if share:
            out.append(_Replica(rid, share, Scheduler(config.scheduler, alloc), sim))
    return out


def _new_sim(config: RunConfig, record: bool) -> _Sim:
    return _Sim(config.hardware, config.model, derive_geometry(config.model),
                config.cpu_model, config.fused_prefill, record)


def run(config: RunConfig, record_trace: bool = False) -> tuple[Metrics, list[TraceEvent]]:
    """Simulate one replica serving the configured workload to completion."""
    sim = _new_sim(config, record_trace)
    (rep,) = _build_replicas(config, 1, sim)
    _run_serial(rep, sim)
    return _aggregate([rep], sim, rep.finish), sim.trace


def run_replicated(config: RunConfig, replicas: int, mode: Mode = "parallel",
                   record_trace: bool = False, *, _force_event_loop: bool = False
                   ) -> ReplicatedResult:
    """Split memory and workload equally across ``replicas`` instances on one device."""
    if mode not in ("timeshared", "parallel"):
        raise InvalidSpecError(f"unknown replication mode {mode!r}")
    sim = _new_sim(config, record_trace)
    reps = _build_replicas(config, replicas, sim)
    if len(reps) == 1 and not _force_event_loop:
        _run_serial(reps[0], sim)
    else:
        _run_event_loop(reps, sim, mode)
    makespan = max(r.finish for r in reps)
    per = [
        _replica_metrics(r, r.finish, _replica_cpu_fraction(r, sim, len(reps)),
                         (r.dram_area / r.finish, r.dram_peak),
                         (r.compute_area / r.finish, r.compute_peak))
        for r in reps
    ]
    agg = _aggregate(reps, sim, makespan)
    if len(reps) == 1:
        per = [agg]
    return ReplicatedResult(mode, replicas, per, agg, sim.trace)


def _replica_cpu_fraction(rep: _Replica, sim: _Sim, n: int) -> float:
    # with one replica the device-wide CPU-only time is the replica's own
    return (sim.cpu_only_time if n == 1 else rep.cpu_time) / rep.finish


# ---------------------------------------------------------------------------
# utilization proxies from a trace


@dataclass(frozen=True)
class UtilizationSeries:
    """Piecewise-constant device utilization: value ``[i]`` holds on ``[times[i], times[i+1])``."""

    times: np.ndarray
    dram: np.ndarray
    compute: np.ndarray

    def _mean(self, values: np.ndarray) -> float:
        widths = np.diff(self.times)
        span = self.times[-1] - self.times[0]
        return float(np.dot(values, widths) / span) if span > 0 else 0.0

    @property
    def dram_mean(self) -> float:
        return self._mean(self.dram)

    @property
    def compute_mean(self) -> float:
        return self._mean(self.compute)

    @property
    def dram_peak(self) -> float:
        widths = np.diff(self.times)
        return float(self.dram[widths > 0].max(initial=0.0))

    @property
    def compute_peak(self) -> float:
        widths = np.diff(self.times)
        return float(self.compute[widths > 0].max(initial=0.0))


def utilization_proxies(trace: Iterable[TraceEvent], hw: HardwareProfile) -> UtilizationSeries:
    """Allocated bandwidth / DRAM bandwidth and compute occupancy over time.

    Compute occupancy of a kernel is its FLOP rate over the peak of the
    units it runs on (tensor cores for matmul).
    """
    events = list(trace)
    if not events:
        raise InvalidSpecError("utilization_proxies needs a nonempty trace")
    t0 = min(e.start for e in events)
    t1 = max(e.end for e in events)
    gpu = [e for e in events if e.kernel_group is not None and e.end > e.start]
    times = np.unique(np.array([t0, t1] + [e.start for e in gpu] + [e.end for e in gpu]))
    dram = np.zeros(len(times) - 1)
    compute = np.zeros(len(times) - 1)
    for e in gpu:
        lo = np.searchsorted(times, e.start)
        hi = np.searchsorted(times, e.end)
        dur = e.end - e.start
        dram[lo:hi] += e.bytes / dur / hw.dram_bandwidth
        compute[lo:hi] += e.flops / dur / hw.group_peak_flops(e.kernel_group)
    return UtilizationSeries(times, dram, compute)


# ---------------------------------------------------------------------------
# step profiles: timing-independent schedules for fast re-timing


@dataclass(frozen=True)
class StepProfile:
    """Per-step kernel work of a drained schedule.

    Valid for workloads whose requests all arrive at time zero: the schedule
    then does not depend on step durations, so any (efficiency, CPU) setting
    can be re-timed without re-running the scheduler.
    """

    kind_decode: np.ndarray      # bool per step
    members: np.ndarray          # batch size per step
    flops: dict[str, np.ndarray]
    bytes: dict[str, np.ndarray]
    total_tokens: int


def profile_steps(config: RunConfig) -> StepProfile:
    if config.workload.arrival != "all-at-once":
        raise InvalidSpecError("step profiles need all-at-once arrivals")
    sim = _new_sim(config, False)
    (rep,) = _build_replicas(config, 1, sim)
    sched = rep.sched
    kinds, members = [], []
    flops = {g: [] for g in GROUP_ORDER}
    nbytes = {g: [] for g in GROUP_ORDER}
    tokens = 0
    while not sched.done:
        plan = sched.next_step()
        guard_progress(plan, sched.steps, rep.ceiling)
        costs = step_costs(plan, sim.geom, sim.spec, sim.fused)
        kinds.append(plan.kind == "decode")
        members.append(len(plan.members))
        for g in GROUP_ORDER:
            c = costs.get(g)
            flops[g].append(c.flops if c else 0.0)
            nbytes[g].append(c.bytes if c else 0.0)
        tokens += len(plan.members) if plan.kind == "decode" else sum(plan.seq_lens)
    return StepProfile(np.array(kinds), np.array(members, dtype=float),
                       {g: np.array(v, dtype=float) for g, v in flops.items()},
                       {g: np.array(v, dtype=float) for g, v in nbytes.items()}, tokens)


@dataclass(frozen=True)
class ProfileTiming:
    throughput: float
    makespan: float
    decode_time_fraction: float
    cpu_time_fraction: float


def time_profile(profile: StepProfile, hw: HardwareProfile,
                 cpu: CpuOverheadModel) -> ProfileTiming:
    mem_rate = hw.mem_efficiency * hw.dram_bandwidth
    gpu = np.zeros_like(profile.members)
    for g in GROUP_ORDER:
        compute_rate = hw.compute_efficiency * hw.group_peak_flops(g)
        gpu += np.maximum(profile.flops[g] / compute_rate, profile.bytes[g] / mem_rate)
    t_cpu = cpu.c0 + np.where(profile.kind_decode, cpu.c1 * profile.members, 0.0)
    wall = gpu + t_cpu
    makespan = float(wall.sum())
    return ProfileTiming(
        throughput=profile.total_tokens / makespan,
        makespan=makespan,
        decode_time_fraction=float(wall[profile.kind_decode].sum() / makespan),
        cpu_time_fraction=float(t_cpu.sum() / makespan),
    )


# ---------------------------------------------------------------------------
# serialization


def trace_event_dict(e: TraceEvent) -> dict:
    return {"schema_version": SCHEMA_VERSION, **asdict(e)}


def trace_lines(trace: Iterable[TraceEvent]) -> Iterable[str]:
    for e in trace:
        yield json.dumps(trace_event_dict(e), separators=(",", ":")) + "\n"


def trace_hash(trace: Iterable[TraceEvent]) -> str:
    h = hashlib.sha256()
    for line in trace_lines(trace):
        h.update(line.encode())
    return h.hexdigest()


def with_params(config: RunConfig, *, mem_efficiency: float | None = None,
                compute_efficiency: float | None = None, c0: float | None = None,
                c1: float | None = None) -> RunConfig:
    hw = config.hardware
    hw = replace(hw, mem_efficiency=hw.mem_efficiency if mem_efficiency is None else mem_efficiency,
                 compute_efficiency=(hw.compute_efficiency if compute_efficiency is None
                                     else compute_efficiency))
    cpu = config.cpu_model
    cpu = CpuOverheadModel(cpu.c0 if c0 is None else c0, cpu.c1 if c1 is None else c1)
    return replace(config, hardware=hw, cpu_model=cpu)
