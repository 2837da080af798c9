"""Batch-size advisor: performance curves, B_opt selection, memory and replica sizing.

B_opt is the curve row with the highest throughput whose inter-token
latency meets the SLO and whose batching efficiency ``T(B) / (B·T(1))``
stays strictly above ``epsilon``. Throughput ties go to the smaller batch.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from batchgap.config import RunConfig
from batchgap.core import (
    HardwareProfile,
    ModelGeometry,
    ModelSpec,
    WorkloadSpec,
    derive_geometry,
    generate_workload,
    kv_capacity_bytes,
)
from batchgap.engine import (
    GROUP_ORDER,
    SCHEMA_VERSION,
    StepProfile,
    profile_steps,
    run,
    with_params,
)
from batchgap.errors import (
    CurveIncompleteError,
    CurveParseError,
    InsufficientDataError,
    InvalidEpsilonError,
    InvalidSLOError,
    InvalidSpecError,
    InvalidWorkloadError,
    MalformedCurveError,
)

CURVE_HEADER = ("batch_size", "throughput_tokens_per_s", "itl_ms", "e2e_s", "kv_usage_frac")


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class CurveRow:
    batch_size: int
    throughput: float  # tokens/s
    itl: float  # seconds
    e2e: float  # seconds
    kv_usage: float  # fraction


@dataclass(frozen=True)
class PerfCurve:
    rows: tuple[CurveRow, ...]
    source: Literal["simulated", "measured"] = "measured"

    def __post_init__(self) -> None:
        if not self.rows:
            raise CurveIncompleteError("curve has no rows")
        sizes = [r.batch_size for r in self.rows]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise MalformedCurveError(f"batch sizes must be strictly increasing, got {sizes}")
        if sizes[0] != 1:
            raise CurveIncompleteError("curve needs a batch_size=1 row for the efficiency ratio")
        bad = [r.batch_size for r in self.rows if not r.throughput > 0]
        if bad:
            raise MalformedCurveError(f"throughput must be positive (batch sizes {bad})")

    @property
    def batch_sizes(self) -> list[int]:
        return [r.batch_size for r in self.rows]

    def row(self, batch_size: int) -> CurveRow:
        for r in self.rows:
            if r.batch_size == batch_size:
                return r
        raise KeyError(batch_size)


def _ms_text(seconds: float) -> str:
    # exact decimal shift of the shortest repr, so reading it back is lossless
    text = format(Decimal(repr(seconds)).scaleb(3).normalize(), "f")
    return text


def _num_text(value: float) -> str:
    return repr(float(value))


def write_curve(curve: PerfCurve, comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for r in curve.rows:
        writer.writerow([r.batch_size, _num_text(r.throughput), _ms_text(r.itl),
                         _num_text(r.e2e), _num_text(r.kv_usage)])
    return buf.getvalue()


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise CurveParseError(f"line {line}: {column} value {text!r} is not a number",
                              line) from None
    if not math.isfinite(value):
        raise CurveParseError(f"line {line}: {column} value {text!r} is not finite", line)
    return value


def ingest_curve(text: str, source: Literal["simulated", "measured"] = "measured") -> PerfCurve:
    """Parse curve CSV text. Lines starting with ``#`` and blank lines are ignored."""
    header_seen = False
    rows: list[CurveRow] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields_ = next(csv.reader([stripped]))
        if not header_seen:
            if tuple(f.strip() for f in fields_) != CURVE_HEADER:
                raise CurveParseError(
                    f"line {lineno}: expected header {','.join(CURVE_HEADER)}", lineno)
            header_seen = True
            continue
        if len(fields_) != len(CURVE_HEADER):
            raise CurveParseError(
                f"line {lineno}: expected {len(CURVE_HEADER)} fields, got {len(fields_)}", lineno)
        b_text = fields_[0].strip()
        try:
            batch = int(b_text)
        except ValueError:
            raise CurveParseError(f"line {lineno}: batch_size {b_text!r} is not an integer",
                                  lineno) from None
        if batch < 1:
            raise CurveParseError(f"line {lineno}: batch_size must be >= 1", lineno)
        try:
            itl = float(Decimal(fields_[2].strip()).scaleb(-3))
        except InvalidOperation:
            raise CurveParseError(f"line {lineno}: itl_ms value {fields_[2]!r} is not a number",
                                  lineno) from None
        if not math.isfinite(itl) or itl < 0:
            raise CurveParseError(f"line {lineno}: itl_ms must be finite and >= 0", lineno)
        rows.append(CurveRow(
            batch_size=batch,
            throughput=_parse_float(fields_[1].strip(), "throughput_tokens_per_s", lineno),
            itl=itl,
            e2e=_parse_float(fields_[3].strip(), "e2e_s", lineno),
            kv_usage=_parse_float(fields_[4].strip(), "kv_usage_frac", lineno),
        ))
    if not header_seen:
        raise CurveParseError("missing header line", None)
    sizes = [r.batch_size for r in rows]
    if len(set(sizes)) != len(sizes):
        raise MalformedCurveError(f"duplicate batch sizes in {sizes}")
    rows.sort(key=lambda r: r.batch_size)
    return PerfCurve(tuple(rows), source)


def read_curve(path: str | Path) -> PerfCurve:
    return ingest_curve(Path(path).read_text())


def fixture_curve_text() -> str:
    """Reference OPT-1.3B curve shipped with the package."""
    from importlib import resources

    return (resources.files("batchgap") / "data" / "opt13b_fixture.csv").read_text()


def _run_row(config: RunConfig) -> CurveRow:
    metrics, _ = run(config)
    return CurveRow(config.scheduler.max_num_seqs, metrics.throughput, metrics.itl,
                    metrics.e2e, metrics.kv_usage_peak)


def build_curve(config: RunConfig, batch_grid: Iterable[int],
                workers: int | None = None) -> PerfCurve:
    """One engine run per batch size; ``workers > 1`` fans runs out to processes."""
    grid = sorted(set(int(b) for b in batch_grid))
    if not grid or grid[0] != 1:
        raise CurveIncompleteError("batch grid must include batch size 1")
    configs = [config.with_batch_size(b) for b in grid]
    if workers and workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(grid))) as pool:
            rows = list(pool.map(_run_row, configs))
    else:
        rows = [_run_row(c) for c in configs]
    return PerfCurve(tuple(rows), "simulated")


# ---------------------------------------------------------------------------
# B_opt


@dataclass(frozen=True)
class SLOSpec:
    """ITL bound: absolute ``bound`` in seconds, or ``multiplier`` × ITL at ``base_batch``."""

    bound: float | None = None
    multiplier: float | None = None
    base_batch: int | None = None

    def __post_init__(self) -> None:
        absolute = self.bound is not None
        relative = self.multiplier is not None or self.base_batch is not None
        if absolute == relative:
            raise InvalidSLOError("give either an absolute bound or multiplier with base_batch")
        if absolute and not self.bound > 0:
            raise InvalidSLOError("SLO bound must be positive")
        if relative:
            if self.multiplier is None or self.base_batch is None:
                raise InvalidSLOError("relative SLO needs both multiplier and base_batch")
            if not self.multiplier > 0:
                raise InvalidSLOError("SLO multiplier must be positive")

    def resolve(self, curve: PerfCurve) -> float:
        if self.bound is not None:
            return self.bound
        try:
            base = curve.row(self.base_batch)
        except KeyError:
            raise InvalidSLOError(
                f"SLO base batch size {self.base_batch} is not a curve row") from None
        bound = self.multiplier * base.itl
        if not bound > 0:
            raise InvalidSLOError("relative SLO resolves to a non-positive bound")
        return bound


@dataclass(frozen=True)
class CandidateAudit:
    batch_size: int
    throughput: float
    itl: float
    efficiency: float
    rejected: tuple[str, ...]  # subset of ("slo", "epsilon")


@dataclass(frozen=True)
class BCAResult:
    b_opt: int | None
    throughput: float | None
    itl: float | None
    efficiency: float | None
    slo_bound: float
    epsilon: float
    feasible: bool
    audit: tuple[CandidateAudit, ...]
    memory: MemoryRecommendation | None = None
    replicas: int | None = None

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        out["audit"] = [asdict(a) | {"rejected": list(a.rejected)} for a in self.audit]
        return out


def find_bopt(curve: PerfCurve, slo: SLOSpec, epsilon: float) -> BCAResult:
    if not 0 <= epsilon < 1:
        raise InvalidEpsilonError(f"epsilon must lie in [0, 1), got {epsilon}")
    bound = slo.resolve(curve)
    t1 = curve.row(1).throughput
    audit = []
    best: CandidateAudit | None = None
    for r in curve.rows:
        eff = r.throughput / (r.batch_size * t1)
        reasons = []
        if r.itl > bound:
            reasons.append("slo")
        if not eff > epsilon:
            reasons.append("epsilon")
        cand = CandidateAudit(r.batch_size, r.throughput, r.itl, eff, tuple(reasons))
        audit.append(cand)
        # rows ascend in B, so strict ">" keeps the smaller B on ties
        if not reasons and (best is None or cand.throughput > best.throughput):
            best = cand
    if best is None:
        return BCAResult(None, None, None, None, bound, epsilon, False, tuple(audit))
    return BCAResult(best.batch_size, best.throughput, best.itl, best.efficiency, bound,
                     epsilon, True, tuple(audit))


# ---------------------------------------------------------------------------
# memory and replicas


@dataclass(frozen=True)
class MemoryRecommendation:
    kv_bytes: int
    device_fraction: float
    freed_fraction: float
    capped: bool
    tokens_per_request: int


def length_percentile(workload: WorkloadSpec, percentile: float) -> int:
    """Total request length (input + output) at ``percentile`` of the workload."""
    if not 0 < percentile <= 1:
        raise InvalidWorkloadError(f"percentile must lie in (0, 1], got {percentile}")
    totals = np.array([r.total_len for r in generate_workload(workload)])
    return int(np.quantile(totals, percentile, method="higher"))


def recommend_memory(geom: ModelGeometry, hw: HardwareProfile, b_opt: int,
                     workload: WorkloadSpec, percentile: float = 1.0,
                     block_size: int = 16) -> MemoryRecommendation:
    """KV bytes for ``b_opt`` requests at the workload's length percentile.

    The executor reserve is the slice of device memory the engine never
    claims (``1 - memory_util_fraction``).
    """
    if b_opt < 1:
        raise InvalidSpecError("b_opt must be >= 1")
    tokens = length_percentile(workload, percentile)
    per_request = -(-tokens // block_size) * block_size
    kv = b_opt * per_request * geom.kv_bytes_per_token
    capacity = max(int(kv_capacity_bytes(hw, geom)), 0)
    capped = kv > capacity
    if capped:
        kv = capacity
    reserve = (1 - hw.memory_util_fraction) * hw.device_memory
    fraction = (geom.weight_bytes + kv + reserve) / hw.device_memory
    freed = max(0.0, hw.memory_util_fraction - fraction)
    return MemoryRecommendation(kv, fraction, freed, capped, tokens)


def workspace_bytes(spec: ModelSpec, max_batched_tokens: int) -> int:
    """Activation workspace for the largest forward pass: hidden states plus logits."""
    return max_batched_tokens * (12 * spec.hidden_dim + spec.vocab_size) * spec.dtype_bytes


def per_instance_bytes(geom: ModelGeometry, spec: ModelSpec, kv_bytes: int,
                       max_batched_tokens: int) -> int:
    return geom.weight_bytes + kv_bytes + workspace_bytes(spec, max_batched_tokens)


def recommend_replicas(hw: HardwareProfile, per_instance: float) -> int:
    if not per_instance > 0:
        raise InvalidSpecError("per-instance bytes must be positive")
    return max(1, math.floor(hw.engine_memory / per_instance))


def advise(curve: PerfCurve, slo: SLOSpec, epsilon: float,
           config: RunConfig | None = None, percentile: float = 1.0) -> BCAResult:
    """``find_bopt`` plus memory and replica recommendations when a config is given."""
    result = find_bopt(curve, slo, epsilon)
    if config is None or not result.feasible:
        return result
    geom = derive_geometry(config.model)
    mem = recommend_memory(geom, config.hardware, result.b_opt, config.workload, percentile,
                           config.block_size)
    per = per_instance_bytes(geom, config.model, mem.kv_bytes,
                             config.scheduler.max_batched_tokens)
    return BCAResult(**{**result.__dict__, "memory": mem,
                        "replicas": recommend_replicas(config.hardware, per)})


# ---------------------------------------------------------------------------
# calibration

MIN_CALIBRATION_ROWS = 4
HIGH_RESIDUAL = 0.05


@dataclass(frozen=True)
class CalibrationGrid:
    mem_efficiency: np.ndarray = field(default_factory=lambda: np.linspace(0.2, 1.0, 81))
    compute_efficiency: np.ndarray = field(default_factory=lambda: np.linspace(0.2, 1.0, 81))
    c0: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 0.02, 201))
    c1: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 0.0005, 201))

    def axes(self) -> tuple[np.ndarray, ...]:
        return (self.mem_efficiency, self.compute_efficiency, self.c0, self.c1)


@dataclass(frozen=True)
class CalibrationResult:
    mem_efficiency: float
    compute_efficiency: float
    c0: float
    c1: float
    residual: float
    high_residual: bool
    at_bounds: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self),
                "at_bounds": list(self.at_bounds)}

    def apply(self, config: RunConfig) -> RunConfig:
        return with_params(config, mem_efficiency=self.mem_efficiency,
                           compute_efficiency=self.compute_efficiency, c0=self.c0, c1=self.c1)


_PARAMS = ("mem_efficiency", "compute_efficiency", "c0", "c1")


def _compress(profile: StepProfile) -> _Weighted:
    """Merge identical steps; timing is a per-step function, so counts suffice."""
    cols = [profile.kind_decode.astype(float), profile.members]
    for g in GROUP_ORDER:
        cols += [profile.flops[g], profile.bytes[g]]
    table = np.column_stack(cols)
    uniq, counts = np.unique(table, axis=0, return_counts=True)
    return _Weighted(uniq, counts.astype(float), profile.total_tokens)


class _Weighted:
    __slots__ = ("table", "counts", "total_tokens")

    def __init__(self, table, counts, total_tokens):
        self.table = table
        self.counts = counts
        self.total_tokens = total_tokens


def _profile_throughput(w: _Weighted, peaks: tuple[float, ...], bandwidth: float,
                        me, ce, c0, c1) -> np.ndarray:
    """Throughput of one step profile for every parameter combination.

    Parameters are arrays broadcast against each other; the result has their
    broadcast shape.
    """
    me, ce, c0, c1 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (me, ce, c0, c1)))
    shape = me.shape
    me, ce, c0, c1 = (x.reshape(1, -1) for x in (me, ce, c0, c1))
    t = w.table
    gpu = np.zeros((len(t), me.shape[1]))
    for k, peak in enumerate(peaks):
        flops = t[:, 2 + 2 * k, None]
        nbytes = t[:, 3 + 2 * k, None]
        gpu += np.maximum(flops / (ce * peak), nbytes / (me * bandwidth))
    decode_members = (t[:, 0] * t[:, 1])[:, None]
    wall = gpu + c0 + c1 * decode_members
    return (w.total_tokens / (w.counts @ wall)).reshape(shape)


def calibrate(measured: PerfCurve, config: RunConfig,
              grid: CalibrationGrid | None = None) -> CalibrationResult:
    """Fit (mem_efficiency, compute_efficiency, c0, c1) to measured throughput.

    Minimizes the mean relative throughput error over the curve's batch
    sizes. Throughput pins down little more than a per-step intercept and a
    per-request slope, so memory efficiency and the per-request CPU cost
    trade off along a shallow ridge where plain coordinate descent stalls.
    The search therefore visits every memory-efficiency grid value: a
    coarse scan of the other three parameters seeds coordinate descent over
    them, and the best point then gets a final descent over all four.
    Everything runs on fixed grids in a fixed order, so the fit is
    deterministic. Needs all-at-once arrivals.
    """
    if len(measured.rows) < MIN_CALIBRATION_ROWS:
        raise InsufficientDataError(
            f"calibration needs at least {MIN_CALIBRATION_ROWS} curve rows, "
            f"got {len(measured.rows)}")
    grid = grid or CalibrationGrid()
    axes = grid.axes()
    hw = config.hardware
    peaks = tuple(hw.group_peak_flops(g) for g in GROUP_ORDER)
    profiles = [_compress(profile_steps(config.with_batch_size(r.batch_size)))
                for r in measured.rows]
    target = np.array([r.throughput for r in measured.rows])

    def errors(idx_arrays) -> np.ndarray:
        values = [ax[i] for ax, i in zip(axes, idx_arrays)]
        sims = [_profile_throughput(w, peaks, hw.dram_bandwidth, *values) for w in profiles]
        return sum(np.abs(sim - t) / t for sim, t in zip(sims, target)) / len(profiles)

    def descend(idx: list[int], free: tuple[int, ...]) -> tuple[list[int], float]:
        best = float(errors([np.array(i) for i in idx]))
        changed = True
        while changed:
            changed = False
            for k in free:
                trial = [np.full(len(axes[k]), i) for i in idx]
                trial[k] = np.arange(len(axes[k]))
                errs = errors(trial)
                j = int(np.argmin(errs))
                if errs[j] < best:
                    best, idx, changed = float(errs[j]), idx[:k] + [j] + idx[k + 1:], True
        return idx, best

    coarse = [np.arange(0, len(ax), max(1, (len(ax) - 1) // 8)) for ax in axes]
    mesh = np.meshgrid(*coarse[1:], indexing="ij")
    best_idx: list[int] = []
    best_err = math.inf
    for i in range(len(axes[0])):
        seed_errs = errors([np.full(mesh[0].size, i)] + [m.ravel() for m in mesh])
        j = int(np.argmin(seed_errs))
        start = [i] + [int(m.ravel()[j]) for m in mesh]
        idx, err = descend(start, (1, 2, 3))
        if err < best_err:
            best_idx, best_err = idx, err
    best_idx, best_err = descend(best_idx, (0, 1, 2, 3))
    values = [float(ax[i]) for ax, i in zip(axes, best_idx)]
    at_bounds = tuple(name for name, ax, i in zip(_PARAMS, axes, best_idx)
                      if i in (0, len(ax) - 1))
    return CalibrationResult(*values, residual=best_err,
                             high_residual=best_err > HIGH_RESIDUAL, at_bounds=at_bounds)
