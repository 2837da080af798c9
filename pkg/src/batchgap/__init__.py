"""Analytical simulator of batched LLM serving and a batch-size advisor."""

from batchgap.advisor import (
    BCAResult,
    CalibrationResult,
    CurveRow,
    PerfCurve,
    SLOSpec,
    advise,
    build_curve,
    calibrate,
    find_bopt,
    fixture_curve_text,
    ingest_curve,
    read_curve,
    recommend_memory,
    recommend_replicas,
    write_curve,
)
from batchgap.config import RunConfig, load_config
from batchgap.core import (
    HardwareProfile,
    ModelGeometry,
    ModelSpec,
    Request,
    WorkloadSpec,
    derive_geometry,
    generate_workload,
    load_preset,
)
from batchgap.costmodel import (
    KernelCost,
    RooflinePoint,
    arithmetic_intensity,
    decode_attention_cost,
    decode_matmul_cost,
    prefill_cost,
    ridge_point,
    roofline,
)
from batchgap.engine import (
    CpuOverheadModel,
    Metrics,
    StepTiming,
    TraceEvent,
    run,
    run_replicated,
    step_time,
    utilization_proxies,
)
from batchgap.kvcache import PagedAllocator, new_allocator
from batchgap.scheduler import Scheduler, SchedulerConfig, StepPlan, drain

__all__ = [
    "BCAResult",
    "CalibrationResult",
    "CpuOverheadModel",
    "CurveRow",
    "HardwareProfile",
    "KernelCost",
    "Metrics",
    "ModelGeometry",
    "ModelSpec",
    "PagedAllocator",
    "PerfCurve",
    "Request",
    "RooflinePoint",
    "RunConfig",
    "SLOSpec",
    "Scheduler",
    "SchedulerConfig",
    "StepPlan",
    "StepTiming",
    "TraceEvent",
    "WorkloadSpec",
    "advise",
    "arithmetic_intensity",
    "build_curve",
    "calibrate",
    "decode_attention_cost",
    "decode_matmul_cost",
    "derive_geometry",
    "drain",
    "find_bopt",
    "fixture_curve_text",
    "generate_workload",
    "ingest_curve",
    "load_config",
    "load_preset",
    "new_allocator",
    "prefill_cost",
    "read_curve",
    "recommend_memory",
    "recommend_replicas",
    "ridge_point",
    "roofline",
    "run",
    "run_replicated",
    "step_time",
    "utilization_proxies",
    "write_curve",
]
