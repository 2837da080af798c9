"""Domain types, shipped presets and deterministic workload generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from importlib import resources
from typing import Literal

import numpy as np
import yaml

from batchgap.errors import InvalidSpecError, InvalidWorkloadError, PresetNotFoundError

KernelGroup = Literal["attention", "matmul", "other"]


@dataclass(frozen=True)
class HardwareProfile:
    """Capability envelope of one accelerator.

    ``peak_flops`` and ``dram_bandwidth`` define the roofline. Matmul kernels
    run on tensor cores and are timed against ``matmul_peak_flops`` when it is
    set; every other kernel group uses ``peak_flops``.
    """

    peak_flops: float
    dram_bandwidth: float
    device_memory: float
    mem_efficiency: float = 0.65
    compute_efficiency: float = 0.6
    memory_util_fraction: float = 0.9
    matmul_peak_flops: float | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        for attr in ("peak_flops", "dram_bandwidth", "device_memory"):
            if not getattr(self, attr) > 0:
                raise InvalidSpecError(f"{attr} must be positive, got {getattr(self, attr)}")
        if self.matmul_peak_flops is not None and not self.matmul_peak_flops > 0:
            raise InvalidSpecError("matmul_peak_flops must be positive when set")
        for attr in ("mem_efficiency", "compute_efficiency", "memory_util_fraction"):
            value = getattr(self, attr)
            if not 0 < value <= 1:
                raise InvalidSpecError(f"{attr} must lie in (0, 1], got {value}")

    def group_peak_flops(self, group: str) -> float:
        if group == "matmul" and self.matmul_peak_flops is not None:
            return self.matmul_peak_flops
        return self.peak_flops

    @property
    def engine_memory(self) -> float:
        """Bytes the serving engine may claim (weights + KV cache)."""
        return self.device_memory * self.memory_util_fraction


@dataclass(frozen=True)
class ModelSpec:
    name: str
    num_layers: int
    hidden_dim: int
    num_heads: int
    num_kv_heads: int
    head_dim: int
    ffn_dim: int
    vocab_size: int
    max_context: int
    dtype_bytes: int = 2
    learned_positions: bool = False
    tied_embeddings: bool = True
    # 2 for a plain up/down MLP, 3 for gated (SwiGLU) MLPs
    mlp_projections: int = 2

    def __post_init__(self) -> None:
        counts = ("num_layers", "hidden_dim", "num_heads", "num_kv_heads", "head_dim",
                  "ffn_dim", "vocab_size", "max_context", "dtype_bytes", "mlp_projections")
        for attr in counts:
            value = getattr(self, attr)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidSpecError(f"{attr} must be an integer >= 1, got {value!r}")
        if self.hidden_dim != self.num_heads * self.head_dim:
            raise InvalidSpecError(
                f"hidden_dim ({self.hidden_dim}) != num_heads * head_dim "
                f"({self.num_heads} * {self.head_dim})"
            )
        if self.num_heads % self.num_kv_heads:
            raise InvalidSpecError("num_kv_heads must divide num_heads")


@dataclass(frozen=True)
class ModelGeometry:
    linear_param_count: int
    embedding_param_count: int
    total_param_count: int
    weight_bytes: int
    kv_bytes_per_token: int
    # parameters of the output projection to the vocabulary
    lm_head_param_count: int


@dataclass(frozen=True)
class Request:
    id: int
    arrival_time: float
    input_len: int
    output_len: int

    @property
    def total_len(self) -> int:
        return self.input_len + self.output_len


@dataclass(frozen=True)
class WorkloadSpec:
    """Token-count-only workload description.

    In ``distribution`` mode lengths are drawn from log-normals whose
    log-space parameters are ``*_log_mean`` / ``*_log_sigma``, rounded, and
    clamped into ``[1, *_max]``. Output lengths are further clamped so every
    request fits in ``max_context``.
    """

    mode: Literal["fixed", "distribution"] = "fixed"
    fixed_input_len: int = 161
    fixed_output_len: int = 338
    input_log_mean: float = math.log(161) - 0.5
    input_log_sigma: float = 1.0
    output_log_mean: float = math.log(338) - 0.5
    output_log_sigma: float = 1.0
    input_max: int = 1024
    output_max: int = 1024
    num_requests: int = 2000
    arrival: Literal["all-at-once", "poisson"] = "all-at-once"
    rate: float = 1.0
    max_context: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("fixed", "distribution"):
            raise InvalidWorkloadError(f"unknown workload mode {self.mode!r}")
        if self.arrival not in ("all-at-once", "poisson"):
            raise InvalidWorkloadError(f"unknown arrival process {self.arrival!r}")
        if self.num_requests < 1:
            raise InvalidWorkloadError("num_requests must be >= 1")
        if self.arrival == "poisson" and not self.rate > 0:
            raise InvalidWorkloadError("poisson arrivals need a positive rate")
        if self.mode == "fixed":
            if self.fixed_input_len < 1 or self.fixed_output_len < 1:
                raise InvalidWorkloadError("fixed lengths must be >= 1")
            if self.fixed_input_len + self.fixed_output_len > self.max_context:
                raise InvalidWorkloadError(
                    f"request of {self.fixed_input_len}+{self.fixed_output_len} tokens "
                    f"exceeds max_context {self.max_context}"
                )
        else:
            if self.input_max < 1 or self.output_max < 1:
                raise InvalidWorkloadError("truncation bounds must be >= 1")
            if self.input_log_sigma < 0 or self.output_log_sigma < 0:
                raise InvalidWorkloadError("log sigma must be non-negative")
            if min(self.input_max, self.max_context - 1) < 1:
                raise InvalidWorkloadError("no room for an output token under max_context")


def derive_geometry(spec: ModelSpec) -> ModelGeometry:
    d = spec.hidden_dim
    kv_dim = spec.num_kv_heads * spec.head_dim
    # q and o projections are d x d; k and v shrink with grouped-query attention
    per_layer = 2 * d * d + 2 * d * kv_dim + spec.mlp_projections * d * spec.ffn_dim
    linear = spec.num_layers * per_layer
    embedding = spec.vocab_size * d
    if spec.learned_positions:
        embedding += spec.max_context * d
    if not spec.tied_embeddings:
        embedding += spec.vocab_size * d
    total = linear + embedding
    return ModelGeometry(
        linear_param_count=linear,
        embedding_param_count=embedding,
        total_param_count=total,
        weight_bytes=total * spec.dtype_bytes,
        kv_bytes_per_token=2 * spec.num_layers * kv_dim * spec.dtype_bytes,
        lm_head_param_count=spec.vocab_size * d,
    )


def _sample_lengths(rng: np.random.Generator, mu: float, sigma: float, n: int,
                    upper: np.ndarray | int) -> np.ndarray:
    raw = np.rint(rng.lognormal(mean=mu, sigma=sigma, size=n))
    return np.clip(raw, 1, upper).astype(np.int64)


def generate_workload(ws: WorkloadSpec) -> list[Request]:
    """Build the request list; a pure function of ``ws`` (seed included)."""
    n = ws.num_requests
    rng = np.random.default_rng(ws.seed)
    if ws.mode == "fixed":
        inputs = np.full(n, ws.fixed_input_len, dtype=np.int64)
        outputs = np.full(n, ws.fixed_output_len, dtype=np.int64)
    else:
        input_cap = min(ws.input_max, ws.max_context - 1)
        inputs = _sample_lengths(rng, ws.input_log_mean, ws.input_log_sigma, n, input_cap)
        output_cap = np.minimum(ws.output_max, ws.max_context - inputs)
        outputs = _sample_lengths(rng, ws.output_log_mean, ws.output_log_sigma, n, output_cap)
    if ws.arrival == "all-at-once":
        arrivals = np.zeros(n)
    else:
        arrivals = np.cumsum(rng.exponential(1.0 / ws.rate, size=n))
    return [
        Request(id=i, arrival_time=float(arrivals[i]), input_len=int(inputs[i]),
                output_len=int(outputs[i]))
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# preset catalog

_PRESET_ROOT = resources.files("batchgap") / "presets"


def _catalog(kind: str) -> dict[str, object]:
    folder = _PRESET_ROOT / kind
    return {p.name[: -len(".yaml")]: p for p in folder.iterdir() if p.name.endswith(".yaml")}


def list_presets() -> dict[str, list[str]]:
    return {kind: sorted(_catalog(kind)) for kind in ("models", "hardware")}


def _build(cls, data: dict, source: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InvalidSpecError(f"{source}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise InvalidSpecError(f"{source}: {exc}") from None


def model_from_dict(data: dict, source: str = "model") -> ModelSpec:
    return _build(ModelSpec, data, source)


def hardware_from_dict(data: dict, source: str = "hardware") -> HardwareProfile:
    data = {k: (float(v) if k != "name" and v is not None else v) for k, v in data.items()}
    return _build(HardwareProfile, data, source)


def load_model_preset(name: str) -> ModelSpec:
    catalog = _catalog("models")
    if name not in catalog:
        raise PresetNotFoundError(f"unknown model preset {name!r}; valid: {sorted(catalog)}")
    return model_from_dict(yaml.safe_load(catalog[name].read_text()), name)


def load_hardware_preset(name: str) -> HardwareProfile:
    catalog = _catalog("hardware")
    if name not in catalog:
        raise PresetNotFoundError(f"unknown hardware preset {name!r}; valid: {sorted(catalog)}")
    return hardware_from_dict(yaml.safe_load(catalog[name].read_text()), name)


def load_preset(name: str) -> ModelSpec | HardwareProfile:
    """Load a model or hardware preset by name."""
    presets = list_presets()
    if name in presets["models"]:
        return load_model_preset(name)
    if name in presets["hardware"]:
        return load_hardware_preset(name)
    valid = presets["models"] + presets["hardware"]
    raise PresetNotFoundError(f"unknown preset {name!r}; valid presets: {valid}")


def kv_capacity_bytes(hw: HardwareProfile, geom: ModelGeometry, replicas: int = 1) -> float:
    """KV bytes left for one of ``replicas`` equal instances after weights."""
    return hw.engine_memory / replicas - geom.weight_bytes
