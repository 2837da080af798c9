"""Run configuration: one YAML document drives every subcommand.

Each of ``hardware`` and ``model`` is either a preset name or a mapping. A
mapping may name a ``preset`` and override individual fields; without a
``preset`` key it must spell out the full profile. ``workload``,
``scheduler`` and ``cpu_model`` are mappings of field overrides on the
defaults. A top-level ``seed`` overrides ``workload.seed``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from batchgap.core import (
    HardwareProfile,
    ModelSpec,
    WorkloadSpec,
    hardware_from_dict,
    load_hardware_preset,
    load_model_preset,
    model_from_dict,
)
from batchgap.engine import CpuOverheadModel
from batchgap.errors import BatchGapError, ConfigError
from batchgap.kvcache import DEFAULT_BLOCK_SIZE
from batchgap.scheduler import SchedulerConfig

_SECTIONS = {"hardware", "model", "workload", "scheduler", "cpu_model", "seed", "block_size",
             "fused_prefill"}


@dataclass(frozen=True)
class RunConfig:
    hardware: HardwareProfile = field(default_factory=lambda: load_hardware_preset("h100-64g"))
    model: ModelSpec = field(default_factory=lambda: load_model_preset("opt-1.3b"))
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    cpu_model: CpuOverheadModel = field(default_factory=CpuOverheadModel)
    block_size: int = DEFAULT_BLOCK_SIZE
    fused_prefill: bool = True

    @property
    def seed(self) -> int:
        return self.workload.seed

    def with_batch_size(self, batch_size: int) -> RunConfig:
        return replace(self, scheduler=replace(self.scheduler, max_num_seqs=batch_size))

    def to_dict(self) -> dict:
        return {
            "hardware": asdict(self.hardware),
            "model": asdict(self.model),
            "workload": asdict(self.workload),
            "scheduler": asdict(self.scheduler),
            "cpu_model": asdict(self.cpu_model),
            "block_size": self.block_size,
            "fused_prefill": self.fused_prefill,
        }


def _override(cls, base, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    try:
        return replace(base, **data)
    except BatchGapError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _profile(value: Any, section: str, load_preset, from_dict):
    if value is None:
        return None
    if isinstance(value, str):
        return load_preset(value)
    if not isinstance(value, dict):
        raise ConfigError(f"{section} must be a preset name or a mapping")
    data = dict(value)
    name = data.pop("preset", None)
    if name is None:
        return from_dict(data, section)
    base = load_preset(name)
    merged = {**asdict(base), **data}
    return from_dict(merged, section)


def config_from_dict(data: dict | None) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    unknown = set(data) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    cfg = RunConfig()
    try:
        hw = _profile(data.get("hardware"), "hardware", load_hardware_preset, hardware_from_dict)
        model = _profile(data.get("model"), "model", load_model_preset, model_from_dict)
        workload = _override(WorkloadSpec, cfg.workload, data.get("workload") or {}, "workload")
        if "seed" in data:
            workload = replace(workload, seed=int(data["seed"]))
        sched = _override(SchedulerConfig, cfg.scheduler, data.get("scheduler") or {}, "scheduler")
        cpu = _override(CpuOverheadModel, cfg.cpu_model, data.get("cpu_model") or {}, "cpu_model")
    except BatchGapError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    block = data.get("block_size", cfg.block_size)
    if not isinstance(block, int) or block < 1:
        raise ConfigError("block_size must be a positive integer")
    return RunConfig(hardware=hw or cfg.hardware, model=model or cfg.model, workload=workload,
                     scheduler=sched, cpu_model=cpu, block_size=block,
                     fused_prefill=bool(data.get("fused_prefill", True)))


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(data)
