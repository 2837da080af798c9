"""FLOP and DRAM-byte accounting per kernel group, plus roofline analysis.

Decode attention books only K/V cache reads; writing the current token's
K/V into the cache is a separate ``other`` kernel (``kv_write_cost``), and
Q/K/V/O projections are booked under ``matmul``. With that split a
full-head fp16 decode attention kernel has an arithmetic intensity of
exactly ``2 / dtype_bytes`` regardless of batch size or context length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

from batchgap.core import HardwareProfile, ModelGeometry, ModelSpec
from batchgap.errors import EmptyBatchError, UndefinedIntensityError

# intermediate activation tensor passes per layer, per token
ACTIVATION_PASSES = 12
# score + probability matrices, each written once and read once, when unfused
NAIVE_SCORE_PASSES = 4

Boundedness = Literal["memory-bound", "compute-bound"]


@dataclass(frozen=True)
class KernelCost:
    flops: float
    bytes: float
    kernel_group: str

    def __post_init__(self) -> None:
        if self.flops < 0 or self.bytes < 0:
            raise ValueError("flops and bytes must be non-negative")

    def __add__(self, other: KernelCost) -> KernelCost:
        if other.kernel_group != self.kernel_group:
            raise ValueError("cannot add costs of different kernel groups")
        return KernelCost(self.flops + other.flops, self.bytes + other.bytes, self.kernel_group)


@dataclass(frozen=True)
class RooflinePoint:
    arithmetic_intensity: float
    attainable_flops: float
    boundedness: Boundedness


def arithmetic_intensity(cost: KernelCost) -> float:
    if cost.bytes <= 0:
        raise UndefinedIntensityError(
            f"{cost.kernel_group} cost moves no bytes; arithmetic intensity is undefined"
        )
    return cost.flops / cost.bytes


def ridge_point(hw: HardwareProfile) -> float:
    return hw.peak_flops / hw.dram_bandwidth


def roofline(cost: KernelCost, hw: HardwareProfile) -> RooflinePoint:
    """Place ``cost`` on the raw (efficiency-free) roofline of ``hw``.

    A kernel sitting exactly on the ridge is classified memory-bound.
    """
    ai = arithmetic_intensity(cost)
    attainable = min(hw.peak_flops, ai * hw.dram_bandwidth)
    bound: Boundedness = "memory-bound" if ai <= ridge_point(hw) else "compute-bound"
    return RooflinePoint(ai, attainable, bound)


def activation_bytes_per_token(spec: ModelSpec) -> int:
    return ACTIVATION_PASSES * spec.hidden_dim * spec.num_layers * spec.dtype_bytes


def _check_lengths(lengths: Sequence[int], what: str) -> None:
    if len(lengths) == 0:
        raise EmptyBatchError(f"{what} needs at least one sequence")
    if min(lengths) < 1:
        raise ValueError(f"{what} sequence lengths must be >= 1")


def decode_attention_cost(geom: ModelGeometry, spec: ModelSpec,
                          seq_lens: Sequence[int]) -> KernelCost:
    """One decode step of attention over sequences of the given context lengths.

    Each sequence does a ``q K^T`` and a ``p V`` mat-vec per layer over its
    ``s`` cached tokens (4·L·d·s FLOPs) and reads its K and V cache once.
    """
    _check_lengths(seq_lens, "decode attention")
    total = sum(seq_lens)
    L = spec.num_layers
    flops = 4 * L * spec.hidden_dim * total
    kv_read = 2 * L * spec.num_kv_heads * spec.head_dim * spec.dtype_bytes * total
    return KernelCost(flops, kv_read, "attention")


def kv_write_cost(geom: ModelGeometry, num_tokens: int) -> KernelCost:
    """Cache write of ``num_tokens`` freshly computed K/V vectors."""
    return KernelCost(0, geom.kv_bytes_per_token * num_tokens, "other")


def decode_matmul_cost(geom: ModelGeometry, spec: ModelSpec, batch_size: int) -> KernelCost:
    if batch_size < 1:
        raise EmptyBatchError("decode matmul needs a batch of at least one request")
    flops = 2 * batch_size * (geom.linear_param_count + geom.lm_head_param_count)
    traffic = geom.weight_bytes + 2 * batch_size * activation_bytes_per_token(spec)
    return KernelCost(flops, traffic, "matmul")


def prefill_cost(geom: ModelGeometry, spec: ModelSpec, prompt_lens: Sequence[int],
                 fused: bool = True) -> dict[str, KernelCost]:
    """Matmul and attention cost of one batched prefill pass.

    The LM head runs only on the last position of each prompt, so a one-token
    prompt costs exactly what a single-request decode matmul does.
    ``fused=False`` books the quadratic score/probability traffic that an
    unfused attention kernel sends through DRAM.
    """
    _check_lengths(prompt_lens, "prefill")
    n_tokens = sum(prompt_lens)
    squares = sum(s * s for s in prompt_lens)
    L = spec.num_layers
    matmul = KernelCost(
        2 * n_tokens * geom.linear_param_count + 2 * len(prompt_lens) * geom.lm_head_param_count,
        geom.weight_bytes + 2 * n_tokens * activation_bytes_per_token(spec),
        "matmul",
    )
    attn_bytes = geom.kv_bytes_per_token * n_tokens
    if not fused:
        attn_bytes += NAIVE_SCORE_PASSES * L * spec.num_heads * spec.dtype_bytes * squares
    attention = KernelCost(4 * L * spec.hidden_dim * squares, attn_bytes, "attention")
    return {"matmul": matmul, "attention": attention}


def decode_costs(geom: ModelGeometry, spec: ModelSpec,
                 seq_lens: Sequence[int]) -> dict[str, KernelCost]:
    """All kernel groups of one decode step (one new token per sequence)."""
    return {
        "matmul": decode_matmul_cost(geom, spec, len(seq_lens)),
        "attention": decode_attention_cost(geom, spec, seq_lens),
        "other": kv_write_cost(geom, len(seq_lens)),
    }


def roofline_table(geom: ModelGeometry, spec: ModelSpec, hw: HardwareProfile,
                   batch_sizes: Iterable[int], seq_len: int) -> list[dict]:
    """Decode-step roofline rows: attention rows first, then matmul, each by B."""
    sizes = sorted(set(batch_sizes))
    rows = []
    for group in ("attention", "matmul"):
        for b in sizes:
            if group == "attention":
                cost = decode_attention_cost(geom, spec, [seq_len] * b)
            else:
                cost = decode_matmul_cost(geom, spec, b)
            point = roofline(cost, hw)
            rows.append({
                "kernel_group": group,
                "batch_size": b,
                "flops": cost.flops,
                "bytes": cost.bytes,
                "ai": point.arithmetic_intensity,
                "attainable_flops": point.attainable_flops,
                "boundedness": point.boundedness,
            })
    return rows
