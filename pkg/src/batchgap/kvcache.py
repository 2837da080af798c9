"""Paged KV-cache block allocator with exact block accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from batchgap.core import Request
from batchgap.errors import DuplicateRequestError, InsufficientMemoryError, RequestNotFoundError

DEFAULT_BLOCK_SIZE = 16


@dataclass
class _Table:
    blocks: list[int] = field(default_factory=list)
    tokens: int = 0


class PagedAllocator:
    """Fixed pool of ``total_blocks`` blocks of ``block_size`` tokens each.

    ``allocate_prompt`` and ``append_token`` return False instead of raising
    when the pool is exhausted, leaving the state untouched.
    """

    def __init__(self, total_blocks: int, block_size: int = DEFAULT_BLOCK_SIZE):
        if total_blocks < 1:
            raise InsufficientMemoryError("allocator needs at least one block")
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        self.block_size = block_size
        self.total_blocks = total_blocks
        # popped from the end, so block 0 is handed out first
        self._free = list(range(total_blocks - 1, -1, -1))
        self._tables: dict[int, _Table] = {}

    @classmethod
    def from_capacity(cls, kv_capacity_bytes: float, block_size: int,
                      kv_bytes_per_token: int) -> PagedAllocator:
        block_bytes = block_size * kv_bytes_per_token
        total = math.floor(kv_capacity_bytes / block_bytes) if kv_capacity_bytes > 0 else 0
        if total < 1:
            raise InsufficientMemoryError(
                f"KV capacity of {kv_capacity_bytes:.0f} bytes is below one block "
                f"({block_bytes} bytes)"
            )
        return cls(total, block_size)

    @property
    def free_blocks(self) -> int:
        return len(self._free)

    @property
    def allocated_blocks(self) -> int:
        return self.total_blocks - len(self._free)

    def blocks_for(self, tokens: int) -> int:
        return -(-tokens // self.block_size)

    def __contains__(self, request_id: int) -> bool:
        return request_id in self._tables

    def tokens(self, request_id: int) -> int:
        return self._table(request_id).tokens

    def block_table(self, request_id: int) -> list[int]:
        return list(self._table(request_id).blocks)

    def _table(self, request_id: int) -> _Table:
        try:
            return self._tables[request_id]
        except KeyError:
            raise RequestNotFoundError(f"request {request_id} is not resident") from None

    def allocate_prompt(self, req: Request) -> bool:
        if req.id in self._tables:
            raise DuplicateRequestError(f"request {req.id} is already resident")
        need = self.blocks_for(req.input_len)
        if need > len(self._free):
            return False
        blocks = [self._free.pop() for _ in range(need)]
        self._tables[req.id] = _Table(blocks, req.input_len)
        return True

    def append_token(self, request_id: int) -> bool:
        table = self._table(request_id)
        if table.tokens % self.block_size == 0:
            if not self._free:
                return False
            table.blocks.append(self._free.pop())
        table.tokens += 1
        return True

    def release(self, request_id: int) -> int:
        table = self._tables.pop(request_id, None)
        if table is None:
            raise RequestNotFoundError(f"request {request_id} is not resident")
        # returned in reverse so a prompt-then-release round trip restores the free list
        self._free.extend(reversed(table.blocks))
        return len(table.blocks)

    def usage(self) -> float:
        return self.allocated_blocks / self.total_blocks

    def snapshot(self) -> tuple:
        """Hashable view of the full allocator state."""
        tables = tuple(sorted((rid, tuple(t.blocks), t.tokens) for rid, t in self._tables.items()))
        return (self.total_blocks, self.block_size, tuple(self._free), tables)


def new_allocator(kv_capacity_bytes: float, block_size: int,
                  kv_bytes_per_token: int) -> PagedAllocator:
    return PagedAllocator.from_capacity(kv_capacity_bytes, block_size, kv_bytes_per_token)
