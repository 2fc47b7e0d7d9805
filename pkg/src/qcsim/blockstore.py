"""Per-rank owner of compressed blocks, the two-slot scratch arena and the block cache."""
from __future__ import annotations

import hashlib
import math
import time
from collections import OrderedDict
from functools import lru_cache
from typing import Callable, Hashable

import numpy as np

from .codec import (
    CodecId, CompressedBlock, DEFAULT_BACKEND, ErrorBound, BoundMode,
    compress_block, decompress_block,
)
from .core import RankLayout
from .errors import ContractViolation
from .ladder import LadderState

AMPLITUDE_BYTES = 16
CACHE_LINES = 64
CACHE_DISABLE_AFTER = 256


def scratch_bytes(layout: RankLayout) -> int:
    """Second term of the per-rank byte count: two raw blocks."""
    return 2 * ((1 << (layout.n + 4)) // (layout.r * layout.n_b))


@lru_cache(maxsize=64)
def zero_payload(codec: CodecId, bound: ErrorBound, count: int, backend) -> bytes:
    return compress_block(np.zeros(count, np.complex128), bound, codec, backend).payload


def _digest(cb: CompressedBlock) -> tuple[bytes, int]:
    return hashlib.blake2b(cb.payload, digest_size=16).digest(), len(cb.payload)


class BlockCache:
    """LRU map (op, CB1, CB2) -> (CB1', CB2') keyed by payload digests."""

    def __init__(self, capacity: int = CACHE_LINES, disable_after: int = CACHE_DISABLE_AFTER,
                 enabled: bool = True):
        self.capacity = capacity
        self.disable_after = disable_after
        self.enabled = enabled
        self.lines: OrderedDict[Hashable, tuple] = OrderedDict()
        self.lookups = 0
        self.hits = 0
        self.disabled_at: int | None = None

    def key(self, descriptor: Hashable, *blocks: CompressedBlock | None) -> Hashable | None:
        if not self.enabled:
            return None
        return (descriptor, tuple(None if b is None else _digest(b) for b in blocks))

    def lookup(self, key: Hashable | None) -> tuple | None:
        if key is None or not self.enabled:
            return None
        self.lookups += 1
        value = self.lines.get(key)
        if value is not None:
            self.hits += 1
            self.lines.move_to_end(key)
        self.autodisable()
        return value

    def insert(self, key: Hashable | None, value: tuple) -> None:
        if key is None or not self.enabled:
            return
        self.lines[key] = value
        self.lines.move_to_end(key)
        while len(self.lines) > self.capacity:
            self.lines.popitem(last=False)

    def autodisable(self) -> bool:
        if self.enabled and self.hits == 0 and self.lookups >= self.disable_after:
            self.enabled = False
            self.disabled_at = self.lookups
            self.lines.clear()
        return self.enabled

    @property
    def hit_rate(self) -> float:
        return self.hits / self.lookups if self.lookups else 0.0


# audit hook: (rank, tag, values before compression, resulting block)
AuditHook = Callable[[int, tuple, np.ndarray, CompressedBlock], None]


class BlockStore:
    """Compressed partial state vector of one rank.

    At most two blocks are decompressed at a time; both live in a fixed
    scratch arena.  ``accounted`` is the running per-rank byte count
    ``sum(sizeof(CB_i)) + 2 * raw block size``.
    """

    def __init__(self, layout: RankLayout, rank: int, budget: float = math.inf,
                 ladder: LadderState | None = None, codec: CodecId = CodecId.SOLUTION_C,
                 backend=None, cache: bool = True):
        if codec is CodecId.LOSSLESS_ONLY:
            raise ValueError("store codec must be SOLUTION_C or SOLUTION_D")
        self.layout = layout
        self.rank = rank
        self.budget = budget
        self.ladder = ladder or LadderState()
        self.codec = codec
        self.backend = backend or DEFAULT_BACKEND
        self.cache = BlockCache(enabled=cache)
        self.blocks: list[CompressedBlock] = []
        self._scratch = np.zeros((2, layout.b), dtype=np.complex128)
        self._slots: list[tuple | None] = [None, None]
        self.scratch_bytes = scratch_bytes(layout)
        self._compressed = 0
        self.peak_accounted = 0
        self.watermark = 0
        self.audit: AuditHook | None = None
        self.t_compress = self.t_decompress = self.t_compute = 0.0
        self.gate_index = 0
        self.gate_delta = 0.0
        self.touched = 0

    # -- setup ------------------------------------------------------------

    def initialize(self, amplitudes: dict[int, complex] | None = None) -> None:
        """Compress the initial state; `amplitudes` maps local index -> value."""
        self.blocks = []
        self._compressed = 0
        buf = np.zeros(self.layout.b, dtype=np.complex128)
        zero = self._compress(buf)
        for blk in range(self.layout.n_b):
            items = {i: a for i, a in (amplitudes or {}).items() if i // self.layout.b == blk}
            if items:
                buf[:] = 0
                for i, a in items.items():
                    buf[i % self.layout.b] = a
                cb = self._compress(buf)
            else:
                cb = zero
            self.blocks.append(cb)
            self._compressed += cb.nbytes
        self._observe()
        self.ladder.escalate_if_needed(self.accounted, self.budget, self.gate_index)

    def restore(self, blocks: list[CompressedBlock]) -> None:
        if len(blocks) != self.layout.n_b:
            raise ValueError("block count does not match layout")
        self.blocks = list(blocks)
        self._compressed = sum(cb.nbytes for cb in blocks)
        self._observe()

    # -- accounting ---------------------------------------------------------

    @property
    def compressed_bytes(self) -> int:
        return self._compressed

    @property
    def accounted(self) -> int:
        return self._compressed + self.scratch_bytes

    def recompute_accounted(self) -> int:
        return sum(cb.nbytes for cb in self.blocks) + self.scratch_bytes

    def _observe(self) -> None:
        self.peak_accounted = max(self.peak_accounted, self.accounted)

    @property
    def bound(self) -> ErrorBound:
        return self.ladder.bound

    @property
    def write_codec(self) -> CodecId:
        return CodecId.LOSSLESS_ONLY if self.bound.mode is BoundMode.LOSSLESS else self.codec

    def begin_gate(self, gate_index: int) -> None:
        self.gate_index = gate_index
        self.gate_delta = 0.0
        self.touched = 0

    def in_flight(self) -> int:
        return sum(s is not None for s in self._slots)

    # -- scratch slots ------------------------------------------------------

    def _claim(self, tag: tuple) -> np.ndarray:
        if tag in self._slots:
            raise ContractViolation(f"rank {self.rank}: {tag} already decompressed")
        try:
            slot = self._slots.index(None)
        except ValueError:
            raise ContractViolation(
                f"rank {self.rank}: both scratch slots pinned, cannot fetch {tag}"
            ) from None
        self._slots[slot] = tag
        self.watermark = max(self.watermark, self.in_flight())
        return self._scratch[slot]

    def _free(self, tag: tuple) -> None:
        try:
            self._slots[self._slots.index(tag)] = None
        except ValueError:
            raise ContractViolation(f"rank {self.rank}: {tag} is not decompressed") from None

    def _decompress_into(self, buf: np.ndarray, cb: CompressedBlock) -> None:
        t0 = time.perf_counter()
        buf[:] = decompress_block(cb)
        self.t_decompress += time.perf_counter() - t0

    def _compress(self, buf: np.ndarray, bound: ErrorBound | None = None) -> CompressedBlock:
        bound = bound or self.bound
        codec = CodecId.LOSSLESS_ONLY if bound.mode is BoundMode.LOSSLESS else self.codec
        t0 = time.perf_counter()
        cb = compress_block(buf, bound, codec, self.backend)
        self.t_compress += time.perf_counter() - t0
        return cb

    # -- block operations ---------------------------------------------------

    def fetch(self, block_id: int) -> np.ndarray:
        buf = self._claim(("own", block_id))
        self._decompress_into(buf, self.blocks[block_id])
        return buf

    def release(self, block_id: int) -> None:
        """Return a fetched block's slot without writing it back."""
        self._free(("own", block_id))

    def store(self, block_id: int, buf: np.ndarray, *, defer_check: bool = False) -> CompressedBlock:
        tag = ("own", block_id)
        if tag not in self._slots:
            raise ContractViolation(f"rank {self.rank}: store of block {block_id} without fetch")
        cb = self._compress(buf)
        if self.audit is not None:
            self.audit(self.rank, tag, buf.copy(), cb)
        self._free(tag)
        self._put(block_id, cb, defer_check)
        return cb

    def replace(self, block_id: int, cb: CompressedBlock, *, defer_check: bool = False) -> None:
        """Install an already-compressed block (cache hit or exchange result)."""
        if ("own", block_id) in self._slots:
            raise ContractViolation(f"rank {self.rank}: block {block_id} is decompressed")
        self._put(block_id, cb, defer_check)

    def _put(self, block_id: int, cb: CompressedBlock, defer_check: bool) -> None:
        self._compressed += cb.nbytes - self.blocks[block_id].nbytes
        self.blocks[block_id] = cb
        self.gate_delta = max(self.gate_delta, cb.bound.delta)
        self.touched += 1
        self._observe()
        if not defer_check:
            self.check_budget()

    def check_budget(self) -> bool:
        return self.ladder.escalate_if_needed(self.accounted, self.budget, self.gate_index)

    def load_foreign(self, cb: CompressedBlock, block_id: int) -> np.ndarray:
        """Decompress a partner rank's block into scratch."""
        buf = self._claim(("foreign", block_id))
        self._decompress_into(buf, cb)
        return buf

    def seal_foreign(self, block_id: int, buf: np.ndarray, bound: ErrorBound) -> CompressedBlock:
        """Compress a partner's updated block at the partner's bound and free the slot."""
        tag = ("foreign", block_id)
        if tag not in self._slots:
            raise ContractViolation(f"rank {self.rank}: foreign block {block_id} not loaded")
        cb = self._compress(buf, bound)
        if self.audit is not None:
            self.audit(self.rank, tag, buf.copy(), cb)
        self._free(tag)
        return cb

    def is_zero(self, block_id: int) -> bool:
        cb = self.blocks[block_id]
        return cb.payload == zero_payload(cb.codec, cb.bound, cb.count, self.backend)

    def read_block(self, block_id: int) -> np.ndarray:
        """Copy of one block's amplitudes (read-only access, no slot held)."""
        buf = self.fetch(block_id)
        out = buf.copy()
        self.release(block_id)
        return out
