"""Gate application on the blocked, compressed state.

Pair updates use separate real multiply/add passes so the result does not
depend on array shape, stride or SIMD path: the blocked simulator and the
dense reference produce bit-identical amplitudes in lossless mode.
"""
from __future__ import annotations

import enum
import struct
import time
import zlib
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from threading import Lock
from typing import Callable, Iterable, Sequence

import numpy as np

from .blockstore import BlockStore, zero_payload
from .codec import BoundMode, CompressedBlock, ErrorBound
from .core import Gate, Matrix4, QubitLocality, RankLayout, classify_qubit
from .errors import ContractViolation, CorruptionError, ExchangeError


def pair_update(a0: np.ndarray, a1: np.ndarray, u: Matrix4) -> tuple[np.ndarray, np.ndarray]:
    """(a0', a1') = U (a0, a1), evaluated as u11*a0 + u12*a1 with no fused ops.

    A real U acts on real and imaginary parts alike, so it is applied to the
    float view directly; the dropped ``u.imag * a`` terms are exact zeros.
    """
    if all(p.imag == 0 for p in u):
        f0, f1 = a0.view(np.float64), a1.view(np.float64)
        y0 = u[0].real * f0
        y0 += u[1].real * f1
        y1 = u[2].real * f0
        y1 += u[3].real * f1
        return y0.view(np.complex128), y1.view(np.complex128)
    x0r, x0i, x1r, x1i = a0.real, a0.imag, a1.real, a1.imag
    out = []
    for p, q in ((u[0], u[1]), (u[2], u[3])):
        pr, pi_, qr, qi = p.real, p.imag, q.real, q.imag
        y = np.empty(a0.shape, dtype=np.complex128)
        y.real = (pr * x0r - pi_ * x0i) + (qr * x1r - qi * x1i)
        y.imag = (pr * x0i + pi_ * x0r) + (qr * x1i + qi * x1r)
        out.append(y)
    return out[0], out[1]


@lru_cache(maxsize=256)
def _masked_offsets(b: int, q: int | None, mask: int) -> np.ndarray:
    idx = np.arange(b, dtype=np.int64)
    keep = (idx & mask) == mask
    if q is not None:
        keep &= (idx >> q) & 1 == 0
    out = idx[keep]
    out.setflags(write=False)
    return out


def apply_in_block(buf: np.ndarray, u: Matrix4, q: int, offset_mask: int = 0) -> np.ndarray:
    """Apply U on offset bit `q` wherever all `offset_mask` bits are set; in place."""
    b = len(buf)
    if not 0 <= q < b.bit_length() - 1:
        raise ContractViolation(f"qubit {q} is not inside a block of {b} amplitudes")
    if offset_mask >> q & 1:
        raise ContractViolation("control mask contains the target bit")
    step = 1 << q
    if offset_mask == 0:
        v = buf.reshape(-1, 2, step)
        n0, n1 = pair_update(v[:, 0, :], v[:, 1, :], u)
        v[:, 0, :] = n0
        v[:, 1, :] = n1
    else:
        i0 = _masked_offsets(b, q, offset_mask)
        i1 = i0 + step
        n0, n1 = pair_update(buf[i0], buf[i1], u)
        buf[i0] = n0
        buf[i1] = n1
    return buf


def apply_cross_block(buf_x: np.ndarray, buf_y: np.ndarray, u: Matrix4,
                      offset_mask: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise U on (x_j, y_j) for offsets j passing the control mask; in place."""
    if buf_x.shape != buf_y.shape:
        raise ValueError("partner buffers differ in length")
    if offset_mask == 0:
        n0, n1 = pair_update(buf_x, buf_y, u)
        buf_x[:] = n0
        buf_y[:] = n1
    else:
        j = _masked_offsets(len(buf_x), None, offset_mask)
        n0, n1 = pair_update(buf_x[j], buf_y[j], u)
        buf_x[j] = n0
        buf_y[j] = n1
    return buf_x, buf_y


class ControlAction(enum.Enum):
    APPLY_ALL = "apply-all"
    SKIP_WHERE_CONTROL_ZERO = "skip-amplitudes"
    SKIP_WHOLE_BLOCKS = "skip-blocks"
    SKIP_WHOLE_RANKS = "skip-ranks"


@dataclass(frozen=True)
class GatePlan:
    """Which blocks and ranks a gate touches, and how they pair up.

    ``units`` holds block ids per rank: ``(x,)`` for in-block and cross-rank
    gates, ``(x, y)`` for cross-block gates (x has the target bit 0).
    ``rank_groups`` holds ``(r,)`` for local gates and ``(lower, upper)`` rank
    pairs for cross-rank gates.
    """

    gate: Gate
    locality: QubitLocality
    target_bit: int
    offset_mask: int
    block_mask: int
    rank_mask: int
    units: tuple[tuple[int, ...], ...]
    rank_groups: tuple[tuple[int, ...], ...]
    skipped_blocks: tuple[int, ...]
    skipped_ranks: tuple[int, ...]
    actions: frozenset[ControlAction] = field(default_factory=frozenset)


def plan_gate(gate: Gate, layout: RankLayout) -> GatePlan:
    if max(gate.qubits) >= layout.n:
        raise ValueError(f"gate {gate.name} touches qubit >= {layout.n}")
    ob, rs = layout.offset_bits, layout.rank_shift
    offset_mask = block_mask = rank_mask = 0
    actions = set()
    for c in gate.controls:
        loc = classify_qubit(c, layout)
        if loc is QubitLocality.IN_BLOCK:
            offset_mask |= 1 << c
            actions.add(ControlAction.SKIP_WHERE_CONTROL_ZERO)
        elif loc is QubitLocality.CROSS_BLOCK_SAME_RANK:
            block_mask |= 1 << (c - ob)
            actions.add(ControlAction.SKIP_WHOLE_BLOCKS)
        else:
            rank_mask |= 1 << (c - rs)
            actions.add(ControlAction.SKIP_WHOLE_RANKS)
    if not actions:
        actions.add(ControlAction.APPLY_ALL)

    locality = classify_qubit(gate.target, layout)
    active_blocks = [k for k in range(layout.n_b) if k & block_mask == block_mask]
    skipped_blocks = tuple(k for k in range(layout.n_b) if k & block_mask != block_mask)
    active_ranks = [k for k in range(layout.r) if k & rank_mask == rank_mask]
    skipped_ranks = tuple(k for k in range(layout.r) if k & rank_mask != rank_mask)

    if locality is QubitLocality.IN_BLOCK:
        target_bit = gate.target
        units = tuple((k,) for k in active_blocks)
        groups = tuple((k,) for k in active_ranks)
    elif locality is QubitLocality.CROSS_BLOCK_SAME_RANK:
        target_bit = gate.target - ob
        bit = 1 << target_bit
        units = tuple((k, k | bit) for k in active_blocks if not k & bit)
        groups = tuple((k,) for k in active_ranks)
    else:
        target_bit = gate.target - rs
        bit = 1 << target_bit
        units = tuple((k,) for k in active_blocks)
        groups = tuple((k, k | bit) for k in active_ranks if not k & bit)
    return GatePlan(gate, locality, target_bit, offset_mask, block_mask, rank_mask,
                    units, groups, skipped_blocks, skipped_ranks, frozenset(actions))


# -- exchange -----------------------------------------------------------------

_MSG = struct.Struct(">QBI")  # block id | flags | crc32 of body


@dataclass(frozen=True)
class BlockMessage:
    block_id: int
    block: CompressedBlock | None  # None: partner left the block unchanged

    def encode(self) -> bytes:
        body = self.block.to_bytes() if self.block is not None else b""
        return _MSG.pack(self.block_id, self.block is not None, zlib.crc32(body)) + body

    @classmethod
    def decode(cls, data: bytes) -> "BlockMessage":
        if len(data) < _MSG.size:
            raise ExchangeError("short message")
        block_id, has_block, crc = _MSG.unpack_from(data)
        body = data[_MSG.size:]
        if zlib.crc32(body) != crc:
            raise ExchangeError(f"message for block {block_id} failed integrity check")
        try:
            block = CompressedBlock.from_bytes(body) if has_block else None
        except CorruptionError as exc:
            raise ExchangeError(str(exc)) from exc
        return cls(block_id, block)


class Exchange:
    """Ordered, reliable in-process channels between rank workers."""

    def __init__(self, ranks: int):
        self.ranks = ranks
        self._chan: dict[tuple[int, int], deque[bytes]] = {}
        self._lock = Lock()
        self.messages_sent: dict[tuple[int, int], int] = {}
        self.bytes_sent: dict[tuple[int, int], int] = {}
        self.bytes_received: dict[tuple[int, int], int] = {}
        self.t_comm = [0.0] * ranks

    def _channel(self, src: int, dst: int) -> deque[bytes]:
        with self._lock:
            return self._chan.setdefault((src, dst), deque())

    def send(self, src: int, dst: int, msg: BlockMessage) -> None:
        t0 = time.perf_counter()
        data = msg.encode()
        self._channel(src, dst).append(data)
        with self._lock:
            self.messages_sent[(src, dst)] = self.messages_sent.get((src, dst), 0) + 1
            self.bytes_sent[(src, dst)] = self.bytes_sent.get((src, dst), 0) + len(data)
        self.t_comm[src] += time.perf_counter() - t0

    def recv(self, dst: int, src: int) -> BlockMessage:
        t0 = time.perf_counter()
        try:
            data = self._channel(src, dst).popleft()
        except IndexError:
            raise ExchangeError(f"rank {dst}: no message from rank {src}") from None
        with self._lock:
            self.bytes_received[(src, dst)] = self.bytes_received.get((src, dst), 0) + len(data)
        msg = BlockMessage.decode(data)
        self.t_comm[dst] += time.perf_counter() - t0
        return msg

    def pending(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._chan.values())

    @property
    def total_messages(self) -> int:
        return sum(self.messages_sent.values())


# -- execution ------------------------------------------------------------------

@dataclass
class GateStats:
    gate_index: int
    t_compress: float = 0.0
    t_decompress: float = 0.0
    t_compute: float = 0.0
    t_comm: float = 0.0
    touched: dict[int, int] = field(default_factory=dict)
    messages: int = 0
    wall: float = 0.0


def _descriptor(gate: Gate, plan: GatePlan, *bounds: ErrorBound, codec) -> tuple:
    return (gate.descriptor(), plan.locality.value, plan.target_bit, plan.offset_mask,
            int(codec), bounds)


def _compute(store: BlockStore, fn: Callable, *args) -> None:
    t0 = time.perf_counter()
    fn(*args)
    store.t_compute += time.perf_counter() - t0


def _local_work(store: BlockStore, plan: GatePlan) -> None:
    u = plan.gate.u
    cache = store.cache
    for unit in plan.units:
        if all(store.is_zero(k) for k in unit):
            continue
        desc = _descriptor(plan.gate, plan, store.bound, codec=store.write_codec)
        key = cache.key(desc, *(store.blocks[k] for k in unit))
        hit = cache.lookup(key)
        if hit is not None:
            for k, cb in zip(unit, hit):
                store.replace(k, cb, defer_check=True)
            store.check_budget()
            continue
        if plan.locality is QubitLocality.IN_BLOCK:
            (x,) = unit
            buf = store.fetch(x)
            _compute(store, apply_in_block, buf, u, plan.target_bit, plan.offset_mask)
            out = (store.store(x, buf),)
        else:
            x, y = unit
            bx, by = store.fetch(x), store.fetch(y)
            _compute(store, apply_cross_block, bx, by, u, plan.offset_mask)
            out = (store.store(x, bx, defer_check=True), store.store(y, by))
        cache.insert(key, out)


def _send_to_lower(store: BlockStore, lower: int, plan: GatePlan, exchange: Exchange) -> None:
    for (x,) in plan.units:
        exchange.send(store.rank, lower, BlockMessage(x, store.blocks[x]))


def _lower_work(store: BlockStore, upper: int, upper_bound: ErrorBound, plan: GatePlan,
                exchange: Exchange) -> None:
    u = plan.gate.u
    cache = store.cache
    for (x,) in plan.units:
        msg = exchange.recv(store.rank, upper)
        if msg.block_id != x or msg.block is None:
            raise ExchangeError(f"rank {store.rank}: expected block {x}, got {msg.block_id}")
        partner = msg.block
        if store.is_zero(x) and partner.payload == zero_payload(
                partner.codec, partner.bound, partner.count, store.backend):
            exchange.send(store.rank, upper, BlockMessage(x, None))
            continue
        desc = _descriptor(plan.gate, plan, store.bound, upper_bound, codec=store.write_codec)
        key = cache.key(desc, store.blocks[x], partner)
        hit = cache.lookup(key)
        if hit is not None:
            store.replace(x, hit[0])
            exchange.send(store.rank, upper, BlockMessage(x, hit[1]))
            continue
        bx = store.fetch(x)
        by = store.load_foreign(partner, x)
        _compute(store, apply_cross_block, bx, by, u, plan.offset_mask)
        mine = store.store(x, bx, defer_check=True)
        theirs = store.seal_foreign(x, by, upper_bound)
        store.check_budget()
        cache.insert(key, (mine, theirs))
        exchange.send(store.rank, upper, BlockMessage(x, theirs))


def _receive_from_lower(store: BlockStore, lower: int, plan: GatePlan,
                        exchange: Exchange) -> None:
    for (x,) in plan.units:
        msg = exchange.recv(store.rank, lower)
        if msg.block_id != x:
            raise ExchangeError(f"rank {store.rank}: expected result for block {x}")
        if msg.block is not None:
            msg.block.verify()
            store.replace(x, msg.block)


def _sequential(fn: Callable, items: Iterable) -> list:
    return [fn(item) for item in items]


def execute_gate(stores: Sequence[BlockStore], gate: Gate, exchange: Exchange,
                 run: Callable[[Callable, Iterable], list] = _sequential,
                 gate_index: int | None = None) -> GateStats:
    """Apply one gate to every rank.  `run` maps a function over rank work items.

    Cross-rank gates run in three barrier-separated phases: upper ranks send
    their blocks, lower ranks update both partners and return the upper
    block, upper ranks install the result.
    """
    layout = stores[0].layout
    plan = plan_gate(gate, layout)
    gi = stores[0].gate_index if gate_index is None else gate_index
    before = [(s.t_compress, s.t_decompress, s.t_compute) for s in stores]
    comm_before = sum(exchange.t_comm)
    msg_before = exchange.total_messages
    t0 = time.perf_counter()
    for s in stores:
        s.begin_gate(gi)

    if plan.locality is not QubitLocality.CROSS_RANK:
        run(lambda g: _local_work(stores[g[0]], plan), plan.rank_groups)
    else:
        bounds = {up: stores[up].bound for _, up in plan.rank_groups}
        run(lambda g: _send_to_lower(stores[g[1]], g[0], plan, exchange), plan.rank_groups)
        run(lambda g: _lower_work(stores[g[0]], g[1], bounds[g[1]], plan, exchange),
            plan.rank_groups)
        run(lambda g: _receive_from_lower(stores[g[1]], g[0], plan, exchange), plan.rank_groups)
        if exchange.pending():
            raise ExchangeError("undelivered messages after gate")

    for s in stores:
        if s.in_flight():
            raise ContractViolation(f"rank {s.rank} left a block decompressed")
    stats = GateStats(gi, wall=time.perf_counter() - t0)
    for s, (tc, td, tk) in zip(stores, before):
        stats.t_compress += s.t_compress - tc
        stats.t_decompress += s.t_decompress - td
        stats.t_compute += s.t_compute - tk
        stats.touched[s.rank] = s.touched
    stats.t_comm = sum(exchange.t_comm) - comm_before
    stats.messages = exchange.total_messages - msg_before
    return stats
