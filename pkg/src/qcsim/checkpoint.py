"""Single-file checkpoints of the complete compressed simulation state.

Layout (big-endian)::

    "QCKP" | version u32 | n u32 | r u32 | n_b u32 | b u64 | next gate u64
    | codec u8 | max total compressed u64
    | per rank: ladder (levels, index, threshold, log) | peak accounted u64
                | cache (enabled u8, lookups u64, hits u64, disabled_at i64)
    | ledger: count u64, f64 each
    | exchange counters: count u32, (src u32, dst u32, messages u64,
                         bytes sent u64, bytes received u64) each
    | directory: (offset u64, length u64) per (rank, block)
    | header crc32 u32
    | serialized CompressedBlocks in (rank, block id) order
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

from .codec import CompressedBlock
from .errors import (
    CheckpointCorruptionError, CheckpointError, ContractViolation, CorruptionError,
    FormatError, LayoutMismatchError, TruncatedCheckpointError, VersionMismatchError,
)
from .ladder import FidelityLedger, LadderState

MAGIC = b"QCKP"
VERSION = 1

_PRELUDE = struct.Struct(">4sI")


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack(">" + fmt, *values))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def unpack(self, fmt: str):
        s = struct.Struct(">" + fmt)
        if self.pos + s.size > len(self.data):
            raise TruncatedCheckpointError("checkpoint ends inside its header")
        out = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return out


def _encode(sim) -> bytes:
    layout = sim.layout
    w = _Writer()
    w.pack("4sI", MAGIC, VERSION)
    w.pack("IIIQQBQ", layout.n, layout.r, layout.n_b, layout.b, sim.gate_index,
           int(sim.config.codec), sim.max_total_compressed)
    for s in sim.stores:
        lad = s.ladder
        w.pack("I", len(lad.levels))
        w.pack(f"{len(lad.levels)}d", *lad.levels)
        w.pack("IdI", lad.index, lad.threshold, len(lad.log))
        for gate, level in lad.log:
            w.pack("QI", gate, level)
        c = s.cache
        w.pack("QBQQq", s.peak_accounted, c.enabled, c.lookups, c.hits,
               -1 if c.disabled_at is None else c.disabled_at)
    w.pack("Q", len(sim.ledger.deltas))
    w.pack(f"{len(sim.ledger.deltas)}d", *sim.ledger.deltas)
    ex = sim.exchange
    channels = sorted(set(ex.messages_sent) | set(ex.bytes_received))
    w.pack("I", len(channels))
    for ch in channels:
        w.pack("IIQQQ", *ch, ex.messages_sent.get(ch, 0), ex.bytes_sent.get(ch, 0),
               ex.bytes_received.get(ch, 0))
    blobs = [cb.to_bytes() for s in sim.stores for cb in s.blocks]
    offset = 0
    for blob in blobs:
        w.pack("QQ", offset, len(blob))
        offset += len(blob)
    header = w.getvalue()
    return header + struct.pack(">I", zlib.crc32(header)) + b"".join(blobs)


def save(sim, path) -> Path:
    """Write `sim` atomically at a gate boundary."""
    for s in sim.stores:
        if s.in_flight():
            raise ContractViolation("checkpoint requested while blocks are decompressed")
    path = Path(path)
    data = _encode(sim)
    try:
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp",
                                   dir=path.parent if str(path.parent) else ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read(path) -> dict:
    """Parse a checkpoint file into its header fields and blocks."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < _PRELUDE.size:
        raise TruncatedCheckpointError("file too short for a checkpoint")
    magic, version = _PRELUDE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    rd = _Reader(data, _PRELUDE.size)
    n, r, n_b, b, next_gate, codec, max_total = rd.unpack("IIIQQBQ")
    ranks = []
    for _ in range(r):
        (nlev,) = rd.unpack("I")
        levels = rd.unpack(f"{nlev}d")
        index, threshold, nlog = rd.unpack("IdI")
        log = [rd.unpack("QI") for _ in range(nlog)]
        peak, enabled, lookups, hits, disabled_at = rd.unpack("QBQQq")
        ranks.append({
            "ladder": LadderState(tuple(levels), index, [tuple(e) for e in log], threshold),
            "peak": peak, "cache": (bool(enabled), lookups, hits,
                                    None if disabled_at < 0 else disabled_at),
        })
    (count,) = rd.unpack("Q")
    deltas = list(rd.unpack(f"{count}d"))
    (nchan,) = rd.unpack("I")
    channels = [rd.unpack("IIQQQ") for _ in range(nchan)]
    directory = [rd.unpack("QQ") for _ in range(r * n_b)]
    header_end = rd.pos
    (crc,) = rd.unpack("I")
    if zlib.crc32(data[:header_end]) != crc:
        raise CheckpointError("checkpoint header checksum mismatch")
    base = rd.pos
    blocks = []
    for k, (off, length) in enumerate(directory):
        rank, blk = divmod(k, n_b)
        start = base + off
        if start + length > len(data):
            raise TruncatedCheckpointError(f"block (rank {rank}, block {blk}) is truncated")
        try:
            cb = CompressedBlock.from_bytes(data[start:start + length])
            cb.verify()
        except (CorruptionError, FormatError) as exc:
            raise CheckpointCorruptionError(
                f"rank {rank} block {blk}: {exc}", rank, blk) from exc
        blocks.append(cb)
    return {
        "n": n, "r": r, "n_b": n_b, "b": b, "next_gate": next_gate, "codec": codec,
        "max_total_compressed": max_total, "ranks": ranks,
        "ledger": FidelityLedger(deltas), "channels": channels,
        "blocks": [blocks[i * n_b:(i + 1) * n_b] for i in range(r)],
    }


def load(path, config):
    """Rebuild a Simulator from `path`; the layout must match `config` exactly."""
    from .runtime import Simulator

    state = read(path)
    layout = config.layout()
    saved = (state["n"], state["r"], state["n_b"], state["b"])
    if saved != (layout.n, layout.r, layout.n_b, layout.b):
        raise LayoutMismatchError(
            f"checkpoint layout (n, r, n_b, b) = {saved}, configuration "
            f"{(layout.n, layout.r, layout.n_b, layout.b)}"
        )
    if state["codec"] != int(config.codec):
        raise LayoutMismatchError("checkpoint codec differs from configuration")
    sim = Simulator(config, initialize=False)
    for store, rank_state, blocks in zip(sim.stores, state["ranks"], state["blocks"]):
        store.ladder = rank_state["ladder"]
        store.restore(blocks)
        store.peak_accounted = rank_state["peak"]
        c = store.cache
        c.enabled, c.lookups, c.hits, c.disabled_at = rank_state["cache"]
    sim.ledger = state["ledger"]
    sim.gate_index = state["next_gate"]
    sim.max_total_compressed = state["max_total_compressed"]
    ex = sim.exchange
    for src, dst, msgs, sent, received in state["channels"]:
        ex.messages_sent[(src, dst)] = msgs
        ex.bytes_sent[(src, dst)] = sent
        ex.bytes_received[(src, dst)] = received
    return sim
