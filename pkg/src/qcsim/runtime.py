"""Simulation driver: rank workers, error-bound ladders, fidelity ledger, reports."""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .blockstore import BlockStore, scratch_bytes
from .codec import CodecId
from .core import Circuit, Gate, RankLayout
from .engine import Exchange, GateStats, execute_gate
from .errors import ConfigurationError, ContractViolation
from .ladder import DEFAULT_LEVELS, ESCALATION_THRESHOLD, FidelityLedger, LadderState, validate_levels

THREADS_ENV = "QCSIM_THREADS"


def worker_count(ranks: int, requested: int | None = None) -> int:
    if requested is None:
        env = os.environ.get(THREADS_ENV)
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(ranks, requested))


@dataclass
class SimulationConfig:
    qubits: int
    ranks: int = 1
    blocks_per_rank: int = 1
    budget: float = math.inf  # bytes, whole run; each rank gets budget / ranks
    ladder: Sequence[float] = DEFAULT_LEVELS
    codec: CodecId = CodecId.SOLUTION_C
    seed: int = 0
    cache: bool = True
    threads: int | None = None
    escalation_threshold: float = ESCALATION_THRESHOLD
    backend: object = None

    def layout(self) -> RankLayout:
        return RankLayout.create(self.qubits, self.ranks, self.blocks_per_rank)

    def validate(self) -> RankLayout:
        layout = self.layout()
        validate_levels(self.ladder)
        if CodecId(self.codec) is CodecId.LOSSLESS_ONLY:
            raise ConfigurationError("codec must be SOLUTION_C or SOLUTION_D")
        per_rank = self.budget / self.ranks
        need = scratch_bytes(layout)
        if not per_rank > need:
            raise ConfigurationError(
                f"per-rank budget {per_rank:.0f} B does not exceed scratch need {need} B"
            )
        return layout


@dataclass
class SimulationReport:
    qubits: int
    ranks: int
    blocks_per_rank: int
    block_size: int
    codec: str
    gates: int
    fidelity_lower_bound: float
    measured_fidelity: float | None
    total_time: float
    time_per_gate: float
    time_shares: dict[str, float]
    min_compression_ratio: float
    peak_accounted_bytes: int
    raw_state_bytes: int
    budget_bytes: float | None
    cache_lookups: int
    cache_hits: int
    cache_hit_rate: float
    cache_enabled: list[bool]
    escalation_log: list[dict]
    final_levels: list[float]
    messages: int
    norm_squared: float | None = None

    TIMING_FIELDS = ("total_time", "time_per_gate", "time_shares")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["budget_bytes"] is not None and math.isinf(d["budget_bytes"]):
            d["budget_bytes"] = None
        return d

    def metrics(self) -> dict:
        """Report fields that are deterministic for a given configuration."""
        return {k: v for k, v in self.to_dict().items() if k not in self.TIMING_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        d = self.to_dict()
        lines = []
        for k in sorted(d):
            v = d[k]
            if isinstance(v, dict):
                for kk in sorted(v):
                    lines.append(f"{k}.{kk} = {_fmt(v[kk])}")
            elif isinstance(v, list) and v and isinstance(v[0], dict):
                for i, item in enumerate(v):
                    lines.append(f"{k}[{i}] = " + ", ".join(f"{a}={_fmt(b)}" for a, b in item.items()))
            else:
                lines.append(f"{k} = {_fmt(v)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    if v is None:
        return "none"
    return str(v)


class Simulator:
    """Blocked, compressed state vector spread over `ranks` in-process workers."""

    def __init__(self, config: SimulationConfig, *, initialize: bool = True):
        self.config = config
        self.layout = config.validate()
        self.budget_per_rank = config.budget / config.ranks
        self.stores = [
            BlockStore(self.layout, k, self.budget_per_rank,
                       LadderState(tuple(config.ladder), threshold=config.escalation_threshold),
                       CodecId(config.codec), config.backend, config.cache)
            for k in range(config.ranks)
        ]
        self.exchange = Exchange(config.ranks)
        self.ledger = FidelityLedger()
        self.gate_index = 0
        self.gate_stats: list[GateStats] = []
        self.max_total_compressed = 0
        self.workers = worker_count(config.ranks, config.threads)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self.on_gate: Callable[["Simulator", int], None] | None = None
        if initialize:
            self.stores[0].initialize({0: 1.0 + 0j})
            for s in self.stores[1:]:
                s.initialize()
            self._observe_total()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run(self, fn: Callable, items: Iterable) -> list:
        items = list(items)
        if self._pool is None or len(items) < 2:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    def _observe_total(self) -> None:
        self.max_total_compressed = max(self.max_total_compressed,
                                        sum(s.compressed_bytes for s in self.stores))

    # -- execution ----------------------------------------------------------

    def apply(self, gate: Gate) -> GateStats:
        if max(gate.qubits) >= self.layout.n:
            raise ConfigurationError(f"{gate.name} touches qubit >= {self.layout.n}")
        stats = execute_gate(self.stores, gate, self.exchange, self._run, self.gate_index)
        self.ledger.record(max(s.gate_delta for s in self.stores))
        self.gate_stats.append(stats)
        self.gate_index += 1
        self._observe_total()
        if self.on_gate is not None:
            self.on_gate(self, self.gate_index - 1)
        return stats

    def run(self, circuit: Circuit, *, stop_after: int | None = None,
            checkpoint_path: str | os.PathLike | None = None,
            checkpoint_every: int | None = None) -> SimulationReport:
        """Execute gates from the current gate index to the end (or `stop_after`)."""
        if circuit.n != self.layout.n:
            raise ConfigurationError(f"circuit has {circuit.n} qubits, layout {self.layout.n}")
        if checkpoint_every is not None and checkpoint_every < 1:
            raise ConfigurationError("checkpoint interval must be positive")
        end = len(circuit) if stop_after is None else min(stop_after, len(circuit))
        while self.gate_index < end:
            self.apply(circuit.gates[self.gate_index])
            if (checkpoint_path is not None and checkpoint_every
                    and self.gate_index % checkpoint_every == 0 and self.gate_index < end):
                self.save_checkpoint(checkpoint_path)
        if checkpoint_path is not None:
            self.save_checkpoint(checkpoint_path)
        return self.report()

    # -- checkpoints ----------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        from .checkpoint import save
        save(self, path)

    @classmethod
    def resume(cls, path, config: SimulationConfig) -> "Simulator":
        from .checkpoint import load
        return load(path, config)

    # -- readout ----------------------------------------------------------------

    def block(self, rank: int, block_id: int) -> np.ndarray:
        return self.stores[rank].read_block(block_id)

    def state_vector(self) -> np.ndarray:
        out = np.empty(self.layout.dim, dtype=np.complex128)
        b = self.layout.b
        for s in self.stores:
            for k in range(self.layout.n_b):
                start = self.layout.recompose(s.rank, k, 0)
                out[start:start + b] = s.read_block(k)
        return out

    def norm_squared(self) -> float:
        total = 0.0
        for s in self.stores:
            for k in range(self.layout.n_b):
                a = s.read_block(k)
                total += float(np.vdot(a, a).real)
        return total

    def sample(self, shots: int, seed: int | None = None) -> list[str]:
        return sample_measurements(self.stores, shots, self.config.seed if seed is None else seed)

    def report(self, reference: np.ndarray | None = None) -> SimulationReport:
        stats = self.gate_stats
        total = sum(g.wall for g in stats)
        comp = {
            "compression": sum(g.t_compress for g in stats),
            "decompression": sum(g.t_decompress for g in stats),
            "communication": sum(g.t_comm for g in stats),
            "computation": sum(g.t_compute for g in stats),
        }
        denom = max(total * self.workers, sum(comp.values()))
        shares = {k: (v / denom if denom > 0 else 0.0) for k, v in comp.items()}
        raw = self.layout.dim * 16
        lookups = sum(s.cache.lookups for s in self.stores)
        hits = sum(s.cache.hits for s in self.stores)
        measured = None
        norm2 = None
        if reference is not None:
            psi = self.state_vector()
            measured = float(abs(np.vdot(reference, psi)))
            norm2 = float(np.vdot(psi, psi).real)
        log = [
            {"rank": s.rank, "gate": g, "level": s.ladder.levels[i]}
            for s in self.stores for g, i in s.ladder.log
        ]
        return SimulationReport(
            qubits=self.layout.n,
            ranks=self.layout.r,
            blocks_per_rank=self.layout.n_b,
            block_size=self.layout.b,
            codec=CodecId(self.config.codec).name,
            gates=self.gate_index,
            fidelity_lower_bound=self.ledger.lower_bound(),
            measured_fidelity=measured,
            total_time=total,
            time_per_gate=total / len(stats) if stats else 0.0,
            time_shares=shares,
            min_compression_ratio=raw / self.max_total_compressed,
            peak_accounted_bytes=max(s.peak_accounted for s in self.stores),
            raw_state_bytes=raw,
            budget_bytes=self.config.budget,
            cache_lookups=lookups,
            cache_hits=hits,
            cache_hit_rate=hits / lookups if lookups else 0.0,
            cache_enabled=[s.cache.enabled for s in self.stores],
            escalation_log=sorted(log, key=lambda e: (e["gate"], e["rank"])),
            final_levels=[s.ladder.delta for s in self.stores],
            messages=self.exchange.total_messages,
            norm_squared=norm2,
        )


def run_circuit(circuit: Circuit, config: SimulationConfig,
                reference: np.ndarray | None = None) -> tuple[SimulationReport, Simulator]:
    with Simulator(config) as sim:
        sim.run(circuit)
        return sim.report(reference), sim


def sample_measurements(stores: Sequence[BlockStore], shots: int, seed: int = 0) -> list[str]:
    """Draw basis-state outcomes from |a_i|^2, renormalised over the stored state.

    Two-level sampling: pick a block by its mass, then an offset inside it,
    so only one block is decompressed at a time.  Strings are printed with
    qubit n-1 leftmost.
    """
    layout = stores[0].layout
    if any(s.in_flight() for s in stores):
        raise ContractViolation("sampling while blocks are decompressed")
    masses = np.array([
        float(np.sum(np.abs(s.read_block(k)) ** 2))
        for s in stores for k in range(layout.n_b)
    ])
    total = masses.sum()
    if not total > 0:
        raise ContractViolation("cannot sample a zero-norm state")
    rng = np.random.default_rng(seed)
    per_block = rng.multinomial(shots, masses / total)
    order = np.empty(shots, dtype=np.int64)
    pos = 0
    for flat, count in enumerate(per_block):
        if count == 0:
            continue
        rank, k = divmod(flat, layout.n_b)
        p = np.abs(stores[rank].read_block(k)) ** 2
        offsets = rng.choice(layout.b, size=count, p=p / p.sum())
        order[pos:pos + count] = [layout.recompose(rank, k, int(o)) for o in offsets]
        pos += count
    rng.shuffle(order)
    return [format(int(i), f"0{layout.n}b") for i in order]
