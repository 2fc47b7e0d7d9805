"""Error-bound ladder and fidelity ledger."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .codec import ErrorBound
from .errors import ConfigurationError, ResourceExhausted

LOSSLESS = 0.0
DEFAULT_LEVELS: tuple[float, ...] = (LOSSLESS, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
ESCALATION_THRESHOLD = 0.95


def parse_levels(text: str) -> tuple[float, ...]:
    """'lossless,1e-4,1e-2' -> (0.0, 1e-4, 1e-2); a single value forces a level."""
    levels = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        levels.append(LOSSLESS if tok in ("lossless", "0") else float(tok))
    return validate_levels(levels)


def validate_levels(levels: Sequence[float]) -> tuple[float, ...]:
    levels = tuple(float(v) for v in levels)
    if not levels:
        raise ConfigurationError("ladder needs at least one level")
    for v in levels:
        if not 0 <= v < 1:
            raise ConfigurationError(f"ladder level {v} outside [0, 1)")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError("ladder levels must be strictly increasing")
    return levels


@dataclass
class LadderState:
    levels: tuple[float, ...] = DEFAULT_LEVELS
    index: int = 0
    log: list[tuple[int, int]] = field(default_factory=list)  # (gate index, new level index)
    threshold: float = ESCALATION_THRESHOLD

    def __post_init__(self):
        self.levels = validate_levels(self.levels)
        if not 0 <= self.index < len(self.levels):
            raise ConfigurationError("ladder index out of range")

    @property
    def delta(self) -> float:
        return self.levels[self.index]

    @property
    def bound(self) -> ErrorBound:
        d = self.delta
        return ErrorBound.lossless() if d == LOSSLESS else ErrorBound.relative(d)

    @property
    def at_last_level(self) -> bool:
        return self.index == len(self.levels) - 1

    def escalate_if_needed(self, accounted: float, budget: float, gate_index: int) -> bool:
        """Advance one level when accounted bytes pass ``threshold * budget``."""
        if accounted <= self.threshold * budget:
            return False
        if not self.at_last_level:
            self.index += 1
            self.log.append((gate_index, self.index))
            return True
        if accounted > budget:
            raise ResourceExhausted(
                f"gate {gate_index}: {int(accounted)} bytes exceed budget {budget:.0f} "
                f"at loosest level {self.delta:g}",
                gate_index,
            )
        return False


@dataclass
class FidelityLedger:
    deltas: list[float] = field(default_factory=list)

    def record(self, delta: float) -> None:
        if not 0 <= delta < 1:
            raise ValueError(f"per-gate bound {delta} outside [0, 1)")
        self.deltas.append(float(delta))

    def lower_bound(self) -> float:
        return fidelity_lower_bound(self)

    def __len__(self) -> int:
        return len(self.deltas)


def fidelity_lower_bound(ledger: FidelityLedger | Sequence[float]) -> float:
    deltas = ledger.deltas if isinstance(ledger, FidelityLedger) else ledger
    f = 1.0
    for d in deltas:
        f *= 1.0 - d
    return f


def fidelity_curve(delta: float, gates: int) -> list[float]:
    """Ledger bound after 0..gates gates at a constant level."""
    out, f = [1.0], 1.0
    for _ in range(gates):
        f *= 1.0 - delta
        out.append(f)
    return out


def closed_form_bound(delta: float, gates: int) -> float:
    return math.pow(1.0 - delta, gates)
