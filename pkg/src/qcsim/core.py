"""Domain types and index arithmetic: layout geometry, gates, circuits.

Qubit 0 is the least significant bit of an amplitude index.  A global
index splits into three bit segments::

    | rank id (log2 r) | block id (log2 n_b) | offset (log2 b) |
      high bits                                 low bits
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

UNITARY_TOL = 1e-12


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


class QubitLocality(enum.Enum):
    IN_BLOCK = "in-block"
    CROSS_BLOCK_SAME_RANK = "cross-block"
    CROSS_RANK = "cross-rank"


@dataclass(frozen=True)
class RankLayout:
    """Partition of 2**n amplitudes into r ranks of n_b blocks of b amplitudes."""

    n: int
    r: int
    n_b: int
    b: int

    def __post_init__(self):
        for name in ("r", "n_b", "b"):
            if not _is_pow2(getattr(self, name)):
                raise ConfigurationError(f"{name}={getattr(self, name)} is not a power of two")
        if self.n < 1:
            raise ConfigurationError("need at least one qubit")
        if self.r * self.n_b * self.b != 1 << self.n:
            raise ConfigurationError(
                f"r*n_b*b = {self.r * self.n_b * self.b} != 2**{self.n}"
            )

    @classmethod
    def create(cls, n: int, ranks: int = 1, blocks_per_rank: int = 1) -> "RankLayout":
        if not _is_pow2(ranks) or not _is_pow2(blocks_per_rank):
            raise ConfigurationError("ranks and blocks per rank must be powers of two")
        total = 1 << n
        if ranks * blocks_per_rank > total:
            raise ConfigurationError(
                f"{ranks} ranks x {blocks_per_rank} blocks exceeds 2**{n} amplitudes"
            )
        return cls(n, ranks, blocks_per_rank, total // (ranks * blocks_per_rank))

    @property
    def offset_bits(self) -> int:
        return self.b.bit_length() - 1

    @property
    def block_bits(self) -> int:
        return self.n_b.bit_length() - 1

    @property
    def rank_bits(self) -> int:
        return self.r.bit_length() - 1

    @property
    def rank_shift(self) -> int:
        """n - log2 r: position of the lowest rank-id bit."""
        return self.n - self.rank_bits

    @property
    def dim(self) -> int:
        return 1 << self.n

    def recompose(self, rank: int, block: int, offset: int) -> int:
        return (rank << self.rank_shift) | (block << self.offset_bits) | offset


def classify_qubit(q: int, layout: RankLayout) -> QubitLocality:
    if not 0 <= q < layout.n:
        raise ValueError(f"qubit {q} outside [0, {layout.n})")
    if q < layout.offset_bits:
        return QubitLocality.IN_BLOCK
    if q < layout.rank_shift:
        return QubitLocality.CROSS_BLOCK_SAME_RANK
    return QubitLocality.CROSS_RANK


def partner_index(i: int, q: int, n: int | None = None) -> int:
    if i < 0 or q < 0 or (n is not None and (i >= 1 << n or q >= n)):
        raise ValueError(f"index {i} / qubit {q} out of range")
    return i ^ (1 << q)


def decompose_index(i: int, layout: RankLayout) -> tuple[int, int, int]:
    """Split a global index into (rank id, block id, offset)."""
    if not 0 <= i < layout.dim:
        raise ValueError(f"index {i} outside [0, 2**{layout.n})")
    return (
        i >> layout.rank_shift,
        (i >> layout.offset_bits) & (layout.n_b - 1),
        i & (layout.b - 1),
    )


class GateKind(enum.Enum):
    SINGLE = "single"
    CONTROLLED = "controlled"
    MULTI_CONTROLLED_X = "mcx"


Matrix4 = tuple[complex, complex, complex, complex]

_S2 = 1 / math.sqrt(2)
X_MATRIX: Matrix4 = (0, 1, 1, 0)


def _fixed(name: str) -> Matrix4:
    table: dict[str, Matrix4] = {
        "I": (1, 0, 0, 1),
        "H": (_S2, _S2, _S2, -_S2),
        "X": X_MATRIX,
        "Y": (0, -1j, 1j, 0),
        "Z": (1, 0, 0, -1),
        "S": (1, 0, 0, 1j),
        "T": (1, 0, 0, cmath.exp(1j * math.pi / 4)),
        # square roots of X and Y used by random sampling circuits
        "SX": (0.5 + 0.5j, 0.5 - 0.5j, 0.5 - 0.5j, 0.5 + 0.5j),
        "SY": (0.5 + 0.5j, -0.5 - 0.5j, 0.5 + 0.5j, 0.5 + 0.5j),
    }
    return table[name]


def _rotation(name: str, theta: float) -> Matrix4:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    if name == "RX":
        return (c, -1j * s, -1j * s, c)
    if name == "RY":
        return (c, -s, s, c)
    if name == "RZ":
        return (cmath.exp(-0.5j * theta), 0, 0, cmath.exp(0.5j * theta))
    if name == "P":
        return (1, 0, 0, cmath.exp(1j * theta))
    raise KeyError(name)


# name -> (number of controls or None for any >= 2, base matrix name, takes angle)
GATE_VOCABULARY: dict[str, tuple[int | None, str, bool]] = {
    "I": (0, "I", False),
    "H": (0, "H", False),
    "X": (0, "X", False),
    "Y": (0, "Y", False),
    "Z": (0, "Z", False),
    "S": (0, "S", False),
    "T": (0, "T", False),
    "SX": (0, "SX", False),
    "SY": (0, "SY", False),
    "RX": (0, "RX", True),
    "RY": (0, "RY", True),
    "RZ": (0, "RZ", True),
    "P": (0, "P", True),
    "CX": (1, "X", False),
    "CZ": (1, "Z", False),
    "CP": (1, "P", True),
    "CCX": (2, "X", False),
    "MCX": (None, "X", False),
}


def gate_matrix(base: str, theta: float | None = None) -> Matrix4:
    if theta is None:
        return tuple(complex(v) for v in _fixed(base))  # type: ignore[return-value]
    return tuple(complex(v) for v in _rotation(base, theta))  # type: ignore[return-value]


def check_unitary(u: Matrix4, tol: float = UNITARY_TOL) -> None:
    m = np.array(u, dtype=complex).reshape(2, 2)
    err = np.max(np.abs(m.conj().T @ m - np.eye(2)))
    if err > tol:
        raise ConfigurationError(f"matrix is not unitary (|U^H U - I|_inf = {err:.3g})")


@dataclass(frozen=True)
class Gate:
    """A 2x2 unitary on `target`, applied where every control bit is 1."""

    name: str
    u: Matrix4
    target: int
    controls: tuple[int, ...] = ()
    params: tuple[float, ...] = ()

    def __post_init__(self):
        check_unitary(self.u)
        if self.target in self.controls:
            raise ConfigurationError(f"{self.name}: target {self.target} is also a control")
        if len(set(self.controls)) != len(self.controls):
            raise ConfigurationError(f"{self.name}: duplicate control qubits")
        if min((self.target, *self.controls)) < 0:
            raise ConfigurationError(f"{self.name}: negative qubit index")
        if len(self.controls) >= 2 and not np.allclose(self.u, X_MATRIX, atol=0):
            raise ConfigurationError("only X may carry more than one control")

    @classmethod
    def named(cls, name: str, target: int, controls: Sequence[int] = (),
              theta: float | None = None) -> "Gate":
        name = name.upper()
        if name not in GATE_VOCABULARY:
            raise ConfigurationError(f"unknown gate {name!r}")
        ncontrols, base, takes_angle = GATE_VOCABULARY[name]
        controls = tuple(controls)
        if ncontrols is None:
            if len(controls) < 2:
                raise ConfigurationError("MCX needs at least two controls")
        elif len(controls) != ncontrols:
            raise ConfigurationError(f"{name} takes {ncontrols} control(s), got {len(controls)}")
        if takes_angle != (theta is not None):
            raise ConfigurationError(f"{name} {'needs' if takes_angle else 'takes no'} angle")
        params = (float(theta),) if takes_angle else ()
        return cls(name, gate_matrix(base, theta if takes_angle else None), target, controls, params)

    @property
    def kind(self) -> GateKind:
        if not self.controls:
            return GateKind.SINGLE
        if len(self.controls) == 1:
            return GateKind.CONTROLLED
        return GateKind.MULTI_CONTROLLED_X

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.target, *self.controls)

    def matrix(self) -> np.ndarray:
        return np.array(self.u, dtype=complex).reshape(2, 2)

    def descriptor(self) -> tuple:
        return (self.kind.value, self.u, self.target, self.controls)


# convenience constructors
def H(q: int) -> Gate:
    return Gate.named("H", q)


def X(q: int) -> Gate:
    return Gate.named("X", q)


def CX(control: int, target: int) -> Gate:
    return Gate.named("CX", target, (control,))


def CZ(control: int, target: int) -> Gate:
    return Gate.named("CZ", target, (control,))


def CP(control: int, target: int, theta: float) -> Gate:
    return Gate.named("CP", target, (control,), theta)


def MCX(controls: Sequence[int], target: int) -> Gate:
    controls = tuple(controls)
    if len(controls) == 1:
        return CX(controls[0], target)
    return Gate.named("CCX" if len(controls) == 2 else "MCX", target, controls)


@dataclass
class Circuit:
    n: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigurationError("circuit needs at least one qubit")
        for k, g in enumerate(self.gates):
            if max(g.qubits) >= self.n:
                raise ConfigurationError(f"gate {k} ({g.name}) touches qubit >= {self.n}")

    def append(self, gate: Gate) -> None:
        if max(gate.qubits) >= self.n:
            raise ConfigurationError(f"{gate.name} touches qubit >= {self.n}")
        self.gates.append(gate)

    def __len__(self) -> int:
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)
