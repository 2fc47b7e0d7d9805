"""Benchmark circuit generators and the line-oriented circuit text format.

Text format, one gate per line::

    QUBITS 4          # optional header
    H 0
    CX 1 0            # NAME target [control ...] [angle]
    RZ 2 0.5
    CP 3 0 0.7853981633974483

``#`` starts a comment; blank lines are ignored.

Grover register scheme: all ``n`` qubits form the search register and the
oracle is a phase flip (no ancilla).  The marked string is mapped onto
all-ones by X gates and the phase flip is ``H . MCX . H`` on the top qubit,
so the gate vocabulary is {H, X, multi-controlled X}.
"""
from __future__ import annotations

import math
import random
from typing import Sequence

import networkx as nx
import numpy as np

from .core import CP, CX, CZ, GATE_VOCABULARY, MCX, Circuit, Gate, H, X
from .errors import CircuitParseError, ConfigurationError


# -- Grover ---------------------------------------------------------------------

def grover_iterations(search_qubits: int) -> int:
    return round(math.pi / 4 * math.sqrt(2 ** search_qubits))


def _phase_flip_all_ones(n: int) -> list[Gate]:
    top = n - 1
    return [H(top), MCX(range(top), top), H(top)]


def grover(n: int, iterations: int | str = "optimal", target: int | None = None) -> Circuit:
    if n < 3:
        raise ConfigurationError("Grover needs at least 3 qubits")
    if target is None:
        target = int("10" * n, 2) & ((1 << n) - 1)
    if not 0 <= target < 1 << n:
        raise ConfigurationError(f"target {target} does not fit in {n} qubits")
    if iterations == "optimal":
        iterations = grover_iterations(n)
    iterations = int(iterations)
    zeros = [q for q in range(n) if not target >> q & 1]
    c = Circuit(n, [H(q) for q in range(n)])
    for _ in range(iterations):
        c.gates += [X(q) for q in zeros]
        c.gates += _phase_flip_all_ones(n)
        c.gates += [X(q) for q in zeros]
        c.gates += [H(q) for q in range(n)] + [X(q) for q in range(n)]
        c.gates += _phase_flip_all_ones(n)
        c.gates += [X(q) for q in range(n)] + [H(q) for q in range(n)]
    return c


# -- random sampling circuits ----------------------------------------------------

SINGLE_QUBIT_SET = ("SX", "SY", "T")


def grid_couplings(rows: int, cols: int, pattern: int) -> list[tuple[int, int]]:
    """Neighbour pairs for one of four alternating CZ patterns on a row-major grid."""
    pairs = []
    horizontal, parity = pattern % 4 < 2, pattern % 2
    for r in range(rows):
        for c in range(cols):
            if horizontal and c + 1 < cols and c % 2 == parity:
                pairs.append((r * cols + c, r * cols + c + 1))
            if not horizontal and r + 1 < rows and r % 2 == parity:
                pairs.append((r * cols + c, (r + 1) * cols + c))
    return pairs


def random_sampling_circuit(rows: int, cols: int, depth: int, seed: int = 0) -> Circuit:
    """Layered grid circuit: per cycle, random single-qubit gates then a CZ pattern.

    Each qubit draws from {sqrt(X), sqrt(Y), T} and never repeats its previous
    draw; CZ patterns cycle through horizontal-even, horizontal-odd,
    vertical-even, vertical-odd neighbour pairs.
    """
    if rows < 1 or cols < 1 or depth < 1:
        raise ConfigurationError("rows, cols and depth must be positive")
    rng = random.Random(seed)
    n = rows * cols
    last: list[str | None] = [None] * n
    gates: list[Gate] = []
    for cycle in range(depth):
        for q in range(n):
            name = rng.choice([g for g in SINGLE_QUBIT_SET if g != last[q]])
            last[q] = name
            gates.append(Gate.named(name, q))
        for a, b in grid_couplings(rows, cols, cycle):
            gates.append(CZ(a, b))
    return Circuit(n, gates)


def grid_shape(n: int) -> tuple[int, int]:
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


# -- QAOA --------------------------------------------------------------------------

def regular_graph(n: int, degree: int = 4, seed: int = 0) -> nx.Graph:
    if n * degree % 2 or degree >= n:
        raise ConfigurationError(f"no {degree}-regular graph on {n} vertices")
    return nx.random_regular_graph(degree, n, seed=seed)


def qaoa_maxcut(n: int, p: int = 1, degree: int = 4, seed: int = 0) -> Circuit:
    """p rounds of ZZ cost layer (CX, RZ, CX per edge) and RX mixer."""
    graph = regular_graph(n, degree, seed)
    rng = np.random.default_rng(seed)
    gammas = rng.uniform(0, math.pi, p)
    betas = rng.uniform(0, math.pi / 2, p)
    gates = [H(q) for q in range(n)]
    for gamma, beta in zip(gammas, betas):
        for a, b in sorted(tuple(sorted(e)) for e in graph.edges()):
            gates += [CX(a, b), Gate.named("RZ", b, theta=2 * float(gamma)), CX(a, b)]
        gates += [Gate.named("RX", q, theta=2 * float(beta)) for q in range(n)]
    return Circuit(n, gates)


# -- QFT ----------------------------------------------------------------------------

def _swap(a: int, b: int) -> list[Gate]:
    return [CX(a, b), CX(b, a), CX(a, b)]


def _cphase_decomposed(control: int, target: int, theta: float) -> list[Gate]:
    return [
        Gate.named("P", control, theta=theta / 2),
        CX(control, target),
        Gate.named("P", target, theta=-theta / 2),
        CX(control, target),
        Gate.named("P", target, theta=theta / 2),
    ]


def qft(n: int, seed: int | None = None, input_mask: int | None = None,
        decompose_cphase: bool = False) -> Circuit:
    """QFT |x> -> sum_y exp(2 pi i x y / 2**n) |y> / sqrt(2**n), qubit 0 = LSB.

    With `seed` (or an explicit `input_mask`) X gates prepare a basis input.
    Gate count, excluding the X layer: n(n+1)/2 native gates plus 3 CX per
    reversal swap; with `decompose_cphase` each controlled phase becomes
    five gates.
    """
    if n < 1:
        raise ConfigurationError("QFT needs at least one qubit")
    gates: list[Gate] = []
    if input_mask is None and seed is not None:
        input_mask = random.Random(seed).getrandbits(n)
    if input_mask:
        gates += [X(q) for q in range(n) if input_mask >> q & 1]
    for t in reversed(range(n)):
        gates.append(H(t))
        for c in reversed(range(t)):
            theta = math.pi / 2 ** (t - c)
            gates += _cphase_decomposed(c, t, theta) if decompose_cphase else [CP(c, t, theta)]
    for q in range(n // 2):
        gates += _swap(q, n - 1 - q)
    return Circuit(n, gates)


def qft_gate_count(n: int, decompose_cphase: bool = False) -> int:
    cphases = n * (n - 1) // 2
    return n + cphases * (5 if decompose_cphase else 1) + 3 * (n // 2)


# -- text format -------------------------------------------------------------------

def parse_circuit(text: str, n: int | None = None) -> Circuit:
    declared = None
    parsed: list[tuple[int, Gate]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        name = tokens[0].upper()
        if name == "QUBITS":
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise CircuitParseError("QUBITS takes one integer", lineno)
            declared = int(tokens[1])
            continue
        if name not in GATE_VOCABULARY:
            raise CircuitParseError(f"unknown gate {tokens[0]!r}", lineno)
        ncontrols, _, takes_angle = GATE_VOCABULARY[name]
        args = tokens[1:]
        theta = None
        if takes_angle:
            if not args:
                raise CircuitParseError(f"{name} needs an angle", lineno)
            try:
                theta = float(args[-1])
            except ValueError:
                raise CircuitParseError(f"malformed angle {args[-1]!r}", lineno) from None
            if not math.isfinite(theta):
                raise CircuitParseError(f"non-finite angle {args[-1]!r}", lineno)
            args = args[:-1]
        try:
            qubits = [int(a) for a in args]
        except ValueError:
            raise CircuitParseError(f"malformed qubit index in {line!r}", lineno) from None
        expected = None if ncontrols is None else 1 + ncontrols
        if not qubits or (expected is not None and len(qubits) != expected) or (
                ncontrols is None and len(qubits) < 3):
            raise CircuitParseError(f"{name}: wrong number of qubits", lineno)
        try:
            gate = Gate.named(name, qubits[0], qubits[1:], theta)
        except ConfigurationError as exc:
            raise CircuitParseError(str(exc), lineno) from None
        parsed.append((lineno, gate))
    if n is not None and declared is not None and declared != n:
        raise CircuitParseError(f"file declares {declared} qubits, expected {n}", 1)
    width = n if n is not None else declared
    if width is None:
        width = 1 + max((max(g.qubits) for _, g in parsed), default=0)
    for lineno, gate in parsed:
        if max(gate.qubits) >= width:
            raise CircuitParseError(f"qubit index {max(gate.qubits)} out of range [0, {width})",
                                    lineno)
    return Circuit(width, [g for _, g in parsed])


def render_circuit(circuit: Circuit) -> str:
    lines = [f"QUBITS {circuit.n}"]
    for g in circuit.gates:
        parts = [g.name, str(g.target), *map(str, g.controls), *map(repr, g.params)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def builtin(name: str, n: int, *, seed: int = 0, iterations: int | str = "optimal",
            target: int | None = None, depth: int = 11, rows: int | None = None,
            rounds: int = 1) -> Circuit:
    name = name.lower()
    if name == "grover":
        return grover(n, iterations, target)
    if name == "qft":
        return qft(n, seed=seed)
    if name == "qaoa":
        return qaoa_maxcut(n, rounds, 4, seed)
    if name == "random":
        if rows is None:
            rows, cols = grid_shape(n)
        else:
            if n % rows:
                raise ConfigurationError(f"{rows} rows do not divide {n} qubits")
            cols = n // rows
        return random_sampling_circuit(rows, cols, depth, seed)
    raise ConfigurationError(f"unknown builtin circuit {name!r}")


def supported(circuit: Circuit, names: Sequence[str] = tuple(GATE_VOCABULARY)) -> bool:
    return all(g.name in names for g in circuit.gates)
