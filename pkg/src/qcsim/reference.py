"""Dense monolithic state-vector simulator used as a correctness oracle.

Keeps the whole 2**n vector in memory.  Pair updates follow the same
evaluation order as the blocked engine (u11*a0 + u12*a1, no fused
operations) so lossless blocked runs can be compared bit-for-bit.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .core import Circuit, Gate


def _update(a0: np.ndarray, a1: np.ndarray, u) -> tuple[np.ndarray, np.ndarray]:
    if all(z.imag == 0 for z in u):
        # real U: same products, minus the exact-zero imaginary terms
        res = []
        for p, q in ((u[0], u[1]), (u[2], u[3])):
            re = p.real * a0.real + q.real * a1.real
            im = p.real * a0.imag + q.real * a1.imag
            y = np.empty(a0.shape, dtype=np.complex128)
            y.real, y.imag = re, im
            res.append(y)
        return res[0], res[1]
    res = []
    for p, q in ((u[0], u[1]), (u[2], u[3])):
        re = (p.real * a0.real - p.imag * a0.imag) + (q.real * a1.real - q.imag * a1.imag)
        im = (p.real * a0.imag + p.imag * a0.real) + (q.real * a1.imag + q.imag * a1.real)
        y = np.empty(a0.shape, dtype=np.complex128)
        y.real, y.imag = re, im
        res.append(y)
    return res[0], res[1]


@lru_cache(maxsize=512)
def _pair_indices(n: int, target: int, controls: tuple[int, ...]) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    mask = 0
    for c in controls:
        mask |= 1 << c
    keep = ((idx >> target) & 1 == 0) & ((idx & mask) == mask)
    out = idx[keep]
    out.setflags(write=False)
    return out


def apply_gate(psi: np.ndarray, gate: Gate) -> None:
    n = len(psi).bit_length() - 1
    t = gate.target
    if not gate.controls:
        v = psi.reshape(-1, 2, 1 << t)
        n0, n1 = _update(v[:, 0, :], v[:, 1, :], gate.u)
        v[:, 0, :], v[:, 1, :] = n0, n1
        return
    i0 = _pair_indices(n, t, tuple(sorted(gate.controls)))
    i1 = i0 | (1 << t)
    n0, n1 = _update(psi[i0], psi[i1], gate.u)
    psi[i0], psi[i1] = n0, n1


def initial_state(n: int) -> np.ndarray:
    psi = np.zeros(1 << n, dtype=np.complex128)
    psi[0] = 1.0
    return psi


def simulate(circuit: Circuit, psi: np.ndarray | None = None,
             stop: int | None = None) -> np.ndarray:
    psi = initial_state(circuit.n) if psi is None else psi.astype(np.complex128, copy=True)
    for gate in circuit.gates[:stop]:
        apply_gate(psi, gate)
    return psi


def fidelity(ideal: np.ndarray, sim: np.ndarray) -> float:
    """|<ideal|sim>| without renormalising `sim`."""
    return float(abs(np.vdot(ideal, sim)))
