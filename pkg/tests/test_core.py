import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcsim.core import (
    CP, CX, GATE_VOCABULARY, MCX, Circuit, Gate, GateKind, H, QubitLocality, RankLayout,
    X, check_unitary, classify_qubit, decompose_index, gate_matrix, partner_index,
)
from qcsim.errors import ConfigurationError


def test_layout_create_and_segments():
    lay = RankLayout.create(10, 4, 8)
    assert (lay.b, lay.offset_bits, lay.block_bits, lay.rank_bits, lay.rank_shift) == (32, 5, 3, 2, 8)
    assert lay.recompose(3, 5, 7) == (3 << 8) | (5 << 5) | 7


@pytest.mark.parametrize("args", [(4, 3, 1), (4, 1, 6), (3, 4, 4)])
def test_layout_rejects_bad_shapes(args):
    with pytest.raises(ConfigurationError):
        RankLayout.create(*args)


def test_layout_product_must_match():
    with pytest.raises(ConfigurationError):
        RankLayout(4, 2, 2, 2)


def test_classify_boundaries():
    lay = RankLayout.create(6, 2, 4)  # b = 8
    got = [classify_qubit(q, lay) for q in range(6)]
    assert got[:3] == [QubitLocality.IN_BLOCK] * 3
    assert got[3:5] == [QubitLocality.CROSS_BLOCK_SAME_RANK] * 2
    assert got[5] is QubitLocality.CROSS_RANK
    with pytest.raises(ValueError):
        classify_qubit(6, lay)


def test_block_size_one_makes_every_qubit_outside_blocks():
    lay = RankLayout.create(3, 1, 8)
    assert all(classify_qubit(q, lay) is QubitLocality.CROSS_BLOCK_SAME_RANK for q in range(3))


@st.composite
def layouts(draw):
    n = draw(st.integers(1, 12))
    rb = draw(st.integers(0, n))
    bb = draw(st.integers(0, n - rb))
    return RankLayout.create(n, 1 << rb, 1 << bb)


@given(layouts(), st.data())
def test_decompose_recompose_roundtrip(lay, data):
    i = data.draw(st.integers(0, lay.dim - 1))
    r, k, o = decompose_index(i, lay)
    assert lay.recompose(r, k, o) == i
    assert 0 <= r < lay.r and 0 <= k < lay.n_b and 0 <= o < lay.b


@given(layouts(), st.data())
def test_partner_is_involution_and_moves_one_segment(lay, data):
    i = data.draw(st.integers(0, lay.dim - 1))
    q = data.draw(st.integers(0, lay.n - 1))
    j = partner_index(i, q, lay.n)
    assert partner_index(j, q, lay.n) == i
    a, b = decompose_index(i, lay), decompose_index(j, lay)
    changed = [x != y for x, y in zip(a, b)]
    loc = classify_qubit(q, lay)
    expect = {QubitLocality.CROSS_RANK: 0, QubitLocality.CROSS_BLOCK_SAME_RANK: 1,
              QubitLocality.IN_BLOCK: 2}[loc]
    assert changed == [k == expect for k in range(3)]


def test_partner_examples():
    assert partner_index(0b0101, 1) == 0b0111
    with pytest.raises(ValueError):
        partner_index(16, 0, 4)


@pytest.mark.parametrize("name", [n for n, (_, _, a) in GATE_VOCABULARY.items() if not a])
def test_fixed_gates_are_unitary(name):
    _, base, _ = GATE_VOCABULARY[name]
    check_unitary(gate_matrix(base))


@given(st.floats(-10, 10))
def test_rotations_are_unitary(theta):
    for base in ("RX", "RY", "RZ", "P"):
        check_unitary(gate_matrix(base, theta))


def test_non_unitary_rejected():
    with pytest.raises(ConfigurationError):
        Gate("bad", (1, 1, 0, 1), 0)


def test_gate_validation():
    with pytest.raises(ConfigurationError):
        Gate.named("CX", 0, (0,))
    with pytest.raises(ConfigurationError):
        Gate.named("H", 0, (1, 2))
    with pytest.raises(ConfigurationError):
        Gate.named("RZ", 0)
    with pytest.raises(ConfigurationError):
        Gate.named("NOPE", 0)
    assert MCX([0, 1, 2], 3).kind is GateKind.MULTI_CONTROLLED_X
    assert MCX([0], 1).name == "CX"
    assert CX(1, 0).qubits == (0, 1)


def test_cp_is_diag_phase():
    g = CP(0, 1, math.pi / 4)
    assert np.allclose(g.matrix(), np.diag([1, np.exp(1j * math.pi / 4)]))


def test_circuit_checks_width():
    with pytest.raises(ConfigurationError):
        Circuit(2, [H(2)])
    c = Circuit(2)
    c.append(X(1))
    with pytest.raises(ConfigurationError):
        c.append(X(5))
    assert len(c) == 1
