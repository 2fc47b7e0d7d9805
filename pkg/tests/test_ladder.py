import math

import pytest
from hypothesis import given, strategies as st

from qcsim.errors import ConfigurationError, ResourceExhausted
from qcsim.ladder import (
    DEFAULT_LEVELS, FidelityLedger, LadderState, closed_form_bound, fidelity_curve,
    fidelity_lower_bound, parse_levels,
)


def test_parse_levels():
    assert parse_levels("lossless,1e-4,1e-2") == (0.0, 1e-4, 1e-2)
    assert parse_levels("1e-3") == (1e-3,)
    with pytest.raises(ConfigurationError):
        parse_levels("1e-2,1e-3")
    with pytest.raises(ConfigurationError):
        parse_levels("")
    with pytest.raises(ConfigurationError):
        parse_levels("2")


def test_escalation_threshold_is_95_percent():
    lad = LadderState()
    assert not lad.escalate_if_needed(95, 100, 0)
    assert lad.escalate_if_needed(95.01, 100, 3)
    assert lad.delta == 1e-5 and lad.log == [(3, 1)]


def test_last_level_overflow_raises_with_gate_index():
    lad = LadderState(DEFAULT_LEVELS, index=len(DEFAULT_LEVELS) - 1)
    assert not lad.escalate_if_needed(99, 100, 0)  # over threshold, within budget
    with pytest.raises(ResourceExhausted) as exc:
        lad.escalate_if_needed(101, 100, 42)
    assert exc.value.gate_index == 42


@given(st.lists(st.floats(0, 2), max_size=60))
def test_escalation_log_is_monotone(loads):
    lad = LadderState()
    for g, load in enumerate(loads):
        try:
            lad.escalate_if_needed(load, 1.0, g)
        except ResourceExhausted:
            break
    levels = [i for _, i in lad.log]
    assert levels == sorted(set(levels)) and all(0 < i < len(DEFAULT_LEVELS) for i in levels)


def test_ledger_examples():
    assert fidelity_lower_bound([]) == 1.0
    assert fidelity_lower_bound([1e-3] * 1000) == pytest.approx(0.367695, abs=1e-6)
    led = FidelityLedger()
    for d in (0.0, 1e-2, 1e-1):
        led.record(d)
    assert led.lower_bound() == pytest.approx(0.99 * 0.9) and len(led) == 3
    with pytest.raises(ValueError):
        led.record(1.0)


@given(st.lists(st.floats(0, 0.5), max_size=50))
def test_ledger_is_monotone_nonincreasing(deltas):
    curve = [fidelity_lower_bound(deltas[:k]) for k in range(len(deltas) + 1)]
    assert all(b <= a for a, b in zip(curve, curve[1:]))
    assert 0 <= curve[-1] <= 1


@pytest.mark.parametrize("delta", [1e-5, 1e-4, 1e-3, 1e-2, 1e-1])
def test_curve_matches_closed_form(delta):
    curve = fidelity_curve(delta, 500)
    assert all(abs(f - closed_form_bound(delta, g)) <= 1e-12 for g, f in enumerate(curve))
    assert math.isclose(curve[-1], (1 - delta) ** 500, rel_tol=1e-12)
