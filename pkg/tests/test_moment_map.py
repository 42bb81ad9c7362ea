import math

import pytest
from hypothesis import given, settings, strategies as st

from gamma_ricker.errors import DomainError, NumericFailure
from gamma_ricker.moment_map import (
    Breakdown,
    MomentState,
    Params,
    classical_ricker_step,
    deterministic_limit_gap,
    iterate,
    step,
)

# 50-digit evaluation of one step from (0.5, 0.02) at r=0.5, v=1.05.
STEP_MU = 0.6309790305668271069851864
STEP_S = 0.0382447469080893846793318


def test_params_validation():
    with pytest.raises(DomainError) as info:
        Params(0.0, 2.0)
    assert info.value.field == "r"
    with pytest.raises(DomainError) as info:
        Params(1.0, 1.0)
    assert info.value.field == "v"


def test_state_validation():
    with pytest.raises(DomainError):
        MomentState(0.5, 0.0)
    with pytest.raises(DomainError):
        MomentState(-0.5, 0.1)


def test_step_regression_constants():
    out = step(MomentState(0.5, 0.02), Params(0.5, 1.05))
    assert out.next.mu == pytest.approx(STEP_MU, rel=1e-14)
    assert out.next.s == pytest.approx(STEP_S, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3), st.floats(1e-3, 2), st.floats(0.1, 5), st.floats(1.001, 4))
def test_step_matches_high_precision(mu, s, r, v):
    from conftest import mp_step

    out = step(MomentState(mu, s), Params(r, v))
    m1, s1 = mp_step(mu, s, r, v)
    assert out.raw_second_moment == pytest.approx(float(s1 + m1**2), rel=1e-12)
    if not out.broke_down:
        assert out.next.mu == pytest.approx(float(m1), rel=1e-12)
        # s' is a difference; its error is relative to the second moment.
        assert abs(out.next.s - float(s1)) <= 1e-12 * float(s1 + m1**2)


def test_fixed_points_from_rounded_values():
    out = step(MomentState(0.602, 0.649), Params(1.5, 2.0))
    assert out.next.mu == pytest.approx(0.602, rel=1e-3)
    assert out.next.s == pytest.approx(0.649, rel=1e-3)
    out = step(MomentState(1.159, 0.88), Params(3.0, 1.05))
    assert out.next.mu == pytest.approx(1.159, rel=1e-2)
    assert out.next.s == pytest.approx(0.88, rel=1e-2)


@settings(max_examples=200)
@given(st.floats(1e-3, 5), st.floats(1e-4, 5), st.floats(0.05, 10), st.floats(1.0001, 5))
def test_variance_update_bounded_below(mu, s, r, v):
    # Exact Gamma expectations give s' = v E[Y^2] - E[Y]^2 >= (v - 1) mu'^2 > 0.
    out = step(MomentState(mu, s), Params(r, v))
    assert not out.broke_down
    assert out.next.s >= (v - 1) * out.next.mu**2 * (1 - 1e-9)


def test_breakdown_carries_raw_values(monkeypatch):
    import gamma_ricker.moment_map as mm

    monkeypatch.setattr(mm, "_raw_step", lambda mu, s, r, v: (0.4, -1e-3, 0.159))
    out = step(MomentState(0.5, 0.02), Params(1.0, 1.5))
    assert out.broke_down
    assert isinstance(out.next, Breakdown)
    assert (out.next.mu, out.next.s) == (0.4, -1e-3)
    tr = iterate(MomentState(0.5, 0.02), Params(1.0, 1.5), 10)
    assert tr.breakdown_step == 1 and len(tr) == 1
    assert tr.to_csv().endswith("# breakdown at n=1\n")


def test_numeric_failure_carries_inputs():
    with pytest.raises(NumericFailure) as info:
        step(MomentState(1e-3, 1e300), Params(800.0, 2.0))
    assert info.value.inputs


def test_iterate_zero_steps():
    tr = iterate(MomentState(0.5, 0.02), Params(1.0, 1.5), 0)
    assert len(tr) == 1 and tr.completed


def test_iterate_negative_steps():
    with pytest.raises(DomainError):
        iterate(MomentState(0.5, 0.02), Params(1.0, 1.5), -1)


def test_iterate_reaches_stationarity():
    tr = iterate(MomentState(0.5, 0.02), Params(1.39, 1.10), 2000)
    a, b = tr[2000], tr[1999]
    assert max(abs(a.mu - b.mu) / a.mu, abs(a.s - b.s) / a.s) < 1e-10


def test_equilibrium_persists():
    tr = iterate(MomentState(0.602, 0.649), Params(1.5, 2.0), 200)
    assert all(abs(st.mu - 0.602) < 1e-3 and abs(st.s - 0.649) < 1e-3 for st in tr.states)


def test_breakdown_csv_comment():
    tr = iterate(MomentState(0.5, 0.02), Params(0.5, 5.0), 5000)
    text = tr.to_csv()
    assert text.startswith("n,mu,s\n")
    if tr.breakdown_step is not None:
        assert text.rstrip().endswith(f"# breakdown at n={tr.breakdown_step}")


def test_classical_ricker():
    assert classical_ricker_step(1.0, 3.7) == 1.0
    assert classical_ricker_step(0.5, 2.0) == pytest.approx(0.5 * math.e, rel=1e-15)
    x = 0.5
    for _ in range(200):
        x = classical_ricker_step(x, 1.5)
    assert abs(x - 1) < 1e-9


def test_classical_ricker_slope_at_one():
    h = 1e-6
    slope = (classical_ricker_step(1 + h, 1.5) - classical_ricker_step(1 - h, 1.5)) / (2 * h)
    assert slope == pytest.approx(-0.5, abs=1e-8)


def test_deterministic_limit():
    assert deterministic_limit_gap(0.5, 1.0, 1e-9, 1e-8, 100).gap < 1e-3


def test_deterministic_limit_at_fixed_point():
    p = Params(1.5, 1 + 1e-9)
    tr = iterate(MomentState(1.0, 1e-8), p, 100)
    assert all(abs(st.mu - 1) < 1e-3 for st in tr.states)


def test_deterministic_limit_ladder():
    gaps = [deterministic_limit_gap(0.5, 1.0, e, e, 100).gap for e in (1e-6, 1e-8, 1e-10)]
    assert gaps[0] >= gaps[1] >= gaps[2]


@pytest.mark.parametrize("eps", [0.0, 2e-4, -1e-9])
def test_deterministic_limit_eps_domain(eps):
    with pytest.raises(DomainError):
        deterministic_limit_gap(0.5, 1.0, eps, 1e-8, 10)
