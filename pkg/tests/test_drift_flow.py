import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shockkin.drift_flow import (ConstantDrift, FunctionDrift, InitialField, ZeroDrift, gamma_flow,
                                 hamiltonian_flow, phi_flow, rk4_fixed, solve_drift)
from shockkin.errors import FlowEscapeError
from shockkin.model import make_model


def riccati(b0, t):
    return b0 / (1 - b0 * t)


def test_riccati_burgers_constant_initial_field():
    m = make_model("burgers", P_minus=0.0, P_plus=2.0)
    ts = np.linspace(0, 2, 21)
    b = solve_drift(m, InitialField(c0=-1.0), 0.0, 2.0, np.linspace(0, 1, 3), ts=ts, nrho=5)
    exact = riccati(-1.0, ts)
    assert np.max(np.abs(b.values / exact[None, :, None] - 1)) <= 1e-8
    assert float(b(0.5, 1.0, 1.0)) == pytest.approx(-0.5, rel=1e-8)
    assert b.blow_up_time is None


def test_zero_initial_field_stays_zero():
    m = make_model("shifted_burgers")
    b = solve_drift(m, InitialField(), 0.0, 1.0, np.linspace(0, 1, 4))
    assert np.all(b.values == 0)


def test_blow_up_is_reported():
    m = make_model("burgers", P_minus=0.0, P_plus=2.0)
    # b' = b^2 from b0 = 1 blows up at t = 1
    b = solve_drift(m, InitialField(c0=1.0), 0.0, 1.2, [0.0, 1.0], nt=7, nrho=2, cap=1e3)
    assert b.blow_up_time is not None and 0.9 < b.blow_up_time <= 1.0 + 1e-12
    assert b.ts.max() < b.blow_up_time


def test_nonpositive_drift_preserved():
    m = make_model("eps_sin", eps=0.2, nonpositive_hxx=True)
    b = solve_drift(m, InitialField(c0=-0.1, c_sin=0.05), 0.0, 0.5, np.linspace(0, 2, 5), nt=6, nrho=6)
    assert np.all(b.values <= 1e-12)


def test_phi_flow_closed_forms():
    m = np.linspace(0, 1, 5)
    assert np.array_equal(phi_flow(ZeroDrift(), 0.0, 1.3, m, 0.2), m)
    assert np.allclose(phi_flow(ConstantDrift(-1.0), 0.2, 0.7, m, 0.0), m - 0.5, atol=1e-14)
    gen = FunctionDrift(lambda x, t, r: -1.0 + 0.0 * r)
    assert np.allclose(phi_flow(gen, 0.2, 0.7, m, 0.0), m - 0.5, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 0.9), st.floats(0, 1), st.floats(0, 1), st.floats(0.2, 0.8))
def test_phi_flow_semigroup(a, u, w, m):
    b = FunctionDrift(lambda x, t, r: -0.2 * (1 + np.sin(3 * x)) * (1 + r))
    y = a + u * (1 - a)
    x = y + w * (1 - y)
    one = phi_flow(b, a, x, m, 0.3)
    two = phi_flow(b, y, x, phi_flow(b, a, y, m, 0.3), 0.3)
    assert abs(one - two) <= 1e-9


def test_phi_flow_escape_raises():
    m = make_model("burgers")
    with pytest.raises(FlowEscapeError):
        phi_flow(ConstantDrift(-1.0), 0.0, 1.0, 0.2, 0.0, model=m)


def test_hamiltonian_flow_examples():
    m = make_model("burgers", P_minus=0.0, P_plus=2.0)
    x, r = hamiltonian_flow(m, 0.0, 1.0, 0.0, 2.0)
    assert (float(x), float(r)) == pytest.approx((-2.0, 1.0), abs=1e-12)
    s = make_model("shifted_burgers")
    x, r = hamiltonian_flow(s, 0.4, 0.3, 0.1, 0.6)
    assert float(r) == pytest.approx(0.3, abs=1e-14)
    assert float(x) == pytest.approx(0.4 - 1.3 * 0.5, abs=1e-12)


def test_hamiltonian_flow_reversible():
    m = make_model("eps_sin", eps=0.3)
    rng = np.random.default_rng(1)
    a, p, s, t = rng.uniform(0, 2, 20), rng.uniform(0.2, 0.8, 20), rng.uniform(0, 0.5, 20), rng.uniform(0.5, 1, 20)
    x, r = hamiltonian_flow(m, a, p, s, t)
    a2, p2 = hamiltonian_flow(m, x, r, t, s)
    assert np.max(np.abs(a2 - a)) <= 1e-9 and np.max(np.abs(p2 - p)) <= 1e-9


def test_gamma_flow_examples():
    m = make_model("burgers", P_minus=0.0, P_plus=2.0)
    vals = np.linspace(0.2, 1.8, 5)
    assert np.array_equal(gamma_flow(m, ZeroDrift(), 1.0, vals, 0.0, 1.0), vals)
    out = gamma_flow(m, ConstantDrift(-1.0), 1.0, vals, 0.25, 1.5)
    assert np.allclose(out, vals * np.exp(-1.25), rtol=1e-10)


def test_rk4_fixed_is_fourth_order():
    def rhs(s, y):
        return -y

    err = [abs(rk4_fixed(rhs, np.array(1.0), n) - np.exp(-1.0)) for n in (8, 16)]
    assert err[0] / err[1] > 14
