import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shockkin.drift_flow import ConstantDrift, ZeroDrift
from shockkin.errors import CFLError, HypothesisViolation
from shockkin.kinetic import (JumpKernel, KineticSolver, MarginalLaw, TailKernel, UniformKernel, c_minus, c_plus,
                              j_of_f, kinetic_residual, q_plus, row_conservation, row_integral, step_ell, step_f,
                              step_g, tabulate_kernel, velocity_matrix, vhat_matrix)
from shockkin.model import make_model


def ones(x, t, rm, rp):
    return np.where(rm <= rp, 1.0, 0.0) + 0.0 * x


def zeros(x, t, rm, rp):
    return 0.0 * (x + rm + rp)


@pytest.fixture(scope="module")
def burgers2():
    return make_model("burgers", P_minus=0.0, P_plus=2.0)


def test_q_plus_examples(burgers2):
    assert q_plus(ones, burgers2, 0.0, 0.0, 0.7, 0.7) == 0.0
    # integrand (rp - rm)/2 is constant, so the gain term is (rp - rm)^2 / 2
    assert q_plus(ones, burgers2, 0.0, 0.0, 0.0, 2.0) == pytest.approx(2.0, abs=1e-6)
    rm, rp = np.array([0.1, 0.5]), np.array([1.3, 1.9])
    assert np.allclose(q_plus(ones, burgers2, 0.0, 0.0, rm, rp), (rp - rm) ** 2 / 2, atol=1e-6)


def test_q_plus_disjoint_bands(burgers2):
    def bands(x, t, rm, rp):
        return ((rm < 0.5) & (rp > 1.5) & (rm <= rp)).astype(float)

    assert q_plus(bands, burgers2, 0.0, 0.0, 0.2, 1.8) == 0.0


def test_j_of_f_examples(burgers2):
    assert j_of_f(zeros, burgers2, 0.0, 0.0, 0.3, 1.1, 2.0) == 0.0
    lin = make_model("linear", c=0.8, P_minus=0.0, P_plus=2.0)
    assert j_of_f(ones, lin, 0.0, 0.0, 0.3, 1.1, 2.0) == pytest.approx(0.0, abs=1e-12)


def test_j_of_f_closed_rows(burgers2):
    def A1(r):
        return 2.0 - r

    def A2(r):
        # int_r^2 (r + s)/2 ds
        return (r * (2 - r) + (4 - r ** 2) / 2) / 2

    rm, rp = np.array([0.0, 0.4, 1.0]), np.array([1.5, 0.9, 1.8])
    expect = A2(rp) - A2(rm) - (rm + rp) / 2 * (A1(rp) - A1(rm))
    assert np.allclose(j_of_f(ones, burgers2, 0.0, 0.0, rm, rp, 2.0), expect, atol=1e-6)


def test_transport_terms_vanish_without_drift(burgers2):
    cp = c_plus(ones, burgers2, ZeroDrift(), 0.0, 0.0, 0.3, 1.2)
    c1, c2 = c_minus(ones, burgers2, ZeroDrift(), 0.0, 0.0, 0.3, 1.2)
    assert cp == 0.0 and c1 == 0.0 and c2 == 0.0


def test_transport_terms_hand_expansion(burgers2):
    def lin(x, t, rm, rp):
        return rp - rm

    b = ConstantDrift(-1.0)
    rm, rp = np.array([0.1, 0.5, 0.7]), np.array([0.9, 1.1, 1.9])
    # K(rp, rm) f = (rp - rm)^2 / 2, so its rp-derivative is rp - rm
    assert np.allclose(c_plus(lin, burgers2, b, 0.0, 0.0, rm, rp), rp - rm, atol=1e-7)
    f1, f2 = c_minus(lin, burgers2, b, 0.0, 0.0, rm, rp)
    assert np.allclose(f1, 0.0, atol=1e-7) and np.allclose(f2, 0.0, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.6), st.floats(0.1, 0.35), st.floats(0, 3), st.floats(0, 1))
def test_c_minus_two_forms_agree(rm, gap, x, t):
    m = make_model("eps_sin", eps=0.2)
    f = TailKernel(0.0, 1.0, amp=1.0, c_sin=0.2)

    def b(xx, tt, r):
        return -0.2 - 0.1 * np.sin(xx) * r

    f1, f2 = c_minus(f.extended, m, b, x, t, rm, rm + gap)
    assert abs(f1 - f2) <= 1e-8


def test_row_conservation_uniform_burgers():
    m = make_model("burgers")
    rhos = np.linspace(0, 1, 201)
    K = tabulate_kernel(UniformKernel(0, 1), [0.0], rhos)
    V = velocity_matrix(m, [0.0], 0.0, rhos)
    assert np.max(np.abs(row_conservation(K.values, V, K.d))) <= 1e-6


def test_row_integral_trapezoid():
    rhos = np.linspace(0, 1, 11)
    F = np.triu(np.ones((11, 11)))
    assert np.allclose(row_integral(F, 0.1), 1 - rhos)


def test_zero_kernels_stay_zero():
    m = make_model("shifted_burgers")
    rhos = np.linspace(0, 1, 21)
    f = tabulate_kernel(zeros, np.linspace(0, 1, 5), rhos)
    f1, clip = step_f(f, ZeroDrift(), m, 0.01)
    assert np.all(f1.values == 0) and clip == 0
    g = tabulate_kernel(zeros, np.linspace(-1, -0.5, 5), rhos, 0.0, "g", -1.0)
    g1, _ = step_g(g, make_model("burgers"), 0.01)
    assert np.all(g1.values == 0)


def test_cfl_violation_raises():
    m = make_model("shifted_burgers")
    f = tabulate_kernel(ones, np.linspace(0, 1, 11), np.linspace(0, 1, 11))
    with pytest.raises(CFLError):
        step_f(f, ZeroDrift(), m, 0.5)


def test_negative_kernel_rejected():
    with pytest.raises(HypothesisViolation):
        JumpKernel([0.0], np.linspace(0, 1, 3), -np.triu(np.ones((1, 3, 3))))


def test_kernel_queries_outside_simplex_are_zero():
    K = tabulate_kernel(ones, [0.0], np.linspace(0, 1, 11))
    assert K(0.0, 0.0, 0.8, 0.2) == 0.0
    assert K(0.0, 0.0, 0.2, 1.5) == 0.0
    assert K(0.0, 0.0, 0.2, 0.8) == pytest.approx(1.0)


def _band_solution(n, dt, T=0.2):
    m = make_model("burgers")
    rhos = np.linspace(0, 1, n)
    K0 = tabulate_kernel(UniformKernel(0, 1), [0.0], rhos)
    sol = KineticSolver(m, [0.0], rhos, 0.0, dt).solve(K0.values, T, store_every=int(round(0.02 / dt)))
    return m, sol


def test_compact_form_residual_first_order():
    res = []
    for n, dt in ((21, 0.004), (41, 0.002)):
        m, sol = _band_solution(n, dt)
        res.append(np.abs(kinetic_residual(sol, m, compact=True)).max())
    assert res[0] / res[1] >= 1.7


def test_row_sums_along_trajectory():
    m, sol = _band_solution(201, 0.002)
    for k in range(sol.times.size):
        F = sol.values[k]
        V = velocity_matrix(m, sol.xs, sol.times[k], sol.rhos)
        assert np.max(np.abs(row_conservation(F, V, sol.d))) <= 1e-6
    assert sol.diagnostics["clipped_mass"] == 0.0


def _g_solution(scale):
    m = make_model("burgers")
    xs = np.linspace(-1, -0.5, 10 * scale + 1)
    ys = np.linspace(0, 1, 10 * scale + 1)
    g0 = tabulate_kernel(TailKernel(0, 1, amp=1.0), xs, ys, 0.0, "g", -1.0)
    sol = KineticSolver(m, xs, ys, 0.0, 0.01 / scale, None, "g", -1.0).solve(g0.values, 0.2, store_every=2)
    return m, sol


def test_row_balance_for_label_kernel():
    """Time derivative of the row integral of g against the x-derivative of the row integral of vhat g."""
    out = []
    for scale in (1, 2):
        m, sol = _g_solution(scale)
        A1 = np.array([row_integral(sol.values[k], sol.d) for k in range(sol.times.size)])
        A2 = np.array([row_integral(vhat_matrix(m, sol.xs, t, sol.rhos, sol.s) * sol.values[k], sol.d)
                       for k, t in enumerate(sol.times)])
        dt = sol.times[1] - sol.times[0]
        A1_t = (A1[2:] - A1[:-2]) / (2 * dt)
        A2_x = np.gradient(A2[1:-1], sol.xs, axis=1)
        out.append(np.abs(A1_t - A2_x)[:, 1:-1].max())
    assert out[0] / out[1] >= 1.7


def test_label_kernel_residual_first_order():
    res = []
    for scale in (1, 2):
        m, sol = _g_solution(scale)
        res.append(np.abs(kinetic_residual(sol, m)).max())
    assert res[0] / res[1] >= 1.7


def test_step_ell_trivial_and_transport():
    rhos = np.linspace(0, 1, 201)
    dens = np.exp(-0.5 * ((rhos - 0.3) / 0.03) ** 2)
    dens /= np.trapezoid(dens, rhos)
    ell = MarginalLaw(rhos, dens)
    F0 = np.zeros((201, 201))
    same = step_ell(ell, F0, np.zeros(201), 0.0, 0.01)
    assert np.allclose(same.density, dens)
    moved = ell
    for _ in range(100):
        moved = step_ell(moved, F0, np.full(201, 0.2), 0.2, 0.001)
    assert moved.mean() == pytest.approx(0.32, abs=2e-3)
    assert moved.mass() == pytest.approx(1.0, abs=1e-3)


def test_delta_marginal_atom_mass():
    rhos = np.linspace(0, 1, 41)
    ell = MarginalLaw.delta(rhos, 0.25)
    assert ell.mass() == 1.0 and ell.mean() == 0.25
    moll = MarginalLaw.delta(rhos, 0.5, mollify=2.0)
    assert moll.mass() == pytest.approx(1.0, abs=1e-9)
