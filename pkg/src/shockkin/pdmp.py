"""Samplers for the piecewise-deterministic jump processes and the densities of
the laws they induce on shock configurations.

Every sampler runs the same loop: integrate the continuous state together with
the accumulated rate ``Lambda`` by RK4, stop where ``Lambda`` crosses an Exp(1)
clock (bisection inside the step), draw the jump target from the normalized
rate row, repeat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drift_flow import DriftField, ZeroDrift, _h_xx_vanishes
from .errors import HypothesisViolation, ShockKinError
from .kinetic import JumpKernel, KineticSolution, _interp_index, row_integral, velocity_matrix
from .model import HamiltonianModel, beta, fundamental_M

BISECT_RTOL = 1e-12


def make_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by (seed, realization index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


# -- rate tables -----------------------------------------------------------------

class RowSampler:
    """Jump rates and targets from a stack of kernel matrices indexed by one
    scalar coordinate (x for profile paths, t for boundary processes).

    ``mats[c, j, k]`` is the rate density of a jump from ``rhos[j]`` to
    ``rhos[k]`` at coordinate ``coords[c]``; it is interpolated linearly in
    the coordinate and in the left value.
    """

    def __init__(self, coords, rhos, mats):
        self.coords = np.atleast_1d(np.asarray(coords, float))
        self.rhos = np.asarray(rhos, float)
        self.mats = np.triu(np.asarray(mats, float))
        if self.mats.shape != (self.coords.size, self.rhos.size, self.rhos.size):
            raise ValueError("rate matrices do not match the coordinate and momentum grids")
        if np.any(self.mats < -1e-14):
            raise HypothesisViolation("negative jump rate: the generator is not Markov "
                                      "(second kernel must be nonnegative)", min_rate=float(self.mats.min()))
        self.mats = np.maximum(self.mats, 0.0)
        self.d = float(self.rhos[1] - self.rhos[0])
        self.table = row_integral(self.mats, self.d)
        self.is_zero = not np.any(self.mats > 0)
        self.constant_in_coord = self.coords.size == 1 or bool(np.all(self.mats == self.mats[:1]))
        self._dc = float(self.coords[1] - self.coords[0]) if self.coords.size > 1 else 1.0
        if self.coords.size > 2 and not np.allclose(np.diff(self.coords), self._dc, rtol=1e-9):
            raise ValueError("rate coordinates must be uniformly spaced")

    def rate_scalar(self, c: float, rho: float) -> float:
        nc, n = self.coords.size, self.rhos.size
        pr = min(max((rho - self.rhos[0]) / self.d, 0.0), n - 1.0)
        ir = min(int(pr), n - 2)
        wr = pr - ir
        T = self.table
        if nc == 1:
            return float((1 - wr) * T[0, ir] + wr * T[0, ir + 1])
        pc = min(max((c - self.coords[0]) / self._dc, 0.0), nc - 1.0)
        ic = min(int(pc), nc - 2)
        wc = pc - ic
        lo = (1 - wr) * T[ic, ir] + wr * T[ic, ir + 1]
        hi = (1 - wr) * T[ic + 1, ir] + wr * T[ic + 1, ir + 1]
        return float((1 - wc) * lo + wc * hi)

    def frozen_clock(self, c0: float, c1: float, rho: float, tau: float):
        """Exact first crossing of ``int_{c0}^{c} rate(c', rho) dc' = tau`` for a
        frozen value; the rate is piecewise linear in the coordinate.

        Returns ``(c_stop, fired, consumed)``.
        """
        if self.constant_in_coord:
            r = self.rate_scalar(c0, rho)
            if r * (c1 - c0) < tau:
                return c1, False, float(r * (c1 - c0))
            return float(c0 + tau / r), True, float(tau)
        col = self.rate(self.coords, np.full(self.coords.shape, rho))
        inner = self.coords[(self.coords > c0) & (self.coords < c1)]
        knots = np.concatenate([[c0], inner, [c1]])
        vals = np.interp(knots, self.coords, col)
        seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(knots)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        if cum[-1] < tau:
            return c1, False, float(cum[-1])
        i = int(np.searchsorted(cum, tau, side="left")) - 1
        i = min(max(i, 0), knots.size - 2)
        r = tau - cum[i]
        L = knots[i + 1] - knots[i]
        v0, v1 = vals[i], vals[i + 1]
        slope = (v1 - v0) / L
        if abs(slope) * L < 1e-14 * max(abs(v0), 1e-300):
            step = r / v0
        else:
            disc = max(v0 * v0 + 2 * slope * r, 0.0)
            step = 2 * r / (v0 + math.sqrt(disc))
        return float(knots[i] + min(max(step, 0.0), L)), True, float(tau)

    def rate(self, c, rho):
        ic, wc = _interp_index(self.coords, c)
        jc = np.minimum(ic + 1, self.coords.size - 1)
        ir, wr = _interp_index(self.rhos, rho)
        T = self.table
        lo = (1 - wr) * T[ic, ir] + wr * T[ic, ir + 1]
        hi = (1 - wr) * T[jc, ir] + wr * T[jc, ir + 1]
        return (1 - wc) * lo + wc * hi

    def row(self, c, rho) -> np.ndarray:
        ic, wc = _interp_index(self.coords, float(c))
        jc = min(int(ic) + 1, self.coords.size - 1)
        ir, wr = _interp_index(self.rhos, float(rho))
        ic, ir = int(ic), int(ir)
        M0, M1 = self.mats[ic], self.mats[jc]
        r0 = (1 - wr) * M0[ir] + wr * M0[ir + 1]
        r1 = (1 - wr) * M1[ir] + wr * M1[ir + 1]
        return (1 - wc) * r0 + wc * r1

    def sample_target(self, c, rho, u: float) -> float:
        """Inverse CDF of the row restricted to targets above ``rho`` (linear
        interpolation of the trapezoid CDF)."""
        row = self.row(c, rho)
        grid = self.rhos
        k = int(np.searchsorted(grid, rho, side="right"))
        if k >= grid.size:
            raise ShockKinError("no admissible jump target above the current value", rho=float(rho))
        start = float(np.interp(rho, grid, row))
        xs = np.concatenate([[rho], grid[k:]])
        ys = np.concatenate([[start], row[k:]])
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))])
        if cdf[-1] <= 0:
            raise ShockKinError("jump fired on a zero rate row", rho=float(rho), coord=float(c))
        target = u * cdf[-1]
        i = int(np.searchsorted(cdf, target, side="right")) - 1
        i = min(max(i, 0), xs.size - 2)
        span = cdf[i + 1] - cdf[i]
        frac = 0.0 if span <= 0 else (target - cdf[i]) / span
        return float(xs[i] + frac * (xs[i + 1] - xs[i]))


def profile_rates(f: JumpKernel) -> RowSampler:
    """Rates for paths in x at the kernel's time slice."""
    return RowSampler(f.xs, f.rhos, f.values)


def boundary_rates(model: HamiltonianModel, source, x: float) -> RowSampler:
    """Rates ``f^2 = v f`` at position ``x`` over time, from a kinetic solution
    or a static kernel snapshot."""
    if isinstance(source, KineticSolution):
        times, stack = source.times, source.values
    else:
        times, stack = np.array([source.t]), source.values[None]
    xs = source.xs
    ix, wx = _interp_index(xs, x)
    jx = min(int(ix) + 1, xs.size - 1)
    F = (1 - wx) * stack[:, int(ix)] + wx * stack[:, jx]
    mats = np.empty_like(F)
    static_v = model.xt_independent
    V = velocity_matrix(model, [x], float(times[0]), source.rhos)[0] if static_v else None
    for k, t in enumerate(times):
        Vk = V if static_v else velocity_matrix(model, [x], float(t), source.rhos)[0]
        mats[k] = Vk * F[k]
    if np.any(np.triu(mats) < -1e-14):
        raise HypothesisViolation("f^2 = v f is negative: the boundary generator needs an "
                                  "increasing Hamiltonian", min_rate=float(np.triu(mats).min()))
    return RowSampler(times, source.rhos, mats)


# -- path records -----------------------------------------------------------------

@dataclass
class PathRealization:
    """One sampled path: start (coordinate, value), jump coordinates with the
    values just before and after each jump."""

    anchor: float
    init: float
    end: float
    jump_coords: np.ndarray
    pre_values: np.ndarray
    post_values: np.ndarray
    final_value: float
    evolution: str
    seed: tuple | None = None
    slice_value: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_jumps(self) -> int:
        return int(self.jump_coords.size)

    def value_at(self, c: float, flow: Callable | None = None) -> float:
        """Right-continuous value at ``c``; ``flow(c0, c1, v)`` transports between jumps."""
        k = int(np.searchsorted(self.jump_coords, c, side="right"))
        c0 = self.anchor if k == 0 else float(self.jump_coords[k - 1])
        v0 = self.init if k == 0 else float(self.post_values[k - 1])
        return v0 if flow is None else float(flow(c0, c, v0))

    def to_rows(self):
        """(coordinate, value, jump flag) with both sides of each jump."""
        rows = [(self.anchor, self.init, 0)]
        for c, a, b in zip(self.jump_coords, self.pre_values, self.post_values):
            rows.append((float(c), float(a), 0))
            rows.append((float(c), float(b), 1))
        rows.append((self.end, self.final_value, 0))
        return np.array(rows, float)

    def check_monotone_jumps(self):
        if np.any(self.post_values <= self.pre_values):
            raise HypothesisViolation("a jump did not increase the value")


# -- core loop --------------------------------------------------------------------

def _rk4(c, y, h, drift, rate):
    def F(cc, yy):
        return drift(cc, yy), rate(cc, yy)
    d1, l1 = F(c, y)
    d2, l2 = F(c + 0.5 * h, y + 0.5 * h * d1)
    d3, l3 = F(c + 0.5 * h, y + 0.5 * h * d2)
    d4, l4 = F(c + h, y + h * d3)
    return y + h / 6 * (d1 + 2 * d2 + 2 * d3 + d4), h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)


def advance_to_clock(c: float, y: float, c_end: float, tau: float, drift: Callable | None,
                     rate: Callable, h: float):
    """Move from ``c`` toward ``c_end`` until the integrated rate reaches ``tau``.

    Returns ``(c_stop, y_stop, fired, consumed)``.  ``drift=None`` means a
    frozen state.
    """
    span = abs(c_end - c) or 1.0
    tol = BISECT_RTOL * span
    if drift is None:
        drift = _no_drift
    lam_acc = 0.0
    while c < c_end:
        step = min(h, c_end - c)
        y1, dl = _rk4(c, y, step, drift, rate)
        if lam_acc + dl >= tau:
            lo, hi = 0.0, step
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                _, dm = _rk4(c, y, mid, drift, rate)
                if lam_acc + dm >= tau:
                    hi = mid
                else:
                    lo = mid
            y_hit, _ = _rk4(c, y, hi, drift, rate)
            return c + hi, float(y_hit), True, tau
        lam_acc += dl
        c, y = c + step, float(y1)
    return c_end, float(y), False, lam_acc


def _no_drift(c, y):
    return 0.0


def _run(rates: RowSampler, c0: float, c1: float, y0: float, drift: Callable | None, rng,
         h: float, max_jumps: int = 100000):
    coords, pre, post = [], [], []
    c, y = float(c0), float(y0)
    hi = float(rates.rhos[-1])
    while c < c1:
        tau = rng.standard_exponential()
        if drift is None:
            c, fired, _ = rates.frozen_clock(c, c1, y, tau)
        else:
            c, y, fired, _ = advance_to_clock(c, y, c1, tau, drift, rates.rate_scalar, h)
        if not fired:
            break
        if y >= hi:
            # nothing above the top of the momentum interval
            continue
        target = rates.sample_target(c, y, rng.random())
        coords.append(c)
        pre.append(y)
        post.append(target)
        y = target
        if len(coords) > max_jumps:
            raise ShockKinError("jump count exceeded the safety cap", cap=max_jumps)
    return np.array(coords), np.array(pre), np.array(post), y


def sample_pdmp_path(b: DriftField | None, f: JumpKernel | RowSampler, t: float, a_minus: float,
                     a_plus: float, init: float, rng: np.random.Generator, n_steps: int = 200,
                     seed=None) -> PathRealization:
    """Profile path in x on ``[a_minus, a_plus]`` at time slice ``t``: drift
    ``drho/dx = b(x, t, rho)`` between jumps with rate row ``f(x, t, rho, .)``."""
    rates = f if isinstance(f, RowSampler) else profile_rates(f)
    if not (rates.rhos[0] - 1e-12 <= init <= rates.rhos[-1] + 1e-12):
        raise HypothesisViolation("initial value outside the momentum interval", init=init)
    b = b if b is not None else ZeroDrift()
    drift = None if b.is_zero else (lambda x, r: float(b(x, t, r)))
    h = (a_plus - a_minus) / n_steps
    coords, pre, post, final = _run(rates, a_minus, a_plus, init, drift, rng, h)
    if drift is not None:
        final = _flow_to(drift, coords[-1] if coords.size else a_minus,
                         post[-1] if post.size else init, a_plus, h)
    return PathRealization(a_minus, float(init), a_plus, coords, pre, post, float(final),
                           "drift" if drift else "constant", seed, t)


def _flow_to(drift, c0, y0, c1, h):
    n = max(1, int(math.ceil((c1 - c0) / h)))
    step = (c1 - c0) / n
    y = y0
    for i in range(n):
        y, _ = _rk4(c0 + i * step, y, step, drift, _no_drift)
    return float(y)


def sample_boundary_process(model: HamiltonianModel, b: DriftField | None, rates: RowSampler | KineticSolution
                            | JumpKernel, x: float, t0: float, t1: float, init: float, rng: np.random.Generator,
                            n_steps: int = 200, seed=None) -> PathRealization:
    """Value process in t at fixed ``x``: ``dzeta/dt = beta(x, t, zeta)`` between
    jumps, rate ``f^2(x, t, zeta, .)``."""
    if not isinstance(rates, RowSampler):
        rates = boundary_rates(model, rates, x)
    b = b if b is not None else ZeroDrift()
    still = b.is_zero and _h_xx_vanishes(model)
    drift = None if still else (lambda t, r: float(beta(model, b, x, t, r)))
    h = (t1 - t0) / n_steps
    coords, pre, post, final = _run(rates, t0, t1, init, drift, rng, h)
    if drift is not None:
        final = _flow_to(drift, coords[-1] if coords.size else t0, post[-1] if post.size else init, t1, h)
    return PathRealization(t0, float(init), t1, coords, pre, post, float(final),
                           "gamma" if drift else "constant", seed, x)


def sample_y_process(g: JumpKernel | RowSampler, t: float, a_minus: float, a_plus: float, y0: float,
                     rng: np.random.Generator, n_steps: int = 200, seed=None) -> PathRealization:
    """Pure-jump label process in x for the fundamental class."""
    rates = g if isinstance(g, RowSampler) else profile_rates(g)
    h = (a_plus - a_minus) / n_steps
    coords, pre, post, final = _run(rates, a_minus, a_plus, y0, None, rng, h)
    return PathRealization(a_minus, float(y0), a_plus, coords, pre, post, float(final), "constant", seed, t)


# -- configuration laws -----------------------------------------------------------------

def _segments(q):
    xs = list(q.positions) + [q.a_plus]
    return [(float(xs[i]), float(xs[i + 1]), float(q.values[i])) for i in range(len(q.values))]


def gamma_big(q, t: float, b: DriftField | None, f: JumpKernel | RowSampler, n_per_unit: int = 400) -> float:
    """``Gamma(q, t) = int_{a-}^{a+} lambda(y, t, rho(y, t; q)) dy`` along the
    reconstructed profile (drift flow between jumps, or constant labels)."""
    rates = f if isinstance(f, RowSampler) else profile_rates(f)
    b = b if b is not None else ZeroDrift()
    drift = None if b.is_zero or getattr(q, "kind", "pdmp") != "pdmp" else (lambda x, r: float(b(x, t, r)))
    total = 0.0
    for x0, x1, v in _segments(q):
        if x1 <= x0:
            continue
        if drift is None and rates.constant_in_coord:
            total += float(rates.rate(x0, v)) * (x1 - x0)
            continue
        n = max(4, int(math.ceil((x1 - x0) * n_per_unit)))
        h = (x1 - x0) / n
        y = v
        for i in range(n):
            y, dl = _rk4(x0 + i * h, y, h, drift or _no_drift, lambda c, r: float(rates.rate(c, r)))
            total += dl
    return float(total)


def transported_left_values(q, t: float, b: DriftField | None, n_per_unit: int = 400) -> np.ndarray:
    """Left limits at each jump: the previous value carried by the drift flow."""
    b = b if b is not None else ZeroDrift()
    out = []
    for i in range(1, len(q.values)):
        x0, x1, v = float(q.positions[i - 1]), float(q.positions[i]), float(q.values[i - 1])
        if b.is_zero or getattr(q, "kind", "pdmp") != "pdmp":
            out.append(v)
        else:
            h = (x1 - x0) / max(1, int(math.ceil((x1 - x0) * n_per_unit)))
            out.append(_flow_to(lambda x, r: float(b(x, t, r)), x0, v, x1, h) if x1 > x0 else v)
    return np.array(out)


def mu_n_density(q, t: float, ell, f: JumpKernel, b: DriftField | None = None) -> float:
    """Density of the configuration law at ``q``:
    ``ell(rho_0) exp(-Gamma) prod_i f(x_i, t, rho_hat_{i-1}, rho_i)``.

    ``ell`` is a callable density, a ``MarginalLaw`` (density part) or ``None``
    for the law conditional on the left value.
    """
    lead = 1.0
    if ell is not None:
        rho0 = float(q.values[0])
        if hasattr(ell, "density"):
            lead = float(np.interp(rho0, ell.rhos, ell.density))
        else:
            lead = float(ell(rho0))
    left = transported_left_values(q, t, b)
    prod = 1.0
    for i, lv in enumerate(left, start=1):
        prod *= float(f(q.positions[i], t, lv, q.values[i]))
    return lead * math.exp(-gamma_big(q, t, b, f)) * prod


# -- fundamental-class helpers --------------------------------------------------------

def fundamental_profile(model: HamiltonianModel, positions, labels, a_plus: float, t: float, s: float, x):
    """``M(x, t; y_i, s)`` on ``[x_i, x_{i+1})``."""
    x = np.asarray(x, float)
    idx = np.clip(np.searchsorted(np.asarray(positions, float), x, side="right") - 1, 0, len(labels) - 1)
    return fundamental_M(model, x, t, np.asarray(labels, float)[idx], s)
