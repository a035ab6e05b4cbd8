"""Independent oracles and the statistical comparison of the two pipelines.

* ``godunov_solve``: first-order finite volumes for ``rho_t = H(x, t, rho)_x``.
* ``compare_particle_vs_fv``: shock particles against Godunov on a dx ladder.
* ``identity_residual_suite``: pointwise residuals of the flow/kernel identities.
* ``ensemble_comparison``: Monte Carlo of sampled-and-evolved paths (pipeline A)
  against the kinetic solution (pipeline B).
* ``l1_stability_check``: the weighted L1 bound for pairs of solutions.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drift_flow import DriftField, InitialField, ZeroDrift, phi_flow, solve_drift
from .errors import CFLError, NonCoerciveError
from .kinetic import (
    KernelFamily,
    KineticSolver,
    MarginalLaw,
    c_minus,
    kinetic_rhs,
    row_A,
    row_conservation,
    shock_velocity,
    solve_marginal_x,
    tabulate_kernel,
    velocity_matrix,
)
from .model import HamiltonianModel, beta
from .pdmp import RowSampler, boundary_rates, make_rng, profile_rates, sample_pdmp_path
from .shockline import (
    OPEN_RIGHT,
    STOCHASTIC_RIGHT,
    ShockConfiguration,
    evolve,
    jump_limits,
    l1_distance,
    reconstruct,
)


# -- statistics helpers --------------------------------------------------------------

def ks_distance_mixed(samples, cdf: Callable, cdf_left: Callable | None = None) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a law that
    may have atoms; both one-sided limits are compared at every sample value."""
    x = np.asarray(samples, float)
    n = x.size
    u, cnt = np.unique(x, return_counts=True)
    emp = np.cumsum(cnt) / n
    emp_left = emp - cnt / n
    cdf_left = cdf_left or cdf
    return float(max(np.max(np.abs(emp - cdf(u))), np.max(np.abs(emp_left - cdf_left(u)))))


# -- Godunov reference solver ---------------------------------------------------------

def godunov_flux(model: HamiltonianModel, x, t, uL, uR):
    """Interface flux ``G`` with ``rho_t + G_x = 0``, ``G = -H``, for convex H:
    the minimum of ``-H`` over ``[uL, uR]`` when ``uL <= uR``, else the maximum
    over ``[uR, uL]``."""
    uL, uR = np.broadcast_arrays(np.asarray(uL, float), np.asarray(uR, float))
    HL, HR = model.H(x, t, uL), model.H(x, t, uR)
    try:
        crit = model.momentum_for_slope(x, t, np.zeros(uL.shape))
        crit = np.broadcast_to(crit, uL.shape)
    except NonCoerciveError:
        crit = None
    lo, hi = np.minimum(uL, uR), np.maximum(uL, uR)
    if crit is None:
        hmin = np.minimum(HL, HR)
    else:
        hmin = model.H(x, t, np.clip(crit, lo, hi))
    return np.where(uL <= uR, -np.maximum(HL, HR), -hmin)


@dataclass
class FVSolution:
    edges: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (nt, ncells)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.values[k]


def godunov_solve(model: HamiltonianModel, initial: Callable, a_minus: float, a_plus: float, t0: float,
                  T: float, dx: float, right_trace: Callable | None = None, left_trace: Callable | None = None,
                  cfl: float = 0.9, probe_times=None, dt: float | None = None) -> FVSolution:
    """Cell averages of ``initial`` evolved by Godunov's scheme.  A boundary
    without a trace is free outflow (zero-gradient ghost cell)."""
    n = max(1, int(round((a_plus - a_minus) / dx)))
    edges = np.linspace(a_minus, a_plus, n + 1)
    dx = edges[1] - edges[0]
    # cell averages by 16-point Gauss-Legendre
    gx, gw = np.polynomial.legendre.leggauss(16)
    pts = 0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * dx * gx[None, :]
    u = np.sum(initial(pts) * gw[None, :], axis=1) * 0.5
    if dt is not None:
        rhos = np.linspace(model.P_minus, model.P_plus, 65)
        speed = float(np.max(np.abs(model.H_rho(edges[:, None], t0, rhos[None, :]))))
        if dt * speed / dx > cfl:
            raise CFLError(f"CFL number {dt * speed / dx:.3f} exceeds {cfl}")
    probe_times = sorted(set([t0, T] + list(probe_times or [])))
    times, snaps = [t0], [u.copy()]
    t = t0
    pending = [p for p in probe_times if p > t0]
    while pending:
        target = pending[0]
        h = min(dt, target - t) if dt is not None else None
        left = left_trace(t) if left_trace is not None else u[0]
        right = right_trace(t) if right_trace is not None else u[-1]
        ext = np.concatenate([[left], u, [right]])
        if dt is None:
            # step from the waves actually present: less numerical diffusion than the global bound
            speed = float(np.max(np.abs(model.H_rho(edges, t, np.maximum(ext[:-1], ext[1:])))))
            speed = max(speed, float(np.max(np.abs(model.H_rho(edges, t, np.minimum(ext[:-1], ext[1:]))))))
            h = min(cfl * dx / max(speed, 1e-12), target - t)
        G = godunov_flux(model, edges, t, ext[:-1], ext[1:])
        u = u - h / dx * (G[1:] - G[:-1])
        t += h
        if t >= target - 1e-14:
            t = target
            times.append(t)
            snaps.append(u.copy())
            pending.pop(0)
    return FVSolution(edges, np.array(times), np.array(snaps))


def l1_cells_vs_config(edges: np.ndarray, cells: np.ndarray, q: ShockConfiguration, model=None,
                       b: DriftField | None = None, sub: int = 64) -> float:
    """``int |u_h - rho|`` with u_h piecewise constant on cells.  Exact for
    piecewise-constant profiles (breakpoints merged), midpoint rule otherwise."""
    pts = np.union1d(edges, q.positions[(q.positions > edges[0]) & (q.positions < edges[-1])])
    if b is not None and not b.is_zero:
        fine = np.linspace(edges[0], edges[-1], (edges.size - 1) * sub + 1)
        pts = np.union1d(pts, fine)
    mids = 0.5 * (pts[1:] + pts[:-1])
    cell = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, cells.size - 1)
    prof = reconstruct(q, mids, model, b)
    return float(np.sum(np.abs(cells[cell] - prof) * np.diff(pts)))


def compare_particle_vs_fv(q0: ShockConfiguration, model: HamiltonianModel, T: float, dx_ladder,
                           probe_times=None, b: DriftField | None = None, macro_dt: float | None = None):
    """Run the particle system (open right end) and Godunov from the same
    profile; L1 distances at each probe time and each dx."""
    probe_times = list(probe_times or [T])
    res = evolve(q0, T, model, b, mode=OPEN_RIGHT, macro_dt=macro_dt or (T - q0.t) / 400, record=True)
    tr_t, tr_z = res.trace.boundary_series()

    def right_trace(t):
        k = int(np.searchsorted(tr_t, t, side="right")) - 1
        return float(tr_z[max(k, 0)])

    # particle configurations at probe times
    configs = {}
    for tp in probe_times:
        configs[tp] = evolve(q0, tp, model, b, mode=OPEN_RIGHT, macro_dt=macro_dt or (T - q0.t) / 400,
                             record=False).config

    def initial(x):
        return reconstruct(q0, np.clip(x, q0.a_minus, q0.a_plus), model, b)

    table = []
    for dx in dx_ladder:
        fv = godunov_solve(model, initial, q0.a_minus, q0.a_plus, q0.t, T, dx, right_trace=right_trace,
                           probe_times=probe_times)
        for tp in probe_times:
            cells = fv.at(tp)
            table.append({"dx": float(fv.edges[1] - fv.edges[0]), "t": tp,
                          "l1": l1_cells_vs_config(fv.edges, cells, configs[tp], model, b)})
    return table, configs


# -- identity residuals ----------------------------------------------------------------

def _trapezoid_nodes(x, y, n: int):
    """Nodes ``z`` (last axis) and weights of the trapezoid rule on ``[x, y]``."""
    s = np.linspace(0.0, 1.0, n)
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    w = np.full(n, 1.0)
    w[[0, -1]] = 0.5
    return x[..., None] + s * (y - x)[..., None], w * ((y - x) / (n - 1))[..., None]


def _flows(b, requests, n_steps: int = 32):
    """Evaluate several profile flows ``(a, x, m, t)`` in one vectorized call."""
    shaped = [np.broadcast_arrays(*(np.asarray(v, float) for v in r)) for r in requests]
    cat = [np.concatenate([r[i].ravel() for r in shaped]) for i in range(4)]
    out = phi_flow(b, *cat, n_steps=n_steps)
    res, k = [], 0
    for r in shaped:
        size = r[0].size
        res.append(out[k:k + size].reshape(r[0].shape))
        k += size
    return res


@dataclass
class ResidualReport:
    deltas: list
    residuals: dict  # name -> list of max residuals per delta

    def ratios(self) -> dict:
        out = {}
        for k, v in self.residuals.items():
            out[k] = [v[i] / v[i + 1] if v[i + 1] > 0 else math.inf for i in range(len(v) - 1)]
        return out


def identity_residual_suite(model: HamiltonianModel, b: DriftField, f: KernelFamily, deltas,
                           n_probes: int = 8, seed: int = 0, window=(0.0, 1.0), t_range=(0.1, 0.4),
                           quad_nodes: int = 24) -> ResidualReport:
    """Residuals of the seven identities at random probe points, each derivative
    taken by central differences of step ``delta`` and each x-integral by the
    trapezoid rule on nodes ``delta`` apart.

    ``lam = A(f)`` and ``A = A(v f)``; their t-derivative is the row integral of
    the kinetic right-hand side evaluated on ``f``.  Momentum integrals use
    Gauss-Legendre rules so that only the ``delta``-discretization is measured,
    and difference stencils see the kernel's smooth extension past the simplex.
    """
    rng = np.random.default_rng(seed)
    lo, hi = model.P_minus, model.P_plus
    span = hi - lo
    x = rng.uniform(window[0], window[0] + 0.5 * (window[1] - window[0]), n_probes)
    y = x + rng.uniform(0.2, 0.5, n_probes) * (window[1] - window[0])
    t = rng.uniform(*t_range, n_probes)
    rho = rng.uniform(lo + 0.2 * span, lo + 0.5 * span, n_probes)
    fx = f.extended if hasattr(f, "extended") else f

    def lam(xx, tt, r):
        return row_A(fx, xx, tt, r, hi, quad_nodes, "gauss")

    def vf(xx, tt, a, c):
        return shock_velocity(model, xx, tt, a, c) * fx(xx, tt, a, c)

    def A2(xx, tt, r):
        return row_A(vf, xx, tt, r, hi, quad_nodes, "gauss")

    def lam_t(xx, tt, r, h):
        def rhs(X, T, a, c):
            return kinetic_rhs(fx, model, b, X, T, a, c, hi, h=h, n=quad_nodes, rule="gauss")
        return row_A(rhs, xx, tt, r, hi, quad_nodes, "gauss")

    def bet(xx, tt, r):
        return beta(model, b, xx, tt, r)

    res = {k: [] for k in ("eq_gamma_x", "eq_drift_pde", "eq_flow_t", "eq_row_t", "eq_gamma_t", "eq_flow_x",
                           "eq_row_conservation", "c_minus_forms")}
    for d in deltas:
        h = d
        n = max(2, int(math.ceil((np.max(y - x) + h) / d)) + 1)
        # Gamma at the four stencil neighbours, and along the flow for Gamma_t
        g_args = [(x, y, rho + h), (x, y, rho - h), (x + h, y, rho), (x - h, y, rho)]
        nodes = [_trapezoid_nodes(a, y, n) for a, _, _ in g_args]
        Z, W = _trapezoid_nodes(x, y, n)
        X = np.broadcast_to(x[:, None], Z.shape)
        T = np.broadcast_to(t[:, None], Z.shape)
        R = np.broadcast_to(rho[:, None], Z.shape)
        requests = [(a[:, None], z, m[:, None], t[:, None]) for (a, _, m), (z, _) in zip(g_args, nodes)]
        requests += [(x, y, rho, t), (x, y, rho, t + h), (x, y, rho, t - h), (x, y, rho + h, t),
                     (x, y, rho - h, t), (x + h, y, rho, t), (x - h, y, rho, t),
                     (X, Z, R, T), (X, Z, R, T + h), (X, Z, R, T - h)]
        fl = _flows(b, requests)
        G = [np.sum(lam(z, t[:, None], f) * w, axis=-1) for (z, w), f in zip(nodes, fl[:4])]
        phi, phi_tp, phi_tm, phi_rp, phi_rm, phi_xp, phi_xm, PH, PH_p, PH_m = fl[4:]
        # Gamma: b Gamma_rho = -Gamma_x - lam (moving the lower limit right removes lam)
        G_r = (G[0] - G[1]) / (2 * h)
        G_x = (G[2] - G[3]) / (2 * h)
        res["eq_gamma_x"].append(float(np.max(np.abs(b(x, t, rho) * G_r + G_x + lam(x, t, rho)))))
        # b_t = beta_x + b beta_rho - b_rho beta
        b_t = (b(x, t + h, rho) - b(x, t - h, rho)) / (2 * h)
        be_x = (bet(x + h, t, rho) - bet(x - h, t, rho)) / (2 * h)
        be_r = (bet(x, t, rho + h) - bet(x, t, rho - h)) / (2 * h)
        b_r = (b(x, t, rho + h) - b(x, t, rho - h)) / (2 * h)
        res["eq_drift_pde"].append(float(np.max(np.abs(b_t - be_x - b(x, t, rho) * be_r + b_r * bet(x, t, rho)))))
        # flow in t and x
        phi_t = (phi_tp - phi_tm) / (2 * h)
        phi_r = (phi_rp - phi_rm) / (2 * h)
        phi_x = (phi_xp - phi_xm) / (2 * h)
        res["eq_flow_t"].append(float(np.max(np.abs(phi_t - bet(y, t, phi) + bet(x, t, rho) * phi_r))))
        res["eq_flow_x"].append(float(np.max(np.abs(phi_x + b(x, t, rho) * phi_r))))
        # lam_t + beta lam_rho = b A_rho + A_x
        lt = lam_t(x, t, rho, h)
        l_r = (lam(x, t, rho + h) - lam(x, t, rho - h)) / (2 * h)
        A_r = (A2(x, t, rho + h) - A2(x, t, rho - h)) / (2 * h)
        A_x = (A2(x + h, t, rho) - A2(x - h, t, rho)) / (2 * h)
        res["eq_row_t"].append(float(np.max(np.abs(lt + bet(x, t, rho) * l_r - b(x, t, rho) * A_r - A_x))))
        # Gamma_t + beta Gamma_rho = A(y, phi) - A(x, rho): Gamma_t through lam_t along the flow
        PH_t = (PH_p - PH_m) / (2 * h)
        L_r = (lam(Z, T, PH + h) - lam(Z, T, PH - h)) / (2 * h)
        G_t = np.sum((lam_t(Z, T, PH, h) + L_r * PH_t) * W, axis=-1)
        res["eq_gamma_t"].append(float(np.max(np.abs(G_t + bet(x, t, rho) * G_r - A2(y, t, phi) + A2(x, t, rho)))))
        # row conservation of Q on a grid of spacing d
        grid = np.arange(lo, hi + 0.5 * d, d)
        grid = np.linspace(lo, hi, grid.size)
        Kt = tabulate_kernel(fx, [float(x[0])], grid, float(t[0]))
        V = velocity_matrix(model, [float(x[0])], float(t[0]), grid)
        res["eq_row_conservation"].append(float(np.max(np.abs(row_conservation(Kt.values, V, grid[1] - grid[0])))))
        rp = np.minimum(rho + 0.3 * span, hi - 0.05 * span)
        f1, f2 = c_minus(fx, model, b, x, t, rho, rp, h)
        res["c_minus_forms"].append(float(np.max(np.abs(f1 - f2))))
    return ResidualReport(list(deltas), res)


# -- ensemble comparison ---------------------------------------------------------------------

@dataclass
class HeadlineSetup:
    """Inputs for the two-pipeline comparison."""

    model: HamiltonianModel
    kernel: KernelFamily
    m0: float
    a_minus: float = 0.0
    a_plus: float = 2.0
    t0: float = 0.0
    T: float = 1.0
    drift: DriftField | None = None
    b0: InitialField | None = None
    n_rho: int = 101
    dt: float = 1e-3
    nx: int = 1
    N: int = 20000
    seed: int = 0
    workers: int = 1
    probe_windows: tuple = ((0.25, 0.75), (1.25, 1.75))
    probe_points: tuple = (0.5, 1.5)
    bins: int = 4
    store_every: int = 10
    macro_dt: float = 0.01


@dataclass
class EnsembleStats:
    """Per-realization outputs of pipeline A plus derived estimators."""

    N: int
    left_values: np.ndarray
    configs: list
    counts: dict = field(default_factory=dict)
    compensators: dict = field(default_factory=dict)
    occupancy: dict = field(default_factory=dict)

    def pair_intensity(self, key, band_width: float):
        """Jump-pair rate estimate: counts over (occupancy * target band width)."""
        occ = self.occupancy[key]
        if occ <= 0:
            return float("nan"), float("nan")
        est = self.counts[key] / (occ * band_width)
        return est, math.sqrt(max(self.counts[key], 1)) / (occ * band_width)


def _drift_for(setup: HeadlineSetup, xs, rhos):
    if setup.drift is not None:
        return setup.drift
    if setup.b0 is None or setup.b0.is_zero:
        return ZeroDrift()
    return solve_drift(setup.model, setup.b0, setup.t0, setup.T, xs, rhos=rhos)


def pipeline_b(setup: HeadlineSetup, n_rho: int | None = None, dt: float | None = None):
    """Kinetic solution with the left marginal from a delta at m0."""
    n_rho = n_rho or setup.n_rho
    dt = dt or setup.dt
    rhos = np.linspace(setup.model.P_minus, setup.model.P_plus, n_rho)
    xs = np.linspace(setup.a_minus, setup.a_plus, setup.nx) if setup.nx > 1 else np.array([setup.a_minus])
    drift = _drift_for(setup, np.linspace(setup.a_minus, setup.a_plus, max(setup.nx, 5)), rhos)
    K0 = tabulate_kernel(setup.kernel, xs, rhos, setup.t0)
    solver = KineticSolver(setup.model, xs, rhos, setup.t0, dt, drift)
    sol = solver.solve(K0.values, setup.T, MarginalLaw.delta(rhos, setup.m0, setup.t0, setup.a_minus),
                       store_every=setup.store_every)
    return sol, drift


def _pipeline_a_chunk(args):
    (model, drift, prof, bnd, a_minus, a_plus, t0, T, m0, seed, indices, macro_dt) = args
    out = []
    for i in indices:
        rng = make_rng(seed, i)
        path = sample_pdmp_path(drift, prof, t0, a_minus, a_plus, m0, rng)
        q = ShockConfiguration.from_path(path, a_plus, t0)
        res = evolve(q, T, model, drift, rng, mode=STOCHASTIC_RIGHT, boundary=bnd, record=False,
                     macro_dt=macro_dt)
        c = res.config
        out.append((c.positions, c.values))
    return out


def run_pipeline_a(setup: HeadlineSetup, sol, drift) -> list:
    """Sample N initial paths, evolve each with injections at the right end;
    returns final (positions, values) per realization, ordered by index."""
    K0 = sol.snapshot(0)
    prof = profile_rates(K0)
    bnd = boundary_rates(setup.model, sol, setup.a_plus)
    idx = np.arange(setup.N)
    workers = max(1, int(setup.workers))
    chunks = np.array_split(idx, max(1, workers * 4))
    base = (setup.model, drift, prof, bnd, setup.a_minus, setup.a_plus, setup.t0, setup.T, setup.m0, setup.seed)
    jobs = [base + (list(map(int, c)), setup.macro_dt) for c in chunks if c.size]
    if workers == 1:
        parts = [_pipeline_a_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_pipeline_a_chunk, jobs))
    return [r for p in parts for r in p]


def _band_tables(kernel_values: np.ndarray, rhos: np.ndarray, band):
    """``G[ix, j] = int_{band, r >= rho_j} f(x_i, rho_j, r) dr`` on the kernel grid."""
    lo, hi = band
    d = rhos[1] - rhos[0]
    # piecewise-linear weights of [lo, hi] against each node's hat function
    w = np.zeros(rhos.size)
    fine = np.linspace(lo, hi, 2001)
    idx = np.clip(((fine - rhos[0]) / d).astype(int), 0, rhos.size - 2)
    frac = (fine - rhos[idx]) / d
    fw = np.full(fine.size, (hi - lo) / (fine.size - 1))
    fw[[0, -1]] *= 0.5
    np.add.at(w, idx, fw * (1 - frac))
    np.add.at(w, idx + 1, fw * frac)
    return np.einsum("ijk,k->ij", np.triu(kernel_values), w)


def _profile_samples(c, model, drift, window, n_cells, t):
    x0, x1 = window
    edges = np.linspace(x0, x1, n_cells + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    return mids, edges[1] - edges[0]


def compensator_test(setup: HeadlineSetup, results: list, sol_fine, sol_coarse, drift, n_cells: int = 400):
    """Per-bin jump counts in each probe window at time T against their
    compensator ``sum_paths int 1[rho(x-) in B-] int_{B+} f(x, T, rho(x-), r) dr dx``."""
    P0, P1 = setup.model.P_minus, setup.model.P_plus
    edges = np.linspace(P0, P1, setup.bins + 1)
    bands = [(edges[i], edges[i + 1]) for i in range(setup.bins)]
    Kf = sol_fine.snapshot(sol_fine.times.size - 1)
    Kc = sol_coarse.snapshot(sol_coarse.times.size - 1)
    tabs = {}
    for bi, band in enumerate(bands):
        tabs[("f", bi)] = _band_tables(Kf.values, Kf.rhos, band)
        tabs[("c", bi)] = _band_tables(Kc.values, Kc.rhos, band)
    rows = []
    for window in setup.probe_windows:
        mids, dxc = _profile_samples(None, setup.model, drift, window, n_cells, setup.T)
        counts = np.zeros((setup.bins, setup.bins))
        comp_f = np.zeros((setup.bins, setup.bins))
        comp_c = np.zeros((setup.bins, setup.bins))
        occ = np.zeros(setup.bins)
        for pos, vals in results:
            q = ShockConfiguration(setup.a_minus, setup.a_plus, setup.T, pos, vals)
            prof = np.asarray(reconstruct(q, mids, setup.model, drift, left_limit=True), float)
            lo_bin = np.clip(np.searchsorted(edges, prof, side="right") - 1, 0, setup.bins - 1)
            if q.n:
                left, right = jump_limits(q, setup.model, drift)
                inside = (q.positions[1:] >= window[0]) & (q.positions[1:] < window[1])
                for l, r in zip(left[inside], right[inside]):
                    i = min(int(np.searchsorted(edges, l, side="right")) - 1, setup.bins - 1)
                    j = min(int(np.searchsorted(edges, r, side="right")) - 1, setup.bins - 1)
                    counts[i, j] += 1
            xi_f = np.clip(np.searchsorted(Kf.xs, mids) - 1, 0, Kf.xs.size - 1)
            xi_c = np.clip(np.searchsorted(Kc.xs, mids) - 1, 0, Kc.xs.size - 1)
            for j in range(setup.bins):
                gf = np.array([np.interp(p, Kf.rhos, tabs[("f", j)][ix]) for p, ix in zip(prof, xi_f)]) \
                    if Kf.xs.size > 1 else np.interp(prof, Kf.rhos, tabs[("f", j)][0])
                gc = np.array([np.interp(p, Kc.rhos, tabs[("c", j)][ix]) for p, ix in zip(prof, xi_c)]) \
                    if Kc.xs.size > 1 else np.interp(prof, Kc.rhos, tabs[("c", j)][0])
                np.add.at(comp_f[:, j], lo_bin, gf * dxc)
                np.add.at(comp_c[:, j], lo_bin, gc * dxc)
            np.add.at(occ, lo_bin, dxc)
        for i in range(setup.bins):
            for j in range(i, setup.bins):
                lam = comp_f[i, j]
                allowance = abs(comp_f[i, j] - comp_c[i, j])
                sigma = math.sqrt(max(lam, 0.0))
                under = lam < 5
                ok = abs(counts[i, j] - lam) <= 3 * (sigma + allowance)
                rows.append({"probe": f"x in [{window[0]:g},{window[1]:g}]", "statistic": f"pairs[{i},{j}]",
                             "valueA": float(counts[i, j]), "valueB": float(lam), "sigma": sigma,
                             "allowance": allowance, "pass": bool(ok), "undersampled": bool(under),
                             "occupancy": float(occ[i])})
    return rows


def marginal_test(setup: HeadlineSetup, results: list, sol_fine, sol_coarse):
    """KS distance of the left value at T against the kinetic marginal."""
    left = np.array([v[0] for _, v in results])
    ell = sol_fine.marginals[-1]
    ell_c = sol_coarse.marginals[-1]
    D = ks_distance_mixed(left, ell.cdf, ell.cdf_left)
    grid = np.linspace(setup.model.P_minus, setup.model.P_plus, 2001)
    allowance = float(max(np.max(np.abs(ell.cdf(grid) - ell_c.cdf(grid))),
                          np.max(np.abs(ell.cdf_left(grid) - ell_c.cdf_left(grid)))))
    mc = math.sqrt(1.0 / left.size)
    return {"probe": f"x={setup.a_minus:g}", "statistic": "ks_left_value", "valueA": D, "valueB": 0.0,
            "sigma": mc, "allowance": allowance, "pass": bool(D <= 3 * (mc + allowance)),
            "atomA": float(np.mean(left == setup.m0)), "atomB": ell.atom_weight}


def mean_profile_test(setup: HeadlineSetup, results: list, sol_fine, sol_coarse, drift):
    """Mean of rho(x, T) at probe points against the x-direction forward equation
    started from the kinetic marginal."""
    rows = []
    for xp in setup.probe_points:
        vals = []
        for pos, v in results:
            q = ShockConfiguration(setup.a_minus, setup.a_plus, setup.T, pos, v)
            vals.append(float(reconstruct(q, xp, setup.model, drift)))
        vals = np.array(vals)
        means = []
        for sol in (sol_fine, sol_coarse):
            K = sol.snapshot(sol.times.size - 1)
            ell = solve_marginal_x(sol.marginals[-1], K, drift, setup.T, xp, 2e-3)
            means.append(ell.mean())
        sigma = float(vals.std(ddof=1) / math.sqrt(vals.size))
        allowance = abs(means[0] - means[1])
        rows.append({"probe": f"x={xp:g}", "statistic": "mean_profile", "valueA": float(vals.mean()),
                     "valueB": means[0], "sigma": sigma, "allowance": allowance,
                     "pass": bool(abs(vals.mean() - means[0]) <= 3 * (sigma + allowance))})
    return rows


def ensemble_comparison(setup: HeadlineSetup) -> dict:
    """Both pipelines and every comparison; returns the rows and a verdict."""
    sol_f, drift = pipeline_b(setup)
    n_c = (setup.n_rho - 1) // 2 + 1
    sol_c, _ = pipeline_b(setup, n_rho=n_c, dt=2 * setup.dt)
    results = run_pipeline_a(setup, sol_f, drift)
    rows = [marginal_test(setup, results, sol_f, sol_c)]
    comp = compensator_test(setup, results, sol_f, sol_c, drift)
    rows += comp
    rows += mean_profile_test(setup, results, sol_f, sol_c, drift)
    tested = [r for r in comp if not r["undersampled"]]
    frac = float(np.mean([r["pass"] for r in tested])) if tested else 1.0
    verdict = {
        "marginal": rows[0]["pass"],
        "pairs_fraction": frac,
        "pairs": frac >= 0.95,
        "mean_profile": all(r["pass"] for r in rows if r["statistic"] == "mean_profile"),
    }
    verdict["pass"] = all(v for k, v in verdict.items() if k != "pairs_fraction")
    return {"rows": rows, "verdict": verdict, "diagnostics": sol_f.diagnostics,
            "stats": EnsembleStats(setup.N, np.array([v[0] for _, v in results]), results)}


# -- L1 stability ------------------------------------------------------------------------------

def l1_stability_check(model: HamiltonianModel, b: DriftField | None, q1: ShockConfiguration,
                       q2: ShockConfiguration, t: float, macro_dt: float | None = None,
                       n_c0: int = 41) -> dict:
    """Evolve both configurations with open right ends and check

    ``||rho' - rho||(t) <= e^{C0 (t-s)} (||rho' - rho||(s) + int_s^t |H(a+, ., rho') - H(a+, ., rho)|)``.
    """
    s = q1.t
    r1 = evolve(q1, t, model, b, mode=OPEN_RIGHT, macro_dt=macro_dt, record=True)
    r2 = evolve(q2, t, model, b, mode=OPEN_RIGHT, macro_dt=macro_dt, record=True)
    lhs = l1_distance(r1.config, r2.config, model, b)
    start = l1_distance(q1, q2, model, b)
    t1, z1 = r1.trace.boundary_series()
    t2, z2 = r2.trace.boundary_series()
    grid = np.union1d(t1, t2)
    za = z1[np.clip(np.searchsorted(t1, grid, side="right") - 1, 0, t1.size - 1)]
    zb = z2[np.clip(np.searchsorted(t2, grid, side="right") - 1, 0, t2.size - 1)]
    diff = np.abs(model.H(q1.a_plus, grid, za) - model.H(q1.a_plus, grid, zb))
    boundary = float(np.sum(0.5 * (diff[1:] + diff[:-1]) * np.diff(grid)))
    xs = np.linspace(q1.a_minus, q1.a_plus, n_c0)[:, None]
    rh = np.linspace(model.P_minus, model.P_plus, n_c0)[None, :]
    C0 = float(np.max(np.abs(model.H_rhox(xs, s, rh))))
    rhs = math.exp(C0 * (t - s)) * (start + boundary)
    return {"lhs": lhs, "rhs": rhs, "start": start, "boundary": boundary, "C0": C0,
            "holds": bool(lhs <= rhs * (1 + 1e-9) + 1e-10)}


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
