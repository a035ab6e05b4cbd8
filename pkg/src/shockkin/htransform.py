"""Conditioning label processes to stay in a window, and the reweighted kernels.

A label path with upward jumps stays in ``U = [lo, hi)`` on ``[x, a_plus]``
with probability ``h(x, y)``.  Reweighting a kernel by ``h(y_+)/h(y_-)``
gives the kernel of the conditioned process, and with an ``h`` solving the
x- and t-equations the reweighted kernel solves the kernel equation again.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import HypothesisViolation, TruncationError
from .kinetic import (JumpKernel, KineticSolution, _interp_index, kinetic_residual, row_A, row_integral,
                      tabulate_kernel, vhat_matrix)
from .model import HamiltonianModel
from .pdmp import RowSampler, make_rng, profile_rates

H_FLOOR = 1e-12
SERIES, MONTE_CARLO, EXTENSION, SYNTHETIC = "series", "monte-carlo", "boundary-extension", "synthetic"
MC_CHUNK = 5000


@dataclass(frozen=True)
class Window:
    """Conditioning window ``[lo, hi)`` for labels."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"empty window [{self.lo}, {self.hi})")


def window_for_delta(y_minus: float, a_plus: float, delta: float) -> Window:
    """``[y_minus, (1 - delta) a_plus)``: the window shrinking to the full half-line as delta -> 0."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return Window(y_minus, (1.0 - delta) * a_plus)


@dataclass
class HFunction:
    """Samples of ``h`` on ``ts x xs x ys`` where ``ys`` spans the window.

    ``values[k, i, j] = h(xs[i], ts[k], ys[j])``.  For ``series`` and
    ``monte-carlo`` sources ``h`` is a probability equal to one at the right end.
    """

    xs: np.ndarray
    ts: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    window: Window
    source: str
    stderr: np.ndarray | None = None

    def __post_init__(self):
        self.xs = np.atleast_1d(np.asarray(self.xs, float))
        self.ts = np.atleast_1d(np.asarray(self.ts, float))
        self.ys = np.asarray(self.ys, float)
        self.values = np.asarray(self.values, float)
        shape = (self.ts.size, self.xs.size, self.ys.size)
        if self.values.shape != shape:
            raise ValueError(f"h values must have shape {shape}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or self.values.min() < H_FLOOR:
            raise HypothesisViolation("h fell below the positivity floor", floor=H_FLOOR,
                                      min_h=float(np.nanmin(self.values)))
        if self.source in (SERIES, MONTE_CARLO):
            if self.values.max() > 1.0 + 1e-9:
                raise HypothesisViolation("a conditioning probability exceeds one", max_h=float(self.values.max()))
            if not np.allclose(self.values[:, -1, :], 1.0, atol=1e-12):
                raise HypothesisViolation("h must equal one at the right end of the x-range")

    @property
    def dy(self) -> float:
        return float(self.ys[1] - self.ys[0])

    def __call__(self, x, t, y):
        """Linear interpolation in each axis; zero for labels at or above the window top
        (nodes on the top edge keep their value)."""
        x, t, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float), np.asarray(y, float))
        ik, wk = _interp_index(self.ts, t)
        jk = np.minimum(ik + 1, self.ts.size - 1)
        ix, wx = _interp_index(self.xs, x)
        jx = np.minimum(ix + 1, self.xs.size - 1)
        iy, wy = _interp_index(self.ys, y)
        jy = iy + 1
        V = self.values
        out = 0.0
        for kk, kw in ((ik, 1 - wk), (jk, wk)):
            for xx, xw in ((ix, 1 - wx), (jx, wx)):
                out = out + kw * xw * ((1 - wy) * V[kk, xx, iy] + wy * V[kk, xx, jy])
        inside = (y >= self.window.lo - 1e-12) & (y <= self.window.hi + 1e-12)
        return np.where(inside, out, 0.0)

    def to_rows(self) -> np.ndarray:
        T, X, Y = np.meshgrid(self.ts, self.xs, self.ys, indexing="ij")
        return np.column_stack([X.ravel(), T.ravel(), Y.ravel(), self.values.ravel()])


# -- discretized generators ----------------------------------------------------------

def _upper_trapezoid(m1: int, d: float) -> np.ndarray:
    """``w[j, k]``: trapezoid weights of ``int_{y_j}^{y_top}`` on nodes ``k >= j``."""
    w = np.triu(np.full((m1, m1), d))
    idx = np.arange(m1)
    w[idx, idx] = 0.5 * d
    w[:, -1] *= 0.5
    w[-1, -1] = 0.0
    return w


def _top_index(ys: np.ndarray, hi: float) -> int:
    m = int(np.argmin(np.abs(ys - hi)))
    if not math.isclose(ys[m], hi, rel_tol=0, abs_tol=1e-9 * max(1.0, abs(hi))):
        raise ValueError(f"window top {hi} is not a node of the label grid")
    return m


@dataclass
class _Generator:
    """``(B h)(y_j) = sum_k W[i, j, k] h_k - A[i, j] h_j`` at each x-node ``i``."""

    W: np.ndarray
    A: np.ndarray

    def apply(self, h: np.ndarray) -> np.ndarray:
        return np.einsum("ijk,...ik->...ij", self.W, h) - self.A * h

    def matrix(self, i: int) -> np.ndarray:
        """``L`` with ``h' = L h`` for the equation ``h' + B h = 0``."""
        return np.diag(self.A[i]) - self.W[i]


def _generator_from_callable(g, xs, t, ys, quad_nodes: int) -> _Generator:
    m1 = ys.size
    G = np.triu(np.asarray(g(xs[:, None, None], t, ys[None, :, None], ys[None, None, :]), float)
                * np.ones((xs.size, m1, m1)))
    W = G * _upper_trapezoid(m1, float(ys[1] - ys[0]))[None]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    A = row_A(g, X, t, Y, float(g.hi), quad_nodes)
    return _Generator(W, A)


def _generator_from_grid(G: np.ndarray, d: float, m: int) -> _Generator:
    A = row_integral(G, d)[:, :m + 1]
    W = G[:, :m + 1, :m + 1] * _upper_trapezoid(m + 1, d)[None]
    return _Generator(W, A)


def _rk4_linear(L0: np.ndarray, L1: np.ndarray, h0: np.ndarray, step: float) -> np.ndarray:
    """One RK4 step of ``h' = L(s) h`` with ``L`` linear between the two ends."""
    Lm = 0.5 * (L0 + L1)
    k1 = L0 @ h0
    k2 = Lm @ (h0 + 0.5 * step * k1)
    k3 = Lm @ (h0 + 0.5 * step * k2)
    k4 = L1 @ (h0 + step * k3)
    return h0 + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


# -- h by series -------------------------------------------------------------------------

def poisson_tail(rate_bound: float, length: float, n_max: int) -> float:
    """``P(N > n_max)`` for the dominating Poisson jump count on an interval."""
    return float(stats.poisson.sf(n_max, rate_bound * length))


def compute_h_series(g, xs, window: Window, t: float = 0.0, ny: int = 101, n_max: int | None = None,
                     tol: float = 1e-10, quad_nodes: int = 801, n_cap: int = 64) -> HFunction:
    """Sum of the ``n``-jump contributions to the probability of staying in the window.

    ``g`` is a callable kernel ``g(x, t, y_-, y_+)`` with attributes ``lo``/``hi``
    (a kernel family or a :class:`JumpKernel`).  The ``n``-th term integrates over
    ordered jump locations in ``(x, a_plus)`` and targets inside the window;
    each term is obtained from the previous one by a Duhamel integral in x.
    With ``n_max=None`` the number of terms is the smallest meeting ``tol``.
    """
    xs = np.asarray(xs, float)
    ys = np.linspace(window.lo, window.hi, ny)
    gen = _generator_from_callable(g, xs, t, ys, quad_nodes)
    length = float(xs[-1] - xs[0])
    rate_bound = float(gen.A.max())
    if n_max is None:
        n_max = 0
        while poisson_tail(rate_bound, length, n_max) > tol:
            n_max += 1
            if n_max > n_cap:
                raise TruncationError("series tail stays above tolerance; use the Monte Carlo estimate",
                                      n_cap=n_cap, rate_bound=rate_bound)
    tail = poisson_tail(rate_bound, length, n_max)
    if tail > tol:
        raise TruncationError(f"series tail bound {tail:.3g} exceeds {tol:.3g}; increase n_max",
                              n_max=n_max, tail=tail)
    # cumulative survival exponent from the left end
    dxs = np.diff(xs)
    cum = np.concatenate([np.zeros((1, ys.size)),
                          np.cumsum(0.5 * (gen.A[1:] + gen.A[:-1]) * dxs[:, None], axis=0)])
    term = np.exp(-(cum[-1] - cum))
    total = term.copy()
    for _ in range(n_max):
        S = np.einsum("ijk,ik->ij", gen.W, term)
        # int_{x_i}^{a_+} exp(-(cum(z) - cum(x_i))) S(z) dz by the trapezoid rule
        integrand = np.exp(cum[-1] - cum) * S
        seg = 0.5 * (integrand[1:] + integrand[:-1]) * dxs[:, None]
        back = np.concatenate([np.cumsum(seg[::-1], axis=0)[::-1], np.zeros((1, ys.size))])
        term = np.exp(cum - cum[-1]) * back
        total += term
    return HFunction(xs, [t], ys, np.minimum(total, 1.0)[None], window, SERIES)


# -- h by simulation -------------------------------------------------------------------------

def _survival_chunk(args):
    rates, x0, x1, y0, hi, n, seed, index = args
    rng = make_rng(seed, index)
    stay = 0
    top = float(rates.rhos[-1])
    for _ in range(n):
        c, y = x0, y0
        while True:
            c, fired, _ = rates.frozen_clock(c, x1, y, rng.standard_exponential())
            if not fired:
                stay += 1
                break
            if y >= top:
                continue
            y = rates.sample_target(c, y, rng.random())
            if y >= hi:
                break
    return stay


def kernel_rates(g, x_range, t: float = 0.0, nx: int = 201, ny: int = 201) -> RowSampler:
    """Rate table for label paths from a callable kernel or a :class:`JumpKernel`."""
    if isinstance(g, JumpKernel):
        return profile_rates(g)
    xs = np.linspace(x_range[0], x_range[1], nx)
    return profile_rates(tabulate_kernel(g, xs, np.linspace(g.lo, g.hi, ny), t, "g"))


def survival_probability(rates: RowSampler, x0: float, x1: float, y0: float, hi: float, n_paths: int,
                         seed: int = 0, stream: int = 0, workers: int = 1) -> tuple[float, float]:
    """Monte Carlo probability that a path started at ``(x0, y0)`` stays below ``hi``
    up to ``x1``; returns the estimate and its standard error.  Paths are
    drawn in fixed chunks with their own streams, so the estimate does not
    depend on ``workers``."""
    sizes = [MC_CHUNK] * (n_paths // MC_CHUNK) + ([n_paths % MC_CHUNK] if n_paths % MC_CHUNK else [])
    jobs = [(rates, x0, x1, y0, hi, n, seed, stream * 100003 + c) for c, n in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            stays = list(ex.map(_survival_chunk, jobs))
    else:
        stays = [_survival_chunk(j) for j in jobs]
    p = sum(stays) / n_paths
    return p, math.sqrt(max(p * (1 - p), 1.0 / n_paths) / n_paths)


def estimate_h_mc(g, xs, window: Window, t: float = 0.0, ny: int = 5, n_paths: int = 10000, seed: int = 0,
                  workers: int = 1, table: tuple[int, int] = (201, 201)) -> HFunction:
    """Direct simulation of the survival probability at every (x, y) node."""
    xs = np.asarray(xs, float)
    ys = np.linspace(window.lo, window.hi, ny)
    rates = kernel_rates(g, (xs[0], xs[-1]), t, *table)
    vals = np.ones((1, xs.size, ys.size))
    err = np.zeros_like(vals)
    for i, x in enumerate(xs[:-1]):
        for j, y in enumerate(ys):
            p, se = survival_probability(rates, float(x), float(xs[-1]), float(y), window.hi, n_paths,
                                         seed, i * ys.size + j, workers)
            vals[0, i, j] = max(p, H_FLOOR)
            err[0, i, j] = se
    return HFunction(xs, [t], ys, vals, window, MONTE_CARLO, err)


def compute_h(g, xs, window: Window, t: float = 0.0, ny: int = 101, n_max: int = 4, tol: float = 1e-6,
              n_paths: int = 10000, seed: int = 0, workers: int = 1) -> HFunction:
    """Series with at most ``n_max`` terms, falling back to simulation when
    the truncation bound is not met."""
    try:
        return compute_h_series(g, xs, window, t, ny, n_max=n_max, tol=tol)
    except TruncationError:
        return estimate_h_mc(g, xs, window, t, ny=min(ny, 11), n_paths=n_paths, seed=seed, workers=workers)


# -- (x, t) family --------------------------------------------------------------------------

def _kernel_stack(g_sol: KineticSolution, model: HamiltonianModel, m: int):
    first, second = [], []
    for k, t in enumerate(g_sol.times):
        G = g_sol.values[k]
        first.append(_generator_from_grid(G, g_sol.d, m))
        V = vhat_matrix(model, g_sol.xs, t, g_sol.rhos, g_sol.s)
        second.append(_generator_from_grid(V * G, g_sol.d, m))
    return first, second


def build_h_family(g_sol: KineticSolution, model: HamiltonianModel, window: Window) -> HFunction:
    """``h(x, t, y)`` solving both generator equations.

    At the left end ``h`` is the probability that the boundary label process
    (second kernel at ``a_minus``) stays in the window up to ``T``, found
    backward in t.  Each time slice is then carried across x by the x-equation.
    """
    if g_sol.variant != "g":
        raise ValueError("the conditioning family needs a label kernel (variant 'g')")
    ys_full = g_sol.rhos
    if not math.isclose(window.lo, ys_full[0], abs_tol=1e-12):
        raise ValueError("window bottom must be the first label node")
    m = _top_index(ys_full, window.hi)
    ys = ys_full[:m + 1]
    first, second = _kernel_stack(g_sol, model, m)
    ts, xs = g_sol.times, g_sol.xs
    nt, nx = ts.size, xs.size
    left = np.ones((nt, m + 1))
    for k in range(nt - 1, 0, -1):
        left[k - 1] = _rk4_linear(second[k].matrix(0), second[k - 1].matrix(0), left[k], ts[k - 1] - ts[k])
    vals = np.empty((nt, nx, m + 1))
    for k in range(nt):
        vals[k, 0] = left[k]
        for i in range(nx - 1):
            vals[k, i + 1] = _rk4_linear(first[k].matrix(i), first[k].matrix(i + 1), vals[k, i], xs[i + 1] - xs[i])
    return HFunction(xs, ts, ys, vals, window, EXTENSION)


def exponential_h(xs, ts, ys, window: Window, c: float) -> HFunction:
    """``h = exp(c y)``: a reweighting that ignores both generator equations."""
    xs, ts, ys = (np.atleast_1d(np.asarray(a, float)) for a in (xs, ts, ys))
    vals = np.broadcast_to(np.exp(c * ys), (ts.size, xs.size, ys.size)).copy()
    return HFunction(xs, ts, ys, vals, window, SYNTHETIC)


def unit_h(xs, ts, ys, window: Window) -> HFunction:
    return exponential_h(xs, ts, ys, window, 0.0)


# -- transformed kernels -------------------------------------------------------------------

def _ratio_on(h_slice: np.ndarray, h_ys: np.ndarray, window: Window, ys: np.ndarray) -> np.ndarray:
    """``eta[i, j, k] = h(y_k) / h(y_j)`` on the grid ``ys``; zero when either label
    leaves the window."""
    inside = ys <= window.hi + 1e-12
    hv = np.stack([np.interp(ys, h_ys, row) for row in h_slice])
    if np.any(hv[:, inside] < H_FLOOR):
        raise HypothesisViolation("h below the positivity floor", floor=H_FLOOR)
    hv = np.where(inside[None, :], hv, 0.0)
    safe = np.where(inside[None, :], hv, 1.0)
    return hv[:, None, :] / safe[:, :, None] * inside[None, :, None]


def transform_kernel(g, h: HFunction, time_index: int = 0) -> JumpKernel:
    """``h(y_+) / h(y_-) g`` with support clipped to the window.

    ``g`` may be a :class:`JumpKernel` (its grid is kept) or a callable kernel,
    which is tabulated on the grid of ``h``.
    """
    if not isinstance(g, JumpKernel):
        g = tabulate_kernel(g, h.xs, h.ys, float(h.ts[time_index]), "g")
    hx = np.stack([np.interp(g.xs, h.xs, h.values[time_index, :, j]) for j in range(h.ys.size)], axis=1)
    eta = _ratio_on(hx, h.ys, h.window, g.rhos)
    return JumpKernel(g.xs, g.rhos, eta * g.values, g.t, "g", g.s)


def transform_solution(g_sol: KineticSolution, h: HFunction) -> KineticSolution:
    """Reweight every stored snapshot; ``h`` must live on the same (t, x) grid."""
    if h.ts.size != g_sol.times.size or not np.allclose(h.ts, g_sol.times) or not np.allclose(h.xs, g_sol.xs):
        raise ValueError("h family and kernel trajectory use different (t, x) grids")
    vals = np.stack([_ratio_on(h.values[k], h.ys, h.window, g_sol.rhos) * g_sol.values[k]
                     for k in range(g_sol.times.size)])
    return KineticSolution(g_sol.xs, g_sol.rhos, g_sol.times, vals, [None] * g_sol.times.size, "g", g_sol.s,
                           {"source": h.source})


# -- residuals --------------------------------------------------------------------------------

def h_equation_residual(h: HFunction, g, model: HamiltonianModel | None = None,
                        quad_nodes: int = 801) -> dict:
    """Residuals of ``h_x + B1 h = 0`` (every slice) and, for a family over
    several times, ``h_t + B2 h = 0``.  Derivatives are second-order finite
    differences; generator rows use the trapezoid rule on the grid of ``h``.
    ``g`` is a callable kernel for a single slice or the label-kernel
    trajectory the family was built from."""
    if isinstance(g, KineticSolution):
        m = _top_index(g.rhos, h.window.hi)
        first, second = _kernel_stack(g, model, m)
    else:
        first = [_generator_from_callable(g, h.xs, float(t), h.ys, quad_nodes) for t in h.ts]
        second = None
    hx = np.gradient(h.values, h.xs, axis=1, edge_order=2) if h.xs.size > 2 else np.zeros_like(h.values)
    res_x = np.stack([hx[k] + first[k].apply(h.values[k]) for k in range(h.ts.size)])
    out = {"x": res_x, "max_x": float(np.abs(res_x).max()), "t": None, "max_t": 0.0, "max_t_left": 0.0}
    if second is not None and h.ts.size > 2:
        ht = np.gradient(h.values, h.ts, axis=0, edge_order=2)
        res_t = np.stack([ht[k] + second[k].apply(h.values[k]) for k in range(h.ts.size)])
        out.update(t=res_t, max_t=float(np.abs(res_t).max()), max_t_left=float(np.abs(res_t[:, 0]).max()))
    return out


def reweighted_residual(g_sol: KineticSolution, h: HFunction, model: HamiltonianModel, C: float = 3.0) -> dict:
    """Kernel-equation residual of the reweighted trajectory against the bound
    implied by the residuals of ``g`` and of ``h``.

    Writing ``E1``/``E2`` for the x-/t-equation residuals divided by ``h``, the
    reweighted residual is ``eta r_g + g_hat (E2(y+) - E2(y-) - v (E1(y+) - E1(y-)))``
    up to the finite-difference product-rule defect, which is charged as the
    ``discretization`` allowance: the same stencils applied to ``eta`` alone.
    """
    g_hat = transform_solution(g_sol, h)
    res_g = kinetic_residual(g_sol, model)
    res_hat = kinetic_residual(g_hat, model)
    m = _top_index(g_sol.rhos, h.window.hi)
    sl = (slice(None), slice(None), slice(0, m + 1), slice(0, m + 1))
    hres = h_equation_residual(h, g_sol, model)
    eta = np.stack([_ratio_on(h.values[k], h.ys, h.window, g_sol.rhos) for k in range(g_sol.times.size)])
    eta_in = eta[1:-1][sl]
    h_min = float(h.values.min())
    vmax = max(float(np.abs(vhat_matrix(model, g_sol.xs, t, g_sol.rhos, g_sol.s)[:, :m + 1, :m + 1]).max())
               for t in g_sol.times)
    ghat_max = float(np.abs(g_hat.values[1:-1]).max())
    from_g = float(np.abs(eta_in * res_g[sl]).max())
    from_h = ghat_max * 2.0 * (hres["max_t"] + vmax * hres["max_x"]) / h_min
    # curvature of eta seen by the stencils: central differences of log eta are exact only to O(step^2)
    dt = float(g_sol.times[1] - g_sol.times[0])
    dx = float(g_sol.xs[1] - g_sol.xs[0]) if g_sol.xs.size > 1 else 0.0
    log_eta = np.log(np.where(eta > 0, eta, 1.0))
    curv_t = np.abs(np.diff(log_eta, 2, axis=0)).max() / max(dt, 1e-300) if eta.shape[0] > 2 else 0.0
    curv_x = np.abs(np.diff(log_eta, 2, axis=1)).max() / max(dx, 1e-300) if eta.shape[1] > 2 else 0.0
    disc = ghat_max * (curv_t + vmax * curv_x)
    bound = C * (from_g + from_h + disc)
    r = float(np.abs(res_hat[sl]).max())
    # what the residual could be if h solved both equations exactly
    g_only = C * (from_g + disc)
    return {"residual": r, "bound": bound, "holds": r <= bound, "g_only_bound": g_only,
            "explained_by_g": r <= g_only, "from_g": from_g, "from_h": from_h,
            "discretization": disc, "g_residual": float(np.abs(res_g[sl]).max()), "eps_h": hres}


def telescoping_residual(h: HFunction, g, quad_nodes: int = 801) -> float:
    """``log h(b, y) - log h(a, y) + int_a^b (A(g_hat) - A(g))(z, y) dz`` with
    ``a`` the left end and ``b`` every later node; max over the grid."""
    gen = _generator_from_callable(g, h.xs, float(h.ts[0]), h.ys, quad_nodes)
    hv = h.values[0]
    a_hat = np.einsum("ijk,ik->ij", gen.W, hv) / hv
    diff = a_hat - gen.A
    dxs = np.diff(h.xs)
    integral = np.concatenate([np.zeros((1, h.ys.size)),
                               np.cumsum(0.5 * (diff[1:] + diff[:-1]) * dxs[:, None], axis=0)])
    return float(np.abs(np.log(hv) - np.log(hv[0]) + integral).max())


def delta_sweep(g, xs, y_minus: float, y0: float, deltas, t: float = 0.0, ny: int = 101) -> dict:
    """``h^delta(a_minus, y0)`` for a sequence of windows ``[y_minus, (1 - delta) a_plus)``."""
    a_plus = float(xs[-1])
    out = []
    for delta in deltas:
        w = window_for_delta(y_minus, a_plus, delta)
        h = compute_h_series(g, xs, w, t, ny)
        out.append(float(h(xs[0], t, y0)))
    order = np.argsort(-np.asarray(deltas, float))
    seq = np.asarray(out)[order]
    return {"deltas": list(deltas), "values": out, "monotone": bool(np.all(np.diff(seq) >= -1e-12))}


# -- conditioned sampling ---------------------------------------------------------------------

def _final_values_chunk(args):
    rates, x0, x1, y0, hi, n, seed, index, reject = args
    rng = make_rng(seed, index)
    out = []
    top = float(rates.rhos[-1])
    for _ in range(n):
        c, y, ok = x0, y0, True
        while True:
            c, fired, _ = rates.frozen_clock(c, x1, y, rng.standard_exponential())
            if not fired:
                break
            if y >= top:
                continue
            y = rates.sample_target(c, y, rng.random())
            if reject and y >= hi:
                ok = False
                break
        if ok:
            out.append(y)
    return out


def conditioned_sampler_check(g, h: HFunction, y0: float, n_accept: int = 10000, seed: int = 0,
                              table: tuple[int, int] = (201, 201)) -> dict:
    """Two-sample KS distance between end labels of (a) ``g``-paths kept only when
    they stay in the window and (b) paths drawn from the reweighted kernel."""
    x0, x1 = float(h.xs[0]), float(h.xs[-1])
    t = float(h.ts[0])
    rates = kernel_rates(g, (x0, x1), t, *table)
    accepted: list[float] = []
    stream = 0
    while len(accepted) < n_accept:
        accepted += _final_values_chunk((rates, x0, x1, y0, h.window.hi, MC_CHUNK, seed, stream, True))
        stream += 1
    accepted = accepted[:n_accept]
    g_tab = g if isinstance(g, JumpKernel) else tabulate_kernel(
        g, np.linspace(x0, x1, table[0]), np.linspace(h.window.lo, h.window.hi, table[1]), t, "g")
    hat_rates = profile_rates(transform_kernel(g_tab, h))
    direct: list[float] = []
    while len(direct) < n_accept:
        direct += _final_values_chunk((hat_rates, x0, x1, y0, h.window.hi, MC_CHUNK, seed, stream, False))
        stream += 1
    direct = direct[:n_accept]
    ks = stats.ks_2samp(accepted, direct)
    sigma = math.sqrt(1.0 / len(accepted) + 1.0 / len(direct))
    return {"ks": float(ks.statistic), "pvalue": float(ks.pvalue), "sigma": sigma,
            "holds": float(ks.statistic) <= 3 * sigma, "accepted": np.asarray(accepted), "direct": np.asarray(direct)}
