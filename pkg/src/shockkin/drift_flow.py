"""Drift field b(x, t, rho) and the three flows built on it.

* ``hamiltonian_flow``: characteristics ``dx/dt = -H_rho, drho/dt = H_x``.
* ``phi_flow``: the profile between jumps, ``drho/dx = b(x, t, rho)`` at fixed t.
* ``gamma_flow``: the boundary value, ``dzeta/dt = beta(a, t, zeta)`` at fixed x.

``solve_drift`` fills a grid by following each node's characteristic back to
the initial time and integrating the Riccati equation for b forward again.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import FlowEscapeError, ShockKinError
from .model import HamiltonianModel, beta

DEFAULT_TOL = 1e-10


# -- fixed-step RK4 with a Richardson acceptance test --------------------------

def rk4_fixed(rhs: Callable, y0: np.ndarray, n: int) -> np.ndarray:
    """Integrate ``dy/ds = rhs(s, y)`` over s in [0, 1] with n equal steps."""
    y = np.array(y0, dtype=float, copy=True)
    h = 1.0 / n
    s = 0.0
    for _ in range(n):
        k1 = rhs(s, y)
        k2 = rhs(s + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(s + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(s + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return y


def rk4_richardson(rhs: Callable, y0: np.ndarray, tol: float = DEFAULT_TOL, n0: int = 8,
                   max_doublings: int = 14) -> tuple[np.ndarray, int]:
    """Double the step count until n and 2n steps agree to ``tol * (1 + |y|)``."""
    n = n0
    coarse = rk4_fixed(rhs, y0, n)
    for _ in range(max_doublings):
        fine = rk4_fixed(rhs, y0, 2 * n)
        err = np.abs(fine - coarse)
        if not np.all(np.isfinite(fine)):
            break
        if np.all(err <= tol * (1.0 + np.abs(fine))):
            return fine, 2 * n
        coarse, n = fine, 2 * n
    raise ShockKinError("RK4 step refinement did not converge", steps=n)


# -- drift fields ----------------------------------------------------------------

class DriftField:
    """Interface: ``b(x, t, rho)`` plus first derivatives (central differences
    unless a subclass knows better)."""

    is_zero = False
    blow_up_time: float | None = None
    fd_step = 1e-6

    def __call__(self, x, t, rho):
        raise NotImplementedError

    def exact(self, x, t, rho):
        return self(x, t, rho)

    def closed_flow(self, a, x, m, t):
        """Closed-form profile flow, or None when it must be integrated."""
        return None

    def d_rho(self, x, t, rho):
        h = self.fd_step
        return (self(x, t, np.asarray(rho) + h) - self(x, t, np.asarray(rho) - h)) / (2 * h)

    def d_x(self, x, t, rho):
        h = self.fd_step
        return (self(np.asarray(x) + h, t, rho) - self(np.asarray(x) - h, t, rho)) / (2 * h)

    def d_t(self, x, t, rho):
        h = self.fd_step
        return (self(x, np.asarray(t) + h, rho) - self(x, np.asarray(t) - h, rho)) / (2 * h)


class ZeroDrift(DriftField):
    is_zero = True

    def __call__(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    def d_rho(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    d_x = d_rho
    d_t = d_rho


class ConstantDrift(DriftField):
    def __init__(self, value: float):
        self.value = float(value)
        self.is_zero = self.value == 0.0

    def __call__(self, x, t, rho):
        return np.full(np.broadcast(x, t, rho).shape, self.value)

    def d_rho(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    d_x = d_rho
    d_t = d_rho

    def closed_flow(self, a, x, m, t):
        return m + self.value * (x - a)


class FunctionDrift(DriftField):
    """Wraps ``fn(x, t, rho)``; optional analytic ``d_rho``."""

    def __init__(self, fn: Callable, d_rho: Callable | None = None):
        self.fn = fn
        self._d_rho = d_rho

    def __call__(self, x, t, rho):
        return np.asarray(self.fn(x, t, rho), dtype=float) + 0.0 * np.asarray(rho)

    def d_rho(self, x, t, rho):
        if self._d_rho is not None:
            return self._d_rho(x, t, rho)
        return super().d_rho(x, t, rho)


class RiccatiDrift(DriftField):
    """Closed form for constant initial data when ``H_rhorho = A`` is constant and
    ``H_rhox = H_xx = 0``: ``b(t) = b0 / (1 - A b0 (t - t0))``."""

    def __init__(self, b0: float, t0: float = 0.0, A: float = 1.0):
        self.b0, self.t0, self.A = float(b0), float(t0), float(A)
        self.is_zero = self.b0 == 0.0

    def __call__(self, x, t, rho):
        t = np.asarray(t, float)
        val = self.b0 / (1.0 - self.A * self.b0 * (t - self.t0))
        return np.broadcast_to(val, np.broadcast(x, t, rho).shape).astype(float)

    def d_rho(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    d_x = d_rho

    def d_t(self, x, t, rho):
        b = self(x, t, rho)
        return self.A * b * b

    def closed_flow(self, a, x, m, t):
        return m + self(a, t, m) * (x - a)


# -- initial fields (picklable closures used by scenarios) -----------------------

class InitialField:
    """``b0(x, rho) = c0 + c_rho * rho + c_sin * sin(k x)``."""

    def __init__(self, c0: float = 0.0, c_rho: float = 0.0, c_sin: float = 0.0, k: float = 1.0):
        self.c0, self.c_rho, self.c_sin, self.k = float(c0), float(c_rho), float(c_sin), float(k)

    @property
    def is_zero(self) -> bool:
        return self.c0 == 0.0 and self.c_rho == 0.0 and self.c_sin == 0.0

    def __call__(self, x, rho):
        x = np.asarray(x, float)
        rho = np.asarray(rho, float)
        return self.c0 + self.c_rho * rho + self.c_sin * np.sin(self.k * x)


def _characteristic_b(model: HamiltonianModel, b0: Callable, t0: float, x, t, rho,
                      tol: float = DEFAULT_TOL, cap: float = 1e6, n_steps: int | None = None):
    """b at (x, t, rho): trace the characteristic back to t0, then integrate
    ``db/dt = H_rhorho b^2 + 2 H_rhox b + H_xx`` forward along it.

    Returns ``(b, blown)`` where ``blown`` marks nodes whose |b| exceeded the cap.
    A fixed ``n_steps`` replaces step doubling; the result is then a smooth
    function of the arguments, which difference stencils prefer.
    """
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    rho = np.asarray(rho, float)
    x, t, rho = np.broadcast_arrays(x, t, rho)
    shape = x.shape
    xf, tf, rf = x.ravel(), t.ravel(), rho.ravel()
    span = t0 - tf

    def back(s, y):
        tt = tf + s * span
        return span * np.stack([-model.H_rho(y[0], tt, y[1]), model.H_x(y[0], tt, y[1])])

    if n_steps is None:
        start, _ = rk4_richardson(back, np.stack([xf, rf]), tol=tol)
    else:
        start = rk4_fixed(back, np.stack([xf, rf]), n_steps)
    b_init = np.asarray(b0(start[0], start[1]), float) * np.ones_like(xf)

    def make_fwd(fwd_span):
        def fwd(s, y):
            tt = t0 + s * fwd_span
            xx, rr, bb = y
            bb = np.clip(bb, -cap, cap)
            return fwd_span * np.stack([
                -model.H_rho(xx, tt, rr),
                model.H_x(xx, tt, rr),
                model.H_rhorho(xx, tt, rr) * bb ** 2 + 2 * model.H_rhox(xx, tt, rr) * bb
                + model.H_xx(xx, tt, rr),
            ])
        return fwd

    y0 = np.stack([start[0], start[1], b_init])
    if n_steps is not None:
        b = rk4_fixed(make_fwd(-span), y0, n_steps)[2]
    else:
        # a cheap fixed-step pass flags blow-up; step doubling would stall on the clipped nodes
        with np.errstate(over="ignore", invalid="ignore"):
            b = rk4_fixed(make_fwd(-span), y0, 256)[2]
        ok = np.isfinite(b) & (np.abs(b) < 0.5 * cap)
        if ok.any():
            try:
                end, _ = rk4_richardson(make_fwd(-span[ok]), y0[:, ok], tol=tol)
            except ShockKinError:
                end = rk4_fixed(make_fwd(-span[ok]), y0[:, ok], 4096)
            b[ok] = end[2]
    blown = ~np.isfinite(b) | (np.abs(b) > cap)
    b = np.where(np.isfinite(b), np.clip(b, -cap, cap), np.sign(b_init) * cap)
    return b.reshape(shape), blown.reshape(shape)


def _axis_index(axis: np.ndarray, q: np.ndarray):
    n = axis.size
    if n == 1:
        return np.zeros(q.shape, dtype=np.intp), np.zeros(q.shape)
    h = (axis[-1] - axis[0]) / (n - 1)
    pos = (q - axis[0]) / h
    i = np.clip(np.floor(pos).astype(np.intp), 0, n - 2)
    return i, pos - i


def trilinear(values: np.ndarray, axes, x, t, rho):
    """Trilinear interpolation on a uniform grid (linear extrapolation outside)."""
    x, t, rho = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float), np.asarray(rho, float))
    ix, wx = _axis_index(axes[0], x)
    it, wt = _axis_index(axes[1], t)
    ir, wr = _axis_index(axes[2], rho)
    nx, nt, nr = values.shape
    jx = np.minimum(ix + 1, nx - 1)
    jt = np.minimum(it + 1, nt - 1)
    jr = np.minimum(ir + 1, nr - 1)
    v = values
    c00 = v[ix, it, ir] * (1 - wr) + v[ix, it, jr] * wr
    c01 = v[ix, jt, ir] * (1 - wr) + v[ix, jt, jr] * wr
    c10 = v[jx, it, ir] * (1 - wr) + v[jx, it, jr] * wr
    c11 = v[jx, jt, ir] * (1 - wr) + v[jx, jt, jr] * wr
    c0 = c00 * (1 - wt) + c01 * wt
    c1 = c10 * (1 - wt) + c11 * wt
    return c0 * (1 - wx) + c1 * wx


class GridDrift(DriftField):
    """b on a uniform (x, t, rho) grid.  ``exact`` re-integrates characteristics
    instead of interpolating, which identity checks rely on."""

    def __init__(self, xs, ts, rhos, values, model: HamiltonianModel, b0: Callable, t0: float,
                 interpolation: str = "linear", blow_up_time: float | None = None,
                 tol: float = DEFAULT_TOL, exact_steps: int | None = None):
        self.xs = np.asarray(xs, float)
        self.ts = np.asarray(ts, float)
        self.rhos = np.asarray(rhos, float)
        self.values = np.asarray(values, float)
        self.model = model
        self.b0 = b0
        self.t0 = float(t0)
        self.interpolation = interpolation
        self.blow_up_time = blow_up_time
        self.tol = tol
        self.exact_steps = exact_steps
        self.is_zero = bool(np.all(self.values == 0.0))
        self.fd_step = 1e-6 * max(model.P_plus - model.P_minus, 1.0)
        self._cubic = None
        if interpolation == "cubic":
            from scipy.interpolate import RegularGridInterpolator
            self._cubic = RegularGridInterpolator((self.xs, self.ts, self.rhos), self.values,
                                                  method="cubic", bounds_error=False, fill_value=None)
        elif interpolation != "linear":
            raise ValueError(f"interpolation must be 'linear' or 'cubic', got {interpolation!r}")

    @property
    def axes(self):
        return (self.xs, self.ts, self.rhos)

    def __call__(self, x, t, rho):
        if self.is_zero:
            return np.zeros(np.broadcast(x, t, rho).shape)
        if self._cubic is not None:
            x, t, rho = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float), np.asarray(rho, float))
            pts = np.stack([x.ravel(), t.ravel(), rho.ravel()], axis=-1)
            return self._cubic(pts).reshape(x.shape)
        return trilinear(self.values, self.axes, x, t, rho)

    def exact(self, x, t, rho):
        b, _ = _characteristic_b(self.model, self.b0, self.t0, x, t, rho, tol=self.tol, n_steps=self.exact_steps)
        return b

    def to_rows(self):
        X, T, R = np.meshgrid(self.xs, self.ts, self.rhos, indexing="ij")
        return np.column_stack([X.ravel(), T.ravel(), R.ravel(), self.values.ravel()])


def solve_drift(model: HamiltonianModel, b0: Callable, t0: float, T: float, xs, ts=None, rhos=None,
                nt: int = 17, nrho: int = 17, cap: float = 1e6, tol: float = DEFAULT_TOL,
                interpolation: str = "linear", exact_steps: int | None = None) -> GridDrift:
    """Solve the drift equation on a grid by characteristics.

    ``b0(x, rho)`` is the initial field.  If |b| passes ``cap`` at some node,
    ``blow_up_time`` is set and the grid is truncated before that time.
    """
    xs = np.asarray(xs, float)
    ts = np.linspace(t0, T, nt) if ts is None else np.asarray(ts, float)
    rhos = np.linspace(model.P_minus, model.P_plus, nrho) if rhos is None else np.asarray(rhos, float)
    X, Tm, R = np.meshgrid(xs, ts, rhos, indexing="ij")
    if getattr(b0, "is_zero", False) and _h_xx_vanishes(model):
        values = np.zeros(X.shape)
        return GridDrift(xs, ts, rhos, values, model, b0, t0, interpolation, None, tol, exact_steps)
    values, blown = _characteristic_b(model, b0, t0, X, Tm, R, tol=tol, cap=cap)
    blow_up_time = None
    if blown.any():
        bad_t = ts[np.any(blown, axis=(0, 2))]
        blow_up_time = float(bad_t.min())
        keep = ts < blow_up_time
        if keep.sum() < 1:
            keep[0] = True
        ts = ts[keep]
        values = values[:, keep, :]
    return GridDrift(xs, ts, rhos, values, model, b0, t0, interpolation, blow_up_time, tol, exact_steps)


def _h_xx_vanishes(model: HamiltonianModel) -> bool:
    probe_x = np.linspace(-2, 2, 9)[:, None]
    probe_r = np.linspace(model.P_minus, model.P_plus, 9)
    return bool(np.all(model.H_xx(probe_x, 0.0, probe_r) == 0) and np.all(model.H_x(probe_x, 0.0, probe_r) == 0))


# -- flows ------------------------------------------------------------------------

def _escape_check(model, rho, what):
    if model is None:
        return
    span = model.P_plus - model.P_minus
    if np.any(rho < model.P_minus - 1e-9 * span) or np.any(rho > model.P_plus + 1e-9 * span):
        raise FlowEscapeError(f"{what} left [{model.P_minus}, {model.P_plus}]",
                              value_min=float(np.min(rho)), value_max=float(np.max(rho)))


def phi_flow(b: DriftField, a, x, m, t, tol: float = DEFAULT_TOL, with_drho: bool = False,
             n_steps: int | None = None, model: HamiltonianModel | None = None):
    """Solve ``drho/dz = b(z, t, rho)`` from ``rho(a) = m`` up to ``z = x``.

    With ``with_drho`` also returns the sensitivity to ``m`` from the
    variational equation.  ``model`` enables the escape check.
    """
    a, x, m, t = np.broadcast_arrays(np.asarray(a, float), np.asarray(x, float),
                                     np.asarray(m, float), np.asarray(t, float))
    if b.is_zero or not np.any(x != a):
        out = m.copy()
        return (out, np.ones_like(out)) if with_drho else out
    closed = b.closed_flow(a, x, m, t)
    if closed is not None:
        _escape_check(model, closed, "phi flow")
        return (closed, np.ones_like(closed)) if with_drho else closed
    L = x - a
    if with_drho:
        def rhs(s, y):
            z = a + s * L
            return np.stack([L * b(z, t, y[0]), L * b.d_rho(z, t, y[0]) * y[1]])
        y0 = np.stack([m, np.ones_like(m)])
    else:
        def rhs(s, y):
            return L * b(a + s * L, t, y)
        y0 = m
    if n_steps is None:
        y, _ = rk4_richardson(rhs, y0, tol=tol)
    else:
        y = rk4_fixed(rhs, y0, n_steps)
    val = y[0] if with_drho else y
    _escape_check(model, val, "phi flow")
    return (val, y[1]) if with_drho else val


def phi_derivatives(b: DriftField, a, x, m, t, **kw):
    """``(phi, d/dm phi, d/da phi, d/dx phi)`` using the variational equation."""
    phi, dm = phi_flow(b, a, x, m, t, with_drho=True, **kw)
    da = -b(a, t, m) * dm
    dx = b(x, t, phi)
    return phi, dm, da, dx


def hamiltonian_flow(model: HamiltonianModel, a, m, s, t, tol: float = DEFAULT_TOL):
    """Characteristic map from (a, m) at time s to time t."""
    a, m, s, t = np.broadcast_arrays(np.asarray(a, float), np.asarray(m, float),
                                     np.asarray(s, float), np.asarray(t, float))
    span = t - s

    def rhs(u, y):
        tt = s + u * span
        return span * np.stack([-model.H_rho(y[0], tt, y[1]), model.H_x(y[0], tt, y[1])])

    y, _ = rk4_richardson(rhs, np.stack([a, m]), tol=tol)
    return y[0], y[1]


def gamma_flow(model: HamiltonianModel, b: DriftField, a_plus, m, s, t, tol: float = DEFAULT_TOL,
               check: bool = True):
    """Boundary-value flow ``dzeta/dt = beta(a_plus, t, zeta)`` from ``zeta(s) = m``."""
    a_plus, m, s, t = np.broadcast_arrays(np.asarray(a_plus, float), np.asarray(m, float),
                                          np.asarray(s, float), np.asarray(t, float))
    if b.is_zero and _h_xx_vanishes(model):
        return m.copy()
    span = t - s

    def rhs(u, y):
        return span * beta(model, b, a_plus, s + u * span, y)

    y, _ = rk4_richardson(rhs, m, tol=tol)
    if check:
        _escape_check(model, y, "gamma flow")
    return y
