"""Hamiltonians, Lagrangians and the pointwise coefficients built from them.

Conventions: the conservation law is ``rho_t = H(x, t, rho)_x``.  Characteristics
move with ``dx/dt = -H_rho`` and shocks with ``dx/dt = -v`` where ``v`` is the
divided difference of ``H`` across the jump.  Every function here broadcasts
over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import (
    DomainError,
    NonCoerciveError,
    TimeOrderError,
    UnknownNameError,
    UnsupportedFeatureError,
)

COINCIDENCE_RTOL = 1e-9
FD_REL_STEP = 1e-5


class Flavor(Enum):
    INCREASING = "increasing"
    COERCIVE = "coercive"


class HamiltonianModel:
    """Base class.  Subclasses implement ``H``; any derivative they leave out
    falls back to a central finite difference with step ``1e-5 * scale``."""

    name = "custom"
    xt_independent = False

    def __init__(self, P_minus: float, P_plus: float, flavor: Flavor | str | None = None,
                 scale: float = 1.0):
        if not P_plus > P_minus:
            raise DomainError("momentum bounds must satisfy P_minus < P_plus",
                              P_minus=P_minus, P_plus=P_plus)
        self.P_minus = float(P_minus)
        self.P_plus = float(P_plus)
        self.scale = float(scale)
        if flavor is None:
            flavor = self._detect_flavor()
        self.flavor = Flavor(flavor)

    # -- energy and derivatives -------------------------------------------------

    def H(self, x, t, rho):
        raise NotImplementedError

    def _h(self):
        return FD_REL_STEP * self.scale

    def H_rho(self, x, t, rho):
        h = self._h()
        return (self.H(x, t, rho + h) - self.H(x, t, rho - h)) / (2 * h)

    def H_x(self, x, t, rho):
        h = self._h()
        return (self.H(x + h, t, rho) - self.H(x - h, t, rho)) / (2 * h)

    def H_t(self, x, t, rho):
        h = self._h()
        return (self.H(x, t + h, rho) - self.H(x, t - h, rho)) / (2 * h)

    def H_rhorho(self, x, t, rho):
        h = self._h()
        return (self.H_rho(x, t, rho + h) - self.H_rho(x, t, rho - h)) / (2 * h)

    def H_rhox(self, x, t, rho):
        h = self._h()
        return (self.H_rho(x + h, t, rho) - self.H_rho(x - h, t, rho)) / (2 * h)

    def H_xx(self, x, t, rho):
        h = self._h()
        return (self.H_x(x + h, t, rho) - self.H_x(x - h, t, rho)) / (2 * h)

    def momentum_for_slope(self, x, t, slope):
        """Solve ``H_rho(x, t, p) = slope`` for ``p`` (H strictly convex).

        Bracketed bisection followed by Newton polishing; subclasses with a
        closed-form inverse override this.
        """
        slope = np.asarray(slope, dtype=float)
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        x, t, slope = np.broadcast_arrays(x, t, slope)
        span = self.P_plus - self.P_minus
        lo = np.full(slope.shape, self.P_minus - 10 * span)
        hi = np.full(slope.shape, self.P_plus + 10 * span)
        for _ in range(60):
            bad = self.H_rho(x, t, lo) > slope
            if not bad.any():
                break
            lo = np.where(bad, lo - 2 * (hi - lo), lo)
        for _ in range(60):
            bad = self.H_rho(x, t, hi) < slope
            if not bad.any():
                break
            hi = np.where(bad, hi + 2 * (hi - lo), hi)
        if (self.H_rho(x, t, lo) > slope).any() or (self.H_rho(x, t, hi) < slope).any():
            raise NonCoerciveError("H_rho does not reach the requested slope", model=self.name)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            up = self.H_rho(x, t, mid) < slope
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        p = 0.5 * (lo + hi)
        curv = self.H_rhorho(x, t, p)
        ok = curv > 0
        p = np.where(ok, p - (self.H_rho(x, t, p) - slope) / np.where(ok, curv, 1.0), p)
        return p

    # -- checks -----------------------------------------------------------------

    def check_domain(self, rho, what: str = "rho", tol: float = 1e-9):
        rho = np.asarray(rho, dtype=float)
        span = self.P_plus - self.P_minus
        if rho.size and (rho.min() < self.P_minus - tol * span or rho.max() > self.P_plus + tol * span):
            raise DomainError(f"{what} outside [{self.P_minus}, {self.P_plus}]",
                              value_min=float(rho.min()), value_max=float(rho.max()))

    def _detect_flavor(self) -> Flavor:
        rho = np.linspace(self.P_minus, self.P_plus, 33)
        xs = np.linspace(-3.0, 3.0, 13)[:, None]
        try:
            positive = bool(np.all(self.H_rho(xs, 0.0, rho) > 0))
        except NotImplementedError:
            return Flavor.COERCIVE
        return Flavor.INCREASING if positive else Flavor.COERCIVE

    def self_test(self, n: int = 64, seed: int = 0) -> dict[str, float]:
        """Compare each analytic derivative with a central difference of the
        next lower one at random points; returns the max discrepancy per name."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-3, 3, n)
        t = rng.uniform(0, 2, n)
        rho = rng.uniform(self.P_minus, self.P_plus, n)
        h = 1e-4 * self.scale
        base = HamiltonianModel
        pairs = {
            "H_rho": (self.H_rho, lambda: (self.H(x, t, rho + h) - self.H(x, t, rho - h)) / (2 * h)),
            "H_x": (self.H_x, lambda: (self.H(x + h, t, rho) - self.H(x - h, t, rho)) / (2 * h)),
            "H_rhorho": (self.H_rhorho,
                         lambda: (self.H_rho(x, t, rho + h) - self.H_rho(x, t, rho - h)) / (2 * h)),
            "H_rhox": (self.H_rhox,
                       lambda: (self.H_rho(x + h, t, rho) - self.H_rho(x - h, t, rho)) / (2 * h)),
            "H_xx": (self.H_xx, lambda: (self.H_x(x + h, t, rho) - self.H_x(x - h, t, rho)) / (2 * h)),
        }
        report = {}
        for name, (fn, fd) in pairs.items():
            if getattr(type(self), name) is getattr(base, name):
                continue
            report[name] = float(np.max(np.abs(np.asarray(fn(x, t, rho)) - fd())))
        return report

    def convexity_ok(self, n: int = 65) -> bool:
        rho = np.linspace(self.P_minus, self.P_plus, n)
        xs = np.linspace(-3.0, 3.0, 13)[:, None]
        return bool(np.all(self.H_rhorho(xs, 0.0, rho) >= -1e-12))

    def __repr__(self):
        return f"{type(self).__name__}(P=[{self.P_minus}, {self.P_plus}], flavor={self.flavor.value})"


class Burgers(HamiltonianModel):
    """H = rho^2 / 2."""

    name = "burgers"
    xt_independent = True

    def H(self, x, t, rho):
        return 0.5 * np.asarray(rho, float) ** 2 + 0.0 * x

    def H_rho(self, x, t, rho):
        return np.asarray(rho, float) + 0.0 * x

    def H_x(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    def H_t(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    def H_rhorho(self, x, t, rho):
        return np.ones(np.broadcast(x, t, rho).shape)

    H_rhox = H_x
    H_xx = H_x

    def momentum_for_slope(self, x, t, slope):
        return np.asarray(slope, float) + 0.0 * np.asarray(x, float)


class ShiftedBurgers(HamiltonianModel):
    """H = rho + rho^2 / 2, increasing for rho > -1."""

    name = "shifted_burgers"
    xt_independent = True

    def H(self, x, t, rho):
        rho = np.asarray(rho, float)
        return rho + 0.5 * rho ** 2 + 0.0 * x

    def H_rho(self, x, t, rho):
        return 1.0 + np.asarray(rho, float) + 0.0 * x

    def H_x(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    def H_t(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    def H_rhorho(self, x, t, rho):
        return np.ones(np.broadcast(x, t, rho).shape)

    H_rhox = H_x
    H_xx = H_x

    def momentum_for_slope(self, x, t, slope):
        return np.asarray(slope, float) - 1.0 + 0.0 * np.asarray(x, float)


class Linear(HamiltonianModel):
    """H = c rho.  Not strictly convex, so it has no fundamental solutions."""

    name = "linear"
    xt_independent = True

    def __init__(self, P_minus, P_plus, c: float = 1.0, flavor=None, scale=1.0):
        self.c = float(c)
        super().__init__(P_minus, P_plus, flavor, scale)

    def H(self, x, t, rho):
        return self.c * np.asarray(rho, float) + 0.0 * x

    def H_rho(self, x, t, rho):
        return np.full(np.broadcast(x, t, rho).shape, self.c)

    def H_x(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    def H_t(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    H_rhorho = H_x
    H_rhox = H_x
    H_xx = H_x

    def momentum_for_slope(self, x, t, slope):
        raise NonCoerciveError("linear Hamiltonian has constant slope", model=self.name)


class EpsSin(HamiltonianModel):
    """H = rho + rho^2/2 - eps sin(x) rho - curvature x^2/2.

    The quadratic potential only shifts ``H_x`` and ``H_xx``.  With
    ``nonpositive_hxx=True`` the curvature is set to ``eps * (max|P| + (P+ - P-))``
    so that ``H_xx <= 0`` on the momentum interval widened by its own length;
    the margin covers characteristics that drift slightly outside [P-, P+].
    """

    name = "eps_sin"
    xt_independent = False

    def __init__(self, P_minus, P_plus, eps: float = 0.2, curvature: float = 0.0,
                 nonpositive_hxx: bool = False, flavor=None, scale=1.0):
        self.eps = float(eps)
        if nonpositive_hxx:
            curvature = max(curvature, self.eps * (max(abs(P_minus), abs(P_plus)) + (P_plus - P_minus)))
        self.curvature = float(curvature)
        super().__init__(P_minus, P_plus, flavor, scale)

    def H(self, x, t, rho):
        x = np.asarray(x, float)
        rho = np.asarray(rho, float)
        return rho + 0.5 * rho ** 2 - self.eps * np.sin(x) * rho - 0.5 * self.curvature * x ** 2 + 0.0 * t

    def H_rho(self, x, t, rho):
        return 1.0 + np.asarray(rho, float) - self.eps * np.sin(x) + 0.0 * t

    def H_x(self, x, t, rho):
        x = np.asarray(x, float)
        return -self.eps * np.cos(x) * rho - self.curvature * x + 0.0 * t

    def H_t(self, x, t, rho):
        return np.zeros(np.broadcast(x, t, rho).shape)

    def H_rhorho(self, x, t, rho):
        return np.ones(np.broadcast(x, t, rho).shape)

    def H_rhox(self, x, t, rho):
        return -self.eps * np.cos(x) + 0.0 * rho + 0.0 * t

    def H_xx(self, x, t, rho):
        return self.eps * np.sin(x) * rho - self.curvature + 0.0 * t

    def momentum_for_slope(self, x, t, slope):
        return np.asarray(slope, float) - 1.0 + self.eps * np.sin(x)


class FunctionModel(HamiltonianModel):
    """Wraps user callables; missing derivatives use the finite-difference fallback."""

    def __init__(self, H: Callable, P_minus, P_plus, derivatives: dict | None = None,
                 flavor=None, scale=1.0, name="custom", xt_independent=False):
        self._H = H
        self.name = name
        self.xt_independent = xt_independent
        for key, fn in (derivatives or {}).items():
            if key not in ("H_rho", "H_x", "H_t", "H_rhorho", "H_rhox", "H_xx"):
                raise UnknownNameError(f"unknown derivative {key!r}")
            setattr(self, key, fn)
        super().__init__(P_minus, P_plus, flavor, scale)

    def H(self, x, t, rho):
        return self._H(x, t, rho)

    def self_test(self, n=64, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-3, 3, n)
        t = rng.uniform(0, 2, n)
        rho = rng.uniform(self.P_minus, self.P_plus, n)
        report = {}
        for key in ("H_rho", "H_x", "H_rhorho", "H_rhox", "H_xx"):
            if key in self.__dict__:
                fd = getattr(HamiltonianModel, key)(self, x, t, rho)
                report[key] = float(np.max(np.abs(self.__dict__[key](x, t, rho) - fd)))
        return report


MODELS: dict[str, type[HamiltonianModel]] = {
    "burgers": Burgers,
    "shifted_burgers": ShiftedBurgers,
    "linear": Linear,
    "eps_sin": EpsSin,
}


def make_model(name: str, self_test: bool = True, tol: float = 1e-5, **params) -> HamiltonianModel:
    """Build a registered model by name and run the derivative self-test."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise UnknownNameError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
    params = dict(params)
    params.setdefault("P_minus", 0.0)
    params.setdefault("P_plus", 1.0)
    model = cls(**params)
    if self_test:
        bad = {k: v for k, v in model.self_test().items() if v > tol}
        if bad:
            raise DomainError("analytic derivatives disagree with finite differences", **bad)
    return model


# -- pointwise coefficients ------------------------------------------------------

def shock_velocity(model: HamiltonianModel, x, t, rho_minus, rho_plus, check: bool = False):
    """Divided difference of H across a jump; ``H_rho`` in the coincidence limit."""
    rm = np.asarray(rho_minus, dtype=float)
    rp = np.asarray(rho_plus, dtype=float)
    if check:
        model.check_domain(rm, "rho_minus")
        model.check_domain(rp, "rho_plus")
    diff = rm - rp
    close = np.abs(diff) < COINCIDENCE_RTOL * (model.P_plus - model.P_minus)
    safe = np.where(close, 1.0, diff)
    divided = (model.H(x, t, rm) - model.H(x, t, rp)) / safe
    if np.any(close):
        limit = model.H_rho(x, t, 0.5 * (rm + rp))
        return np.where(close, limit, divided)
    return divided


def shock_velocity_drho_minus(model: HamiltonianModel, x, t, rho_minus, rho_plus):
    """Partial derivative of ``v`` in its first momentum argument.

    ``v_{rho_-} = (H_rho(rho_-) - v) / (rho_- - rho_+)``, with limit ``H_rhorho/2``.
    """
    rm = np.asarray(rho_minus, dtype=float)
    rp = np.asarray(rho_plus, dtype=float)
    diff = rm - rp
    close = np.abs(diff) < 1e-6 * (model.P_plus - model.P_minus)
    safe = np.where(close, 1.0, diff)
    v = shock_velocity(model, x, t, rm, rp)
    val = (model.H_rho(x, t, rm) - v) / safe
    if np.any(close):
        return np.where(close, 0.5 * model.H_rhorho(x, t, 0.5 * (rm + rp)), val)
    return val


def beta(model: HamiltonianModel, b, x, t, rho):
    """Rate of change of momentum along the boundary flow: ``H_x + b H_rho``."""
    return model.H_x(x, t, rho) + b(x, t, rho) * model.H_rho(x, t, rho)


def K_coeff(model: HamiltonianModel, b, x, t, rho_first, rho_second):
    """``b(first) v(second, first) - beta(first)``; b and beta read the FIRST argument."""
    v = shock_velocity(model, x, t, rho_second, rho_first)
    return b(x, t, rho_first) * v - beta(model, b, x, t, rho_first)


# -- Legendre transform ----------------------------------------------------------

@dataclass
class LagrangianModel:
    """``L(x, t, v) = inf_p (p v + H(x, t, p))`` with its v- and x-derivatives."""

    L: Callable
    L_v: Callable
    L_x: Callable
    c0: float = float("nan")
    c1: float = float("nan")
    c2: float = float("nan")
    meta: dict = field(default_factory=dict)

    def concavity_ok(self, x=0.0, t=0.0, v_range=(-3.0, 3.0), n=41) -> bool:
        v = np.linspace(*v_range, n)
        h = (v[1] - v[0])
        second = (self.L(x, t, v[2:]) - 2 * self.L(x, t, v[1:-1]) + self.L(x, t, v[:-2])) / h ** 2
        return bool(np.all(second < 0))

    def growth_ok(self, x=0.0, t=0.0, v_range=(-5.0, 5.0), n=101) -> bool:
        v = np.linspace(*v_range, n)
        negL = -np.asarray(self.L(x, t, v))
        upper = self.c0 + self.c1 * v ** 2
        lower = -self.c0 + self.c2 * v ** 2
        return bool(np.all(negL <= upper + 1e-9) and np.all(negL >= lower - 1e-9))


class _GridLegendre:
    """Callable pieces of a grid-based Legendre transform (picklable)."""

    def __init__(self, model: HamiltonianModel, p_grid: np.ndarray, strict: bool):
        self.model = model
        self.p = p_grid
        self.strict = strict

    def argmin(self, x, t, v):
        v = np.asarray(v, dtype=float)
        x, t, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float), v)
        shape = v.shape
        xf, tf, vf = x.ravel(), t.ravel(), v.ravel()
        vals = self.p[None, :] * vf[:, None] + self.model.H(xf[:, None], tf[:, None], self.p[None, :])
        k = np.argmin(vals, axis=1)
        edge = (k == 0) | (k == self.p.size - 1)
        if self.strict and edge.any():
            raise NonCoerciveError("Legendre infimum escapes the momentum grid",
                                   v=float(vf[edge][0]), p_edge=float(self.p[k[edge][0]]))
        p = self.p[k]
        # one Newton step on the stationarity condition v + H_rho(p) = 0
        curv = self.model.H_rhorho(xf, tf, p)
        ok = (curv > 1e-12) & ~edge
        step = (vf + self.model.H_rho(xf, tf, p)) / np.where(ok, curv, 1.0)
        dp = self.p[1] - self.p[0]
        p = np.where(ok, p - np.clip(step, -dp, dp), p)
        return p.reshape(shape)

    def L(self, x, t, v):
        p = self.argmin(x, t, v)
        return p * np.asarray(v, float) + self.model.H(x, t, p)

    def L_v(self, x, t, v):
        return self.argmin(x, t, v)

    def L_x(self, x, t, v):
        return self.model.H_x(x, t, self.argmin(x, t, v))


def legendre_transform(model: HamiltonianModel, p_range: tuple[float, float] | None = None,
                       n: int = 4001, strict: bool = True, growth_range: float = 4.0) -> LagrangianModel:
    """Grid infimum over momenta with one Newton refinement from the grid argmin.

    With ``strict=False`` the grid-edge value is returned instead of raising,
    which yields the steep penalty expected for non-coercive H.
    """
    if p_range is None:
        span = model.P_plus - model.P_minus
        centre = 0.5 * (model.P_plus + model.P_minus)
        p_range = (centre - 20 * span, centre + 20 * span)
    grid = _GridLegendre(model, np.linspace(p_range[0], p_range[1], n), strict)
    lag = LagrangianModel(L=grid.L, L_v=grid.L_v, L_x=grid.L_x, meta={"p_range": p_range, "n": n})
    if strict:
        v = np.linspace(-growth_range, growth_range, 81)
        negL = -np.asarray(grid.L(0.0, 0.0, v))
        big = np.abs(v) >= 1.0
        ratio = negL[big] / v[big] ** 2
        lag.c1 = float(ratio.max())
        lag.c2 = float(ratio.min())
        lag.c0 = float(max(np.max(np.abs(negL - lag.c1 * v ** 2)), np.max(np.abs(negL - lag.c2 * v ** 2)),
                           0.0)) + 1e-12
    return lag


def inverse_legendre(lag: LagrangianModel, x, t, p, v_range=(-50.0, 50.0), n=20001):
    """``H(p) = sup_v (L(v) - p v)`` on a velocity grid (round-trip check)."""
    v = np.linspace(*v_range, n)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    Lv = np.asarray(lag.L(x, t, v))
    vals = Lv[None, :] - p[:, None] * v[None, :]
    k = np.argmax(vals, axis=1)
    out = vals[np.arange(p.size), k]
    # parabolic refinement through the three grid points around the max
    inner = (k > 0) & (k < n - 1)
    km, kp = np.clip(k - 1, 0, n - 1), np.clip(k + 1, 0, n - 1)
    f0, fm, fp = out, vals[np.arange(p.size), km], vals[np.arange(p.size), kp]
    denom = fm - 2 * f0 + fp
    ok = inner & (denom < 0)
    out = np.where(ok, f0 - 0.125 * (fp - fm) ** 2 / np.where(ok, denom, -1.0), out)
    return out


# -- fundamental solutions -----------------------------------------------------

def fundamental_M(model: HamiltonianModel, x, t, y, s):
    """``L_v((x - y) / (t - s))``: the momentum of the ray from (y, s) to (x, t)."""
    if not model.xt_independent:
        raise UnsupportedFeatureError("fundamental solutions need an (x,t)-independent H",
                                      model=model.name)
    dt = np.asarray(t, float) - np.asarray(s, float)
    if np.any(dt <= 0):
        raise TimeOrderError("fundamental_M requires t > s")
    slope = (np.asarray(x, float) - np.asarray(y, float)) / dt
    # L_v(w) is the minimiser p of p w + H(p), i.e. H_rho(p) = -w
    return model.momentum_for_slope(0.0, 0.0, -slope)


def vhat(model: HamiltonianModel, x, t, y_minus, y_plus, s):
    """Shock velocity between the fundamental momenta seeded at ``y_minus`` and ``y_plus``."""
    m_minus = fundamental_M(model, x, t, y_minus, s)
    m_plus = fundamental_M(model, x, t, y_plus, s)
    return shock_velocity(model, x, t, m_minus, m_plus)
