"""Jump kernels, the collision/transport operators acting on them, and explicit
solvers for the kernel and the left-boundary marginal.

Grid layout: a kernel snapshot is an array ``F[ix, j, k]`` over x-nodes and a
uniform momentum grid, holding ``f(x_i, rho_j, rho_k)`` for ``j <= k`` and zero
below the diagonal.  Row integrals ``A h(rho_-) = int_{rho_-}^{P+} h(rho_-, r) dr``
use the trapezoid rule on that grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .drift_flow import DriftField, ZeroDrift
from .errors import CFLError, HypothesisViolation
from .model import (
    HamiltonianModel,
    beta,
    fundamental_M,
    shock_velocity,
    shock_velocity_drho_minus,
)

CFL_MAX = 0.9
CLIP_WARN = 1e-6


# -- kernel families used by scenarios ---------------------------------------------

class KernelFamily:
    """``f(x, t, rho_-, rho_+)`` as a picklable closure, zero off the simplex."""

    def __init__(self, lo: float, hi: float):
        self.lo, self.hi = float(lo), float(hi)

    def shape(self, x, rm, rp):
        raise NotImplementedError

    def __call__(self, x, t, rm, rp):
        x, rm, rp = np.broadcast_arrays(np.asarray(x, float), np.asarray(rm, float), np.asarray(rp, float))
        inside = (rm <= rp) & (rm >= self.lo) & (rp <= self.hi)
        return np.where(inside, self.shape(x, rm, rp), 0.0)

    def extended(self, x, t, rm, rp):
        """The shape without the simplex cut: smooth across the edges, so that
        difference stencils may step outside."""
        x, rm, rp = np.broadcast_arrays(np.asarray(x, float), np.asarray(rm, float), np.asarray(rp, float))
        return self.shape(x, rm, rp)


class UniformKernel(KernelFamily):
    def __init__(self, lo, hi, amp: float = 1.0):
        super().__init__(lo, hi)
        self.amp = float(amp)

    def shape(self, x, rm, rp):
        return np.full(rm.shape, self.amp)


class TailKernel(KernelFamily):
    """``amp (hi - rho_+)^power (1 + c_sin sin(k x)) (1 + c_minus (rho_- - lo))``."""

    def __init__(self, lo, hi, amp: float = 1.0, power: float = 1.0, c_sin: float = 0.0,
                 k: float = 1.0, c_minus: float = 0.0):
        super().__init__(lo, hi)
        self.amp, self.power, self.c_sin, self.k, self.c_minus = map(float, (amp, power, c_sin, k, c_minus))

    def shape(self, x, rm, rp):
        gap = self.hi - rp
        if not self.power.is_integer():
            gap = np.clip(gap, 0.0, None)
        return (self.amp * gap ** self.power
                * (1.0 + self.c_sin * np.sin(self.k * x)) * (1.0 + self.c_minus * (rm - self.lo)))


class ZeroKernel(KernelFamily):
    def shape(self, x, rm, rp):
        return np.zeros(rm.shape)


# -- grid kernels -----------------------------------------------------------------

def _uniform_step(grid: np.ndarray) -> float:
    d = np.diff(grid)
    if grid.size < 2 or not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise ValueError("momentum grids must be uniform with at least two nodes")
    return float(d[0])


def _interp_index(axis: np.ndarray, q):
    q = np.asarray(q, float)
    n = axis.size
    if n == 1:
        return np.zeros(q.shape, np.intp), np.zeros(q.shape)
    h = (axis[-1] - axis[0]) / (n - 1)
    pos = np.clip((q - axis[0]) / h, 0.0, n - 1.0)
    i = np.minimum(np.floor(pos).astype(np.intp), n - 2)
    return i, pos - i


@dataclass
class JumpKernel:
    """Kernel snapshot at time ``t``.  ``variant`` is ``"f"`` (momentum jumps) or
    ``"g"`` (label jumps of the fundamental class, reference time ``s``)."""

    xs: np.ndarray
    rhos: np.ndarray
    values: np.ndarray
    t: float = 0.0
    variant: str = "f"
    s: float | None = None

    def __post_init__(self):
        self.xs = np.atleast_1d(np.asarray(self.xs, float))
        self.rhos = np.asarray(self.rhos, float)
        self.values = np.asarray(self.values, float)
        n = self.rhos.size
        if self.values.shape != (self.xs.size, n, n):
            raise ValueError(f"kernel values must have shape {(self.xs.size, n, n)}, got {self.values.shape}")
        self.d = _uniform_step(self.rhos)
        self.values = np.triu(self.values)
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise HypothesisViolation("jump kernel must be finite and nonnegative")

    @property
    def lo(self):
        return float(self.rhos[0])

    @property
    def hi(self):
        return float(self.rhos[-1])

    def __call__(self, x, t, rm, rp):
        """Bilinear in the momenta, linear in x; zero outside the simplex."""
        x, rm, rp = np.broadcast_arrays(np.asarray(x, float), np.asarray(rm, float), np.asarray(rp, float))
        ix, wx = _interp_index(self.xs, x)
        jx = np.minimum(ix + 1, self.xs.size - 1)
        ij, wj = _interp_index(self.rhos, rm)
        ik, wk = _interp_index(self.rhos, rp)
        V = self.values
        out = 0.0
        for xi, xw in ((ix, 1 - wx), (jx, wx)):
            s = (V[xi, ij, ik] * (1 - wj) * (1 - wk) + V[xi, ij + 1, ik] * wj * (1 - wk)
                 + V[xi, ij, ik + 1] * (1 - wj) * wk + V[xi, ij + 1, ik + 1] * wj * wk)
            out = out + xw * s
        inside = (rm <= rp) & (rm >= self.lo - 1e-12) & (rp <= self.hi + 1e-12)
        return np.where(inside, out, 0.0)

    def row_integrals(self) -> np.ndarray:
        """``A(f)`` at every (x-node, momentum node)."""
        return row_integral(self.values, self.d)

    def to_rows(self):
        rows = []
        n = self.rhos.size
        J, K = np.triu_indices(n)
        for i, x in enumerate(self.xs):
            rows.append(np.column_stack([np.full(J.size, x), np.full(J.size, self.t),
                                         self.rhos[J], self.rhos[K], self.values[i, J, K]]))
        return np.vstack(rows)


def tabulate_kernel(fn: Callable, xs, rhos, t: float = 0.0, variant: str = "f",
                    s: float | None = None) -> JumpKernel:
    xs = np.atleast_1d(np.asarray(xs, float))
    rhos = np.asarray(rhos, float)
    X, RM, RP = np.meshgrid(xs, rhos, rhos, indexing="ij")
    vals = np.asarray(fn(X, t, RM, RP), float) * np.ones(X.shape)
    return JumpKernel(xs, rhos, np.triu(vals), t, variant, s)


# -- grid operators ------------------------------------------------------------------

def _diag(F):
    return np.diagonal(F, axis1=-2, axis2=-1)


def row_integral(F: np.ndarray, d: float) -> np.ndarray:
    """Trapezoid ``int_{rho_j}^{P+} F[j, k] d rho_k`` for upper-triangular F."""
    return d * (F.sum(axis=-1) - 0.5 * _diag(F) - 0.5 * F[..., -1])


def star(F: np.ndarray, G: np.ndarray, d: float) -> np.ndarray:
    """``(F * G)(a, c) = int_a^c F(a, b) G(b, c) db`` by the trapezoid rule."""
    out = F @ G - 0.5 * _diag(F)[..., :, None] * G - 0.5 * F * _diag(G)[..., None, :]
    return np.triu(d * out)


def q_plus_grid(F: np.ndarray, V: np.ndarray, d: float) -> np.ndarray:
    """Gain term: ``int_a^c (v(b, c) - v(a, b)) F(a, b) F(b, c) db``."""
    G = V * F
    S = F @ G - G @ F
    dF = _diag(F)
    dV = _diag(V)
    Ea = (V - dV[..., :, None]) * dF[..., :, None] * F
    Ec = (dV[..., None, :] - V) * F * dF[..., None, :]
    return np.triu(d * (S - 0.5 * Ea - 0.5 * Ec))


def j_grid(F: np.ndarray, V: np.ndarray, d: float) -> np.ndarray:
    A1 = row_integral(F, d)
    A2 = row_integral(V * F, d)
    J = (A2[..., None, :] - A2[..., :, None]) - V * (A1[..., None, :] - A1[..., :, None])
    return np.triu(J)


def collision_grid(F: np.ndarray, V: np.ndarray, d: float) -> np.ndarray:
    """``Q(f) = Q+(f) - f J(f)``."""
    return q_plus_grid(F, V, d) - F * j_grid(F, V, d)


def row_conservation(F: np.ndarray, V: np.ndarray, d: float) -> np.ndarray:
    """Simpson row integrals of ``Q(f)``; zero up to quadrature error."""
    Q = collision_grid(F, V, d)
    n = F.shape[-1]
    grid = np.arange(n) * d
    out = np.zeros(F.shape[:-1])
    for j in range(n - 1):
        out[..., j] = simpson(Q[..., j, j:], x=grid[j:], axis=-1)
    return out


def _deriv_last(G: np.ndarray, d: float) -> np.ndarray:
    """d/d rho_+ on the simplex (axis -1), second order inside, one-sided at the
    diagonal and at the top edge."""
    n = G.shape[-1]
    out = np.zeros_like(G)
    out[..., 1:-1] = (G[..., 2:] - G[..., :-2]) / (2 * d)
    out[..., -1] = (3 * G[..., -1] - 4 * G[..., -2] + G[..., -3]) / (2 * d) if n >= 3 else 0.0
    j = np.arange(n)
    # at k = j the left neighbour is outside the simplex
    for jj in range(n - 1):
        if jj + 2 < n:
            out[..., jj, jj] = (-3 * G[..., jj, jj] + 4 * G[..., jj, jj + 1] - G[..., jj, jj + 2]) / (2 * d)
        else:
            out[..., jj, jj] = (G[..., jj, jj + 1] - G[..., jj, jj]) / d
    out[..., n - 1, n - 1] = 0.0
    mask = j[:, None] <= j[None, :]
    return np.where(mask, out, 0.0)


def _deriv_first(G: np.ndarray, d: float) -> np.ndarray:
    """d/d rho_- on the simplex (axis -2), one-sided at rho_- = P- and at the diagonal."""
    n = G.shape[-1]
    out = np.zeros_like(G)
    out[..., 1:-1, :] = (G[..., 2:, :] - G[..., :-2, :]) / (2 * d)
    out[..., 0, :] = (-3 * G[..., 0, :] + 4 * G[..., 1, :] - G[..., 2, :]) / (2 * d)
    for k in range(1, n):
        if k >= 2:
            out[..., k, k] = (3 * G[..., k, k] - 4 * G[..., k - 1, k] + G[..., k - 2, k]) / (2 * d)
        else:
            out[..., k, k] = (G[..., k, k] - G[..., k - 1, k]) / d
    out[..., 0, 0] = 0.0
    j = np.arange(n)
    mask = j[:, None] <= j[None, :]
    return np.where(mask, out, 0.0)


def velocity_matrix(model: HamiltonianModel, x, t, rhos) -> np.ndarray:
    """``V[..., j, k] = v(x, t, rho_j, rho_k)`` for each x (leading axis)."""
    x = np.atleast_1d(np.asarray(x, float))[:, None, None]
    return shock_velocity(model, x, t, rhos[None, :, None], rhos[None, None, :])


def vhat_matrix(model: HamiltonianModel, x, t, ys, s) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, float))[:, None, None]
    Mm = fundamental_M(model, x, t, ys[None, :, None], s)
    Mp = fundamental_M(model, x, t, ys[None, None, :], s)
    return shock_velocity(model, x, t, Mm, Mp)


@dataclass
class SlabCoefficients:
    """Momentum-dependent coefficients at each x-node for one time level."""

    V: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    Kp: np.ndarray  # K(rho_+, rho_-): b, beta at rho_+
    Km: np.ndarray  # K(rho_-, rho_+): b, beta at rho_-
    dV: np.ndarray  # analytic v_{rho_-}


def slab_coefficients(model: HamiltonianModel, drift: DriftField, xs, t, rhos) -> SlabCoefficients:
    xs = np.atleast_1d(np.asarray(xs, float))
    V = velocity_matrix(model, xs, t, rhos)
    X = xs[:, None]
    bv = drift(X, t, rhos[None, :]) * np.ones((xs.size, rhos.size))
    be = beta(model, drift, X, t, rhos[None, :]) * np.ones((xs.size, rhos.size))
    Kp = bv[:, None, :] * V - be[:, None, :]
    Km = bv[:, :, None] * V - be[:, :, None]
    dV = shock_velocity_drho_minus(model, xs[:, None, None], t, rhos[None, :, None], rhos[None, None, :])
    return SlabCoefficients(V, bv, be, Kp, Km, dV)


def c_plus_grid(F, coef: SlabCoefficients, d):
    return _deriv_last(coef.Kp * F, d)


def c_minus_grid(F, coef: SlabCoefficients, d):
    """Both algebraic forms; their difference is a product-rule self-check."""
    form1 = coef.b[:, :, None] * _deriv_first(coef.V * F, d) - coef.beta[:, :, None] * _deriv_first(F, d)
    form2 = coef.b[:, :, None] * coef.dV * F + coef.Km * _deriv_first(F, d)
    n = F.shape[-1]
    mask = np.triu(np.ones((n, n), bool))
    return np.where(mask, form1, 0.0), np.where(mask, form2, 0.0)


def _upwind_c_terms(F, coef: SlabCoefficients, d):
    """Transport part of C(f) with first-order upwinding (stable under explicit Euler)."""
    n = F.shape[-1]
    mask = np.triu(np.ones((n, n), bool))
    # C+: f_t = d/drho_+ (Kp f), transport velocity -Kp along rho_+
    flux = coef.Kp * F
    back = np.zeros_like(flux)
    fwd = np.zeros_like(flux)
    back[..., 1:] = (flux[..., 1:] - flux[..., :-1]) / d
    fwd[..., :-1] = (flux[..., 1:] - flux[..., :-1]) / d
    fwd[..., -1] = (0.0 - flux[..., -1]) / d
    idx = np.arange(n)
    diag_mask = idx[:, None] == idx[None, :]
    back = np.where(diag_mask, 0.0, back)
    cplus = np.where(-coef.Kp > 0, back, fwd)
    # C-: f_t = b v_{rho_-} f + Km f_{rho_-}, transport velocity -Km along rho_-
    bk = np.zeros_like(F)
    fw = np.zeros_like(F)
    bk[..., 1:, :] = (F[..., 1:, :] - F[..., :-1, :]) / d
    bk[..., 0, :] = F[..., 0, :] / d
    fw[..., :-1, :] = (F[..., 1:, :] - F[..., :-1, :]) / d
    fw = np.where(diag_mask, 0.0, fw)
    dfirst = np.where(-coef.Km > 0, bk, fw)
    cminus = coef.b[:, :, None] * coef.dV * F + coef.Km * dfirst
    return np.where(mask, cplus, 0.0), np.where(mask, cminus, 0.0)


def _x_transport(F, V, xs):
    """``(v f)_x`` by conservative upwinding for transport velocity ``-v``.

    Ghost cells extrapolate linearly.  Upwinding reads them only at an inflow
    end, where this freezes the boundary gradient and keeps the inflow data
    compatible with the initial kernel (a constant ghost would not)."""
    if xs.size == 1:
        return np.zeros_like(F)
    dx = float(xs[1] - xs[0])
    G = V * F
    if xs.size > 2:
        Gpad = np.concatenate([2 * G[:1] - G[1:2], G, 2 * G[-1:] - G[-2:-1]], axis=0)
    else:
        Gpad = np.concatenate([G[:1], G, G[-1:]], axis=0)
    Vpad = np.concatenate([V[:1], V, V[-1:]], axis=0)
    u_face = -0.5 * (Vpad[:-1] + Vpad[1:])
    face = np.where(u_face > 0, Gpad[:-1], Gpad[1:])
    return (face[1:] - face[:-1]) / dx


# -- pointwise operators (quadrature over closures) ---------------------------------

def _nodes(lo, hi, n, rule: str = "trapezoid"):
    """Quadrature nodes and weights on ``[lo, hi]``; ``rule`` is ``"trapezoid"``
    (n equispaced nodes) or ``"gauss"`` (n-point Gauss-Legendre)."""
    lo = np.asarray(lo, float)[..., None]
    hi = np.asarray(hi, float)[..., None]
    if rule == "gauss":
        z, w = np.polynomial.legendre.leggauss(n)
        return lo + 0.5 * (z + 1.0) * (hi - lo), 0.5 * w * (hi - lo)
    s = np.linspace(0.0, 1.0, n)
    w = np.full(n, 1.0)
    w[0] = w[-1] = 0.5
    return lo + s * (hi - lo), w * (hi - lo) / (n - 1)


def row_A(h: Callable, x, t, rho, hi: float, n: int = 401, rule: str = "trapezoid"):
    """``int_rho^hi h(x, t, rho, r) dr``."""
    x, t, rho = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float), np.asarray(rho, float))
    r, w = _nodes(rho, np.full(rho.shape, hi), n, rule)
    vals = h(x[..., None], t[..., None], rho[..., None], r)
    return np.sum(vals * w, axis=-1)


def q_plus(f: Callable, model: HamiltonianModel, x, t, rho_minus, rho_plus, n: int = 401,
           rule: str = "trapezoid"):
    x, t, rm, rp = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, t, rho_minus, rho_plus)))
    r, w = _nodes(rm, rp, n, rule)
    X, T = x[..., None], t[..., None]
    integrand = ((shock_velocity(model, X, T, r, rp[..., None]) - shock_velocity(model, X, T, rm[..., None], r))
                 * f(X, T, rm[..., None], r) * f(X, T, r, rp[..., None]))
    return np.sum(integrand * w, axis=-1)


def _vf(f: Callable, model: HamiltonianModel):
    def vf(x, t, rm, rp):
        return shock_velocity(model, x, t, rm, rp) * f(x, t, rm, rp)
    return vf


def j_of_f(f: Callable, model: HamiltonianModel, x, t, rho_minus, rho_plus, hi: float, n: int = 401,
           rule: str = "trapezoid"):
    vf = _vf(f, model)
    A2p = row_A(vf, x, t, rho_plus, hi, n, rule)
    A2m = row_A(vf, x, t, rho_minus, hi, n, rule)
    A1p = row_A(f, x, t, rho_plus, hi, n, rule)
    A1m = row_A(f, x, t, rho_minus, hi, n, rule)
    return A2p - A2m - shock_velocity(model, x, t, rho_minus, rho_plus) * (A1p - A1m)


def q_minus(f, model, x, t, rho_minus, rho_plus, hi, n=401, rule="trapezoid"):
    return f(x, t, rho_minus, rho_plus) * j_of_f(f, model, x, t, rho_minus, rho_plus, hi, n, rule)


def collision(f, model, x, t, rho_minus, rho_plus, hi, n=401, rule="trapezoid"):
    return (q_plus(f, model, x, t, rho_minus, rho_plus, n, rule)
            - q_minus(f, model, x, t, rho_minus, rho_plus, hi, n, rule))


def c_plus(f: Callable, model: HamiltonianModel, b: DriftField, x, t, rho_minus, rho_plus, h: float = 1e-4):
    """``[K(rho_+, rho_-) f]_{rho_+}`` by a central difference of step h."""
    def g(rp):
        K = (b(x, t, rp) * shock_velocity(model, x, t, rho_minus, rp) - beta(model, b, x, t, rp))
        return K * f(x, t, rho_minus, rp)
    rp = np.asarray(rho_plus, float)
    return (g(rp + h) - g(rp - h)) / (2 * h)


def c_minus(f: Callable, model: HamiltonianModel, b: DriftField, x, t, rho_minus, rho_plus, h: float = 1e-4):
    """Both forms of the rho_- transport term, as ``(form1, form2)``."""
    rm = np.asarray(rho_minus, float)
    vf = _vf(f, model)
    d_vf = (vf(x, t, rm + h, rho_plus) - vf(x, t, rm - h, rho_plus)) / (2 * h)
    d_f = (f(x, t, rm + h, rho_plus) - f(x, t, rm - h, rho_plus)) / (2 * h)
    bm = b(x, t, rm)
    form1 = bm * d_vf - beta(model, b, x, t, rm) * d_f
    K = bm * shock_velocity(model, x, t, rho_plus, rm) - beta(model, b, x, t, rm)
    form2 = bm * shock_velocity_drho_minus(model, x, t, rm, rho_plus) * f(x, t, rm, rho_plus) + K * d_f
    return form1, form2


def kinetic_rhs(f: Callable, model: HamiltonianModel, b: DriftField, x, t, rho_minus, rho_plus, hi: float,
                h: float = 1e-4, n: int = 401, rule: str = "trapezoid"):
    """Right-hand side of ``f_t = (v f)_x + C(f) + Q(f)`` evaluated pointwise."""
    vf = _vf(f, model)
    x = np.asarray(x, float)
    adv = (vf(x + h, t, rho_minus, rho_plus) - vf(x - h, t, rho_minus, rho_plus)) / (2 * h)
    cm, _ = c_minus(f, model, b, x, t, rho_minus, rho_plus, h)
    cp = c_plus(f, model, b, x, t, rho_minus, rho_plus, h)
    return adv + cp + cm + collision(f, model, x, t, rho_minus, rho_plus, hi, n, rule)


# -- compact form ---------------------------------------------------------------------

def compact_Q(Fj: np.ndarray, Fi: np.ndarray, bj: np.ndarray, bi: np.ndarray, d: float) -> np.ndarray:
    """``f^j * f^i - A(f^j) (x) f^i - f^j (x) A(f^i) + b^j (x) f^i_{rho_-} - (f^j (x) b^i)_{rho_+}``."""
    Aj = row_integral(Fj, d)
    Ai = row_integral(Fi, d)
    out = (star(Fj, Fi, d) - Aj[..., :, None] * Fi - Fj * Ai[..., None, :]
           + bj[..., :, None] * _deriv_first(Fi, d) - _deriv_last(Fj * bi[..., None, :], d))
    return np.triu(out)


# -- marginal law ----------------------------------------------------------------------

@dataclass
class MarginalLaw:
    """Law of the left-boundary value: an atom (weight, location) plus a density
    on the momentum grid.  A delta initial condition is an atom of weight one."""

    rhos: np.ndarray
    density: np.ndarray
    t: float = 0.0
    atom_weight: float = 0.0
    atom_loc: float = 0.0
    anchor: float = 0.0

    @classmethod
    def delta(cls, rhos, m0: float, t: float = 0.0, anchor: float = 0.0, mollify: float | None = None):
        rhos = np.asarray(rhos, float)
        if mollify:
            width = mollify * (rhos[1] - rhos[0])
            dens = np.exp(-0.5 * ((rhos - m0) / width) ** 2)
            dens /= np.trapezoid(dens, rhos)
            return cls(rhos, dens, t, 0.0, m0, anchor)
        return cls(rhos, np.zeros_like(rhos), t, 1.0, float(m0), anchor)

    @property
    def d(self):
        return float(self.rhos[1] - self.rhos[0])

    def mass(self) -> float:
        return float(self.atom_weight + np.trapezoid(self.density, self.rhos))

    def cdf(self, r):
        """CDF including the atom; right-continuous."""
        r = np.asarray(r, float)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.rhos))])
        cont = np.interp(r, self.rhos, cum, left=0.0, right=cum[-1])
        return cont + self.atom_weight * (r >= self.atom_loc)

    def cdf_left(self, r):
        r = np.asarray(r, float)
        return self.cdf(r) - self.atom_weight * (r == self.atom_loc)

    def mean(self) -> float:
        return float(self.atom_weight * self.atom_loc + np.trapezoid(self.rhos * self.density, self.rhos))

    def to_rows(self):
        rows = np.column_stack([np.full(self.rhos.size, self.t), self.rhos, self.density])
        return rows


def _row_interp(F2: np.ndarray, rhos: np.ndarray, r: float) -> np.ndarray:
    """Row of a kernel matrix at an off-grid left value (linear between rows),
    zeroed for targets below ``r``."""
    i, w = _interp_index(rhos, r)
    row = (1 - w) * F2[int(i)] + w * F2[int(i) + 1]
    return np.where(rhos >= r, row, 0.0)


def step_ell(ell: MarginalLaw, F2: np.ndarray, drift_vals: np.ndarray, drift_at_atom: float, dt: float,
             rate_at_atom: float | None = None) -> MarginalLaw:
    """One explicit step of the forward equation

    ``d ell/ds = int ell(r*) F2(r*, r) dr* - A(F2)(r) ell(r) - (c ell)_r``

    where ``F2`` is the jump-rate matrix on the momentum grid and ``c`` the drift.
    """
    rhos, d = ell.rhos, ell.d
    n = rhos.size
    lam = ell.density
    omega = np.full(n, d)
    omega[[0, -1]] *= 0.5
    # gain weights are the transpose of the loss quadrature, so jumps move mass
    # without creating or destroying it on the grid
    t_jk = np.triu(np.ones((n, n)))
    t_jk[np.arange(n), np.arange(n)] = 0.5
    t_jk[:, -1] *= 0.5
    W = d * t_jk * omega[:, None] / omega[None, :]
    gain = np.einsum("j,jk,jk->k", lam, F2, W)
    A = row_integral(F2, d)
    loss = A * lam
    # conservative upwind drift flux, no inflow through the ends
    c_face = 0.5 * (drift_vals[1:] + drift_vals[:-1])
    flux = np.where(c_face > 0, c_face * lam[:-1], c_face * lam[1:])
    flux = np.concatenate([[0.0], flux, [0.0]])
    if drift_vals[0] < 0:
        flux[0] = drift_vals[0] * lam[0]
    if drift_vals[-1] > 0:
        flux[-1] = drift_vals[-1] * lam[-1]
    div = (flux[1:] - flux[:-1]) / omega
    new_density = lam + dt * (gain - loss - div)
    atom_w, atom_loc = ell.atom_weight, ell.atom_loc
    if atom_w > 0:
        row = _row_interp(F2, rhos, atom_loc)
        if rate_at_atom is None:
            rate_at_atom = float(np.interp(atom_loc, rhos, A))
        lost = atom_w * -math.expm1(-rate_at_atom * dt)
        norm = float(omega @ row)
        if norm > 0:
            new_density = new_density + lost * row / norm
            atom_w -= lost
        atom_loc = atom_loc + dt * drift_at_atom
    new_density = np.maximum(new_density, 0.0)
    return MarginalLaw(rhos, new_density, ell.t + dt, atom_w, atom_loc, ell.anchor)


# -- solvers -----------------------------------------------------------------------------

@dataclass
class KineticSolution:
    """Stored trajectory: kernel snapshots ``values[k]`` at ``times[k]`` and the
    marginal at each stored time."""

    xs: np.ndarray
    rhos: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (nt, nx, n, n)
    marginals: list
    variant: str = "f"
    s: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.d = float(self.rhos[1] - self.rhos[0])

    def snapshot(self, k: int) -> JumpKernel:
        return JumpKernel(self.xs, self.rhos, self.values[k], float(self.times[k]), self.variant, self.s)

    def kernel_at(self, t: float) -> JumpKernel:
        k, w = _interp_index(self.times, t)
        k = int(k)
        vals = (1 - w) * self.values[k] + w * self.values[min(k + 1, self.times.size - 1)]
        return JumpKernel(self.xs, self.rhos, vals, float(t), self.variant, self.s)

    def marginal_at(self, t: float) -> MarginalLaw:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.marginals[k]

    def __call__(self, x, t, rm, rp):
        return self.kernel_at(float(t)).__call__(x, t, rm, rp)


class KineticSolver:
    """Explicit Euler method of lines for the kernel equation (either variant)
    together with the left-boundary marginal."""

    def __init__(self, model: HamiltonianModel, xs, rhos, t0: float, dt: float,
                 drift: DriftField | None = None, variant: str = "f", s: float | None = None,
                 upwind_c_terms: bool = True):
        self.model = model
        self.xs = np.atleast_1d(np.asarray(xs, float))
        self.rhos = np.asarray(rhos, float)
        self.d = _uniform_step(self.rhos)
        self.t0 = float(t0)
        self.dt = float(dt)
        self.drift = drift if drift is not None else ZeroDrift()
        self.variant = variant
        self.s = s
        self.upwind_c_terms = upwind_c_terms
        if variant == "g" and s is None:
            raise ValueError("g-variant needs the reference time s")
        self._static = (variant == "f" and model.xt_independent and self.drift.is_zero)
        self._coef_cache = None
        self.clipped_mass = 0.0

    def coefficients(self, t: float):
        if self.variant == "g":
            V = vhat_matrix(self.model, self.xs, t, self.rhos, self.s)
            return V, None
        if self._static and self._coef_cache is not None:
            return self._coef_cache
        coef = slab_coefficients(self.model, self.drift, self.xs, t, self.rhos)
        out = (coef.V, coef)
        if self._static:
            self._coef_cache = out
        return out

    def check_cfl(self, V):
        if self.xs.size > 1:
            dx = float(self.xs[1] - self.xs[0])
            c = self.dt * float(np.max(np.abs(V))) / dx
            if c > CFL_MAX:
                raise CFLError(f"CFL number {c:.3f} exceeds {CFL_MAX}", cfl=c)

    def rhs(self, F, t):
        V, coef = self.coefficients(t)
        out = _x_transport(F, V, self.xs) + collision_grid(F, V, self.d)
        if coef is not None and not (self.drift.is_zero and self.model.xt_independent):
            if self.upwind_c_terms:
                cp, cm = _upwind_c_terms(F, coef, self.d)
            else:
                cp = c_plus_grid(F, coef, self.d)
                cm, _ = c_minus_grid(F, coef, self.d)
            out = out + cp + cm
        return np.triu(out), V, coef

    def step(self, F, t):
        dF, V, coef = self.rhs(F, t)
        self.check_cfl(V)
        new = F + self.dt * dF
        neg = new < 0
        if neg.any():
            self.clipped_mass += float(-new[neg].sum()) * self.d * self.d
            new = np.where(neg, 0.0, new)
        return new, V, coef

    def solve(self, F0: np.ndarray, T: float, ell0: MarginalLaw | None = None, anchor_index: int = 0,
              store_every: int = 1) -> KineticSolution:
        nsteps = max(1, int(round((T - self.t0) / self.dt)))
        # stored times must be uniform for interpolation in t
        nsteps = -(-nsteps // store_every) * store_every
        self.dt = (T - self.t0) / nsteps
        F = np.triu(np.asarray(F0, float))
        t = self.t0
        times, snaps, margs = [t], [F.copy()], [ell0]
        ell = ell0
        mass_drift = 0.0
        for k in range(nsteps):
            V, coef = self.coefficients(t)
            if ell is not None:
                F2 = V[anchor_index] * F[anchor_index]
                if coef is not None:
                    dv = coef.beta[anchor_index]
                    atom_drift = float(np.interp(ell.atom_loc, self.rhos, dv))
                else:
                    dv = np.zeros(self.rhos.size)
                    atom_drift = 0.0
                ell = step_ell(ell, F2, dv, atom_drift, self.dt)
                mass_drift = max(mass_drift, abs(ell.mass() - 1.0))
            F, _, _ = self.step(F, t)
            t = self.t0 + (k + 1) * self.dt
            if (k + 1) % store_every == 0 or k == nsteps - 1:
                times.append(t)
                snaps.append(F.copy())
                margs.append(ell)
        if mass_drift > 1e-2:
            warnings.warn(f"marginal mass drift {mass_drift:.3g} exceeds 1e-2", RuntimeWarning)
        if self.clipped_mass > CLIP_WARN:
            warnings.warn(f"clipped negative kernel mass {self.clipped_mass:.3g}", RuntimeWarning)
        diag = {"clipped_mass": self.clipped_mass, "marginal_mass_drift": mass_drift, "steps": nsteps,
                "dt": self.dt}
        return KineticSolution(self.xs, self.rhos, np.array(times), np.array(snaps), margs,
                               self.variant, self.s, diag)


def step_f(f: JumpKernel, drift: DriftField, model: HamiltonianModel, dt: float) -> tuple[JumpKernel, float]:
    """One explicit step of the f-equation; returns the new kernel and the clipped mass."""
    solver = KineticSolver(model, f.xs, f.rhos, f.t, dt, drift, "f")
    new, _, _ = solver.step(f.values, f.t)
    return JumpKernel(f.xs, f.rhos, new, f.t + dt, "f"), solver.clipped_mass


def step_g(g: JumpKernel, model: HamiltonianModel, dt: float) -> tuple[JumpKernel, float]:
    solver = KineticSolver(model, g.xs, g.rhos, g.t, dt, None, "g", g.s)
    new, _, _ = solver.step(g.values, g.t)
    return JumpKernel(g.xs, g.rhos, new, g.t + dt, "g", g.s), solver.clipped_mass


def solve_marginal_x(ell0: MarginalLaw, kernel: JumpKernel, drift: DriftField, t: float, x_end: float,
                     dx: float) -> MarginalLaw:
    """Forward equation in x at fixed t (law of rho(x) along the profile)."""
    x = ell0.anchor
    n = max(1, int(math.ceil((x_end - x) / dx)))
    h = (x_end - x) / n
    ell = MarginalLaw(ell0.rhos, ell0.density.copy(), ell0.t, ell0.atom_weight, ell0.atom_loc, ell0.anchor)
    for _ in range(n):
        F1 = kernel(x, t, kernel.rhos[:, None], kernel.rhos[None, :])
        bv = drift(x, t, kernel.rhos) * np.ones(kernel.rhos.size)
        b_atom = float(drift(x, t, ell.atom_loc))
        ell = step_ell(ell, F1, bv, b_atom, h)
        x += h
    ell.t = ell0.t
    ell.anchor = x_end
    return ell


def kinetic_residual(sol: KineticSolution, model: HamiltonianModel, drift: DriftField | None = None,
                     compact: bool = False) -> np.ndarray:
    """Residual of the kernel equation on interior stored times, by central
    differences in t (and x), with central-difference C-terms.  With
    ``compact=True`` the symmetric two-generator form is used instead."""
    drift = drift if drift is not None else ZeroDrift()
    d = sol.d
    out = []
    for k in range(1, sol.times.size - 1):
        t = sol.times[k]
        F = sol.values[k]
        Ft = (sol.values[k + 1] - sol.values[k - 1]) / (sol.times[k + 1] - sol.times[k - 1])
        if sol.variant == "g":
            V = vhat_matrix(model, sol.xs, t, sol.rhos, sol.s)
            coef = None
        else:
            coef = slab_coefficients(model, drift, sol.xs, t, sol.rhos)
            V = coef.V
        if sol.xs.size > 1:
            G = V * F
            Gx = np.gradient(G, sol.xs, axis=0)
        else:
            Gx = np.zeros_like(F)
        if compact and coef is not None:
            F2 = V * F
            b1 = coef.b
            b2 = coef.beta
            rhs = compact_Q(F, F2, b1, b2, d) - compact_Q(F2, F, b2, b1, d)
            res = Ft - Gx - rhs
        else:
            rhs = Gx + collision_grid(F, V, d)
            if coef is not None:
                rhs = rhs + c_plus_grid(F, coef, d) + c_minus_grid(F, coef, d)[0]
            res = Ft - rhs
        out.append(np.triu(res))
    return np.array(out)
