"""Inverse tail distribution F of node depths.

F(t) = 1 / P(H > t) where H is the common node depth of the coalescent
representation of the reduced tree.  For a general birth/death model F is the
unique solution of the linear Volterra integro-differential equation

    F'(t) = lambda(T - t) * ( F(t) - int_0^t F(s) g(T - t, T - s) ds ),

with F(0) = 1, where g(t, s) is the density of the death time s of a particle
born at time t.  Constant-rate models admit a closed form, used both as a fast
path and as the solver's validation oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, SolverError
from .model import RateModel

__all__ = [
    "InverseTail",
    "ClosedFormTail",
    "GridTail",
    "closed_form_F",
    "closed_form_dF",
    "death_density_g",
    "solve_F",
    "node_depth_density_f",
    "survival_a",
    "invert_tail",
]

# Relative scale below which r = lambda - mu is treated as exactly 0.
_R_SWITCH = 1e-12
# Quadratic series kicks in when |r t| is below this, to dodge cancellation
# in (e^{rt} - 1) / r right at the branch switch.
_SERIES_SWITCH = 1e-8


def closed_form_F(lam: float, mu: float, t):
    """Constant-rate inverse tail: 1 + (lam/r)(e^{rt} - 1), or 1 + lam t at r=0."""
    if lam < 0 or mu < 0:
        raise DomainError("rates must be >= 0")
    t = np.asarray(t, dtype=float)
    r = lam - mu
    scale = max(lam, mu, 1.0)
    if abs(r) < _R_SWITCH * scale:
        out = 1.0 + lam * t
    else:
        rt = r * t
        small = np.abs(rt) < _SERIES_SWITCH
        out = np.where(
            small,
            1.0 + lam * t + lam * r * t * t / 2.0,
            1.0 + (lam / r) * np.expm1(rt),
        )
    return out if out.ndim else float(out)


def closed_form_dF(lam: float, mu: float, t):
    """F'(t) = lam * e^{rt} in both branches."""
    t = np.asarray(t, dtype=float)
    out = lam * np.exp((lam - mu) * t)
    return out if out.ndim else float(out)


class InverseTail:
    """Common interface: a nondecreasing F on [0, T] with F(0) = 1."""

    T: float

    def value(self, t):
        raise NotImplementedError

    def deriv(self, t):
        raise NotImplementedError


@dataclass(frozen=True)
class ClosedFormTail(InverseTail):
    """Constant-rate F, optionally Bernoulli-thinned: F_y = 1 - y + y F.

    Thinning composes multiplicatively in y, so repeated thinning stays in
    this representation.
    """

    lam: float
    mu: float
    T: float
    y: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.y <= 1.0):
            raise DomainError("y must lie in (0, 1]")
        if not (self.T > 0):
            raise DomainError("T must be > 0")

    def value(self, t):
        base = closed_form_F(self.lam, self.mu, t)
        return (1.0 - self.y) + self.y * base

    def deriv(self, t):
        return self.y * closed_form_dF(self.lam, self.mu, t)

    def thinned(self, y: float) -> "ClosedFormTail":
        return ClosedFormTail(self.lam, self.mu, self.T, self.y * y)


@dataclass(frozen=True)
class GridTail(InverseTail):
    """Grid-backed F with shape-preserving (monotone cubic) interpolation."""

    ts: tuple
    values: tuple
    T: float

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if ts[0] != 0.0 or abs(ts[-1] - self.T) > 1e-12 * max(self.T, 1.0):
            raise DomainError("grid must span [0, T]")
        if abs(vals[0] - 1.0) > 1e-12:
            raise SolverError("F(0) must be 1")
        vals = vals.copy()
        vals[0] = 1.0
        # Tiny decreases are numerical noise and get clamped; anything larger
        # means the tail 1/F is not a survival function and is a hard failure.
        drops = np.maximum(vals[:-1] - vals[1:], 0.0)
        rel = drops / np.maximum(vals[:-1], 1.0)
        if np.any(rel > 1e-9):
            raise SolverError(
                f"F decreases by {rel.max():.3g} relative; solver output invalid"
            )
        vals = np.maximum.accumulate(vals)
        object.__setattr__(self, "ts", tuple(ts))
        object.__setattr__(self, "values", tuple(vals))
        interp = PchipInterpolator(ts, vals, extrapolate=False)
        object.__setattr__(self, "_interp", interp)
        object.__setattr__(self, "_dinterp", interp.derivative())

    def value(self, t):
        out = self._interp(np.asarray(t, dtype=float))
        out = np.asarray(out)
        return out if out.ndim else float(out)

    def deriv(self, t):
        out = self._dinterp(np.asarray(t, dtype=float))
        out = np.asarray(out)
        return out if out.ndim else float(out)

    def thinned(self, y: float) -> "GridTail":
        vals = 1.0 - y + y * np.asarray(self.values)
        return GridTail(self.ts, tuple(vals), self.T)


def death_density_g(model: RateModel, t: float, s):
    """Density at s of the death time of a particle born at time t.

    g(t, s) = mu(s, s - t) * exp(-int_t^s mu(u, u - t) du); the inner
    integral is exact over the piecewise-constant pieces.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < t):
        raise DomainError("death time must be >= birth time")
    haz = model.death_rate(s_arr, s_arr - t)
    cum = model.death_cumhazard(t, s_arr)
    out = np.asarray(haz * np.exp(-cum))
    return out if out.ndim else float(out)


def solve_F(model: RateModel, step: float) -> GridTail:
    """Solve the Volterra equation for F on [0, T] with grid spacing ``step``.

    Product-integration scheme: trapezoidal quadrature for the memory
    integral, explicit predictor plus one trapezoidal corrector pass per
    step (second order).  A corrector move larger than 1e-3 relative is
    diagnosed as the step being too large.
    """
    if not (step > 0):
        raise DomainError("step must be > 0")
    T = model.T
    n = round(T / step)
    if n < 2 or abs(n * step - T) > 1e-9 * T:
        raise DomainError("step must divide T")
    ts = np.linspace(0.0, T, n + 1)
    # lambda(T - t) is left-continuous in t at breakpoints of lambda.  The
    # left endpoint of each step must use the in-cell limit (phys time just
    # below T - t_i), otherwise the scheme degrades to first order there.
    lam_rev = np.asarray(model.lam(T - ts))  # right endpoint of a cell
    lam_rev_cell = np.asarray(model.lam(T - ts, side="left"))  # left endpoint
    F = np.empty(n + 1)
    F[0] = 1.0

    # Memory quadrature nodes are cell midpoints: the kernel g(T-t, T-s) jumps
    # in s wherever T-s crosses a mu breakpoint, and those jumps land on grid
    # nodes when breakpoints are multiples of the step, so midpoint product
    # integration keeps second order where node-based trapezoid would not.
    mids = 0.5 * (ts[:-1] + ts[1:])

    def g_row(i: int) -> np.ndarray:
        # g(T - t_i, T - mid_j) for j = 0..i-1; birth at T - t_i.
        birth = T - ts[i]
        s_phys = T - mids[:i]
        haz = np.asarray(model.death_rate(s_phys, s_phys - birth))
        cum = np.asarray(model.death_cumhazard(birth, s_phys))
        return haz * np.exp(-cum)

    def memory(i: int, row: np.ndarray, Fvals: np.ndarray) -> float:
        # Midpoint rule for int_0^{t_i} F(s) g(T - t_i, T - s) ds, with F at
        # midpoints taken as the average of the bracketing node values.
        if i == 0:
            return 0.0
        f_mid = 0.5 * (Fvals[:i] + Fvals[1 : i + 1])
        return step * float(f_mid @ row)

    row_i = g_row(0)
    worst_move = 0.0
    for i in range(n):
        rhs_i = lam_rev_cell[i] * (F[i] - memory(i, row_i, F))
        pred = F[i] + step * rhs_i
        row_next = g_row(i + 1)
        F[i + 1] = pred
        rhs_next = lam_rev[i + 1] * (pred - memory(i + 1, row_next, F))
        F[i + 1] = F[i] + 0.5 * step * (rhs_i + rhs_next)
        move = abs(F[i + 1] - pred) / max(abs(pred), 1.0)
        worst_move = max(worst_move, move)
        row_i = row_next
    if worst_move > 1e-3:
        raise SolverError(
            f"step {step} too large: corrector moved values by {worst_move:.3g} relative"
        )
    return GridTail(tuple(ts), tuple(F), T)


def node_depth_density_f(F: InverseTail, t):
    """Common node-depth density f = F' / F^2."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > F.T * (1 + 1e-12)):
        raise DomainError("t outside [0, T]")
    v = np.asarray(F.value(t_arr))
    out = np.asarray(F.deriv(t_arr)) / (v * v)
    return out if out.ndim else float(out)


def survival_a(F: InverseTail) -> float:
    """a = P(H < T) = 1 - 1/F(T)."""
    return 1.0 - 1.0 / float(F.value(F.T))


def invert_tail(F: InverseTail, targets, tol: float = 1e-12):
    """Solve F(t) = target for each target in [1, F(T)], by bisection.

    Vectorized; ~50 halvings bring the bracket below ``tol`` in t.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    lo = np.zeros(targets.shape)
    hi = np.full(targets.shape, float(F.T))
    n_iter = max(1, math.ceil(math.log2(max(F.T / tol, 2.0))))
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        too_low = np.asarray(F.value(mid)) < targets
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    return 0.5 * (lo + hi)
