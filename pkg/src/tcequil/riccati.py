"""Coupled backward Riccati system for the frictional equilibrium.

The equilibrium price and trading rate are affine in the Brownian state ``W``
and agent 1's position ``phi``::

    S_t    = Sbar_t + A(t) + B(t) W_t + C(t) phi_t
    phidot = D(t) + E(t) W_t + F(t) phi_t

with all six coefficients vanishing at the horizon. Two independent solvers are
provided: a joint RK4 pass over the six equations, and the Picard scheme that
iterates only on the volatility ``a + B`` and rebuilds ``(C, E, F)`` from it in
each step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .params import ModelParams, derive

COEFFS = ("A", "B", "C", "D", "E", "F")
DEFAULT_STEPS = 4096


class ExistenceError(RuntimeError):
    """The parameter set violates the sufficient condition for existence."""


class RiccatiBlowUp(RuntimeError):
    """Non-finite state encountered while integrating backward."""

    def __init__(self, t: float):
        super().__init__(f"Riccati system blew up at t = {t:.17g}")
        self.t = t


class PicardNotConverged(RuntimeError):
    def __init__(self, gaps):
        self.gaps = list(gaps)
        last = ", ".join(f"{g:.3e}" for g in self.gaps[-2:])
        super().__init__(f"Picard iteration did not converge; last sup-norm gaps: {last}")


@dataclass(frozen=True)
class ExistenceReport:
    bound1: float
    bound2: float
    eps_abs: float
    satisfied: bool
    margin: float

    def to_dict(self) -> dict:
        return {
            "bound1": self.bound1,
            "bound2": self.bound2,
            "eps_abs": self.eps_abs,
            "satisfied": self.satisfied,
            "margin": self.margin,
        }


def check_existence(params: ModelParams) -> ExistenceReport:
    p = params
    lam, a, T, beta = p.lambda_cost, p.a, p.horizon, p.beta
    g = p.gamma1 + p.gamma2
    bound1 = 16 * lam / (27 * a**2 * T**3 * g + 48 * T * beta * lam)
    bound2 = 32 * lam**2 / (81 * a**4 * T**5 * g**2
                            + 72 * a**2 * T**3 * beta * g * lam
                            + 32 * T * beta * lam**2)
    eps_abs = abs(p.gamma1 - p.gamma2)
    bound = min(bound1, bound2)
    return ExistenceReport(bound1, bound2, eps_abs, eps_abs < bound, bound - eps_abs)


def contraction_constant(params: ModelParams) -> float:
    """Lipschitz factor of the Picard map on ``a + B`` over the ball of radius 3a/2."""
    d = derive(params)
    R = 1.5 * params.a
    T = params.horizon
    q = d.gamma_hat * R**2 * T**2 / params.lambda_cost
    e = abs(d.eps)
    return T * (e * params.beta + 2 * e * params.beta * q * (1 + q))


def _constants(params: ModelParams):
    d = derive(params)
    p = params
    return dict(
        a=p.a,
        half_eps=d.eps / 2,
        beta=p.beta,
        k=d.gamma_hat / p.lambda_cost,
        mu_bar=d.gamma_bar * p.supply * p.a**2,
        half_g2s=p.gamma2 * p.supply / 2,
        d_force=p.gamma2 * p.supply / (2 * p.lambda_cost),
    )


def rhs(params: ModelParams, y):
    """Time derivative of ``(A, B, C, D, E, F)``; works on scalars or arrays."""
    c = _constants(params)
    A, B, C, D, E, F = y
    vol = c["a"] + B
    vol2 = vol * vol
    return (
        -c["mu_bar"] + c["half_g2s"] * vol2 - C * D,
        c["half_eps"] * c["beta"] * vol - C * E,
        c["half_eps"] * vol2 - C * F,
        -c["d_force"] * vol2 - F * D,
        c["k"] * c["beta"] * vol - E * F,
        c["k"] * vol2 - F * F,
    )


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    params: ModelParams
    grid: np.ndarray
    coeffs: np.ndarray  # shape (6, N+1), rows ordered as COEFFS
    step: float
    method: str
    picard_iters: int = 0
    picard_gaps: tuple = ()
    residual: float = field(default=math.nan)
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.grid.setflags(write=False)
        self.coeffs.setflags(write=False)
        if math.isnan(self.residual):
            object.__setattr__(self, "residual", residual_norm(self))

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    def __getitem__(self, which: str) -> np.ndarray:
        return self.coeffs[COEFFS.index(which)]

    def derivatives(self) -> np.ndarray:
        """ODE right-hand side evaluated on the grid, shape (6, N+1)."""
        return np.array(rhs(self.params, self.coeffs))

    def vol(self) -> np.ndarray:
        return self.params.a + self["B"]

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.grid, self.coeffs.T])
        np.savetxt(path, data, delimiter=",", header="t," + ",".join(COEFFS),
                   comments="", fmt="%.17g")

    def summary(self) -> dict:
        return {
            "method": self.method,
            "n_steps": self.n_steps,
            "step": self.step,
            "residual": self.residual,
            "picard_iters": self.picard_iters,
            "picard_gaps": list(self.picard_gaps),
            "at_zero": {k: float(self[k][0]) for k in COEFFS},
        }


def _uniform_grid(T: float, n_steps: int) -> np.ndarray:
    grid = np.linspace(0.0, T, n_steps + 1)
    grid[-1] = T
    return grid


def _require_existence(params: ModelParams, force: bool):
    report = check_existence(params)
    if report.satisfied:
        return
    msg = (f"|gamma1 - gamma2| = {report.eps_abs:.6g} is not below the existence bound "
           f"min({report.bound1:.6g}, {report.bound2:.6g})")
    if not force:
        raise ExistenceError(msg)
    warnings.warn(msg + "; proceeding anyway", RuntimeWarning, stacklevel=3)


def solve_direct(params: ModelParams, n_steps: int = DEFAULT_STEPS, force: bool = False) -> RiccatiSolution:
    """Integrate the six coupled Riccati equations backward from ``T`` with RK4."""
    if n_steps < 16:
        raise ValueError("n_steps must be at least 16")
    _require_existence(params, force)
    grid = _uniform_grid(params.horizon, n_steps)
    h = params.horizon / n_steps
    f = _scalar_rhs(params)

    out = np.zeros((n_steps + 1, 6))
    y = (0.0,) * 6
    for i in range(n_steps, 0, -1):
        k1 = f(y)
        k2 = f(tuple(yj - 0.5 * h * kj for yj, kj in zip(y, k1)))
        k3 = f(tuple(yj - 0.5 * h * kj for yj, kj in zip(y, k2)))
        k4 = f(tuple(yj - h * kj for yj, kj in zip(y, k3)))
        y = tuple(yj - h / 6 * (a + 2 * b + 2 * c + d)
                  for yj, a, b, c, d in zip(y, k1, k2, k3, k4))
        if not all(math.isfinite(v) for v in y):
            raise RiccatiBlowUp(float(grid[i - 1]))
        out[i - 1] = y
    return RiccatiSolution(params, grid, np.ascontiguousarray(out.T), h, "direct")


def _scalar_rhs(params: ModelParams):
    c = _constants(params)
    a, he, beta, k = c["a"], c["half_eps"], c["beta"], c["k"]
    mu_bar, hg, df = c["mu_bar"], c["half_g2s"], c["d_force"]

    def f(y):
        A, B, C, D, E, F = y
        vol = a + B
        vol2 = vol * vol
        return (-mu_bar + hg * vol2 - C * D,
                he * beta * vol - C * E,
                he * vol2 - C * F,
                -df * vol2 - F * D,
                k * beta * vol - E * F,
                k * vol2 - F * F)

    return f


# --- Picard scheme -----------------------------------------------------------

def _midpoints(y: np.ndarray, dy: np.ndarray, h: float) -> np.ndarray:
    """Cubic Hermite value at cell midpoints from node values and slopes."""
    return 0.5 * (y[:-1] + y[1:]) + h / 8 * (dy[:-1] - dy[1:])


def _solve_F(vol: np.ndarray, vol_mid: np.ndarray, k: float, h: float) -> np.ndarray:
    n = vol.size - 1
    F = np.zeros(n + 1)
    f = 0.0
    src = k * vol * vol
    src_mid = k * vol_mid * vol_mid
    for i in range(n, 0, -1):
        s1, sm, s0 = src[i], src_mid[i - 1], src[i - 1]
        k1 = s1 - f * f
        y2 = f - 0.5 * h * k1
        k2 = sm - y2 * y2
        y3 = f - 0.5 * h * k2
        k3 = sm - y3 * y3
        y4 = f - h * k3
        k4 = s0 - y4 * y4
        f = f - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(f):
            raise RiccatiBlowUp(i * h - h)
        F[i - 1] = f
    return F


def _discounted_tail(F: np.ndarray, src: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid approximation of ``int_t^T src(s) exp(int_t^s F) ds`` on the grid."""
    n = F.size - 1
    weights = np.exp(0.5 * h * (F[:-1] + F[1:]))
    out = np.zeros(n + 1)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        w = weights[i]
        acc = w * acc + 0.5 * h * (src[i] + w * src[i + 1])
        out[i] = acc
    return out


def _tail_integral(f: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid ``int_t^T f`` for every grid node."""
    cells = 0.5 * h * (f[:-1] + f[1:])
    out = np.zeros_like(f)
    out[:-1] = np.cumsum(cells[::-1])[::-1]
    return out


def _inner_system(vol, dvol, consts, h):
    """Solve for ``(C, E, F)`` given the volatility function ``a + B`` on the grid."""
    k, beta, half_eps = consts["k"], consts["beta"], consts["half_eps"]
    F = _solve_F(vol, _midpoints(vol, dvol, h), k, h)
    E = -k * beta * _discounted_tail(F, vol, h)
    C = -half_eps * _discounted_tail(F, vol * vol, h)
    return C, E, F


def solve_picard(params: ModelParams, n_steps: int = DEFAULT_STEPS, tol: float = 1e-10,
                 max_iter: int = 200, force: bool = False) -> RiccatiSolution:
    """Picard iteration on the equilibrium volatility ``a + B``.

    Each step rebuilds ``(C, E, F)`` for the current volatility (``F`` by RK4,
    ``E`` and ``C`` from their explicit discounted integrals) and updates the
    volatility from its linear ODE. ``A`` and ``D`` are integrated once after
    convergence. ``picard_iters`` counts the inner ``(C, E, F)`` solves.
    """
    if n_steps < 16:
        raise ValueError("n_steps must be at least 16")
    _require_existence(params, force)
    consts = _constants(params)
    a, half_eps, beta = params.a, consts["half_eps"], params.beta
    h = params.horizon / n_steps
    grid = _uniform_grid(params.horizon, n_steps)

    vol = np.full(n_steps + 1, a)
    dvol = np.zeros(n_steps + 1)
    gaps = []
    solves = 0
    while True:
        C, E, F = _inner_system(vol, dvol, consts, h)
        solves += 1
        forcing = half_eps * beta * vol - E * C
        new_vol = a - _tail_integral(forcing, h)
        gap = float(np.max(np.abs(new_vol - vol)))
        gaps.append(gap)
        vol, dvol = new_vol, forcing
        if gap < tol:
            break
        if len(gaps) >= max_iter:
            raise PicardNotConverged(gaps)

    C, E, F = _inner_system(vol, dvol, consts, h)
    solves += 1
    B = vol - a
    A, D = _solve_AD(params, B, C, E, F, h)
    coeffs = np.vstack([A, B, C, D, E, F])
    return RiccatiSolution(params, grid, coeffs, h, "picard", solves, tuple(gaps))


def _solve_AD(params, B, C, E, F, h):
    """RK4 for ``A`` and ``D`` given converged ``B, C, E, F`` on the grid."""
    zeros = np.zeros_like(B)
    slopes = rhs(params, (zeros, B, C, zeros, E, F))  # B', C', F' do not involve A, D
    c = _constants(params)
    a, mu_bar, hg, df = c["a"], c["mu_bar"], c["half_g2s"], c["d_force"]
    Bm = _midpoints(B, slopes[1], h)
    Cm = _midpoints(C, slopes[2], h)
    Fm = _midpoints(F, slopes[5], h)
    n = B.size - 1
    A = np.zeros(n + 1)
    D = np.zeros(n + 1)

    def f(yA, yD, b, cc, ff):
        v2 = (a + b) ** 2
        return -mu_bar + hg * v2 - cc * yD, -df * v2 - ff * yD

    yA = yD = 0.0
    for i in range(n, 0, -1):
        end = (B[i], C[i], F[i])
        mid = (Bm[i - 1], Cm[i - 1], Fm[i - 1])
        start = (B[i - 1], C[i - 1], F[i - 1])
        k1 = f(yA, yD, *end)
        k2 = f(yA - 0.5 * h * k1[0], yD - 0.5 * h * k1[1], *mid)
        k3 = f(yA - 0.5 * h * k2[0], yD - 0.5 * h * k2[1], *mid)
        k4 = f(yA - h * k3[0], yD - h * k3[1], *start)
        yA -= h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        yD -= h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        A[i - 1], D[i - 1] = yA, yD
    return A, D


# --- evaluation and diagnostics ------------------------------------------------

def eval_coeff(sol: RiccatiSolution, which: str, t):
    """Cubic Hermite interpolation using the ODE right-hand side as node slopes."""
    if which not in COEFFS:
        raise ValueError(f"unknown coefficient {which!r}")
    t_arr = np.asarray(t, dtype=float)
    T = sol.params.horizon
    if np.any(t_arr < 0) or np.any(t_arr > T):
        raise ValueError(f"t must lie in [0, {T}]")
    idx = COEFFS.index(which)
    spline = sol._splines.get(which)
    if spline is None:
        spline = CubicHermiteSpline(sol.grid, sol.coeffs[idx], sol.derivatives()[idx])
        sol._splines[which] = spline
    values = np.asarray(spline(t_arr), dtype=float)
    # snap exact node hits to stored values
    node = np.rint(t_arr / sol.step).astype(int)
    node = np.clip(node, 0, sol.n_steps)
    on_node = sol.grid[node] == t_arr
    values = np.where(on_node, sol.coeffs[idx][node], values)
    return values[()] if values.ndim == 0 else values


def residual_norm(sol: RiccatiSolution) -> float:
    """Max over interior nodes and all six equations of |centered difference - RHS|."""
    y = sol.coeffs
    if y.shape[1] < 3:
        return 0.0
    centered = (y[:, 2:] - y[:, :-2]) / (2 * sol.step)
    f = np.array(rhs(sol.params, y[:, 1:-1]))
    return float(np.max(np.abs(centered - f)))


def fd_derivatives(sol: RiccatiSolution) -> np.ndarray:
    """Fourth-order finite-difference time derivatives of the stored coefficients.

    Independent of the ODE right-hand side, so it exposes coefficient sets that
    do not actually solve the system.
    """
    y = sol.coeffs
    h = sol.step
    n = y.shape[1]
    if n < 5:
        raise ValueError("need at least 5 grid nodes")
    d = np.empty_like(y)
    d[:, 2:-2] = (y[:, :-4] - 8 * y[:, 1:-3] + 8 * y[:, 3:-1] - y[:, 4:]) / (12 * h)
    # one-sided fourth-order stencils at the ends
    fwd = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    d[:, 0] = y[:, :5] @ fwd
    d[:, 1] = y[:, :5] @ (np.array([-3, -10, 18, -6, 1]) / (12 * h))
    d[:, -1] = -(y[:, -1:-6:-1] @ fwd)
    d[:, -2] = -(y[:, -1:-6:-1] @ (np.array([-3, -10, 18, -6, 1]) / (12 * h)))
    return d


def replace_coeffs(sol: RiccatiSolution, coeffs: np.ndarray, method: str | None = None) -> RiccatiSolution:
    """New solution object with different coefficient arrays on the same grid."""
    return RiccatiSolution(sol.params, sol.grid.copy(), np.array(coeffs, dtype=float),
                           sol.step, method or sol.method)


def sup_gap(s1: RiccatiSolution, s2: RiccatiSolution) -> float:
    if s1.grid.shape != s2.grid.shape:
        raise ValueError("solutions live on different grids")
    return float(np.max(np.abs(s1.coeffs - s2.coeffs)))
