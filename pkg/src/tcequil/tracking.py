"""Single-agent quadratic tracking with costs on the trading rate.

The agent minimises ``E int (gamma sigma^2/2 (phi - xi)^2 + lambda/2 phidot^2) dt``
for a deterministic volatility and a target ``xi_t = k0(t) + k1(t) W_t``. The
optimal rate is the feedback ``phidot = xibar - c phi`` where ``c`` solves the
Riccati equation ``c' = c^2 - (gamma/lambda) sigma^2`` with ``c(T) = 0``.

Volatility and target coefficients are piecewise constant on a uniform grid
(one value per cell), which also fixes the discretisation of the dynamic
programming oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class TrackingProblem:
    gamma: float
    lambda_cost: float
    horizon: float
    sigma: np.ndarray  # per cell, length n_steps
    k0: np.ndarray
    k1: np.ndarray
    x0: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.lambda_cost > 0 and self.horizon > 0):
            raise ValueError("gamma, lambda_cost and horizon must be positive")
        n = np.asarray(self.sigma).size
        for name in ("sigma", "k0", "k1"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != n:
                raise ValueError(f"{name} must have one value per cell ({n})")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    @classmethod
    def constant(cls, gamma, lambda_cost, sigma, k0=0.0, k1=0.0, x0=0.0,
                 horizon=1.0, n_steps=1000):
        full = np.ones(n_steps)
        return cls(gamma, lambda_cost, horizon, sigma * full, k0 * full, k1 * full, x0)

    @classmethod
    def from_functions(cls, gamma, lambda_cost, sigma_fn, k0_fn, k1_fn, x0=0.0,
                       horizon=1.0, n_steps=1000):
        """Sample the coefficient functions at cell midpoints."""
        mid = (np.arange(n_steps) + 0.5) * horizon / n_steps
        ev = lambda f: np.broadcast_to(np.asarray(f(mid), dtype=float), mid.shape)
        return cls(gamma, lambda_cost, horizon, ev(sigma_fn), ev(k0_fn), ev(k1_fn), x0)

    @property
    def n_steps(self) -> int:
        return self.sigma.size

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def resample(self, n_steps: int) -> "TrackingProblem":
        """Same step functions on a different uniform grid (cell-midpoint lookup)."""
        if n_steps == self.n_steps:
            return self
        mid = (np.arange(n_steps) + 0.5) / n_steps
        idx = np.minimum((mid * self.n_steps).astype(int), self.n_steps - 1)
        return TrackingProblem(self.gamma, self.lambda_cost, self.horizon,
                               self.sigma[idx], self.k0[idx], self.k1[idx], self.x0)


@dataclass(frozen=True, eq=False)
class TrackingSolution:
    problem: TrackingProblem
    c: np.ndarray
    signal_intercept: np.ndarray  # xibar(t, w) = intercept + slope * w on the grid
    signal_slope: np.ndarray

    def xi_bar(self, t, w):
        return signal(self.problem, self.c, t, w, _cache=self)

    def feedback(self, i: int, w, phi):
        return self.signal_intercept[i] + self.signal_slope[i] * w - self.c[i] * phi


def solve_c(problem: TrackingProblem) -> np.ndarray:
    """Backward RK4 for ``c' = c^2 - (gamma/lambda) sigma^2``, ``c(T) = 0``."""
    h = problem.dt
    n = problem.n_steps
    alpha2 = problem.gamma / problem.lambda_cost * problem.sigma**2
    c = np.zeros(n + 1)
    y = 0.0
    for i in range(n - 1, -1, -1):
        s = alpha2[i]
        k1 = y * y - s
        y2 = y - 0.5 * h * k1
        k2 = y2 * y2 - s
        y3 = y - 0.5 * h * k2
        k3 = y3 * y3 - s
        y4 = y - h * k3
        k4 = y4 * y4 - s
        y = y - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(y):
            raise FloatingPointError(f"c blew up at t = {i * h}")
        c[i] = y
    return c


def _signal_coefficients(problem: TrackingProblem, c: np.ndarray):
    """Trapezoid quadrature of ``(gamma/lambda) int_t^T exp(-int_t^s c) sigma^2 k ds``."""
    if c.size != problem.n_steps + 1:
        raise ValueError("c must live on the problem grid")
    h = problem.dt
    scale = problem.gamma / problem.lambda_cost
    decay = np.exp(-0.5 * h * (c[:-1] + c[1:]))
    src0 = scale * problem.sigma**2 * problem.k0
    src1 = scale * problem.sigma**2 * problem.k1
    n = problem.n_steps
    p = np.zeros(n + 1)
    q = np.zeros(n + 1)
    acc0 = acc1 = 0.0
    for i in range(n - 1, -1, -1):
        w = decay[i]
        acc0 = w * acc0 + 0.5 * h * src0[i] * (1 + w)
        acc1 = w * acc1 + 0.5 * h * src1[i] * (1 + w)
        p[i], q[i] = acc0, acc1
    return p, q


def signal(problem: TrackingProblem, c: np.ndarray, t, w, _cache: TrackingSolution | None = None):
    """Signal ``xibar(t, w)``; exact on grid nodes, linearly interpolated between them."""
    if _cache is not None:
        p, q = _cache.signal_intercept, _cache.signal_slope
    else:
        p, q = _signal_coefficients(problem, c)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > problem.horizon):
        raise ValueError(f"t must lie in [0, {problem.horizon}]")
    grid = problem.grid
    return np.interp(t, grid, p) + np.interp(t, grid, q) * np.asarray(w, dtype=float)


def solve(problem: TrackingProblem) -> TrackingSolution:
    c = solve_c(problem)
    p, q = _signal_coefficients(problem, c)
    return TrackingSolution(problem, c, p, q)


def optimal_path(sol: TrackingSolution, W: np.ndarray):
    """Optimal position and rate along Brownian paths sampled on the problem grid.

    ``W`` has shape ``(n_paths, N+1)`` (or ``(N+1,)``). The position follows the
    explicit exponential-integral solution of ``phidot = xibar - c phi``.
    """
    problem = sol.problem
    W = np.asarray(W, dtype=float)
    single = W.ndim == 1
    W = np.atleast_2d(W)
    if W.shape[1] != problem.n_steps + 1:
        raise ValueError(f"path has {W.shape[1]} points, grid has {problem.n_steps + 1}")
    h = problem.dt
    xi = sol.signal_intercept + sol.signal_slope * W
    decay = np.exp(-0.5 * h * (sol.c[:-1] + sol.c[1:]))
    phi = np.empty_like(W)
    phi[:, 0] = problem.x0
    for i in range(problem.n_steps):
        phi[:, i + 1] = decay[i] * phi[:, i] + 0.5 * h * (decay[i] * xi[:, i] + xi[:, i + 1])
    rate = xi - sol.c * phi
    if single:
        return phi[0], rate[0]
    return phi, rate


def pathwise_objective(problem: TrackingProblem, W, phi, rate):
    """Left-point Riemann sum of the tracking objective along each path."""
    W = np.atleast_2d(W)
    phi = np.atleast_2d(phi)
    rate = np.atleast_2d(rate)
    target = problem.k0 + problem.k1 * W[:, :-1]
    running = (problem.gamma * problem.sigma**2 / 2 * (phi[:, :-1] - target) ** 2
               + problem.lambda_cost / 2 * rate[:, :-1] ** 2)
    return running.sum(axis=1) * problem.dt


# --- discrete dynamic programming oracle -------------------------------------------

@dataclass(frozen=True, eq=False)
class DPResult:
    """Quadratic value function ``V_k = P/2 phi^2 + phi (q + r w) + M/2 w^2 + n w + m``
    and the feedback ``u_k = alpha + beta w + kappa phi``."""

    problem: TrackingProblem
    P: np.ndarray
    q: np.ndarray
    r: np.ndarray
    M: np.ndarray
    n: np.ndarray
    m: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray

    def value(self, k: int, phi, w):
        return (0.5 * self.P[k] * phi**2 + phi * (self.q[k] + self.r[k] * w)
                + 0.5 * self.M[k] * w**2 + self.n[k] * w + self.m[k])

    def control(self, k: int, phi, w):
        return self.alpha[k] + self.beta[k] * w + self.kappa[k] * phi

    def path(self, W):
        """Positions and rates along Brownian paths under the DP feedback."""
        W = np.atleast_2d(np.asarray(W, dtype=float))
        pr = self.problem
        phi = np.empty_like(W)
        u = np.zeros_like(W)
        phi[:, 0] = pr.x0
        for k in range(pr.n_steps):
            u[:, k] = self.control(k, phi[:, k], W[:, k])
            phi[:, k + 1] = phi[:, k] + u[:, k] * pr.dt
        return phi, u


def dp_oracle(problem: TrackingProblem, n_steps: int | None = None) -> DPResult:
    """Exact backward recursion for the discrete-time LQ tracking problem.

    Dynamics ``phi_{k+1} = phi_k + u_k dt``, ``W_{k+1} = W_k + sqrt(dt) Z`` and
    running cost ``(gamma sigma^2/2 (phi - xi)^2 + lambda/2 u^2) dt``. The
    expectation over ``Z`` uses its exact first two moments.
    """
    if n_steps is not None:
        if n_steps < 4:
            raise ValueError("n_steps must be at least 4")
        problem = problem.resample(n_steps)
    N = problem.n_steps
    dt = problem.dt
    lam = problem.lambda_cost
    arrays = {name: np.zeros(N + 1) for name in ("P", "q", "r", "M", "n", "m")}
    gains = {name: np.zeros(N) for name in ("alpha", "beta", "kappa")}
    P = q = r = M = n = m = 0.0
    for k in range(N - 1, -1, -1):
        a = problem.gamma * problem.sigma[k] ** 2 * dt
        k0, k1 = problem.k0[k], problem.k1[k]
        g = lam + P * dt
        gains["kappa"][k] = -P / g
        gains["alpha"][k] = -q / g
        gains["beta"][k] = -r / g
        P, q, r, M, n, m = (
            a + P - dt * P * P / g,
            -a * k0 + q - dt * P * q / g,
            -a * k1 + r - dt * P * r / g,
            a * k1 * k1 + M - dt * r * r / g,
            a * k0 * k1 + n - dt * q * r / g,
            0.5 * a * k0 * k0 + m + 0.5 * M * dt - 0.5 * dt * q * q / g,
        )
        for name, val in zip(("P", "q", "r", "M", "n", "m"), (P, q, r, M, n, m)):
            arrays[name][k] = val
    return DPResult(problem, **arrays, **gains)


def expected_objective(problem: TrackingProblem, intercept, slope, gain, shift=None):
    """Exact expected cost of the linear feedback ``u_k = intercept + slope w + gain phi + shift``.

    Propagates the second-moment matrix of ``(phi, W, 1)`` through the
    discrete dynamics, so no sampling error enters.
    """
    N = problem.n_steps
    dt = problem.dt
    shift = np.zeros(N) if shift is None else np.asarray(shift, dtype=float)
    mom = np.zeros((3, 3))
    mom[0, 0] = problem.x0**2
    mom[0, 2] = mom[2, 0] = problem.x0
    mom[2, 2] = 1.0
    noise = np.zeros((3, 3))
    noise[1, 1] = dt
    total = 0.0
    for k in range(N):
        ctrl = np.array([gain[k], slope[k], intercept[k] + shift[k]])
        dev = np.array([1.0, -problem.k1[k], -problem.k0[k]])
        total += dt * (problem.gamma * problem.sigma[k] ** 2 / 2 * dev @ mom @ dev
                       + problem.lambda_cost / 2 * ctrl @ mom @ ctrl)
        G = np.eye(3)
        G[0] += dt * ctrl
        mom = G @ mom @ G.T + noise
    return float(total)


def continuous_feedback(sol: TrackingSolution):
    """``(intercept, slope, gain)`` per step of the continuous-time feedback law."""
    return sol.signal_intercept[:-1], sol.signal_slope[:-1], -sol.c[:-1]
