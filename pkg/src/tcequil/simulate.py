"""Monte Carlo paths of the frictional equilibrium and pathwise diagnostics."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import AsymptoticKit
from .frictionless import bachelier_price, frictionless_position
from .params import ModelParams, derive
from .riccati import RiccatiSolution, _midpoints, fd_derivatives

_SEED_MASK = (1 << 64) - 1
# Lower bound on the regression standard error. At eps = 0 the trading rate is an
# exact linear function of the deviation and the sampled SE collapses to roundoff.
SE_FLOOR = 1e-8


@dataclass(frozen=True)
class PathConfig:
    n_paths: int = 10_000
    n_steps: int = 256
    seed: int = 0
    record_stride: int = 1
    chunk_size: int = 2048
    workers: int = 1

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.record_stride < 1 or self.chunk_size < 1 or self.workers < 1:
            raise ValueError("record_stride, chunk_size and workers must be positive")


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    params: ModelParams
    cfg: PathConfig
    t: np.ndarray
    grid_index: np.ndarray  # positions of t on the Riccati grid
    W: np.ndarray  # (n_paths, n_steps + 1)
    phi1: np.ndarray
    phidot1: np.ndarray
    S: np.ndarray
    mu: np.ndarray
    premium: np.ndarray
    summary: dict = field(default_factory=dict)

    @property
    def phi2(self) -> np.ndarray:
        return self.params.supply - self.phi1

    @property
    def phidot2(self) -> np.ndarray:
        return -self.phidot1

    @property
    def S_bar(self) -> np.ndarray:
        return bachelier_price(self.params, self.t, self.W)

    @property
    def phi_bar1(self) -> np.ndarray:
        return frictionless_position(self.params, 1, self.t, self.W)

    @property
    def mu_bar(self) -> float:
        p = self.params
        return derive(p).gamma_bar * p.supply * p.a**2

    def to_csv(self, path) -> None:
        stride = self.cfg.record_stride
        cols = slice(None, None, stride)
        t = self.t[cols]
        n_paths, n_t = self.W.shape[0], t.size
        pid = np.repeat(np.arange(n_paths), n_t)
        block = np.column_stack([
            pid, np.tile(t, n_paths),
            self.W[:, cols].ravel(), self.phi1[:, cols].ravel(),
            self.phidot1[:, cols].ravel(), self.S[:, cols].ravel(),
            self.mu[:, cols].ravel(), self.premium[:, cols].ravel(),
        ])
        np.savetxt(path, block, delimiter=",", comments="",
                   header="path_id,t,W,phi1,phidot1,S,mu,premium",
                   fmt=["%d"] + ["%.17g"] * 7)


def _path_normals(seed: int, path_ids: np.ndarray, n: int) -> np.ndarray:
    """Standard normals from a counter-based stream keyed by (seed, path id)."""
    out = np.empty((path_ids.size, n))
    key0 = seed & _SEED_MASK
    for row, pid in enumerate(path_ids):
        bitgen = np.random.Philox(key=np.array([key0, int(pid)], dtype=np.uint64))
        out[row] = np.random.Generator(bitgen).standard_normal(n)
    return out


def _step_weights(sol: RiccatiSolution, stride: int):
    """Per simulation step: decay factor and forcing weights.

    Over ``[t_k, t_{k+1}]`` the position obeys
    ``phi_{k+1} = decay_k phi_k + c0_k + c1_k W_k + c2_k W_{k+1}``, with the
    Brownian path bridged linearly inside the step and the integrals taken by
    the trapezoid rule on the Riccati sub-grid.
    """
    h = sol.step
    D, E, F = sol["D"], sol["E"], sol["F"]
    n_sim = sol.n_steps // stride
    decay = np.empty(n_sim)
    c0 = np.empty(n_sim)
    c1 = np.empty(n_sim)
    c2 = np.empty(n_sim)
    theta = np.arange(stride + 1) / stride
    quad = np.full(stride + 1, h)
    quad[[0, -1]] = h / 2
    for k in range(n_sim):
        j = slice(k * stride, (k + 1) * stride + 1)
        Fk = F[j]
        # int_u^{t_{k+1}} F for every sub-node u
        tail = np.zeros(stride + 1)
        tail[:-1] = np.cumsum((0.5 * h * (Fk[:-1] + Fk[1:]))[::-1])[::-1]
        wts = quad * np.exp(tail)
        decay[k] = math.exp(tail[0])
        c0[k] = np.dot(wts, D[j])
        c1[k] = np.dot(wts, E[j] * (1 - theta))
        c2[k] = np.dot(wts, E[j] * theta)
    return decay, c0, c1, c2


def _simulate_chunk(sol, params, cfg, stride, weights, path_ids):
    n = cfg.n_steps
    dt = params.horizon / n
    z = _path_normals(cfg.seed, path_ids, n)
    W = np.zeros((path_ids.size, n + 1))
    W[:, 1:] = np.cumsum(math.sqrt(dt) * z, axis=1)
    decay, c0, c1, c2 = weights
    phi = np.empty_like(W)
    phi[:, 0] = params.x1
    for k in range(n):
        phi[:, k + 1] = decay[k] * phi[:, k] + c0[k] + c1[k] * W[:, k] + c2[k] * W[:, k + 1]
    idx = np.arange(n + 1) * stride
    A, B, C = sol["A"][idx], sol["B"][idx], sol["C"][idx]
    D, E, F = sol["D"][idx], sol["E"][idx], sol["F"][idx]
    t = sol.grid[idx]
    phidot = D + E * W + F * phi
    S = bachelier_price(params, t, W) + A + B * W + C * phi
    d = derive(params)
    vol = params.a + B
    mu = vol * (d.eps / 2 * params.beta * W + vol * (params.gamma2 * params.supply / 2 + d.eps / 2 * phi))
    premium = mu - d.gamma_bar * params.supply * params.a**2
    return W, phi, phidot, S, mu, premium


def simulate(sol: RiccatiSolution, params: ModelParams, cfg: PathConfig) -> PathEnsemble:
    """Simulate equilibrium paths driven by the Riccati coefficients in ``sol``."""
    if sol.params != params:
        raise ValueError("solution was computed for different parameters")
    if sol.n_steps % cfg.n_steps:
        raise ValueError(f"simulation steps ({cfg.n_steps}) must divide the Riccati grid ({sol.n_steps})")
    stride = sol.n_steps // cfg.n_steps
    weights = _step_weights(sol, stride)
    ids = np.arange(cfg.n_paths)
    chunks = [ids[i:i + cfg.chunk_size] for i in range(0, cfg.n_paths, cfg.chunk_size)]
    run = lambda c: _simulate_chunk(sol, params, cfg, stride, weights, c)
    if cfg.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    arrays = [np.concatenate([p[i] for p in parts]) for i in range(6)]
    idx = np.arange(cfg.n_steps + 1) * stride
    ens = PathEnsemble(params, cfg, sol.grid[idx].copy(), idx, *arrays)
    ens.summary.update(basic_summary(ens, sol))
    return ens


def basic_summary(ens: PathEnsemble, sol: RiccatiSolution) -> dict:
    p = ens.params
    terminal = ens.S[:, -1] - (p.b * p.horizon + p.a * ens.W[:, -1])
    clearing = (ens.phi1 + ens.phi2) - p.supply
    return {
        "n_paths": int(ens.W.shape[0]),
        "n_steps": int(ens.t.size - 1),
        "terminal_gap_max": float(np.max(np.abs(terminal))),
        "clearing_gap_max": float(np.max(np.abs(clearing))),
        "rate_clearing_gap_max": float(np.max(np.abs(ens.phidot1 + ens.phidot2))),
        "drift_identity_residual": drift_identity_residual(sol, p, ens),
    }


def drift_identity_residual(sol: RiccatiSolution, params: ModelParams, ens: PathEnsemble) -> float:
    """Pathwise gap between the drift of ``S`` and the equilibrium drift.

    The drift of ``S = Sbar + A + B W + C phi`` is
    ``mubar + A' + B' W + C' phi + C phidot``; the coefficient derivatives come
    from finite differences of the stored solution, not from the ODE.
    """
    deriv = fd_derivatives(sol)[:, ens.grid_index]
    dA, dB, dC = deriv[0], deriv[1], deriv[2]
    C = sol["C"][ens.grid_index]
    drift = ens.mu_bar + dA + dB * ens.W + dC * ens.phi1 + C * ens.phidot1
    return float(np.max(np.abs(drift - ens.mu)))


def mean_position(sol: RiccatiSolution, params: ModelParams) -> np.ndarray:
    """``E[phi1_t]`` on the Riccati grid from ``m' = D + F m``, ``m(0) = x1`` (RK4)."""
    h = sol.step
    slopes = sol.derivatives()
    D, F = sol["D"], sol["F"]
    Dm = _midpoints(D, slopes[3], h)
    Fm = _midpoints(F, slopes[5], h)
    m = np.empty(sol.n_steps + 1)
    y = m[0] = params.x1
    for i in range(sol.n_steps):
        k1 = D[i] + F[i] * y
        k2 = Dm[i] + Fm[i] * (y + 0.5 * h * k1)
        k3 = Dm[i] + Fm[i] * (y + 0.5 * h * k2)
        k4 = D[i + 1] + F[i + 1] * (y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        m[i + 1] = y
    return m


def expected_premium(sol: RiccatiSolution, params: ModelParams) -> np.ndarray:
    """``E[mu_t - mubar]`` on the Riccati grid (the premium is affine in ``W`` and ``phi1``)."""
    d = derive(params)
    vol = sol.vol()
    m = mean_position(sol, params)
    return vol**2 * (params.gamma2 * params.supply / 2 + d.eps / 2 * m) - d.gamma_bar * params.supply * params.a**2


def _ols(x, y):
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    slope = float(np.dot(xc, yc)) / sxx
    resid = yc - slope * xc
    n = x.size
    se = math.sqrt(float(np.dot(resid, resid)) / (n - 2) / sxx)
    return slope, se


def _autocorr(x: np.ndarray, lag: int) -> float:
    a = x[:, :-lag].ravel()
    b = x[:, lag:].ravel()
    return float(np.corrcoef(a, b)[0, 1])


def volume_diagnostics(ens: PathEnsemble, sol: RiccatiSolution, n_buckets: int = 10,
                       lags=(1, 5, 10)) -> dict:
    """Compare trading volume with its leading-order Ornstein-Uhlenbeck description.

    Per time bucket, regresses ``phidot1`` on ``phi1 - phibar1`` across paths and
    compares the slope with ``F(t; 0)``; estimates the quadratic-variation rate
    of ``phi1 - phibar1`` against ``(beta/a)^2``.
    """
    n_paths = ens.W.shape[0]
    if n_paths < 100:
        raise ValueError(f"need at least 100 paths for the regression, got {n_paths}")
    p = ens.params
    kit = AsymptoticKit(p)
    dev = ens.phi1 - ens.phi_bar1
    n = ens.t.size - 1
    T = p.horizon

    buckets = []
    for j in range(n_buckets):
        k = int(round((j + 0.5) / n_buckets * n))
        buckets.append(_bucket(ens, dev, k, kit))
    half = _bucket(ens, dev, n // 2, kit)

    incr = np.diff(dev, axis=1)
    qv_rate = float(np.mean(np.sum(incr**2, axis=1)) / T)
    qv_target = (p.beta / p.a) ** 2

    abs_rate = np.abs(ens.phidot1)
    mean_abs = abs_rate.mean(axis=0)
    tail = ens.t >= 0.99 * T
    valid_lags = [lag for lag in lags if lag < n]
    return {
        "buckets": buckets,
        "half": half,
        "qv_rate": qv_rate,
        "qv_target": qv_target,
        "qv_rel_error": abs(qv_rate - qv_target) / qv_target,
        "abs_rate_autocorr": {str(lag): _autocorr(abs_rate, lag) for lag in valid_lags},
        "mean_abs_rate_half": float(mean_abs[n // 2]),
        "mean_abs_rate_tail_max": float(mean_abs[tail].max()),
    }


def _bucket(ens, dev, k, kit):
    slope, se = _ols(dev[:, k], ens.phidot1[:, k])
    t = float(ens.t[k])
    target = float(kit.F0(t))
    se_eff = max(se, SE_FLOOR)
    return {"t": t, "slope": slope, "se": se, "se_eff": se_eff, "F0": target,
            "z": (slope - target) / se_eff}


def premium_summary(ens: PathEnsemble, sol: RiccatiSolution, k: int | None = None) -> dict:
    """Mean premium at a simulation node against its deterministic component."""
    p = ens.params
    n = ens.t.size - 1
    k = n // 2 if k is None else k
    prem = ens.premium[:, k]
    B = sol["B"][ens.grid_index[k]]
    exact = expected_premium(sol, p)[ens.grid_index[k]]
    return {
        "t": float(ens.t[k]),
        "mean": float(prem.mean()),
        "se": float(prem.std(ddof=1) / math.sqrt(prem.size)),
        "deterministic_component": float(p.gamma2 * p.supply * p.a * B),
        "exact_mean": float(exact),
    }


def diagnostics_json(ens: PathEnsemble, sol: RiccatiSolution) -> str:
    report = dict(ens.summary)
    if ens.W.shape[0] >= 100:
        report["volume"] = volume_diagnostics(ens, sol)
    report["premium"] = premium_summary(ens, sol)
    return json.dumps(report, indent=2, sort_keys=True)
