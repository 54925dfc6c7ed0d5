"""Frictionless (Bachelier) equilibrium of the linear benchmark."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .params import ModelParams, derive

# Fixed block size for Monte Carlo draws; each block has its own seed stream so
# the estimate does not depend on how blocks are spread over workers.
MC_BLOCK = 1 << 16
LAPLACE_EXPONENT_LIMIT = 30.0


def _check_time(params: ModelParams, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > params.horizon):
        raise ValueError(f"t must lie in [0, {params.horizon}]")


@dataclass(frozen=True)
class FrictionlessEquilibrium:
    params: ModelParams

    @property
    def sigma_bar(self) -> float:
        return self.params.a

    @property
    def mu_bar(self) -> float:
        p = self.params
        return derive(p).gamma_bar * p.supply * p.a**2

    @property
    def s0(self) -> float:
        p = self.params
        return (p.b - derive(p).gamma_bar * p.supply * p.a**2) * p.horizon

    def price(self, t, w):
        return bachelier_price(self.params, t, w)

    def position(self, agent: int, t, w):
        return frictionless_position(self.params, agent, t, w)


def bachelier_price(params: ModelParams, t, w):
    """Frictionless equilibrium price ``(b - gbar s a^2) T + gbar s a^2 t + a w``."""
    _check_time(params, t)
    p = params
    mu_bar = derive(p).gamma_bar * p.supply * p.a**2
    return (p.b - mu_bar) * p.horizon + mu_bar * np.asarray(t, dtype=float) + p.a * np.asarray(w, dtype=float)


def frictionless_position(params: ModelParams, agent: int, t, w):
    if agent not in (1, 2):
        raise ValueError(f"agent must be 1 or 2, got {agent!r}")
    _check_time(params, t)
    p = params
    phi1 = p.gamma2 * p.supply / (p.gamma1 + p.gamma2) - (p.beta / p.a) * np.asarray(w, dtype=float)
    return phi1 if agent == 1 else p.supply - phi1


def frictionless_drift(params: ModelParams, endowment_sum=0.0):
    """Drift ``gbar (s sigma^2 + sigma (beta1 + beta2))`` with ``sigma = a``."""
    p = params
    return derive(p).gamma_bar * (p.supply * p.a**2 + p.a * np.asarray(endowment_sum, dtype=float))


def laplace_price_exact(params: ModelParams, t, w):
    """Closed-form Gaussian evaluation of the Laplace-transform price formula."""
    _check_time(params, t)
    p = params
    k = 2 * derive(p).gamma_bar * p.supply
    t = np.asarray(t, dtype=float)
    mean = p.b * p.horizon + p.a * np.asarray(w, dtype=float)
    # log E[exp(-k X)] for X ~ N(mean, a^2 (T-t))
    log_laplace = -k * mean + 0.5 * k**2 * p.a**2 * (p.horizon - t)
    if k == 0:
        return mean + 0 * t
    return -log_laplace / k


def _block_stats(k, mean, scale, n, seed, block):
    rng = np.random.default_rng([seed, block])
    z = rng.standard_normal(n)
    x = -k * (mean + scale * z)
    m = x.max()
    e = np.exp(x - m)
    return m, e.sum(), (e * e).sum(), n


def laplace_price_mc(params: ModelParams, t: float, w: float, n_samples: int,
                     seed: int = 0, workers: int = 1):
    """Monte Carlo estimate of the Laplace-transform price and its standard error.

    Returns ``(estimate, stderr)``. The standard error is obtained by the delta
    method applied to ``-log(mean)/k``.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    _check_time(params, t)
    p = params
    k = 2 * derive(p).gamma_bar * p.supply
    tau = p.horizon - t
    mean = p.b * p.horizon + p.a * w
    scale = p.a * math.sqrt(tau)
    if abs(k) * scale > LAPLACE_EXPONENT_LIMIT:
        raise OverflowError(
            f"2*gamma_bar*s*a*sqrt(T-t) = {abs(k) * scale:.3g} exceeds {LAPLACE_EXPONENT_LIMIT}")
    if tau == 0:
        return float(mean), 0.0
    sizes = [MC_BLOCK] * (n_samples // MC_BLOCK)
    if n_samples % MC_BLOCK:
        sizes.append(n_samples % MC_BLOCK)
    if k == 0:
        draws = np.concatenate([np.random.default_rng([seed, i]).standard_normal(n)
                                for i, n in enumerate(sizes)])
        vals = mean + scale * draws
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))

    jobs = [(k, mean, scale, n, seed, i) for i, n in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            stats = list(ex.map(lambda a: _block_stats(*a), jobs))
    else:
        stats = [_block_stats(*a) for a in jobs]

    shifts = np.array([s[0] for s in stats])
    m = shifts.max()
    scale_back = np.exp(shifts - m)
    s1 = float(np.sum(np.array([s[1] for s in stats]) * scale_back))
    s2 = float(np.sum(np.array([s[2] for s in stats]) * scale_back**2))
    n = n_samples
    log_mean = m + math.log(s1) - math.log(n)
    estimate = -log_mean / k
    # relative std of the sample mean of exp(x), on the shifted scale
    mean_e = s1 / n
    var_e = max(s2 / n - mean_e**2, 0.0) * n / (n - 1)
    rel_se = math.sqrt(var_e / n) / mean_e
    return float(estimate), float(rel_se / abs(k))

