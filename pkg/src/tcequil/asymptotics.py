"""Closed-form small-``eps`` expansions and the derived economic quantities.

``eps = gamma1 - gamma2``. At ``eps = 0`` the trading-rate coefficients are
tanh profiles and the price corrections vanish; the price corrections are then
linear in ``eps`` to first order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frictionless import frictionless_position
from .params import ModelParams, derive
from .riccati import RiccatiSolution


def log_cosh(x):
    """Overflow-safe ``log(cosh(x))``."""
    x = np.abs(np.asarray(x, dtype=float))
    out = x + np.log1p(np.exp(-2 * x)) - math.log(2.0)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class AsymptoticKit:
    params: ModelParams

    @property
    def delta(self) -> float:
        return derive(self.params).delta

    def _tau(self, t):
        t = np.asarray(t, dtype=float)
        T = self.params.horizon
        if np.any(t < 0) or np.any(t > T):
            raise ValueError(f"t must lie in [0, {T}]")
        return T - t

    def F0(self, t):
        d = self.delta
        return -d * np.tanh(d * self._tau(t))

    def E0(self, t):
        p = self.params
        return p.beta / p.a * self.F0(t)

    def D0(self, t):
        p = self.params
        return -p.gamma2 * p.supply / (p.gamma1 + p.gamma2) * self.F0(t)

    def C1(self, t):
        p = self.params
        eps = derive(p).eps
        return eps * p.a**2 / (2 * self.delta**2) * self.F0(t)

    def B1(self, t):
        p = self.params
        eps = derive(p).eps
        return eps * p.beta * p.a / (2 * self.delta**2) * self.F0(t)

    def A1(self, t):
        p = self.params
        eps = derive(p).eps
        g = p.gamma1 + p.gamma2
        tau = self._tau(t)
        return (-eps * p.gamma2 * p.supply * p.a**2 / (2 * g * self.delta**2) * self.F0(t)
                + eps * p.gamma2 * p.supply * p.beta * p.lambda_cost / g * log_cosh(self.delta * tau))

    def table(self, grid) -> dict:
        grid = np.asarray(grid, dtype=float)
        return {name: getattr(self, name)(grid) for name in ("F0", "E0", "D0", "B1", "C1", "A1")}


def leading_order(params: ModelParams) -> AsymptoticKit:
    return AsymptoticKit(params)


def illiquidity_discount(params: ModelParams, mode: str = "leading",
                         sol: RiccatiSolution | None = None) -> float:
    """Reduction of the initial price relative to the frictionless one.

    ``leading`` returns the large-horizon leading term, ``numeric`` returns
    ``-(A(0) + C(0) x1)`` from a Riccati solution.
    """
    p = params
    if mode == "leading":
        eps = derive(p).eps
        g = p.gamma1 + p.gamma2
        return float(-eps * p.gamma2 * p.supply / math.sqrt(2 * g)
                     * p.horizon * p.beta * p.a * math.sqrt(p.lambda_cost))
    if mode == "numeric":
        if sol is None:
            raise ValueError("numeric mode needs a Riccati solution")
        return float(-(sol["A"][0] + sol["C"][0] * p.x1))
    raise ValueError(f"unknown mode {mode!r}")


def volatility_scaled_discount(params: ModelParams, sol: RiccatiSolution) -> float:
    """``gamma2 * s * a * T * B(0)``, the volatility-correction form of the discount."""
    p = params
    return float(p.gamma2 * p.supply * p.a * p.horizon * sol["B"][0])


def liquidity_premium_first_order(params: ModelParams, t, w, phi1):
    """First-order drift difference ``(eps/2) a^2 (phi1 - phibar1) + gamma2 s a B1(t)``."""
    p = params
    eps = derive(p).eps
    kit = AsymptoticKit(p)
    dev = np.asarray(phi1, dtype=float) - frictionless_position(p, 1, t, w)
    return eps / 2 * p.a**2 * dev + p.gamma2 * p.supply * p.a * kit.B1(t)
