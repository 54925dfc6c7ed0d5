"""Model parameters for the two-agent linear benchmark with quadratic trading costs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class ParameterError(ValueError):
    """Raised when a parameter set violates its domain constraints."""


_POSITIVE = ("gamma1", "gamma2", "lambda_cost", "a", "beta", "horizon")


@dataclass(frozen=True)
class ModelParams:
    """Exogenous constants of the linear benchmark.

    Endowment volatilities are ``beta * W`` for agent 1 and ``-beta * W`` for
    agent 2, and the terminal payoff of the risky asset is ``b*T + a*W_T``.
    Agent 2's initial position is ``supply - x1``.
    """

    gamma1: float = 2.0
    gamma2: float = 2.0
    lambda_cost: float = 1.0
    a: float = 1.0
    b: float = 0.0
    beta: float = 0.5
    supply: float = 1.0
    x1: float = 0.5
    horizon: float = 1.0

    def __post_init__(self):
        validate(self)

    @property
    def x2(self) -> float:
        return self.supply - self.x1

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown parameter field(s): {', '.join(unknown)}")
        values = {}
        for key, value in data.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParameterError(f"{key} must be a number, got {value!r}")
            values[key] = float(value)
        return cls(**values)

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelParams":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ParameterError("parameter file must contain a JSON object")
        return cls.from_dict(data)

    @classmethod
    def with_eps(cls, eps: float, gamma_hat: float = 2.0, **kw) -> "ModelParams":
        """Parameter set with risk aversions ``gamma_hat +/- eps/2``."""
        return cls(gamma1=gamma_hat + eps / 2, gamma2=gamma_hat - eps / 2, **kw)


@dataclass(frozen=True)
class DerivedScalars:
    gamma_bar: float
    eps: float
    gamma_hat: float
    delta: float


def validate(params: ModelParams) -> None:
    for f in fields(params):
        value = getattr(params, f.name)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ParameterError(f"{f.name} must be finite, got {value!r}")
    for name in _POSITIVE:
        if not getattr(params, name) > 0:
            raise ParameterError(f"{name} must be positive")


def derive(params: ModelParams) -> DerivedScalars:
    g1, g2 = params.gamma1, params.gamma2
    total = g1 + g2
    return DerivedScalars(
        gamma_bar=g1 * g2 / total,
        eps=g1 - g2,
        gamma_hat=total / 2,
        delta=math.sqrt(total * params.a**2 / (2 * params.lambda_cost)),
    )


REFERENCE = ModelParams()
PERTURBED = ModelParams(gamma1=1.95, gamma2=2.05)
