"""Closed-form algebra of the KPZ exponent map and its gamma-duality.

Everything in this module is exact double-precision arithmetic in the
Liouville parameter gamma: the quadratic map between Euclidean (x) and
quantum (Delta) scaling exponents, its inverse through the martingale
exponent beta, and the consistency identities linking the gamma < 2 and
gamma > 2 (dual) branches.  No sampling, no grids; pure functions only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "GammaParams",
    "ScalingExponents",
    "DualityReport",
    "gamma_params",
    "kpz_x_of_delta",
    "kpz_delta_of_x",
    "gamma_of_central_charge",
    "duality_report",
]

GAMMA_CRITICAL = 2.0  # self-dual point of gamma * gamma_dual = 4


@dataclass(frozen=True)
class GammaParams:
    """All deterministic functions of the Liouville parameter gamma.

    gamma_dual = 4/gamma, Q = 2/gamma + gamma/2, a = Q - gamma,
    gamma_str = 1 - 4/gamma**2 (equivalently 2 - 2Q/gamma).
    """

    gamma: float
    gamma_dual: float
    Q: float
    a: float
    gamma_str: float

    @property
    def dual(self) -> "GammaParams":
        """Parameters of the dual theory gamma' = 4/gamma."""
        return gamma_params(self.gamma_dual)


@dataclass(frozen=True)
class ScalingExponents:
    """A matched (x, Delta) pair with the martingale exponent beta = gamma*Delta
    and the thick-point thickness alpha = gamma*(1 - Delta)."""

    x: float
    delta: float
    beta: float
    alpha: float


@dataclass(frozen=True)
class DualityReport:
    """Residuals of the duality identities at a given (gamma, x).

    All residuals are expected to vanish to ~1e-10; seiberg_excess is
    max(0, alpha - Q) and is exactly zero for x >= 0.
    """

    gamma: float
    gamma_dual: float
    x: float
    delta: float
    delta_dual: float
    duality_residual: float       # Delta - 1 - (4/gamma^2)(Delta' - 1)
    product_residual: float       # Delta * Delta' - x
    alpha_residual: float         # gamma(1-Delta) - gamma'(1-Delta')
    seiberg_excess: float         # max(0, alpha - Q)
    str_product_residual: float   # (1-gamma_str)(1-gamma_str') - 1

    @property
    def max_residual(self) -> float:
        return max(
            abs(self.duality_residual),
            abs(self.product_residual),
            abs(self.alpha_residual),
            self.seiberg_excess,
            abs(self.str_product_residual),
        )


def gamma_params(gamma: float) -> GammaParams:
    """Build the parameter bundle for a given gamma > 0."""
    gamma = float(gamma)
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    return GammaParams(
        gamma=gamma,
        gamma_dual=4.0 / gamma,
        Q=2.0 / gamma + gamma / 2.0,
        a=2.0 / gamma - gamma / 2.0,
        gamma_str=1.0 - 4.0 / gamma**2,
    )


def kpz_x_of_delta(g: GammaParams, delta: float) -> float:
    """Euclidean exponent of a quantum exponent: x = (g^2/4) D^2 + (1 - g^2/4) D.

    Defined for all real delta (it is a polynomial); the inverse map only
    ever produces the positive branch.
    """
    quarter = g.gamma**2 / 4.0
    return quarter * delta * delta + (1.0 - quarter) * delta


def kpz_delta_of_x(g: GammaParams, x: float) -> ScalingExponents:
    """Positive-branch inverse of the KPZ map.

    beta = sqrt(a^2 + 4x) - a with the signed drift a (negative for
    gamma > 2; same formula on both branches), Delta = beta/gamma and
    alpha = gamma(1 - Delta).
    """
    x = float(x)
    if x < 0.0:
        raise ValueError(f"x must be nonnegative, got {x!r}")
    beta = math.sqrt(g.a * g.a + 4.0 * x) - g.a
    delta = beta / g.gamma
    return ScalingExponents(x=x, delta=delta, beta=beta, alpha=g.gamma * (1.0 - delta))


def gamma_of_central_charge(c: float) -> float:
    """gamma = (sqrt(25 - c) - sqrt(1 - c)) / sqrt(6), valid for c <= 1.

    Monotone increasing in c, with gamma(1) = 2.
    """
    c = float(c)
    if c > 1.0:
        raise ValueError(f"central charge must satisfy c <= 1, got {c!r}")
    return (math.sqrt(25.0 - c) - math.sqrt(1.0 - c)) / math.sqrt(6.0)


def duality_report(g: GammaParams, x: float) -> DualityReport:
    """Evaluate both branches at the same x and report identity residuals."""
    x = float(x)
    if x < 0.0:
        raise ValueError(f"x must be nonnegative, got {x!r}")
    gd = g.dual
    se = kpz_delta_of_x(g, x)
    sed = kpz_delta_of_x(gd, x)
    return DualityReport(
        gamma=g.gamma,
        gamma_dual=g.gamma_dual,
        x=x,
        delta=se.delta,
        delta_dual=sed.delta,
        duality_residual=(se.delta - 1.0) - (4.0 / g.gamma**2) * (sed.delta - 1.0),
        product_residual=se.delta * sed.delta - x,
        alpha_residual=se.alpha - sed.alpha,
        seiberg_excess=max(0.0, se.alpha - g.Q),
        str_product_residual=(1.0 - g.gamma_str) * (1.0 - gd.gamma_str) - 1.0,
    )
