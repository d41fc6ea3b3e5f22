"""Gamma/Beta evaluations and the closed-form constants of 2-d quadtree partial match.

Everything here is derived at import time from the exponent

    beta = (sqrt(17) - 3) / 2,

the root in (0, 1) of beta**2 + 3*beta - 2 = 0. No constant is hard-coded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "BETA",
    "ConstantsTable",
    "MomentSequence",
    "beta_fn",
    "constants",
    "gamma_fn",
    "limit_moments",
    "mean_curve",
    "mean_curve_scaled",
    "moment_recurrence",
    "recurrence_c2",
]

BETA = (math.sqrt(17.0) - 3.0) / 2.0

# math.lgamma loses relative precision only for huge arguments; below this
# the direct Gamma ratio is exact to a few ulp.
_DIRECT_GAMMA_LIMIT = 170.0


def gamma_fn(x: float) -> float:
    """Gamma function for real x > 0.

    Backed by :func:`math.gamma` (correctly rounded to a few ulp on the
    positive axis).
    """
    x = float(x)
    if not x > 0.0 or math.isinf(x):
        raise ValueError(f"gamma_fn requires a finite x > 0, got {x!r}")
    return math.gamma(x)


def beta_fn(a: float, b: float) -> float:
    """Euler Beta integral B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b)."""
    a = float(a)
    b = float(b)
    if not (a > 0.0 and b > 0.0) or math.isinf(a) or math.isinf(b):
        raise ValueError(f"beta_fn requires a, b > 0, got ({a!r}, {b!r})")
    if a + b < _DIRECT_GAMMA_LIMIT:
        return math.gamma(a) * math.gamma(b) / math.gamma(a + b)
    return math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))


@dataclass(frozen=True)
class ConstantsTable:
    """Asymptotic constants for partial match in random 2-d quadtrees.

    Attributes
    ----------
    beta_exp : growth exponent of the cost, ``(sqrt(17) - 3) / 2``.
    kappa : leading constant of the mean cost at a uniform query.
    k1 : leading constant of the mean cost at a fixed query ``s``.
    c2 : second moment ``E[Z(s)^2] / h(s)^2`` from the integral equation.
    k4 : leading constant of the variance at a uniform query.
    var_z_xi : ``Var Z(xi)`` for a uniform ``xi``.
    edge_exp : growth exponent of the cost along the edge ``s = 0``.
    """

    beta_exp: float
    kappa: float
    k1: float
    c2: float
    k4: float
    var_z_xi: float
    edge_exp: float

    def as_dict(self) -> dict[str, float]:
        return {
            "beta": self.beta_exp,
            "kappa": self.kappa,
            "k1": self.k1,
            "c2": self.c2,
            "k4": self.k4,
            "var_z_xi": self.var_z_xi,
            "edge_exp": self.edge_exp,
        }


def constants() -> ConstantsTable:
    b = BETA
    g = gamma_fn
    bb = beta_fn(b + 1.0, b + 1.0)
    kappa = g(2 * b + 2) / (2 * g(b + 1) ** 3)
    k1 = g(2 * b + 2) * g(b + 2) / (2 * g(b + 1) ** 3 * g(b / 2 + 1) ** 2)
    c2 = 2.0 * bb * (2 * b + 1) / (3 * (1 - b))
    var_z_xi = c2 * bb - beta_fn(b / 2 + 1, b / 2 + 1) ** 2
    return ConstantsTable(
        beta_exp=b,
        kappa=kappa,
        k1=k1,
        c2=c2,
        k4=k1 * k1 * var_z_xi,
        var_z_xi=var_z_xi,
        edge_exp=math.sqrt(2.0) - 1.0,
    )


@dataclass(frozen=True)
class MomentSequence:
    """Moments c_1..c_M of the normalised marginal ``Z(s) / h(s)``."""

    values: tuple[float, ...]
    prefactor: float

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, m: int) -> float:
        """1-based access: ``seq[m]`` is c_m."""
        if not 1 <= m <= len(self.values):
            raise IndexError(f"moment index {m} outside 1..{len(self.values)}")
        return self.values[m - 1]


def _binom(m: int, k: int) -> float:
    if m <= 50:
        return float(math.comb(m, k))
    return math.exp(math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(m - k + 1))


def moment_recurrence(M: int, prefactor: float = 2.0) -> MomentSequence:
    """Moments from the one-dimensional marginal recurrence.

    ``c_1 = 1`` and, for ``m >= 2``,

        c_m = prefactor * (beta*m + 1) / ((m-1)(m+1 - 1.5*beta*m))
              * sum_{l=1}^{m-1} binom(m, l) B(beta*l + 1, beta*(m-l) + 1) c_l c_{m-l}.

    The default ``prefactor=2`` is the recurrence as printed in the
    literature. Taking second moments of the fixed-point equation directly
    gives ``prefactor=1`` instead (see :func:`limit_moments`), and only that
    version agrees with ``constants().c2`` and with simulation.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    b = BETA
    c = [1.0]
    for m in range(2, M + 1):
        denom = (m - 1) * (m + 1 - 1.5 * b * m)
        if denom <= 1e-12:
            raise ArithmeticError(f"moment recurrence denominator non-positive at m={m}")
        acc = math.fsum(
            _binom(m, l) * beta_fn(b * l + 1, b * (m - l) + 1) * c[l - 1] * c[m - l - 1]
            for l in range(1, m)
        )
        c.append(prefactor * (b * m + 1) / denom * acc)
    return MomentSequence(values=tuple(c), prefactor=prefactor)


def limit_moments(M: int) -> MomentSequence:
    """Moments of ``Z(s)/h(s)`` consistent with the second-moment integral equation."""
    return moment_recurrence(M, prefactor=1.0)


def recurrence_c2() -> float:
    """The m = 2 value of the printed recurrence, ``4(2b+1)B(b+1,b+1)/(3(1-b))``."""
    return moment_recurrence(2).values[1]


def mean_curve(s: float) -> float:
    """Limit mean shape h(s) = (s(1-s))^(beta/2); zero at the endpoints."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s!r}")
    return (s * (1.0 - s)) ** (BETA / 2.0)


def mean_curve_scaled(s: float) -> float:
    """mu_1(s) = K1 * h(s), the limit of n^-beta E[C_n(s)]."""
    return _CONSTANTS.k1 * mean_curve(s)


_CONSTANTS = constants()
