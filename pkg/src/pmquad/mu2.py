"""Second moment of the limit process via the integral equation mu2 = K mu2.

The map is

    Kf(s) = 2/(2b+1) * [ int_s^1 x^(2b) f(s/x) dx + int_0^s (1-x)^(2b) f((1-s)/(1-x)) dx ]
            + 2 B(b+1, b+1) (s(1-s))^b / (b+1).

Substituting u = s/x in the first integral and u = (1-s)/(1-x) in the second
turns both into tails of one function,

    Kf(s) = 2/(2b+1) * [ s^(2b+1) F(s) + (1-s)^(2b+1) F(1-s) ] + inhomogeneous term,
    F(a) = int_a^1 u^(-2b-2) f(u) du,

so on a uniform grid one cumulative sum of per-cell integrals serves every
grid point. At s = 0 and s = 1 the limit value 2 f(0) / (2b+1)^2 is used.

Grid functions vanish like w(s) = (s(1-s))^b at the ends, which defeats
plain polynomial interpolation; f is therefore interpolated as w * P where
P is the monotone cubic (PCHIP) interpolant of f / w at interior nodes. In
the last cell f is modelled as w times a constant plus a linear term
carrying f(1), and that cell is integrated with Gauss-Jacobi nodes for the
(1-u)^b factor.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import roots_jacobi, roots_legendre

from .constants import BETA, beta_fn, constants
from .limit import GridFunction

__all__ = [
    "FixedPointSolution",
    "NonConvergenceError",
    "QuadratureConfig",
    "analytic_mu2",
    "apply_K",
    "contraction_factor",
    "inhomogeneous_term",
    "solve_fixed_point",
    "write_mu2_csv",
]


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureConfig:
    nodes: int = 64
    grid_size: int = 1024
    tolerance: float = 1e-8
    max_iters: int = 200

    def __post_init__(self):
        if self.nodes < 4:
            raise ValueError(f"nodes must be >= 4, got {self.nodes}")
        if self.grid_size < 4:
            raise ValueError(f"grid_size must be >= 4, got {self.grid_size}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


def contraction_factor() -> float:
    """Factor by which K's linear part scales multiples of h^2: 2/((2b+1)(b+1))."""
    return 2.0 / ((2 * BETA + 1) * (BETA + 1))


def inhomogeneous_term(s):
    s = np.asarray(s, dtype=np.float64)
    return 2.0 * beta_fn(BETA + 1, BETA + 1) * (s * (1.0 - s)) ** BETA / (BETA + 1)


def analytic_mu2(grid_size: int) -> GridFunction:
    """c2 * h(s)^2 sampled on the grid."""
    c2 = constants().c2
    return GridFunction.from_function(lambda s: c2 * (s * (1 - s)) ** BETA, grid_size)


class _Rule(NamedTuple):
    s: np.ndarray
    w_grid: np.ndarray
    u: np.ndarray  # (G-2, nodes) interior-cell abscissae
    wt: np.ndarray  # matching weights including u^(-2b-2) * w(u)
    u_last_gl: np.ndarray
    wt_last_lin: np.ndarray  # weights for the linear f(1) term in the last cell
    wt_last_jac: float  # integral of w(u) u^(-2b-2) over the last cell


@lru_cache(maxsize=8)
def _rule(grid_size: int, nodes: int) -> _Rule:
    G = grid_size
    b = BETA
    s = np.linspace(0.0, 1.0, G + 1)
    h = 1.0 / G
    t, wgl = roots_legendre(nodes)
    left = s[1 : G - 1]
    u = left[:, None] + 0.5 * h * (1.0 + t)[None, :]
    wt = 0.5 * h * wgl[None, :] * u ** (-2 * b - 2) * (u * (1 - u)) ** b

    ul = s[G - 1] + 0.5 * h * (1.0 + t)
    wt_lin = 0.5 * h * wgl * ul ** (-2 * b - 2) * (ul - s[G - 1]) / h

    tj, wj = roots_jacobi(nodes, b, 0.0)
    uj = 1.0 - 0.5 * h * (1.0 - tj)
    # int (1-u)^b * u^b * u^(-2b-2) du over [1-h, 1]
    jac = (0.5 * h) ** (b + 1) * float(np.sum(wj * uj ** (-b - 2)))
    return _Rule(s, (s * (1 - s)) ** b, u, wt, ul, wt_lin, jac)


def _values(f) -> np.ndarray:
    return np.asarray(f.values if isinstance(f, GridFunction) else f, dtype=np.float64)


def apply_K(f: GridFunction, config: QuadratureConfig | None = None) -> GridFunction:
    """Kf on the grid of ``f`` (whose size overrides ``config.grid_size``)."""
    fv = _values(f)
    G = fv.size - 1
    cfg = config or QuadratureConfig(grid_size=G)
    if G < 4:
        raise ValueError("grid functions need at least 5 points")
    b = BETA
    rule = _rule(G, cfg.nodes)
    s = rule.s

    g = fv[1:G] / rule.w_grid[1:G]
    P = PchipInterpolator(s[1:G], g, extrapolate=False)
    cells = np.sum(rule.wt * P(rule.u), axis=1)  # cells 1 .. G-2
    last = g[-1] * rule.wt_last_jac + fv[G] * float(np.sum(rule.wt_last_lin))

    I = np.concatenate((cells, [last]))  # cells 1 .. G-1
    F = np.zeros(G + 1)
    F[1:G] = np.cumsum(I[::-1])[::-1]

    j = np.arange(1, G)
    lin = s[j] ** (2 * b + 1) * F[j] + (1 - s[j]) ** (2 * b + 1) * F[G - j]
    out = np.empty(G + 1)
    out[1:G] = 2.0 / (2 * b + 1) * lin + inhomogeneous_term(s[j])
    out[0] = out[G] = 2.0 * fv[0] / (2 * b + 1) ** 2
    return GridFunction(out)


class FixedPointSolution(NamedTuple):
    solution: GridFunction
    iterations: int
    residual: float
    ratios: tuple[float, ...]
    """Successive sup-norm step ratios ||f_{k+1}-f_k|| / ||f_k-f_{k-1}||."""


def solve_fixed_point(config: QuadratureConfig | None = None) -> FixedPointSolution:
    """Iterate f <- Kf from f = 0 until the sup-norm step drops below the tolerance."""
    cfg = config or QuadratureConfig()
    f = np.zeros(cfg.grid_size + 1)
    steps: list[float] = []
    for it in range(1, cfg.max_iters + 1):
        nxt = apply_K(f, cfg).values
        steps.append(float(np.max(np.abs(nxt - f))))
        f = nxt
        if steps[-1] < cfg.tolerance:
            residual = float(np.max(np.abs(apply_K(f, cfg).values - f)))
            ratios = tuple(b / a for a, b in zip(steps, steps[1:]) if a > 0)
            return FixedPointSolution(GridFunction(f), it, residual, ratios)
    raise NonConvergenceError(
        f"no convergence after {cfg.max_iters} iterations (last step {steps[-1]:.3e})"
    )


def write_mu2_csv(f: GridFunction, out: io.TextIOBase | str | Path) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_mu2_csv(f, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["s", "mu2"])
    for s, v in zip(f.s, f.values):
        w.writerow([f"{s:.15g}", f"{v:.15g}"])
