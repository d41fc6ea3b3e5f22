"""Monte Carlo measurement of partial match costs and comparison with the asymptotics."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .constants import BETA, constants, mean_curve
from .rng import DEFAULT_SEED, stream
from .trees import TreeKind, poisson_point_count, sample_uniform_points, tree_statistics

__all__ = [
    "CellSummary",
    "ExperimentConfig",
    "ExperimentResult",
    "FitResult",
    "TheoryRow",
    "compare_to_theory",
    "fit_exponent",
    "fit_power_law",
    "load_config",
    "run_cost_experiment",
    "write_result_csv",
    "write_result_json",
]

SCHEMA_VERSION = 1
DEFAULT_POINT_BUDGET = 5_000_000_000

# Labels of the non-fixed-s measurements in a cell's ``query`` field.
XI = "xi"
INTEGRAL = "integral"
SUP = "sup"


class ResourceBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    tree_kind: TreeKind = TreeKind.QUADTREE
    n_values: tuple[int, ...] = (1024, 4096, 16384)
    s_values: tuple[float, ...] = (0.5,)
    uniform_query: bool = True
    replicates: int = 100
    master_seed: int = DEFAULT_SEED
    poissonized: bool = False
    threads: int = 1
    point_budget: int = DEFAULT_POINT_BUDGET
    keep_raw: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tree_kind", TreeKind(self.tree_kind))
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "s_values", tuple(float(s) for s in self.s_values))
        if self.replicates < 2:
            raise ValueError("replicates must be >= 2")
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be a non-empty sequence of positive integers")
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("n_values must be strictly increasing")
        if any(not 0.0 <= s <= 1.0 for s in self.s_values):
            raise ValueError("s_values must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tree_kind"] = self.tree_kind.value
        d["n_values"] = list(self.n_values)
        d["s_values"] = list(self.s_values)
        d.pop("threads")
        d.pop("keep_raw")
        d.pop("point_budget")
        return d


@dataclass(frozen=True)
class CellSummary:
    n: int
    query: str
    replicates: int
    mean: float
    var: float
    stderr: float
    m4: float  # fourth central moment, for the standard error of ``var``

    @property
    def var_stderr(self) -> float:
        r = self.replicates
        return math.sqrt(max(self.m4 - self.var**2 * (r - 3) / (r - 1), 0.0) / r)


class FitResult(NamedTuple):
    exponent: float
    amplitude: float
    r2: float
    exponent_stderr: float
    amplitude_stderr: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list[CellSummary]
    fits: dict[str, FitResult] = field(default_factory=dict)
    raw: dict[tuple[int, str], np.ndarray] | None = None

    def cell(self, n: int, query: str | float) -> CellSummary:
        q = _label(query)
        for c in self.cells:
            if c.n == n and c.query == q:
                return c
        raise KeyError((n, q))


def _label(q) -> str:
    return q if isinstance(q, str) else f"{float(q):.15g}"


def _summarise(n: int, query: str, x: np.ndarray) -> CellSummary:
    r = len(x)
    xf = x.astype(np.float64)
    mean = math.fsum(xf) / r
    d = xf - mean
    var = math.fsum(d * d) / (r - 1)
    m4 = math.fsum(d**4) / r
    return CellSummary(n, query, r, mean, var, math.sqrt(var / r), m4)


def _replicate(cfg: ExperimentConfig, n_index: int, rep: int, queries: np.ndarray):
    g = stream(cfg.master_seed, n_index, rep)
    n = cfg.n_values[n_index]
    if cfg.poissonized:
        n = poisson_point_count(float(n), g)
    pts = sample_uniform_points(n, g)
    xi = g.random()
    axes = None
    if cfg.tree_kind is TreeKind.RELAXED_KD:
        axes = g.integers(0, 2, size=n).astype(np.int8)
    q = np.append(queries, xi)
    st = tree_statistics(pts, cfg.tree_kind, q, axes=axes)
    return st.costs, st.integral, st.worst


def run_cost_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Measure C_n at fixed s, at a uniform query, the profile integral and S_n.

    Replicate ``r`` at size index ``i`` draws everything from the stream
    ``(master_seed, i, r)``: the point count (if Poissonized), the points,
    the uniform query, then relaxed k-d discriminants. Results are therefore
    independent of ``threads``.
    """
    total = sum(cfg.n_values) * cfg.replicates
    if total > cfg.point_budget:
        raise ResourceBudgetError(
            f"experiment needs {total} points, above the budget of {cfg.point_budget}"
        )
    queries = np.asarray(cfg.s_values, dtype=np.float64)
    nq = queries.size
    R = cfg.replicates
    labels = [_label(s) for s in cfg.s_values] + [XI, INTEGRAL, SUP]
    tasks = [(i, r) for i in range(len(cfg.n_values)) for r in range(R)]
    obs = {i: np.zeros((R, nq + 3)) for i in range(len(cfg.n_values))}

    def work(chunk):
        for i, r in chunk:
            costs, integral, worst = _replicate(cfg, i, r, queries)
            obs[i][r, : nq + 1] = costs
            obs[i][r, nq + 1] = integral
            obs[i][r, nq + 2] = worst

    threads = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    if threads == 1:
        work(tasks)
    else:
        chunks = [tasks[k::threads] for k in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, chunks))

    cells = []
    raw = {} if cfg.keep_raw else None
    for i, n in enumerate(cfg.n_values):
        for j, lab in enumerate(labels):
            if lab == XI and not cfg.uniform_query:
                continue
            col = obs[i][:, j]
            cells.append(_summarise(n, lab, col))
            if raw is not None:
                raw[(n, lab)] = col.copy()
    res = ExperimentResult(cfg, cells, raw=raw)
    res.fits = _fits(res)
    return res


def _fits(res: ExperimentResult) -> dict[str, FitResult]:
    cfg = res.config
    if len(cfg.n_values) < 3:
        return {}
    fits = {}
    ns = cfg.n_values
    if cfg.uniform_query:
        fits["xi_mean_plus_1"] = fit_power_law([(n, res.cell(n, XI).mean + 1.0) for n in ns])
    fits["integral_plus_1"] = fit_power_law([(n, res.cell(n, INTEGRAL).mean + 1.0) for n in ns])
    fits["sup"] = fit_power_law([(n, res.cell(n, SUP).mean) for n in ns])
    for s in cfg.s_values:
        fits[f"s={_label(s)}"] = fit_power_law([(n, res.cell(n, s).mean) for n in ns])
    return fits


def fit_power_law(pairs: Sequence[tuple[float, float]]) -> FitResult:
    """Least squares fit of log(value) = exponent * log(n) + log(amplitude)."""
    if len(pairs) < 3:
        raise ValueError("need at least 3 (n, value) pairs")
    n = np.array([p[0] for p in pairs], dtype=np.float64)
    y = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(y <= 0) or np.any(n <= 0):
        raise ValueError("power-law fit needs positive n and values")
    lr = stats.linregress(np.log(n), np.log(y))
    amp = math.exp(lr.intercept)
    return FitResult(
        float(lr.slope),
        amp,
        float(lr.rvalue**2),
        float(lr.stderr),
        amp * float(lr.intercept_stderr),
    )


def fit_exponent(pairs: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """``(exponent, amplitude, r^2)`` of a log-log least squares fit."""
    f = fit_power_law(pairs)
    return f.exponent, f.amplitude, f.r2


@dataclass(frozen=True)
class TheoryRow:
    quantity: str
    n: int
    query: str
    observed: float
    predicted: float
    ratio: float
    z: float

    def as_dict(self) -> dict:
        return asdict(self)


def _row(quantity, n, query, obs, se, pred) -> TheoryRow:
    z = (obs - pred) / se if se > 0 else (0.0 if obs == pred else math.copysign(math.inf, obs - pred))
    return TheoryRow(quantity, n, query, obs, pred, obs / pred if pred else math.nan, z)


def compare_to_theory(
    result: ExperimentResult, sup_limit: tuple[float, float] | None = None
) -> list[TheoryRow]:
    """Observed versus predicted first and second moments, cell by cell.

    ``sup_limit`` is ``(mean, stderr)`` of max Z from the limit-process
    simulator; when given, E[S_n] / n^beta is compared with K1 times it.
    Quadtree predictions only.
    """
    c = constants()
    b = BETA
    rows: list[TheoryRow] = []
    for cell in result.cells:
        n = cell.n
        nb = n**b
        if cell.query in (XI, INTEGRAL):
            rows.append(_row("mean_uniform", n, cell.query, cell.mean, cell.stderr, c.kappa * nb - 1))
            if cell.query == XI:
                rows.append(_row("var_uniform", n, XI, cell.var, cell.var_stderr, c.k4 * nb * nb))
        elif cell.query == SUP:
            if sup_limit is not None:
                m, se = sup_limit
                obs = cell.mean / nb
                se_obs = cell.stderr / nb
                pred = c.k1 * m
                rows.append(
                    _row("sup_scaled", n, SUP, obs, math.hypot(se_obs, c.k1 * se), pred)
                )
        else:
            s = float(cell.query)
            h = mean_curve(s)
            if h == 0.0:
                # Edge queries grow like n^(sqrt(2)-1); no n^beta prediction.
                continue
            rows.append(_row("mean_fixed", n, cell.query, cell.mean, cell.stderr, c.k1 * h * nb))
            scale = h * h * nb * nb
            rows.append(
                _row("var_fixed_c2m1", n, cell.query, cell.var, cell.var_stderr, (c.c2 - 1) * scale)
            )
            rows.append(
                _row(
                    "var_fixed_k1sq_c2m1",
                    n,
                    cell.query,
                    cell.var,
                    cell.var_stderr,
                    c.k1**2 * (c.c2 - 1) * scale,
                )
            )
    return rows


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------


def _g(x: float) -> str:
    return f"{x:.15g}"


def write_result_csv(result: ExperimentResult, out: io.TextIOBase | str | Path) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_result_csv(result, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["kind", "n", "s_or_xi", "replicates", "mean", "var", "stderr"])
    kind = result.config.tree_kind.value
    for c in result.cells:
        w.writerow([kind, c.n, c.query, c.replicates, _g(c.mean), _g(c.var), _g(c.stderr)])


def _round(obj):
    if isinstance(obj, float):
        return float(_g(obj)) if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def result_to_dict(result: ExperimentResult, theory: list[TheoryRow] | None = None) -> dict:
    d = {
        "schema_version": SCHEMA_VERSION,
        "config": result.config.to_dict(),
        "cells": [
            {
                "n": c.n,
                "s_or_xi": c.query,
                "replicates": c.replicates,
                "mean": c.mean,
                "var": c.var,
                "stderr": c.stderr,
                "m4": c.m4,
            }
            for c in result.cells
        ],
        "fits": {k: f._asdict() for k, f in result.fits.items()},
    }
    if theory is not None:
        d["theory"] = [r.as_dict() for r in theory]
    return _round(d)


def result_from_dict(d: dict) -> ExperimentResult:
    cfg_d = dict(d["config"])
    cfg = ExperimentConfig(**cfg_d)
    cells = [
        CellSummary(c["n"], c["s_or_xi"], c["replicates"], c["mean"], c["var"], c["stderr"], c["m4"])
        for c in d["cells"]
    ]
    fits = {k: FitResult(**v) for k, v in d.get("fits", {}).items()}
    return ExperimentResult(cfg, cells, fits)


def write_result_json(
    result: ExperimentResult,
    out: io.TextIOBase | str | Path,
    theory: list[TheoryRow] | None = None,
) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w") as fh:
            write_result_json(result, fh, theory)
        return
    json.dump(result_to_dict(result, theory), out, indent=2, sort_keys=True)
    out.write("\n")


_CONFIG_KEYS = {
    "tree_kind": str,
    "n_values": lambda v: tuple(int(float(x)) for x in v.replace(",", " ").split()),
    "s_values": lambda v: tuple(float(x) for x in v.replace(",", " ").split()),
    "uniform_query": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
    "replicates": int,
    "master_seed": int,
    "poissonized": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
    "threads": int,
}


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Read ``key = value`` lines (``#`` comments allowed) into an ExperimentConfig."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, v = (p.strip() for p in line.split("=", 1))
            if k not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {k!r}")
            values[k] = _CONFIG_KEYS[k](v)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)
