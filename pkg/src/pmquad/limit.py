"""The limit process Z of the rescaled partial match cost.

Z is built as the limit of the martingale Z_n obtained by iterating the
four-branch operator G from h(s) = (s(1-s))^(beta/2) on the infinite 4-ary
split tree. Every node of that tree carries an independent uniform pair
(U, V); here the pair is a pure function of ``(stream key, node id)``
(see :func:`pmquad.rng.split_uniforms`), so Z_n and Z_{n+1} computed from
the same key share all splits above depth n, and refining the evaluation
grid never changes the path.

Z_n(s) is evaluated through its series form: the sum over the 2^n depth-n
boxes whose x-extent [l, r) contains s of vol(box)^beta * h((s - l)/(r - l)).
Only boxes whose x-extent holds at least one query point are expanded.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

from .constants import BETA, constants, mean_curve
from .rng import split_uniforms, split_uniforms_py, stream, stream_key

__all__ = [
    "BoxBudgetExceeded",
    "FixedPointCheck",
    "GridFunction",
    "SupEstimate",
    "apply_G",
    "crossed_boxes",
    "estimate_sup",
    "evaluate_Zn",
    "fixed_point_residual_mc",
    "sample_Zn",
    "simulate_Zn",
    "write_path_csv",
]

MAX_DEPTH = 30
DEFAULT_DEPTH = 12
DEFAULT_GRID = 1024
DEFAULT_BOX_BUDGET = 50_000_000

SUP_CAVEAT = (
    "grid maximum of Z_n: a lower bound for sup over [0,1] of Z_n, and Z_n is a "
    "finite-depth approximation of Z"
)


class BoxBudgetExceeded(RuntimeError):
    """The lazy expansion touched more boxes than the configured budget."""


@dataclass(frozen=True)
class GridFunction:
    """Values at the points s_j = j / grid_size, j = 0..grid_size."""

    values: np.ndarray

    @property
    def grid_size(self) -> int:
        return len(self.values) - 1

    @property
    def s(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_size + 1)

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], grid_size: int) -> "GridFunction":
        return cls(np.asarray(f(np.linspace(0.0, 1.0, grid_size + 1)), dtype=np.float64))


def _h(t):
    t = np.asarray(t, dtype=np.float64)
    return (t * (1.0 - t)) ** (BETA / 2.0)


def apply_G(x: float, y: float, f1, f2, f3, f4, s):
    """One application of the four-branch recombination operator.

    For ``s < x`` the two left boxes contribute
    ``(xy)^b f1(s/x) + (x(1-y))^b f2(s/x)``; otherwise the right boxes give
    ``((1-x)y)^b f3(t) + ((1-x)(1-y))^b f4(t)`` with ``t = (s-x)/(1-x)``.
    ``s`` may be a scalar or an array.
    """
    if not (0.0 < x < 1.0 and 0.0 < y < 1.0):
        raise ValueError(f"split point must lie in (0,1)^2, got ({x!r}, {y!r})")
    b = BETA
    s_arr = np.asarray(s, dtype=np.float64)
    left = s_arr < x
    tl = np.where(left, s_arr / x, 0.0)
    tr = np.where(left, 0.0, (s_arr - x) / (1.0 - x))
    lv = (x * y) ** b * np.asarray(f1(tl)) + (x * (1 - y)) ** b * np.asarray(f2(tl))
    rv = ((1 - x) * y) ** b * np.asarray(f3(tr)) + ((1 - x) * (1 - y)) ** b * np.asarray(f4(tr))
    out = np.where(left, lv, rv)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _zn_path(depth, pts, key, fixed_u, fixed_v, use_fixed, budget, out):
    """Add Z_depth at ``pts`` (sorted) into ``out``; return #boxes or -1 on budget."""
    m = pts.shape[0]
    half_beta = BETA / 2.0
    cap = 4 * depth + 8
    st_id = np.empty(cap, dtype=np.uint64)
    st_l = np.empty(cap)
    st_r = np.empty(cap)
    st_w = np.empty(cap)  # vol(box)^beta
    st_d = np.empty(cap, dtype=np.int64)
    st_a = np.empty(cap, dtype=np.int64)
    st_b = np.empty(cap, dtype=np.int64)
    top = 0
    if m == 0:
        return 0
    st_id[0] = 0
    st_l[0] = 0.0
    st_r[0] = 1.0
    st_w[0] = 1.0
    st_d[0] = 0
    st_a[0] = 0
    st_b[0] = m
    top = 1
    boxes = 0
    while top > 0:
        top -= 1
        nid = st_id[top]
        l = st_l[top]
        r = st_r[top]
        w = st_w[top]
        d = st_d[top]
        a = st_a[top]
        b = st_b[top]
        boxes += 1
        if boxes > budget:
            return -1
        width = r - l
        if d == depth:
            if width <= 0.0:
                # Rounded-away box: every query in it sits on an edge, where h = 0.
                continue
            for j in range(a, b):
                t = (pts[j] - l) / width
                if t > 0.0 and t < 1.0:
                    out[j] += w * (t * (1.0 - t)) ** half_beta
            continue
        if use_fixed:
            u = fixed_u
            v = fixed_v
        else:
            u, v = split_uniforms(key, nid)
        x = l + u * width
        if b - a <= 8:
            k = a
            while k < b and pts[k] < x:
                k += 1
        else:
            k = a + np.searchsorted(pts[a:b], x)
        vb = v**BETA
        v1b = (1.0 - v) ** BETA
        base = nid * np.uint64(4)
        if k > a:
            ub = u**BETA
            for c in range(2):
                st_id[top] = base + np.uint64(c + 1)
                st_l[top] = l
                st_r[top] = x
                st_w[top] = w * ub * (vb if c == 0 else v1b)
                st_d[top] = d + 1
                st_a[top] = a
                st_b[top] = k
                top += 1
        if b > k:
            u1b = (1.0 - u) ** BETA
            for c in range(2):
                st_id[top] = base + np.uint64(c + 3)
                st_l[top] = x
                st_r[top] = r
                st_w[top] = w * u1b * (vb if c == 0 else v1b)
                st_d[top] = d + 1
                st_a[top] = k
                st_b[top] = b
                top += 1
    return boxes


@numba.njit(cache=True, nogil=True)
def _zn_batch(depth, pts, keys, fixed_u, fixed_v, use_fixed, budget):
    out = np.zeros((keys.shape[0], pts.shape[0]))
    for i in range(keys.shape[0]):
        if _zn_path(depth, pts, keys[i], fixed_u, fixed_v, use_fixed, budget, out[i]) < 0:
            return out, i
    return out, -1


def _check_depth(n: int) -> None:
    if not 0 <= n <= MAX_DEPTH:
        raise ValueError(f"depth must lie in 0..{MAX_DEPTH}, got {n}")


def _as_key(rng_stream) -> int:
    if isinstance(rng_stream, np.random.Generator):
        return int(rng_stream.integers(0, 2**64, dtype=np.uint64))
    return int(rng_stream) & ((1 << 64) - 1)


def evaluate_Zn(
    n: int,
    points: Sequence[float] | np.ndarray,
    rng_stream,
    *,
    fixed_split: tuple[float, float] | None = None,
    box_budget: int = DEFAULT_BOX_BUDGET,
) -> np.ndarray:
    """Z_n at arbitrary points of [0, 1] for the split tree keyed by ``rng_stream``.

    ``rng_stream`` is a 64-bit key (as from :func:`pmquad.rng.stream_key`) or a
    Generator from which one key is drawn. ``fixed_split=(u, v)`` forces every
    node to split at the same relative position (a test hook).
    """
    _check_depth(n)
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 1 or np.any((pts < 0) | (pts > 1)):
        raise ValueError("points must be a 1-d array inside [0, 1]")
    order = np.argsort(pts, kind="stable")
    sp = np.ascontiguousarray(pts[order])
    key = np.uint64(_as_key(rng_stream))
    fu, fv = fixed_split if fixed_split is not None else (0.5, 0.5)
    out = np.zeros(sp.shape[0])
    if _zn_path(n, sp, key, float(fu), float(fv), fixed_split is not None, box_budget, out) < 0:
        raise BoxBudgetExceeded(f"Z_{n} expansion exceeded the budget of {box_budget} boxes")
    res = np.empty_like(out)
    res[order] = out
    return res


def simulate_Zn(
    n: int,
    grid_size: int,
    rng_stream,
    *,
    fixed_split: tuple[float, float] | None = None,
    box_budget: int = DEFAULT_BOX_BUDGET,
) -> GridFunction:
    """One sample path of Z_n on the grid j / grid_size."""
    if grid_size < 1:
        raise ValueError(f"grid_size must be >= 1, got {grid_size}")
    grid = np.linspace(0.0, 1.0, grid_size + 1)
    return GridFunction(
        evaluate_Zn(n, grid, rng_stream, fixed_split=fixed_split, box_budget=box_budget)
    )


def sample_Zn(
    n: int,
    points: Sequence[float] | np.ndarray,
    replicates: int,
    master_seed: int,
    *,
    threads: int = 1,
    stream_id: int = 0,
    box_budget: int = DEFAULT_BOX_BUDGET,
) -> np.ndarray:
    """A (replicates, len(points)) matrix of independent Z_n evaluations.

    Replicate ``i`` uses key ``stream_key(master_seed, stream_id, i)``, so the
    matrix does not depend on ``threads``.
    """
    _check_depth(n)
    pts = np.asarray(points, dtype=np.float64)
    order = np.argsort(pts, kind="stable")
    sp = np.ascontiguousarray(pts[order])
    keys = np.array(
        [stream_key(master_seed, stream_id, i) for i in range(replicates)], dtype=np.uint64
    )
    chunks = np.array_split(np.arange(replicates), max(1, _resolve_threads(threads)))

    def run(idx):
        vals, bad = _zn_batch(n, sp, keys[idx], 0.5, 0.5, False, box_budget)
        if bad >= 0:
            raise BoxBudgetExceeded(f"Z_{n} expansion exceeded the budget of {box_budget} boxes")
        return vals

    out = np.empty((replicates, sp.shape[0]))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for idx, vals in zip(chunks, pool.map(run, chunks)):
            out[idx] = vals
    res = np.empty_like(out)
    res[:, order] = out
    return res


def _resolve_threads(threads: int) -> int:
    if threads <= 0:
        import os

        return os.cpu_count() or 1
    return threads


def crossed_boxes(n: int, s: float, key: int) -> list[tuple[int, float, float, float]]:
    """Depth-n boxes whose x-extent contains ``s``, as (node_id, l, r, vol).

    Pure-Python enumeration of the series representation; the reference
    oracle for the compiled kernel.
    """
    boxes = [(0, 0.0, 1.0, 1.0)]
    for _ in range(n):
        nxt = []
        for nid, l, r, vol in boxes:
            u, v = split_uniforms_py(key, nid)
            x = l + u * (r - l)
            if s < x:
                nxt.append((4 * nid + 1, l, x, vol * u * v))
                nxt.append((4 * nid + 2, l, x, vol * u * (1 - v)))
            else:
                nxt.append((4 * nid + 3, x, r, vol * (1 - u) * v))
                nxt.append((4 * nid + 4, x, r, vol * (1 - u) * (1 - v)))
        boxes = nxt
    return boxes


@dataclass(frozen=True)
class SupEstimate:
    depth: int
    grid_size: int
    replicates: int
    mean: float
    variance: float
    stderr: float
    ci95: tuple[float, float]
    caveat: str = SUP_CAVEAT

    def as_dict(self) -> dict:
        return {
            "depth": self.depth,
            "grid_size": self.grid_size,
            "replicates": self.replicates,
            "mean": self.mean,
            "variance": self.variance,
            "stderr": self.stderr,
            "ci95": list(self.ci95),
            "caveat": self.caveat,
        }


def _summary(x: np.ndarray) -> tuple[float, float, float]:
    k = len(x)
    mean = math.fsum(x) / k
    var = math.fsum((x - mean) ** 2) / (k - 1)
    return mean, var, math.sqrt(var / k)


def estimate_sup(
    n: int = DEFAULT_DEPTH,
    grid_size: int = DEFAULT_GRID,
    replicates: int = 200,
    master_seed: int = 0,
    *,
    threads: int = 1,
) -> SupEstimate:
    """Monte Carlo mean and variance of max_j Z_n(j / grid_size)."""
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    grid = np.linspace(0.0, 1.0, grid_size + 1)
    maxima = sample_Zn(n, grid, replicates, master_seed, threads=threads).max(axis=1)
    mean, var, se = _summary(maxima)
    return SupEstimate(n, grid_size, replicates, mean, var, se, (mean - 1.96 * se, mean + 1.96 * se))


@dataclass(frozen=True)
class FixedPointCheck:
    """Grid-wise moments of Z_n against one G-step applied to four Z_{n-1} copies."""

    s: np.ndarray
    lhs_mean: np.ndarray
    rhs_mean: np.ndarray
    lhs_second: np.ndarray
    rhs_second: np.ndarray
    mean_stderr: np.ndarray
    discrepancy: float = field(default=0.0)

    @property
    def max_z(self) -> float:
        """Largest |mean difference| in units of its standard error."""
        ok = self.mean_stderr > 0
        if not np.any(ok):
            return 0.0
        return float(np.max(np.abs(self.lhs_mean - self.rhs_mean)[ok] / self.mean_stderr[ok]))


def fixed_point_residual_mc(
    n: int,
    grid_size: int,
    replicates: int,
    master_seed: int,
    *,
    threads: int = 1,
) -> FixedPointCheck:
    """Check that Z_n and G(U, V, Z^1_{n-1}, ..., Z^4_{n-1}) agree in law on the grid.

    Returns the grid-wise first and second moments of both sides; the
    ``discrepancy`` field is the maximal absolute difference of grid means.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = np.linspace(0.0, 1.0, grid_size + 1)
    lhs = sample_Zn(n, grid, replicates, master_seed, threads=threads, stream_id=0)

    rhs = np.empty((replicates, grid.size))
    b = BETA
    for i in range(replicates):
        g = stream(master_seed, 1, i)
        u, v = g.random(2)
        keys = [stream_key(master_seed, 2 + c, i) for c in range(4)]
        left = grid < u
        tl = grid[left] / u
        tr = (grid[~left] - u) / (1.0 - u)
        row = np.empty(grid.size)
        row[left] = (u * v) ** b * evaluate_Zn(n - 1, tl, keys[0]) + (u * (1 - v)) ** b * evaluate_Zn(
            n - 1, tl, keys[1]
        )
        row[~left] = ((1 - u) * v) ** b * evaluate_Zn(n - 1, tr, keys[2]) + (
            (1 - u) * (1 - v)
        ) ** b * evaluate_Zn(n - 1, tr, keys[3])
        rhs[i] = row

    lm, rm = lhs.mean(axis=0), rhs.mean(axis=0)
    se = np.sqrt(lhs.var(axis=0, ddof=1) / replicates + rhs.var(axis=0, ddof=1) / replicates)
    return FixedPointCheck(
        s=grid,
        lhs_mean=lm,
        rhs_mean=rm,
        lhs_second=(lhs**2).mean(axis=0),
        rhs_second=(rhs**2).mean(axis=0),
        mean_stderr=se,
        discrepancy=float(np.max(np.abs(lm - rm))),
    )


def second_moment_ratio(n: int, replicates: int, master_seed: int, *, threads: int = 1):
    """Monte Carlo E[(Z_n(1/2)/h(1/2))^2] with its standard error."""
    z = sample_Zn(n, [0.5], replicates, master_seed, threads=threads)[:, 0] / mean_curve(0.5)
    mean, var, se = _summary(z**2)
    return mean, se


def moment_ratio(n: int, m: int, replicates: int, master_seed: int, *, threads: int = 1):
    """Monte Carlo E[(Z_n(1/2)/h(1/2))^m] with its standard error."""
    z = sample_Zn(n, [0.5], replicates, master_seed, threads=threads)[:, 0] / mean_curve(0.5)
    mean, var, se = _summary(z**m)
    return mean, se


def write_path_csv(path: GridFunction, out: io.TextIOBase | str | Path) -> None:
    """Write ``s, z`` rows of a sample path."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_path_csv(path, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["s", "z"])
    for s, z in zip(path.s, path.values):
        w.writerow([f"{s:.15g}", f"{z:.15g}"])
