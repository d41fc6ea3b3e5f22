"""Point quadtrees, k-d trees and relaxed k-d trees on the unit square.

Trees are stored as arenas: node ``i`` holds the ``i``-th inserted point,
children are integer indices (``-1`` for an empty slot). Every node carries
its region as the half-open rectangle ``[x_lo, x_hi) x [y_lo, y_hi)``; a point
whose coordinate equals a split value goes to the high side.

Quadtree child slots follow the figure layout of the classical quadtree
picture::

    slot 1 (NW) | slot 3 (NE)           quadrant numbers 2 | 4
    ------------+------------                            --+--
    slot 0 (SW) | slot 2 (SE)                            1 | 3

For k-d variants slot 0 is the low side and slot 1 the high side of the
node's discriminant axis (0 = x, 1 = y).
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numba
import numpy as np

__all__ = [
    "CostProfile",
    "DuplicateCoordinateError",
    "Point",
    "Region",
    "SearchTree",
    "TreeKind",
    "build",
    "cost_profile",
    "partial_match_cost",
    "poisson_point_count",
    "read_points_csv",
    "sample_uniform_points",
    "tree_statistics",
    "worst_query_cost",
    "write_profile_csv",
]


class Point(NamedTuple):
    x: float
    y: float


class TreeKind(str, enum.Enum):
    QUADTREE = "quadtree"
    KD = "kd"
    RELAXED_KD = "relaxed_kd"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @property
    def arity(self) -> int:
        return 4 if self is TreeKind.QUADTREE else 2


_KIND_CODES = {TreeKind.QUADTREE: 0, TreeKind.KD: 1, TreeKind.RELAXED_KD: 2}


class DuplicateCoordinateError(ValueError):
    """Two points share an x or a y coordinate."""

    def __init__(self, axis: str, i: int, j: int, value: float):
        self.axis = axis
        self.pair = (i, j)
        self.value = value
        super().__init__(
            f"points {i} and {j} share {axis}-coordinate {value!r}; "
            "the model assumes distinct coordinates (perturb the input)"
        )


@dataclass(frozen=True)
class Region:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def contains_x(self, s: float) -> bool:
        # The right edge of the unit square is closed so that s = 1 is answered.
        return self.x_lo <= s and (s < self.x_hi or (self.x_hi == 1.0 and s == 1.0))

    def contains(self, p: Point) -> bool:
        return self.x_lo <= p[0] < self.x_hi and self.y_lo <= p[1] < self.y_hi

    @property
    def width(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def area(self) -> float:
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _build_arena(xs, ys, kind, axes):
    n = xs.shape[0]
    arity = 4 if kind == 0 else 2
    children = np.full((n, arity), -1, dtype=np.int32)
    axis = np.empty(n, dtype=np.int8)
    depth = np.zeros(n, dtype=np.int64)
    xlo = np.zeros(n)
    xhi = np.ones(n)
    ylo = np.zeros(n)
    yhi = np.ones(n)
    # Node whose x-coordinate bounds the region on the left/right (-1: square edge).
    lo_node = np.full(n, -1, dtype=np.int32)
    hi_node = np.full(n, -1, dtype=np.int32)
    tie_a = -1
    tie_b = -1
    if n == 0:
        return children, axis, depth, xlo, xhi, ylo, yhi, lo_node, hi_node, tie_a, tie_b
    axis[0] = -1 if kind == 0 else (0 if kind == 1 else axes[0])
    for i in range(1, n):
        px = xs[i]
        py = ys[i]
        lx, hx, ly, hy = 0.0, 1.0, 0.0, 1.0
        ln = -1
        hn = -1
        node = 0
        d = 0
        while True:
            nx = xs[node]
            ny = ys[node]
            if tie_a < 0 and (nx == px or ny == py):
                tie_a = node
                tie_b = i
            if kind == 0:
                east = px >= nx
                north = py >= ny
                slot = 2 * east + north
                if east:
                    lx = nx
                    ln = node
                else:
                    hx = nx
                    hn = node
                if north:
                    ly = ny
                else:
                    hy = ny
            else:
                if axis[node] == 0:
                    slot = 1 if px >= nx else 0
                    if slot == 1:
                        lx = nx
                        ln = node
                    else:
                        hx = nx
                        hn = node
                else:
                    slot = 1 if py >= ny else 0
                    if slot == 1:
                        ly = ny
                    else:
                        hy = ny
            d += 1
            nxt = children[node, slot]
            if nxt < 0:
                children[node, slot] = i
                break
            node = nxt
        xlo[i] = lx
        xhi[i] = hx
        lo_node[i] = ln
        hi_node[i] = hn
        ylo[i] = ly
        yhi[i] = hy
        depth[i] = d
        if kind == 1:
            axis[i] = d % 2
        elif kind == 2:
            axis[i] = axes[i]
        else:
            axis[i] = -1
    return children, axis, depth, xlo, xhi, ylo, yhi, lo_node, hi_node, tie_a, tie_b


@numba.njit(cache=True, nogil=True)
def _traverse_cost(xs, children, axis, kind, s):
    n = xs.shape[0]
    if n == 0:
        return 0
    stack = np.empty(n, dtype=np.int64)
    stack[0] = 0
    top = 1
    count = 0
    while top > 0:
        top -= 1
        node = stack[top]
        count += 1
        if kind == 0:
            base = 2 if s >= xs[node] else 0
            for k in range(base, base + 2):
                c = children[node, k]
                if c >= 0:
                    stack[top] = c
                    top += 1
        elif axis[node] == 0:
            c = children[node, 1 if s >= xs[node] else 0]
            if c >= 0:
                stack[top] = c
                top += 1
        else:
            for k in range(2):
                c = children[node, k]
                if c >= 0:
                    stack[top] = c
                    top += 1
    return count


@numba.njit(cache=True, nogil=True)
def _coverage(xs, order, lo_node, hi_node):
    """Cost on each elementary interval between consecutive sorted x's.

    ``order`` sorts ``xs``. Returns (bounds, cover) with
    bounds = [0, sorted xs..., 1] and cover[k] the number of node x-extents
    containing [bounds[k], bounds[k+1]).
    """
    n = xs.shape[0]
    slot = np.empty(n, dtype=np.int64)
    bounds = np.empty(n + 2)
    bounds[0] = 0.0
    bounds[n + 1] = 1.0
    for k in range(n):
        slot[order[k]] = k + 1
        bounds[k + 1] = xs[order[k]]
    diff = np.zeros(n + 2, dtype=np.int64)
    for i in range(n):
        a = lo_node[i]
        b = hi_node[i]
        diff[0 if a < 0 else slot[a]] += 1
        diff[n + 1 if b < 0 else slot[b]] -= 1
    cover = np.empty(n + 1, dtype=np.int64)
    acc = 0
    for k in range(n + 1):
        acc += diff[k]
        cover[k] = acc
    return bounds, cover


@numba.njit(cache=True, nogil=True)
def _tree_stats(xs, ys, order, kind, axes, queries):
    children, axis, depth, xlo, xhi, ylo, yhi, lo_node, hi_node, tie_a, tie_b = _build_arena(
        xs, ys, kind, axes
    )
    n = xs.shape[0]
    out = np.zeros(queries.shape[0], dtype=np.int64)
    if n == 0:
        return out, 0.0, 0, 0.0, tie_a, tie_b
    bounds, cover = _coverage(xs, order, lo_node, hi_node)
    integral = 0.0
    for i in range(n):
        integral += xhi[i] - xlo[i]
    best = 0
    arg = 0.0
    for k in range(n + 1):
        if cover[k] > best:
            best = cover[k]
            arg = bounds[k]
    for q in range(queries.shape[0]):
        k = np.searchsorted(bounds, queries[q], side="right") - 1
        if k > n:
            k = n
        out[q] = cover[k]
    return out, integral, best, arg, tie_a, tie_b


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SearchTree:
    """An immutable tree arena. Node ``i`` stores the ``i``-th inserted point."""

    kind: TreeKind
    xs: np.ndarray
    ys: np.ndarray
    children: np.ndarray
    axis: np.ndarray
    depth: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    lo_node: np.ndarray
    hi_node: np.ndarray

    @property
    def size(self) -> int:
        return int(self.xs.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def root(self) -> int | None:
        return 0 if self.size else None

    def point(self, i: int) -> Point:
        return Point(float(self.xs[i]), float(self.ys[i]))

    def region(self, i: int) -> Region:
        return Region(
            float(self.x_lo[i]), float(self.x_hi[i]), float(self.y_lo[i]), float(self.y_hi[i])
        )

    def child(self, i: int, slot: int) -> int | None:
        c = int(self.children[i, slot])
        return None if c < 0 else c

    def subtree_sizes(self) -> np.ndarray:
        sizes = np.ones(self.size, dtype=np.int64)
        # Children are always inserted after their parent.
        for i in range(self.size - 1, -1, -1):
            for c in self.children[i]:
                if c >= 0:
                    sizes[i] += sizes[c]
        return sizes

    def prefix(self, k: int) -> "SearchTree":
        """The tree after inserting only the first ``k`` points."""
        ch = self.children[:k].copy()
        ch[ch >= k] = -1
        return SearchTree(
            self.kind, self.xs[:k], self.ys[:k], ch, self.axis[:k], self.depth[:k],
            self.x_lo[:k], self.x_hi[:k], self.y_lo[:k], self.y_hi[:k],
            self.lo_node[:k], self.hi_node[:k],
        )


def _as_xy(points) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.empty(0), np.empty(0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {arr.shape}")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        bad = int(np.argmax(~((arr >= 0.0) & (arr <= 1.0)).all(axis=1)))
        raise ValueError(f"point {bad} = {tuple(arr[bad])} lies outside [0, 1]^2")
    return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])


def _check_distinct(xs: np.ndarray, ys: np.ndarray) -> None:
    for name, v in (("x", xs), ("y", ys)):
        order = np.argsort(v, kind="stable")
        sv = v[order]
        eq = np.flatnonzero(sv[1:] == sv[:-1])
        if eq.size:
            k = int(eq[0])
            i, j = sorted((int(order[k]), int(order[k + 1])))
            raise DuplicateCoordinateError(name, i, j, float(sv[k]))


def _resolve_axes(kind: TreeKind, n: int, rng, axes) -> np.ndarray:
    if axes is not None:
        a = np.asarray(axes, dtype=np.int8)
        if a.shape != (n,) or not np.all((a == 0) | (a == 1)):
            raise ValueError("axes must be a length-n sequence of 0 (x) / 1 (y)")
        return a
    if kind is TreeKind.RELAXED_KD:
        if rng is None:
            raise ValueError("relaxed_kd trees need an rng (or explicit axes)")
        return rng.integers(0, 2, size=n).astype(np.int8)
    return np.zeros(n, dtype=np.int8)


def build(
    points: Sequence[Point] | np.ndarray,
    kind: TreeKind | str = TreeKind.QUADTREE,
    *,
    rng: np.random.Generator | None = None,
    axes: Sequence[int] | None = None,
) -> SearchTree:
    """Insert ``points`` in order into an empty tree of the given kind.

    Relaxed k-d trees draw each node's discriminant uniformly from {x, y}
    using ``rng``, unless ``axes`` fixes them explicitly.

    Raises
    ------
    DuplicateCoordinateError
        If two points share an x or a y coordinate.
    """
    kind = TreeKind(kind)
    xs, ys = _as_xy(points)
    _check_distinct(xs, ys)
    ax = _resolve_axes(kind, xs.shape[0], rng, axes)
    children, axis, depth, xlo, xhi, ylo, yhi, lo_node, hi_node, _, _ = _build_arena(
        xs, ys, kind.code, ax
    )
    return SearchTree(kind, xs, ys, children, axis, depth, xlo, xhi, ylo, yhi, lo_node, hi_node)


def sample_uniform_points(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent uniform points of the unit square as an (n, 2) array."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return rng.random((n, 2))


def poisson_point_count(t: float, rng: np.random.Generator) -> int:
    """A Poisson(t) number of points, for the Poissonized cost P_t(s)."""
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t!r}")
    return int(rng.poisson(t))


def partial_match_cost(tree: SearchTree, s: float) -> int:
    """Number of nodes visited by the partial match query for the line x = s."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s!r}")
    return int(_traverse_cost(tree.xs, tree.children, tree.axis, tree.kind.code, float(s)))


@dataclass(frozen=True)
class CostProfile:
    """Piecewise-constant ``s -> C_n(s)``.

    ``values[i]`` is the cost on ``[breakpoints[i-1], breakpoints[i])`` with
    the conventions ``breakpoints[-1] = 0`` and a closed last interval ending
    at 1.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, s):
        idx = np.searchsorted(self.breakpoints, s, side="right")
        return self.values[idx]

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate(([0.0], self.breakpoints, [1.0]))

    def integral(self) -> float:
        return math.fsum(np.diff(self.edges) * self.values)

    def intervals(self) -> Iterable[tuple[float, float, int]]:
        e = self.edges
        for i, v in enumerate(self.values):
            yield float(e[i]), float(e[i + 1]), int(v)


def cost_profile(tree: SearchTree) -> CostProfile:
    """The full cost function, by a sweep over node x-extents."""
    if tree.size == 0:
        return CostProfile(np.empty(0), np.zeros(1, dtype=np.int64))
    bounds, cover = _coverage(tree.xs, np.argsort(tree.xs), tree.lo_node, tree.hi_node)
    # bounds[1:-1] are candidate breakpoints; keep only real jumps.
    jump = np.flatnonzero(cover[1:] != cover[:-1])
    keep = np.concatenate(([0], jump + 1))
    return CostProfile(breakpoints=bounds[jump + 1].copy(), values=cover[keep].copy())


def worst_query_cost(tree: SearchTree) -> tuple[int, float]:
    """``(S_n, s*)``: the maximal cost and the left end of the first maximising interval."""
    prof = cost_profile(tree)
    i = int(np.argmax(prof.values))
    return int(prof.values[i]), float(prof.edges[i])


@dataclass(frozen=True)
class TreeStatistics:
    costs: np.ndarray
    integral: float
    worst: int
    worst_at: float


def tree_statistics(
    points: np.ndarray,
    kind: TreeKind | str,
    queries: np.ndarray,
    axes: np.ndarray | None = None,
) -> TreeStatistics:
    """Costs at ``queries``, profile integral and S_n without materialising a SearchTree.

    Only ties met on an insertion path are detected here (those are the
    ones that influence the tree); :func:`build` checks all pairs.
    """
    kind = TreeKind(kind)
    xs = np.ascontiguousarray(points[:, 0])
    ys = np.ascontiguousarray(points[:, 1])
    if axes is None:
        axes = np.zeros(xs.shape[0], dtype=np.int8)
    costs, integral, worst, arg, ta, tb = _tree_stats(
        xs, ys, np.argsort(xs), kind.code, axes, np.asarray(queries, dtype=np.float64)
    )
    if ta >= 0:
        axis = "x" if xs[ta] == xs[tb] else "y"
        raise DuplicateCoordinateError(axis, int(ta), int(tb), float(xs[ta] if axis == "x" else ys[ta]))
    return TreeStatistics(costs, float(integral), int(worst), float(arg))


def read_points_csv(path: str | Path) -> np.ndarray:
    """Read points from a CSV with columns x, y; a header row is optional."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if lineno == 1 and not rows:
                    continue
                raise ValueError(f"{path}:{lineno}: expected two decimal columns x,y") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def write_profile_csv(profile: CostProfile, out: io.TextIOBase | str | Path) -> None:
    """Write ``s_left, s_right, cost`` rows."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_profile_csv(profile, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["s_left", "s_right", "cost"])
    for lo, hi, v in profile.intervals():
        w.writerow([f"{lo:.15g}", f"{hi:.15g}", v])
