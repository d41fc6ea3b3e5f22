import io

import numpy as np
import pytest
from scipy import stats

from pmquad.rng import stream
from pmquad.trees import (
    DuplicateCoordinateError,
    Point,
    TreeKind,
    build,
    cost_profile,
    partial_match_cost,
    poisson_point_count,
    read_points_csv,
    sample_uniform_points,
    tree_statistics,
    worst_query_cost,
    write_profile_csv,
)

KINDS = list(TreeKind)
TWO = [(0.5, 0.5), (0.25, 0.75)]


def _region_count(tree, s):
    """Oracle: number of nodes whose x-extent contains s."""
    closed_right = (tree.x_hi == 1.0) & (s == 1.0)
    return int(np.sum((tree.x_lo <= s) & ((s < tree.x_hi) | closed_right)))


def _random_tree(rng, n, kind):
    return build(sample_uniform_points(n, rng), kind, rng=rng)


def test_empty_tree():
    t = build([])
    assert t.size == 0 and t.root is None
    assert partial_match_cost(t, 0.3) == 0


def test_two_point_quadtree_layout():
    t = build([Point(0.5, 0.5), Point(0.25, 0.75)])
    assert t.child(0, 1) == 1  # NW slot
    assert [t.child(0, k) for k in (0, 2, 3)] == [None, None, None]
    r = t.region(1)
    assert (r.x_lo, r.x_hi, r.y_lo, r.y_hi) == (0.0, 0.5, 0.5, 1.0)
    assert r.contains(t.point(1))


@pytest.mark.parametrize("s, cost", [(0.3, 2), (0.7, 1), (0.5, 1), (0.0, 2), (1.0, 1)])
def test_two_point_costs(s, cost):
    assert partial_match_cost(build(TWO), s) == cost


def test_two_point_profile_and_worst():
    prof = cost_profile(build(TWO))
    np.testing.assert_array_equal(prof.breakpoints, [0.5])
    np.testing.assert_array_equal(prof.values, [2, 1])
    assert worst_query_cost(build(TWO)) == (2, 0.0)


def test_single_point_tree():
    t = build([(0.3, 0.8)])
    for s in (0.0, 0.2, 0.3, 0.9, 1.0):
        assert partial_match_cost(t, s) == 1
    prof = cost_profile(t)
    assert prof.breakpoints.size == 0 and list(prof.values) == [1]
    assert worst_query_cost(t) == (1, 0.0)


def test_quadrant_routing_all_slots():
    pts = [(0.5, 0.5), (0.2, 0.1), (0.3, 0.8), (0.8, 0.2), (0.7, 0.9)]
    t = build(pts)
    assert [t.child(0, k) for k in range(4)] == [1, 2, 3, 4]


def test_ties_route_high():
    # Coordinate equal to the split goes to the high side; build() rejects it,
    # but tree_statistics reports it as a duplicate met on the insertion path.
    with pytest.raises(DuplicateCoordinateError) as exc:
        build([(0.5, 0.5), (0.5, 0.2)])
    assert exc.value.pair == (0, 1) and exc.value.axis == "x"
    with pytest.raises(DuplicateCoordinateError) as exc:
        tree_statistics(np.array([(0.5, 0.5), (0.1, 0.5)]), "quadtree", np.array([0.3]))
    assert exc.value.axis == "y"


def test_duplicate_names_pair():
    pts = [(0.1, 0.2), (0.3, 0.4), (0.5, 0.6), (0.7, 0.4)]
    with pytest.raises(DuplicateCoordinateError, match="points 1 and 3"):
        build(pts)


def test_out_of_range_points_rejected():
    with pytest.raises(ValueError):
        build([(0.5, 1.5)])


def test_kd_discriminants_alternate():
    rng = stream(1, 0)
    t = _random_tree(rng, 500, "kd")
    assert t.axis[0] == 0
    np.testing.assert_array_equal(t.axis, t.depth % 2)


def test_relaxed_kd_axes():
    t = build(TWO + [(0.9, 0.1)], "relaxed_kd", axes=[1, 0, 1])
    np.testing.assert_array_equal(t.axis, [1, 0, 1])
    # Root splits on y: (0.25, 0.75) goes high, (0.9, 0.1) goes low.
    assert t.child(0, 1) == 1 and t.child(0, 0) == 2
    assert partial_match_cost(t, 0.1) == 3
    with pytest.raises(ValueError):
        build(TWO, "relaxed_kd")


def test_kd_hand_trace():
    t = build([(0.5, 0.5), (0.25, 0.75), (0.3, 0.6)], "kd")
    # root splits x; (0.25, .75) low side, splits y; (0.3, .6) low of that.
    assert t.child(0, 0) == 1 and t.child(1, 0) == 2
    assert partial_match_cost(t, 0.4) == 3
    assert partial_match_cost(t, 0.6) == 1


@pytest.mark.parametrize("kind", KINDS)
def test_size_and_level_partition(kind):
    rng = stream(2, 0)
    t = _random_tree(rng, 400, kind)
    assert t.size == 400 == len(t)
    for d in range(int(t.depth.max()) + 1):
        nodes = np.flatnonzero(t.depth == d)
        area = sum(t.region(i).area for i in nodes)
        assert area <= 1.0 + 1e-12
        for a in nodes:
            for b in nodes:
                if a < b:
                    ra, rb = t.region(a), t.region(b)
                    overlap_x = min(ra.x_hi, rb.x_hi) - max(ra.x_lo, rb.x_lo)
                    overlap_y = min(ra.y_hi, rb.y_hi) - max(ra.y_lo, rb.y_lo)
                    assert overlap_x <= 0 or overlap_y <= 0


def test_children_partition_parent_and_nest():
    rng = stream(3, 0)
    t = _random_tree(rng, 300, "quadtree")
    for i in range(t.size):
        r = t.region(i)
        assert r.contains(t.point(i))
        for k in range(4):
            c = t.child(i, k)
            if c is not None:
                rc = t.region(c)
                assert r.x_lo <= rc.x_lo <= rc.x_hi <= r.x_hi
                assert r.y_lo <= rc.y_lo <= rc.y_hi <= r.y_hi
        # The four would-be quadrants tile the parent.
        px, py = t.point(i)
        quads = [
            (r.x_lo, px, r.y_lo, py),
            (r.x_lo, px, py, r.y_hi),
            (px, r.x_hi, r.y_lo, py),
            (px, r.x_hi, py, r.y_hi),
        ]
        assert sum((a2 - a1) * (b2 - b1) for a1, a2, b1, b2 in quads) == pytest.approx(r.area)


def test_sampling():
    assert sample_uniform_points(0, stream(1)).shape == (0, 2)
    pts = sample_uniform_points(10_000, stream(1))
    assert abs(pts[:, 0].mean() - 0.5) < 0.02
    np.testing.assert_array_equal(pts, sample_uniform_points(10_000, stream(1)))
    with pytest.raises(ValueError):
        sample_uniform_points(-1, stream(1))


def test_poisson_point_count():
    g = stream(4)
    draws = np.array([poisson_point_count(1e4, g) for _ in range(10_000)])
    assert abs(draws.mean() - 1e4) < 400
    g = stream(5)
    small = [poisson_point_count(0.01, g) for _ in range(1000)]
    assert sum(x == 0 for x in small) > 950
    assert poisson_point_count(50.0, stream(9)) == poisson_point_count(50.0, stream(9))
    with pytest.raises(ValueError):
        poisson_point_count(0.0, g)


@pytest.mark.parametrize("kind", KINDS)
def test_traversal_matches_region_count(kind):
    rng = stream(6, 0)
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        t = _random_tree(rng, n, kind)
        s = float(rng.random())
        assert partial_match_cost(t, s) == _region_count(t, s)


@pytest.mark.parametrize("kind", KINDS)
def test_insertion_monotonicity(kind):
    rng = stream(7, 0)
    for _ in range(20):
        t = _random_tree(rng, 150, kind)
        qs = rng.random(20)
        prev = np.zeros(qs.size, dtype=int)
        for k in range(1, t.size + 1):
            sub = t.prefix(k)
            cur = np.array([partial_match_cost(sub, s) for s in qs])
            assert set(np.unique(cur - prev)) <= {0, 1}
            prev = cur


@pytest.mark.parametrize("kind", KINDS)
def test_profile_matches_pointwise(kind):
    rng = stream(8, 0)
    for _ in range(10):
        t = _random_tree(rng, 300, kind)
        prof = cost_profile(t)
        qs = np.concatenate((rng.random(200), prof.breakpoints, [0.0]))
        for s in qs:
            assert prof(s) == partial_match_cost(t, s)
        assert np.all(prof.values >= 1)
        assert np.all(np.abs(np.diff(prof.values)) >= 1)
        assert np.all(np.diff(prof.breakpoints) > 0)
        assert np.all((prof.breakpoints > 0) & (prof.breakpoints < 1))


@pytest.mark.parametrize("kind", KINDS)
def test_double_counting_identity(kind):
    rng = stream(9, 0)
    for _ in range(20):
        t = _random_tree(rng, 500, kind)
        node_sum = np.sum(t.x_hi - t.x_lo)
        assert cost_profile(t).integral() == pytest.approx(node_sum, abs=1e-12)


def test_worst_query_bounds():
    rng = stream(10, 0)
    for _ in range(20):
        t = _random_tree(rng, 400, "quadtree")
        worst, at = worst_query_cost(t)
        prof = cost_profile(t)
        assert worst == prof.values.max()
        assert worst >= np.ceil(prof.integral() - 1e-9)
        assert prof(at) == worst


def test_uniform_query_mean_converges_to_integral():
    rng = stream(11, 0)
    t = _random_tree(rng, 2000, "quadtree")
    prof = cost_profile(t)
    xi = rng.random(20_000)
    costs = prof(xi)
    se = costs.std(ddof=1) / np.sqrt(xi.size)
    assert abs(costs.mean() - prof.integral()) < 4 * se


def test_root_split_is_multinomial():
    u, v = 0.3, 0.6
    n = 40
    reps = 3000
    rng = stream(12, 0)
    counts = np.zeros(4)
    for _ in range(reps):
        pts = np.vstack(([u, v], sample_uniform_points(n - 1, rng)))
        t = build(pts)
        sizes = t.subtree_sizes()
        for k in range(4):
            c = t.child(0, k)
            counts[k] += 0 if c is None else sizes[c]
    # Slot order SW, NW, SE, NE.
    p = np.array([u * v, u * (1 - v), (1 - u) * v, (1 - u) * (1 - v)])
    _, pval = stats.chisquare(counts, reps * (n - 1) * p)
    assert pval > 0.01


def test_tree_statistics_agrees_with_public_api():
    rng = stream(13, 0)
    for kind in KINDS:
        pts = sample_uniform_points(3000, rng)
        axes = rng.integers(0, 2, 3000).astype(np.int8)
        qs = np.array([0.0, 0.1, 0.5, rng.random(), 1.0])
        st = tree_statistics(pts, kind, qs, axes=axes if kind == "relaxed_kd" else None)
        t = build(pts, kind, axes=axes if kind == "relaxed_kd" else None)
        assert list(st.costs) == [partial_match_cost(t, s) for s in qs]
        worst, at = worst_query_cost(t)
        assert (st.worst, st.worst_at) == (worst, at)
        assert st.integral == pytest.approx(cost_profile(t).integral(), rel=1e-12)


def test_profile_csv_roundtrip(tmp_path):
    buf = io.StringIO()
    write_profile_csv(cost_profile(build(TWO)), buf)
    assert buf.getvalue() == "s_left,s_right,cost\n0,0.5,2\n0.5,1,1\n"


def test_points_csv(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("x,y\n0.5,0.5\n0.25,0.75\n")
    np.testing.assert_array_equal(read_points_csv(p), np.array(TWO))
    p.write_text("0.5,0.5\n0.25,0.75\n")
    np.testing.assert_array_equal(read_points_csv(p), np.array(TWO))
    p.write_text("0.5,0.5\nfoo,bar\n")
    with pytest.raises(ValueError):
        read_points_csv(p)
