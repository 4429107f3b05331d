import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcagcn.fusion import (
    FusionError,
    ScoreMatrix,
    feasible_grid,
    fuse_accuracy,
    fused_predictions,
    grid_levels,
    solve,
    solve_greedy,
    static_fuse,
)
from tcagcn.serialization import read_scores, write_scores

import oracles


def streams_from(r, labels, ids=None):
    return [ScoreMatrix(f"s{k}", r[k], labels, ids) for k in range(4)]


def fixture():
    """Three samples, two classes; only stream 2 is right on sample 3."""
    r = np.zeros((4, 3, 2))
    r[:, :2, 0] = 1.0
    r[0, 2] = [1.0, 0.0]
    r[1, 2] = [0.0, 2.52]
    r[2, 2] = [1.0, 0.0]
    r[3, 2] = [1.0, 0.0]
    return r, np.array([0, 0, 1])


def random_instance(rng, n=None, k=None):
    n = n or int(rng.integers(1, 21))
    k = k or int(rng.integers(2, 5))
    return rng.standard_normal((4, n, k)), rng.integers(0, k, n)


# hand-computed sample-3 fused scores (class 0 vs class 1):
#   (0.25, 1, 0.2, 0.15): 0.25 + 0.2 + 0.15 = 0.60 < 2.52       -> right, acc 3/3
#   (1, 0.05, 0.05, 0.05): 1.10 > 0.126                          -> wrong, acc 2/3
#   (1, 1, 1, 1):          3.00 > 2.52                           -> wrong, acc 2/3
@pytest.mark.parametrize(
    "weights,acc", [((0.25, 1, 0.2, 0.15), 1.0), ((1, 0.05, 0.05, 0.05), 2 / 3), ((1, 1, 1, 1), 2 / 3)]
)
def test_fixture_accuracies(weights, acc):
    r, y = fixture()
    assert fuse_accuracy(streams_from(r, y), weights)[0] == pytest.approx(acc)
    assert static_fuse(streams_from(r, y), weights)[0] == pytest.approx(acc)


def test_fixture_solve_matches_brute_force():
    r, y = fixture()
    res = solve(streams_from(r, y), 0.05)
    want_w, want_right, count = oracles.fusion_brute_force(r, y, 20)
    assert res.accuracy == 1.0 and res.right == 3 and res.zong == 3
    assert res.weights == want_w == (0.95, 1.0, 0.9, 0.65)
    assert res.tuples_evaluated == count == 4845


def test_grid_cardinality_is_20_choose_4():
    assert len(feasible_grid(0.05)) == math.comb(20, 4) == 4845
    g = feasible_grid(0.05)
    a, b, c, d = g.T
    assert np.all((b > a) & (a > c) & (c > d) & (d > 0) & (b <= 1))
    assert len({tuple(row) for row in g}) == 4845


def test_grid_levels():
    assert list(grid_levels(0.25)) == [0.25, 0.5, 0.75, 1.0]
    assert grid_levels(0.05)[-1] == 1.0 and grid_levels(0.1)[2] == 0.3
    with pytest.raises(FusionError):
        grid_levels(1.5)
    with pytest.raises(FusionError):
        feasible_grid(0.5)  # only two levels


def test_solver_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(10):
        r, y = random_instance(rng)
        res = solve(streams_from(r, y), 0.1)
        want_w, want_right, _ = oracles.fusion_brute_force(r, y, 10)
        assert (res.weights, res.right) == (want_w, want_right)


def test_degenerate_streams_return_tie_break_tuple():
    r = np.tile(np.random.default_rng(0).standard_normal((1, 6, 3)), (4, 1, 1))
    y = np.array([0, 1, 2, 0, 1, 2])
    res = solve(streams_from(r, y), 0.2)
    # every tuple scores the same; the lexicographically largest (b, a, c, d) wins
    assert res.weights == (0.8, 1.0, 0.6, 0.4)


def test_dominance_over_every_feasible_tuple():
    r, y = random_instance(np.random.default_rng(4), n=15, k=3)
    s = streams_from(r, y)
    res = solve(s, 0.2)
    for w in feasible_grid(0.2):
        assert res.accuracy >= fuse_accuracy(s, w)[0]


def test_greedy_never_beats_exact():
    rng = np.random.default_rng(5)
    for _ in range(10):
        s = streams_from(*random_instance(rng))
        g, e = solve_greedy(s, 0.05), solve(s, 0.05)
        assert g.accuracy <= e.accuracy
        a, b, c, d = g.weights
        assert b > a > c > d


def test_greedy_start_is_feasible_and_returned_when_nothing_improves():
    r = np.zeros((4, 2, 2))
    r[:, :, 0] = 1
    res = solve_greedy(streams_from(r, np.array([0, 0])))
    assert res.weights == (0.6, 0.8, 0.4, 0.2) and res.accuracy == 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.01, 100))
def test_positive_scale_invariance(seed, scale):
    r, y = random_instance(np.random.default_rng(seed))
    s = streams_from(r, y)
    w = np.array([0.6, 0.8, 0.4, 0.2])
    assert np.array_equal(fused_predictions(s, w), fused_predictions(s, w * scale))


def test_one_hot_streams_are_perfect_for_any_weights():
    y = np.array([2, 0, 1, 1])
    r = np.tile(np.eye(3)[y], (4, 1, 1))
    for w in [(0.3, 0.9, 0.2, 0.1), (1, 1, 1, 1), (5, 0.1, 2, 7)]:
        assert fuse_accuracy(streams_from(r, y), w) == (1.0, 4)


def test_sample_permutation_leaves_accuracy_unchanged():
    r, y = random_instance(np.random.default_rng(8), n=12, k=4)
    perm = np.random.default_rng(9).permutation(12)
    a = solve(streams_from(r, y), 0.1)
    b = solve(streams_from(r[:, perm], y[perm]), 0.1)
    assert a.right == b.right


def test_argmax_ties_go_to_lowest_class():
    r = np.ones((4, 1, 3))
    assert fused_predictions(streams_from(r, np.array([0])), (0.6, 0.8, 0.4, 0.2))[0] == 0


def test_order_violations_and_bad_weights_raise():
    r, y = fixture()
    s = streams_from(r, y)
    with pytest.raises(FusionError):
        static_fuse(s, (1, 1e-3, 1e-3, 1e-3), require_order=True)
    with pytest.raises(FusionError):
        fuse_accuracy(s, (0.5, 0.0, 0.2, 0.1))
    with pytest.raises(FusionError):
        solve_greedy(s, 0.05, start=(0.9, 0.8, 0.4, 0.2))


def test_misaligned_sample_ids_are_reported():
    r, y = fixture()
    s = streams_from(r, y, ids=("a", "b", "c"))
    s[2] = ScoreMatrix("s2", r[2], y, ("a", "b", "zz"))
    with pytest.raises(FusionError, match="zz"):
        solve(s)


def test_stream_count_and_shape_checks():
    r, y = fixture()
    with pytest.raises(FusionError):
        solve(streams_from(r, y)[:3])
    s = streams_from(r, y)
    s[1] = ScoreMatrix("s1", np.zeros((3, 3)), y)
    with pytest.raises(FusionError):
        solve(s)
    with pytest.raises(FusionError):
        ScoreMatrix("bad", np.array([[np.nan, 0.0]]), [0])


def test_score_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    m = ScoreMatrix("joint", rng.standard_normal((5, 3)), rng.integers(0, 3, 5), [f"x{i}" for i in range(5)])
    path = tmp_path / "s.csv"
    write_scores(path, m)
    back = read_scores(path, "joint")
    assert np.array_equal(back.scores, m.scores)
    assert np.array_equal(back.labels, m.labels) and back.sample_ids == m.sample_ids


def test_result_dict_fields():
    r, y = fixture()
    d = solve(streams_from(r, y), 0.1).to_dict()
    assert set(d) == {"weights", "accuracy", "right", "zong", "tuples_evaluated"}
    assert d["tuples_evaluated"] == math.comb(10, 4)


def test_four_nested_loop_count_matches_combinations():
    for div in (4, 5, 10):
        count = sum(1 for b, a, c, d in itertools.product(range(1, div + 1), repeat=4) if b > a > c > d)
        assert count == len(feasible_grid(1 / div)) == math.comb(div, 4)
