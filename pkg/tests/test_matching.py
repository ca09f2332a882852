import numpy as np
import pytest

from negdet.geometry import BBox
from negdet.matching import MatchWeights, brute_force_assign, build_cost_matrix, hungarian
from oracles import enumerate_assignment


def test_hungarian_singleton():
    pairs, cost = hungarian(np.array([[0.0]]))
    assert pairs == [(0, 0)] and cost == 0.0


def test_hungarian_two_by_two():
    pairs, cost = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert cost == 2.0
    assert pairs == [(0, 0), (1, 1)]


def test_hungarian_worked_three_by_three():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    pairs, total = hungarian(cost)
    assert total == 5.0
    assert sorted(pairs, key=lambda t: t[0]) == [(0, 1), (1, 0), (2, 2)]


def test_hungarian_empty():
    assert hungarian(np.zeros((0, 0))) == ([], 0.0)


def test_hungarian_rejects_wide_matrix():
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))


def test_brute_force_matches_oracle_and_hungarian():
    rng = np.random.default_rng(17)
    for _ in range(200):
        rows = rng.integers(5, 8)
        cols = rng.integers(1, 6)
        cost = rng.normal(size=(rows, cols))
        pairs_h, cost_h = hungarian(cost)
        pairs_b, cost_b = brute_force_assign(cost)
        _, cost_o = enumerate_assignment(cost)
        assert cost_h == pytest.approx(cost_b, abs=1e-12)
        assert cost_h == pytest.approx(cost_o, abs=1e-12)
        # valid matching: no duplicated rows or columns
        assert len({r for r, _ in pairs_h}) == cols
        assert len({c for _, c in pairs_h}) == cols


def test_brute_force_refusal():
    with pytest.raises(ValueError):
        brute_force_assign(np.zeros((9, 9)))


def test_row_constant_shift_property():
    rng = np.random.default_rng(23)
    cost = rng.normal(size=(5, 5))
    _, base = hungarian(cost)
    shifted = cost.copy()
    shifted[2] += 3.5
    _, after = hungarian(shifted)
    assert after == pytest.approx(base + 3.5)


def test_cost_matrix_identical_box_prob_one():
    w = MatchWeights()
    box = BBox(16, 16, 32, 32)
    probs = np.array([[1.0]])
    pred = np.array([[0.5, 0.5, 0.5, 0.5]])  # same box in a 64x64 image
    cost = build_cost_matrix(probs, pred, [(0, box)], w, 64, 64, [0])
    assert cost[0, 0] == pytest.approx(-2.0)


def test_cost_matrix_prob_zero_identical_boxes():
    w = MatchWeights()
    box = BBox(16, 16, 32, 32)
    cost = build_cost_matrix(np.array([[0.0]]), np.array([[0.5, 0.5, 0.5, 0.5]]),
                             [(0, box)], w, 64, 64, [0])
    assert cost[0, 0] == pytest.approx(0.0)


def test_cost_strictly_decreases_in_prob():
    w = MatchWeights()
    box = BBox(10, 10, 20, 20)
    pred = np.array([[0.4, 0.4, 0.4, 0.4]])
    lo = build_cost_matrix(np.array([[0.2]]), pred, [(0, box)], w, 64, 64, [0])[0, 0]
    hi = build_cost_matrix(np.array([[0.9]]), pred, [(0, box)], w, 64, 64, [0])[0, 0]
    assert hi < lo


def test_cost_matrix_unknown_category():
    with pytest.raises(KeyError):
        build_cost_matrix(np.array([[0.5]]), np.array([[0.5, 0.5, 0.5, 0.5]]),
                          [(7, BBox(0, 0, 1, 1))], MatchWeights(), 64, 64, [0])
