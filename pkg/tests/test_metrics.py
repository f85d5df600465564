import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geolatent.errors import InvalidInputError, UndefinedMetricError
from geolatent.metrics import EvalResult, accuracy, dice, f1, r_squared, rmse


# ---------------------------------------------------------------------------
# R^2


def test_r_squared_perfect_prediction_is_exactly_one():
    t = np.array([1.0, 2.0, 3.5, -4.0])
    assert r_squared(t, t) == 1.0


def test_r_squared_mean_prediction_is_zero():
    t = np.array([1.0, 2.0, 3.0])
    assert r_squared(np.full(3, 2.0), t) == pytest.approx(0.0)


def test_r_squared_worked_example():
    assert r_squared([0.0, 0.0], [-1.0, 1.0]) == pytest.approx(0.0)


def test_r_squared_zero_variance_rejected():
    with pytest.raises(UndefinedMetricError):
        r_squared([1.0, 2.0], [3.0, 3.0])


# ---------------------------------------------------------------------------
# RMSE


def test_rmse_zero_for_match():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_rmse_worked_example():
    assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(np.sqrt(12.5))


def test_rmse_scales_homogeneously():
    rng = np.random.default_rng(0)
    target = rng.normal(size=20)
    err = rng.normal(size=20)
    base = rmse(target + err, target)
    for c in (0.5, 3.0, -2.0):
        assert rmse(target + c * err, target) == pytest.approx(abs(c) * base)


def test_rmse_empty_rejected():
    with pytest.raises(InvalidInputError):
        rmse([], [])


# ---------------------------------------------------------------------------
# accuracy / F1 / DICE


def test_accuracy_multiclass_exact_fraction():
    assert accuracy([0, 1, 2, 2], [0, 1, 2, 1]) == 0.75


def test_identical_masks_perfect_scores():
    m = np.array([0, 1, 1, 0, 1])
    assert dice(m, m) == 1.0
    assert f1(m, m) == 1.0


def test_disjoint_masks_zero_dice():
    assert dice([1, 1, 0, 0], [0, 0, 1, 1]) == 0.0


def test_half_overlap_worked_example():
    n = 8
    pred = np.ones(n)
    target = np.concatenate([np.ones(n // 2), np.zeros(n // 2)])
    assert dice(pred, target) == pytest.approx(2 / 3)


def test_empty_masks_convention_is_one():
    z = np.zeros(5)
    assert dice(z, z) == 1.0
    assert f1(z, z) == 1.0


def test_dice_equals_f1_on_random_masks():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(1, 200))
        a = rng.random(n) < rng.random()
        b = rng.random(n) < rng.random()
        assert abs(dice(a, b) - f1(a, b)) < 1e-12


@given(st.integers(1, 64), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=150, deadline=None)
def test_bounded_metrics_stay_in_range(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, size=n)
    b = rng.integers(0, 2, size=n)
    assert 0.0 <= accuracy(a, b) <= 1.0
    assert 0.0 <= f1(a, b) <= 1.0
    assert 0.0 <= dice(a, b) <= 1.0
    pred = rng.normal(size=n)
    target = rng.normal(size=n)
    assert rmse(pred, target) >= 0.0
    if n > 1 and np.ptp(target) > 0:
        assert r_squared(pred, target) <= 1.0


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(2)
    pred = rng.normal(size=50)
    target = rng.normal(size=50)
    labels_p = rng.integers(0, 3, size=50)
    labels_t = rng.integers(0, 3, size=50)
    perm = rng.permutation(50)
    assert rmse(pred, target) == pytest.approx(rmse(pred[perm], target[perm]))
    assert r_squared(pred, target) == pytest.approx(r_squared(pred[perm], target[perm]))
    assert accuracy(labels_p, labels_t) == accuracy(labels_p[perm], labels_t[perm])
    assert f1(labels_p == 1, labels_t == 1) == f1((labels_p == 1)[perm], (labels_t == 1)[perm])


def test_eval_result_serialization():
    r = EvalResult(metric="y/accuracy", value=0.5, n_samples=10)
    assert r.as_dict() == {"metric": "y/accuracy", "value": 0.5, "n_samples": 10}
