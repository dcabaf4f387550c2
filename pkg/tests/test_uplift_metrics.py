import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uplift_policy.synth import generate, step_cate_config, true_cate
from uplift_policy.uplift import (UpliftCurve, UpliftEstimates, bucket_true_uplift,
                                  cumulative_uplift_curve, permutation_null_auc,
                                  random_ranking_auc, uplift_auc)

from conftest import make_dataset


def oracle_curve(scores, ids, t, y):
    """Direct transcription of the prefix formula, one prefix at a time."""
    rows = sorted(range(len(t)), key=lambda i: (-scores[i], ids[i]))
    n = len(rows)
    out = []
    for r in range(1, n + 1):
        prefix = rows[:r]
        yt = [y[i] for i in prefix if t[i] == 1]
        yc = [y[i] for i in prefix if t[i] == 0]
        if not yt or not yc:
            out.append((0.0, True))
        else:
            out.append(((sum(yt) / len(yt) - sum(yc) / len(yc)) * r / n, False))
    return out


def curve_for(values):
    n = len(values)
    return UpliftCurve(np.arange(1, n + 1), np.asarray(values, dtype=float),
                       np.zeros(n, dtype=bool), np.arange(n))


def test_four_customer_hand_example():
    ds = make_dataset([1, 1, 0, 0], [1.0, 0.0, 0.0, 0.0])
    est = UpliftEstimates(ds.ids, [4.0, 3.0, 2.0, 1.0])
    curve = cumulative_uplift_curve(ds, est)
    assert curve.values[-1] == 0.5
    assert curve.undefined.tolist() == [True, True, False, False]


def test_first_prefix_with_only_control_is_flagged_zero():
    ds = make_dataset([0, 1, 1, 0], [5.0, 1.0, 0.0, 2.0])
    est = UpliftEstimates(ds.ids, [9.0, 3.0, 2.0, 1.0])
    curve = cumulative_uplift_curve(ds, est)
    assert curve.values[0] == 0.0 and curve.undefined[0]


def test_endpoint_equals_global_difference_in_means_binary():
    rng = np.random.default_rng(0)
    t = rng.integers(0, 2, 500)
    y = rng.integers(0, 2, 500).astype(float)
    ds = make_dataset(t, y)
    curve = cumulative_uplift_curve(ds, UpliftEstimates(ds.ids, rng.normal(size=500)))
    assert abs(curve.values[-1] - (y[t == 1].mean() - y[t == 0].mean())) <= 1e-12


def test_ties_are_ranked_by_ascending_id():
    ds = make_dataset([0, 1, 1], [0.0, 1.0, 2.0], ids=["b", "c", "a"])
    curve = cumulative_uplift_curve(ds, UpliftEstimates(ds.ids, [1.0, 1.0, 1.0]))
    assert ds.ids[curve.order].tolist() == ["a", "b", "c"]


def test_multi_arm_curve_uses_arm_and_control_rows_only():
    ds = make_dataset([0, 1, 2, 2, 1, 0], [0.0, 3.0, 9.0, 9.0, 1.0, 2.0], labels=("c", "a", "b"))
    est = UpliftEstimates(ds.ids, np.column_stack([np.arange(6.0), np.zeros(6)]))
    curve = cumulative_uplift_curve(ds, est, arm=1)
    assert curve.n == 4
    assert curve.values[-1] == pytest.approx(2.0 - 1.0)


rows = st.lists(st.tuples(st.integers(0, 1), st.floats(-100, 100), st.integers(-3, 3)),
                min_size=2, max_size=30)


@given(rows=rows)
def test_curve_matches_direct_formula(rows):
    t = [r[0] for r in rows]
    if len(set(t)) < 2:
        t[0], t[1] = 0, 1
    y = [r[1] for r in rows]
    scores = [float(r[2]) for r in rows]
    ds = make_dataset(t, y)
    curve = cumulative_uplift_curve(ds, UpliftEstimates(ds.ids, scores))
    expect = oracle_curve(scores, ds.ids.tolist(), t, y)
    assert curve.undefined.tolist() == [flag for _, flag in expect]
    assert np.allclose(curve.values, [v for v, _ in expect], rtol=1e-9, atol=1e-9)


def test_auc_of_zero_curve():
    assert uplift_auc(curve_for([0.0] * 10)) == 0.0


def test_auc_of_constant_curve_approaches_constant():
    n, c = 100000, 0.7
    auc = uplift_auc(curve_for([c] * n))
    assert auc == pytest.approx(c * (1 - 1 / (2 * n)), rel=1e-12)
    assert abs(auc - c) < 1e-5


def test_auc_two_point_trapezoid():
    assert uplift_auc(curve_for([0.5, 0.5])) == pytest.approx(0.375, abs=1e-15)


@given(values=st.lists(st.floats(-10, 10), min_size=1, max_size=50))
def test_auc_matches_numpy_trapezoid(values):
    n = len(values)
    x = np.concatenate([[0.0], np.arange(1, n + 1) / n])
    v = np.concatenate([[0.0], values])
    expect = float(np.sum((x[1:] - x[:-1]) * (v[1:] + v[:-1]) / 2))
    assert uplift_auc(curve_for(values)) == pytest.approx(expect, rel=1e-12, abs=1e-12)


def test_random_ranking_auc_is_seeded():
    ds, _ = generate(step_cate_config(n=500, seed=1))
    assert random_ranking_auc(ds, 4) == random_ranking_auc(ds, 4)
    assert random_ranking_auc(ds, 4) != random_ranking_auc(ds, 5)


def test_permutation_null_is_centered_without_effect():
    rng = np.random.default_rng(3)
    t = rng.integers(0, 2, 2000)
    ds = make_dataset(t, rng.normal(size=2000))
    null = permutation_null_auc(ds, UpliftEstimates(ds.ids, rng.random(2000)), 200, seed=0)
    assert null.shape == (200,)
    assert abs(null.mean()) < 3 * null.std() / np.sqrt(200) + 1e-3


def test_true_cate_ranking_beats_random_ranking():
    wins = 0
    for seed in range(100):
        ds, gt = generate(step_cate_config(n=4000, seed=seed))
        oracle = UpliftEstimates(ds.ids, true_cate(gt, 1, ds.X))
        wins += uplift_auc(cumulative_uplift_curve(ds, oracle)) >= random_ranking_auc(ds, seed)
    assert wins >= 95


def test_single_bucket_equals_global_difference():
    rng = np.random.default_rng(4)
    t = rng.integers(0, 2, 300)
    y = rng.normal(size=300)
    ds = make_dataset(t, y)
    (b,) = bucket_true_uplift(ds, rng.random(300), 1)
    assert b.value == pytest.approx(y[t == 1].mean() - y[t == 0].mean(), rel=1e-12)


def test_bucket_hand_example():
    ds = make_dataset([1, 1, 1, 0, 0], [1.0, 1.0, 0.0, 0.0, 1.0])
    (b,) = bucket_true_uplift(ds, np.zeros(5), 1)
    assert b.value == pytest.approx(2 / 3 - 1 / 2, abs=1e-15)
    assert (b.n_treated, b.n_control) == (3, 2)


def test_bucket_without_treated_rows_is_undefined():
    ds = make_dataset([0, 0, 1, 1], [1.0, 2.0, 3.0, 4.0])
    low, high = bucket_true_uplift(ds, [0.1, 0.2, 0.3, 0.4], 2)
    assert not low.defined and low.value == 0.0
    assert high.defined is False and (high.n_treated, high.n_control) == (2, 0)


def test_bucket_sizes_and_limits():
    ds = make_dataset([0, 1] * 5, np.arange(10.0))
    buckets = bucket_true_uplift(ds, np.arange(10.0), 3)
    assert [b.n_treated + b.n_control for b in buckets] == [4, 3, 3]
    assert [b.score_min for b in buckets] == [0.0, 4.0, 7.0]
    with pytest.raises(ValueError):
        bucket_true_uplift(ds, np.arange(10.0), 11)
