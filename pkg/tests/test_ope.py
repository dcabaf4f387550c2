import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uplift_policy.errors import UndefinedMetricError
from uplift_policy.ope import (EfficiencySpec, e_pct_is, expected_sales_under_policy, ips,
                               lift_report, match_count, relative_lift, snips, threshold_policy)
from uplift_policy.policy import Policy

from conftest import make_dataset


@pytest.fixture
def two():
    # c1 logged in arm 1 with Z=10, c2 logged in control with Z=4
    return make_dataset([1, 0], [10.0, 4.0], propensities=(0.5, 0.5))


def policy(ds, assignment):
    return Policy(ds.ids, assignment, ds.n_arms)


def test_ips_without_matches_is_zero(two):
    assert ips(two, policy(two, [0, 1])) == 0.0


def test_ips_hand_values(two):
    assert ips(two, policy(two, [1, 1])) == 10.0
    assert ips(two, policy(two, [1, 0])) == 14.0


def test_ips_unknown_outcome(two):
    with pytest.raises(ValueError):
        ips(two, policy(two, [1, 0]), "revenue")


def test_snips_full_match_is_sample_mean(two):
    assert snips(two, policy(two, [1, 0])) == 7.0


def test_snips_single_match_ignores_propensity():
    ds = make_dataset([1, 0, 0], [10.0, 3.0, 5.0], propensities=(0.8, 0.2))
    assert snips(ds, policy(ds, [1, 1, 1])) == 10.0


def test_snips_without_matches_signals(two):
    with pytest.raises(UndefinedMetricError):
        snips(two, policy(two, [0, 1]))


def test_expected_sales():
    ds = make_dataset([1, 1, 0], [0.0] * 3, aux={"sales": [100.0, 102.0, 50.0]})
    assert expected_sales_under_policy(ds, Policy.constant(ds.ids, 1, 2), "sales") == 101.0
    with pytest.raises(UndefinedMetricError):
        expected_sales_under_policy(ds, policy(ds, [0, 0, 1]), "sales")


def test_e_pct_is_hand_values():
    ds = make_dataset([1, 1], [0.0, 0.0], aux={"sales": [105.0, 115.0], "rewards": [1.0, 3.0]})
    everyone = Policy.constant(ds.ids, 1, 2)
    r = e_pct_is(ds, everyone, "sales", "rewards", 100.0)
    assert r.value == pytest.approx(0.2, abs=1e-15) and not r.negative_incremental
    assert e_pct_is(ds, everyone, "sales", "rewards", 120.0).negative_incremental
    with pytest.raises(UndefinedMetricError):
        e_pct_is(ds, everyone, "sales", "rewards", 110.0)
    free = make_dataset([1, 1], [0.0, 0.0], aux={"sales": [105.0, 115.0], "rewards": [0.0, 0.0]})
    assert e_pct_is(free, everyone, "sales", "rewards", 100.0).value == 0.0


def test_threshold_policy():
    ds = make_dataset([0, 1, 0], [0.0] * 3)
    score = [0.2, 0.5, 0.9]
    assert threshold_policy(ds, score, 0.391).assignment.tolist() == [1, 0, 0]
    assert threshold_policy(ds, score, 0.1).assignment.tolist() == [0, 0, 0]
    assert threshold_policy(ds, score, 1.0).assignment.tolist() == [1, 1, 1]
    assert threshold_policy(ds, score, 0.391, "above").assignment.tolist() == [0, 1, 1]
    with pytest.raises(ValueError):
        threshold_policy(ds, score, 0.5, "sideways")


def test_relative_lift():
    assert relative_lift(10.0, 8.0) == (0.25, "")
    assert relative_lift(-1.0, -2.0) == (0.5, "")
    assert relative_lift(3.0, 0.0) == (3.0, "absolute_difference")


def test_lift_report_identity_rows_are_zero(two):
    p = policy(two, [1, 0])
    report = lift_report(two, p, {"same": p})
    assert {r["lift"] for r in report.lifts} == {0.0}


def test_lift_report_hand_lift():
    # proposed matches rows 1-2: (20/0.5)/4 = 10; baseline matches rows 3-4: (16/0.5)/4 = 8
    ds = make_dataset([1, 0, 1, 0], [20.0, 0.0, 16.0, 0.0], propensities=(0.5, 0.5))
    proposed = policy(ds, [1, 1, 0, 0])
    baseline = policy(ds, [0, 0, 1, 1])
    assert ips(ds, proposed) == 10.0 and ips(ds, baseline) == 8.0
    report = lift_report(ds, proposed, {"base": baseline})
    row = next(r for r in report.lifts if r["estimator"] == "ips")
    assert row["lift"] == pytest.approx(0.25)


def test_lift_report_flags_undefined_snips(two):
    report = lift_report(two, policy(two, [1, 0]), {"never": policy(two, [0, 1])})
    rows = {r["estimator"]: r for r in report.lifts}
    assert rows["snips"]["lift"] is None and rows["snips"]["flag"] == "undefined"
    assert rows["ips"]["flag"] == "absolute_difference"
    assert report.policies["never"]["metrics"]["y"]["snips"] is None


def test_report_files(tmp_path):
    ds = make_dataset([1, 0, 1, 0], [3.0, 1.0, 2.0, 2.0],
                      aux={"sales": [110.0, 100.0, 108.0, 101.0], "rewards": [2.0, 0.0, 2.0, 0.0]})
    report = lift_report(ds, policy(ds, [1, 0, 1, 0]), {"none": Policy.constant(ds.ids, 0, 2)},
                         outcomes=("y", "sales"), efficiency=EfficiencySpec("sales", "rewards", 100.0))
    report.write_json(tmp_path / "r.json")
    report.write_csv(tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["policies"]["proposed"]["targeting_proportion"] == 0.5
    assert data["policies"]["none"]["targeting_proportion"] == 0.0
    header = (tmp_path / "r.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "baseline" and "y ips" in header and "e_pct_is ratio" in header
    table = report.policy_table()
    assert table[0][:2] == ["policy", "targeting_proportion"] and len(table) == 3
    assert b"\r" not in (tmp_path / "r.csv").read_bytes()


log = st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 2), min_size=n, max_size=n),
    st.lists(st.integers(0, 2), min_size=n, max_size=n),
    st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n),
))
propensity_sets = st.sampled_from([(1 / 3, 1 / 3, 1 / 3), (0.6, 0.3, 0.1), (0.05, 0.05, 0.9)])


@given(data=log, props=propensity_sets)
def test_snips_is_bounded_by_matched_outcomes(data, props):
    t, assign, z = data
    ds = make_dataset(t, z, labels=("a", "b", "c"), propensities=props)
    p = policy(ds, assign)
    matched = np.asarray(z)[np.asarray(t) == np.asarray(assign)]
    if matched.size == 0:
        with pytest.raises(UndefinedMetricError):
            snips(ds, p)
        assert ips(ds, p) == 0.0
    else:
        value = snips(ds, p)
        assert matched.min() - 1e-9 <= value <= matched.max() + 1e-9
    assert np.isfinite(ips(ds, p))


@given(data=log)
def test_full_match_identities(data):
    t, _, z = data
    ds = make_dataset(t, z, labels=("a", "b", "c"))
    logged = policy(ds, t)
    assert match_count(ds, logged) == len(ds)
    assert snips(ds, logged) == pytest.approx(np.mean(z), rel=1e-9, abs=1e-9)
    assert ips(ds, logged) == pytest.approx(3 * np.mean(z), rel=1e-9, abs=1e-9)


@given(data=log, arm=st.integers(0, 2))
def test_constant_policy_ips_rescales_to_arm_mean(data, arm):
    t, _, z = data
    t, z = np.asarray(t), np.asarray(z)
    ds = make_dataset(t, z, labels=("a", "b", "c"))
    value = ips(ds, Policy.constant(ds.ids, arm, 3))
    if (t == arm).any():
        assert value == pytest.approx(z[t == arm].sum() / len(z) * 3, rel=1e-9, abs=1e-9)
        # rescaling by the realized arm share recovers the arm-k sample mean
        share = (t == arm).mean()
        assert value * (1 / 3) / share == pytest.approx(z[t == arm].mean(), rel=1e-9, abs=1e-9)
    else:
        assert value == 0.0
