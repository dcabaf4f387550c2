import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uplift_policy.dataset import (Schema, TreatmentSet, load_experiment, load_schema, split,
                                   validate, write_experiment)
from uplift_policy.errors import ConfigError, DomainError, ParseError, SchemaError

from conftest import make_dataset

SCHEMA = Schema(labels=("ctrl", "msg"))


def write(tmp_path, text, name="log.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    path = write(tmp_path, "id,f1,treatment,outcome\na,0.1,ctrl,1\nb,0.2,msg,0\nc,0.3,msg,1\n")
    ds = load_experiment(path, SCHEMA)
    assert len(ds) == 3
    assert ds.d == 1
    assert ds.n_arms == 2
    assert ds.t.tolist() == [0, 1, 1]
    assert ds.records[1].id == "b" and ds.records[1].x.tolist() == [0.2]


def test_unknown_label_names_row(tmp_path):
    path = write(tmp_path, "id,f1,treatment,outcome\na,0.1,ctrl,1\nb,0.2,bogus,0\nc,0.3,msg,1\n")
    with pytest.raises(DomainError, match="row 2"):
        load_experiment(path, SCHEMA)


def test_header_only_file_gives_empty_dataset(tmp_path):
    path = write(tmp_path, "id,f1,treatment,outcome\n")
    ds = load_experiment(path, SCHEMA)
    assert len(ds) == 0 and ds.d == 1
    codes = [(i.level, i.code) for i in validate(ds)]
    assert codes == [("warning", "empty_arm"), ("warning", "empty_arm")]


def test_missing_column_is_named(tmp_path):
    path = write(tmp_path, "id,f1,outcome\na,0.1,1\n")
    with pytest.raises(SchemaError, match="'treatment'"):
        load_experiment(path, SCHEMA)


@pytest.mark.parametrize("cell", ["abc", ""])
def test_bad_covariate_cell_cites_row(tmp_path, cell):
    path = write(tmp_path, f"id,f1,treatment,outcome\na,0.1,ctrl,1\nb,{cell},msg,0\n")
    with pytest.raises(ParseError, match="row 2.*'f1'"):
        load_experiment(path, SCHEMA)


def test_aux_columns_and_schema_file(tmp_path):
    schema_path = write(tmp_path, "schema:\n  labels: [low, high]\n  propensities: [0.25, 0.75]\n",
                        "schema.yaml")
    schema = load_schema(schema_path)
    path = write(tmp_path, "id,score,treatment,outcome,aux:sales\na,0.5,low,1.5,100\nb,0.7,high,2,110\n")
    ds = load_experiment(path, schema)
    assert ds.feature_names == ("score",)
    assert ds.aux_names == ("sales",)
    assert ds.outcome("sales").tolist() == [100.0, 110.0]
    assert ds.treatments.propensities == (0.25, 0.75)


def test_default_propensities_are_uniform_over_all_arms():
    ts = Schema(labels=("a", "b", "c")).treatment_set()
    assert ts.propensities == pytest.approx((1 / 3, 1 / 3, 1 / 3))
    assert sum(ts.propensities) == pytest.approx(1.0)


@pytest.mark.parametrize("labels,probs", [
    (("a",), (1.0,)),
    (("a", "a"), (0.5, 0.5)),
    (("a", "b"), (0.6, 0.6)),
    (("a", "b"), (1.0, 0.0)),
])
def test_treatment_set_rejects_bad_declarations(labels, probs):
    with pytest.raises(ConfigError):
        TreatmentSet(labels, probs)


def test_validate_duplicate_id():
    ds = make_dataset([0, 1], [1.0, 2.0], X=[[0.1], [0.2]], ids=["c1", "c1"])
    report = validate(ds)
    assert [(i.level, i.code) for i in report.errors] == [("error", "duplicate_id")]


def test_validate_empty_arm():
    ds = make_dataset([0, 0, 0], [1.0, 2.0, 3.0], X=[[0.1], [0.2], [0.3]])
    report = validate(ds)
    assert report.ok
    assert [i.message for i in report.warnings] == ["arm 1 empty (treated)"]


def test_validate_clean_dataset():
    ds = make_dataset([0, 1, 0, 1], [1.0, 2.0, 3.0, 4.0], X=[[0.1], [0.2], [0.3], [0.4]])
    assert len(validate(ds)) == 0


def test_validate_constant_covariate_and_nan_outcome():
    ds = make_dataset([0, 1], [1.0, np.nan], X=[[0.5], [0.5]])
    codes = {(i.level, i.code) for i in validate(ds)}
    assert codes == {("warning", "constant_covariate"), ("error", "nan_outcome")}


def balanced(n_per_arm=50):
    t = np.repeat([0, 1], n_per_arm)
    return make_dataset(t, np.arange(t.size, dtype=float), X=np.linspace(0, 1, t.size))


def test_split_is_stratified():
    train, ev = split(balanced(), 0.2, seed=7)
    assert ev.arm_counts().tolist() == [10, 10]
    assert train.arm_counts().tolist() == [40, 40]


def test_split_is_deterministic_and_partitions():
    ds = balanced()
    a_train, a_eval = split(ds, 0.2, seed=7)
    b_train, b_eval = split(ds, 0.2, seed=7)
    assert a_eval.equals(b_eval) and a_train.equals(b_train)
    assert sorted(a_train.ids.tolist() + a_eval.ids.tolist()) == sorted(ds.ids.tolist())


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_split_rejects_fraction_outside_open_interval(fraction):
    with pytest.raises(ValueError):
        split(balanced(), fraction, seed=7)


@given(
    counts=st.lists(st.integers(0, 40), min_size=2, max_size=4),
    fraction=st.floats(0.01, 0.99),
    seed=st.integers(0, 2**32 - 1),
)
def test_split_eval_counts_within_one_of_floor(counts, fraction, seed):
    if sum(counts) == 0:
        counts[0] = 1
    t = np.repeat(np.arange(len(counts)), counts)
    ds = make_dataset(t, np.zeros(t.size), labels=[f"a{k}" for k in range(len(counts))])
    _, ev = split(ds, fraction, seed)
    for k, c in enumerate(counts):
        assert abs(ev.arm_counts()[k] - np.floor(fraction * c)) <= 1


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(
    rows=st.lists(st.tuples(finite, finite, st.integers(0, 2), finite, finite),
                  min_size=0, max_size=20),
)
def test_write_then_load_round_trips(tmp_path_factory, rows):
    n = len(rows)
    X = np.array([[r[0], r[1]] for r in rows], dtype=float).reshape(n, 2)
    ds = make_dataset([r[2] for r in rows], [r[3] for r in rows], X=X,
                      labels=("ctrl", "a", "b"), aux={"sales": [r[4] for r in rows]},
                      feature_names=("f1", "f2"))
    path = tmp_path_factory.mktemp("rt") / "log.csv"
    schema = Schema(labels=("ctrl", "a", "b"))
    write_experiment(ds, path, schema)
    back = load_experiment(path, schema)
    assert back.equals(ds)
