"""S-, T- and X-learners over the in-package tree regressor.

Stage one of the targeting pipeline: estimate per-customer uplift
``tau_k(x) = E[Y(t_k) | x] - E[Y(t_0) | x]`` for every non-control arm.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from ..dataset import ExperimentDataset, TreatmentSet
from ..errors import FitError, UnsupportedError
from .tree import TreeParams, fit_regressor, regressor_from_dict

KINDS = ("s", "t", "x")
MODEL_FORMAT = "uplift_policy.cate_model"
MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class UpliftEstimates:
    """``values[i, k-1]`` is the estimated uplift of arm k for customer ``ids[i]``."""

    ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=object).astype(str)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != ids.shape[0]:
            raise ValueError("one row of estimates per customer id is required")
        if not np.isfinite(values).all():
            raise ValueError("uplift estimates must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def K(self) -> int:
        return int(self.values.shape[1])

    def arm(self, k: int) -> np.ndarray:
        if not (1 <= k <= self.K):
            raise ValueError(f"arm {k} outside 1..{self.K}")
        return self.values[:, k - 1]


@dataclass(eq=False)
class CateModel:
    kind: str
    treatments: TreatmentSet
    feature_names: Tuple[str, ...]
    params: TreeParams
    models: Dict[str, object] = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def K(self) -> int:
        return self.treatments.n_arms - 1

    @property
    def description(self) -> str:
        base = "regression tree" if self.params.n_trees == 1 else f"{self.params.n_trees} bagged trees"
        return f"{self.kind.upper()}-learner ({base}, max_depth={self.params.max_depth}, " \
               f"min_leaf_size={self.params.min_leaf_size})"

    def effects(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected covariates with {self.d} columns, got shape {X.shape}")
        n = X.shape[0]
        out = np.empty((n, self.K))
        if self.kind == "s":
            m = self.models["s"]
            base = m.predict(np.hstack([X, np.zeros((n, self.K))]))
            for k in range(1, self.K + 1):
                onehot = np.zeros((n, self.K))
                onehot[:, k - 1] = 1.0
                out[:, k - 1] = m.predict(np.hstack([X, onehot])) - base
        elif self.kind == "t":
            base = self.models["arm0"].predict(X)
            for k in range(1, self.K + 1):
                out[:, k - 1] = self.models[f"arm{k}"].predict(X) - base
        elif self.kind == "x":
            # weight on the effect model fitted on control rows = P(treated)
            e = self.treatments.propensities[1] / (
                self.treatments.propensities[0] + self.treatments.propensities[1]
            )
            tau_c = self.models["tau_control"].predict(X)
            tau_t = self.models["tau_treated"].predict(X)
            out[:, 0] = e * tau_c + (1.0 - e) * tau_t
        else:
            raise UnsupportedError(f"unknown learner kind {self.kind!r}")
        return out

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "labels": list(self.treatments.labels),
            "propensities": list(self.treatments.propensities),
            "feature_names": list(self.feature_names),
            "params": {
                "max_depth": self.params.max_depth,
                "min_leaf_size": self.params.min_leaf_size,
                "n_trees": self.params.n_trees,
                "seed": self.params.seed,
            },
            "models": {name: m.to_dict() for name, m in sorted(self.models.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CateModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a serialized CATE model")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        return cls(
            kind=d["kind"],
            treatments=TreatmentSet(tuple(d["labels"]), tuple(d["propensities"])),
            feature_names=tuple(d["feature_names"]),
            params=TreeParams(**d["params"]),
            models={k: regressor_from_dict(v) for k, v in d["models"].items()},
        )


def save_model(model: CateModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> CateModel:
    return CateModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _arm_rows(train: ExperimentDataset, min_rows: int):
    rows = []
    for k in range(train.n_arms):
        idx = np.flatnonzero(train.t == k)
        if idx.size < min_rows:
            raise FitError(
                f"arm {k} ({train.treatments.labels[k]}) has {idx.size} records, "
                f"need at least {min_rows}"
            )
        rows.append(idx)
    return rows


def fit_s_learner(train: ExperimentDataset, hp: TreeParams | None = None) -> CateModel:
    """One regressor on covariates plus a one-hot treatment indicator."""
    hp = hp or TreeParams()
    _arm_rows(train, 1)
    K = train.n_arms - 1
    onehot = np.zeros((len(train), K))
    treated = train.t > 0
    onehot[np.flatnonzero(treated), train.t[treated] - 1] = 1.0
    model = fit_regressor(np.hstack([train.X, onehot]), train.y, hp, stream=0)
    return CateModel("s", train.treatments, train.feature_names, hp, {"s": model})


def fit_t_learner(train: ExperimentDataset, hp: TreeParams | None = None) -> CateModel:
    """One regressor per arm; uplift is the difference to the control regressor."""
    hp = hp or TreeParams()
    rows = _arm_rows(train, hp.min_leaf_size)
    models = {
        f"arm{k}": fit_regressor(train.X[idx], train.y[idx], hp, stream=k)
        for k, idx in enumerate(rows)
    }
    return CateModel("t", train.treatments, train.feature_names, hp, models)


def fit_x_learner(train: ExperimentDataset, hp: TreeParams | None = None) -> CateModel:
    """Two-stage X-learner for a binary treatment.

    Outcome models per arm impute individual effects on the opposite arm's
    rows; effect regressors fitted on those imputations are blended with the
    known logging propensity.
    """
    hp = hp or TreeParams()
    if train.n_arms != 2:
        raise UnsupportedError(
            f"X-learner supports exactly 2 arms, dataset has {train.n_arms}"
        )
    c_rows, t_rows = _arm_rows(train, hp.min_leaf_size)
    Xc, yc = train.X[c_rows], train.y[c_rows]
    Xt, yt = train.X[t_rows], train.y[t_rows]
    mu0 = fit_regressor(Xc, yc, hp, stream=0)
    mu1 = fit_regressor(Xt, yt, hp, stream=1)
    d_treated = yt - mu0.predict(Xt)
    d_control = mu1.predict(Xc) - yc
    models = {
        "mu0": mu0,
        "mu1": mu1,
        "tau_treated": fit_regressor(Xt, d_treated, hp, stream=2),
        "tau_control": fit_regressor(Xc, d_control, hp, stream=3),
    }
    return CateModel("x", train.treatments, train.feature_names, hp, models)


_FITTERS = {"s": fit_s_learner, "t": fit_t_learner, "x": fit_x_learner}


def fit_cate(kind: str, train: ExperimentDataset, hp: TreeParams | None = None) -> CateModel:
    key = kind.lower().removesuffix("-learner").removesuffix("_learner")
    if key not in _FITTERS:
        raise UnsupportedError(f"unknown estimator {kind!r}; choose from S, T, X")
    return _FITTERS[key](train, hp)


def predict_cate(model: CateModel, ds: ExperimentDataset) -> UpliftEstimates:
    if ds.feature_names == model.feature_names:
        X = ds.X
    elif set(model.feature_names) <= set(ds.feature_names) and ds.d != model.d:
        X = ds.select_features(model.feature_names).X
    else:
        raise ValueError(
            f"dataset features {ds.feature_names} do not match model features "
            f"{model.feature_names}"
        )
    return UpliftEstimates(ds.ids, model.effects(X))
