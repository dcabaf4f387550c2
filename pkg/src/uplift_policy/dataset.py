"""Experiment-log data model, CSV ingestion, validation and splitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import yaml

from .errors import ConfigError, DomainError, ParseError, SchemaError

AUX_PREFIX = "aux:"


@dataclass(frozen=True)
class TreatmentSet:
    """Ordered treatment labels (control first) and logging propensities."""

    labels: Tuple[str, ...]
    propensities: Tuple[float, ...]

    def __post_init__(self):
        labels = tuple(str(lbl) for lbl in self.labels)
        probs = tuple(float(p) for p in self.propensities)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "propensities", probs)
        if len(labels) < 2:
            raise ConfigError("need at least a control and one treatment label")
        if len(set(labels)) != len(labels):
            raise ConfigError(f"treatment labels must be unique, got {labels}")
        if len(probs) != len(labels):
            raise ConfigError("one propensity per treatment label is required")
        if any(not (p > 0) for p in probs):
            raise ConfigError(f"propensities must be positive, got {probs}")
        if abs(math.fsum(probs) - 1.0) > 1e-9:
            raise ConfigError(f"propensities must sum to 1, got {math.fsum(probs)}")

    @classmethod
    def uniform(cls, labels: Sequence[str]) -> "TreatmentSet":
        k1 = len(labels)
        return cls(tuple(labels), tuple([1.0 / k1] * k1))

    @property
    def n_arms(self) -> int:
        return len(self.labels)

    @property
    def control(self) -> str:
        return self.labels[0]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"unknown treatment label {label!r}") from None


class CustomerRecord(NamedTuple):
    id: str
    x: np.ndarray
    t: int
    y: float
    aux: Dict[str, float]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ExperimentDataset:
    """Column-oriented experiment log.

    Stored as arrays rather than a list of records so estimators and
    evaluators can vectorize; ``records`` gives the row view.
    """

    treatments: TreatmentSet
    ids: np.ndarray
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    feature_names: Tuple[str, ...]
    aux: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=object).astype(str)
        n = ids.shape[0]
        X = np.asarray(self.X, dtype=float).reshape(n, -1) if n else np.asarray(
            self.X, dtype=float
        ).reshape(0, len(self.feature_names))
        t = np.asarray(self.t, dtype=np.int64).reshape(n)
        y = np.asarray(self.y, dtype=float).reshape(n)
        names = tuple(str(f) for f in self.feature_names)
        if X.shape[1] != len(names):
            raise ValueError(
                f"covariate dimension {X.shape[1]} != {len(names)} feature names"
            )
        if n and (t.min() < 0 or t.max() >= self.treatments.n_arms):
            raise DomainError("logged treatment index outside the treatment set")
        aux = {}
        for name, values in self.aux.items():
            values = np.asarray(values, dtype=float).reshape(n)
            aux[str(name)] = _frozen(values)
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "aux", aux)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def n_arms(self) -> int:
        return self.treatments.n_arms

    @property
    def aux_names(self) -> Tuple[str, ...]:
        return tuple(self.aux)

    @property
    def records(self) -> List[CustomerRecord]:
        return [
            CustomerRecord(
                self.ids[i],
                self.X[i],
                int(self.t[i]),
                float(self.y[i]),
                {k: float(v[i]) for k, v in self.aux.items()},
            )
            for i in range(len(self))
        ]

    def outcome(self, name: str) -> np.ndarray:
        """Primary outcome for ``"y"``/``"outcome"``, else the named aux column."""
        if name in ("y", "outcome"):
            return self.y
        if name in self.aux:
            return self.aux[name]
        raise ValueError(f"unknown outcome {name!r}; have y and {list(self.aux)}")

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.t, minlength=self.n_arms)

    def subset(self, index) -> "ExperimentDataset":
        index = np.asarray(index)
        return ExperimentDataset(
            treatments=self.treatments,
            ids=self.ids[index],
            X=self.X[index],
            t=self.t[index],
            y=self.y[index],
            feature_names=self.feature_names,
            aux={k: v[index] for k, v in self.aux.items()},
        )

    def select_features(self, names: Sequence[str]) -> "ExperimentDataset":
        missing = [f for f in names if f not in self.feature_names]
        if missing:
            raise SchemaError(f"unknown feature(s) {missing}")
        cols = [self.feature_names.index(f) for f in names]
        return ExperimentDataset(
            self.treatments, self.ids, self.X[:, cols], self.t, self.y,
            tuple(names), self.aux,
        )

    def equals(self, other: "ExperimentDataset") -> bool:
        return (
            self.treatments == other.treatments
            and self.feature_names == other.feature_names
            and self.aux_names == other.aux_names
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.y, other.y, equal_nan=True)
            and all(
                np.array_equal(self.aux[k], other.aux[k], equal_nan=True)
                for k in self.aux
            )
        )


@dataclass(frozen=True)
class Schema:
    """Column roles for a CSV experiment log.

    ``features=None`` means every column not otherwise claimed is a feature.
    Propensities default to uniform over the declared labels.
    """

    labels: Tuple[str, ...]
    propensities: Optional[Tuple[float, ...]] = None
    id_col: str = "id"
    treatment_col: str = "treatment"
    outcome_col: str = "outcome"
    features: Optional[Tuple[str, ...]] = None

    def treatment_set(self) -> TreatmentSet:
        if self.propensities is None:
            return TreatmentSet.uniform(self.labels)
        return TreatmentSet(tuple(self.labels), tuple(self.propensities))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        if "labels" not in d:
            raise ConfigError("schema needs 'labels' (control label first)")
        props = d.get("propensities")
        feats = d.get("features")
        return cls(
            labels=tuple(str(x) for x in d["labels"]),
            propensities=None if props is None else tuple(float(p) for p in props),
            id_col=d.get("id_col", "id"),
            treatment_col=d.get("treatment_col", "treatment"),
            outcome_col=d.get("outcome_col", "outcome"),
            features=None if feats is None else tuple(feats),
        )

    def to_dict(self) -> dict:
        out = {
            "labels": list(self.labels),
            "id_col": self.id_col,
            "treatment_col": self.treatment_col,
            "outcome_col": self.outcome_col,
        }
        if self.propensities is not None:
            out["propensities"] = list(self.propensities)
        if self.features is not None:
            out["features"] = list(self.features)
        return out


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return Schema.from_dict(raw.get("schema", raw))


def _parse_float(cell: str, row: int, column: str) -> float:
    if cell is None or cell.strip() == "":
        raise ParseError(f"row {row}: missing value in column {column!r}")
    try:
        return float(cell)
    except ValueError:
        raise ParseError(
            f"row {row}: non-numeric value {cell!r} in column {column!r}"
        ) from None


def load_experiment(path, schema: Schema) -> ExperimentDataset:
    """Read a CSV experiment log.

    Rows are numbered from 1 starting at the first data row in error messages.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    treatments = schema.treatment_set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        for col in (schema.id_col, schema.treatment_col, schema.outcome_col):
            if col not in header:
                raise SchemaError(f"missing required column {col!r}")
        if len(set(header)) != len(header):
            raise SchemaError(f"duplicate column names in header {header}")
        aux_cols = [c for c in header if c.startswith(AUX_PREFIX)]
        claimed = {schema.id_col, schema.treatment_col, schema.outcome_col, *aux_cols}
        if schema.features is None:
            features = [c for c in header if c not in claimed]
        else:
            features = list(schema.features)
            for c in features:
                if c not in header:
                    raise SchemaError(f"missing feature column {c!r}")
        pos = {c: i for i, c in enumerate(header)}

        ids, X, t, y = [], [], [], []
        aux: Dict[str, list] = {c[len(AUX_PREFIX):]: [] for c in aux_cols}
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"row {row_no}: expected {len(header)} cells, got {len(row)}"
                )
            ids.append(row[pos[schema.id_col]])
            X.append([_parse_float(row[pos[c]], row_no, c) for c in features])
            label = row[pos[schema.treatment_col]]
            if label not in treatments.labels:
                raise DomainError(
                    f"row {row_no}: unknown treatment label {label!r}; "
                    f"declared labels are {list(treatments.labels)}"
                )
            t.append(treatments.labels.index(label))
            y.append(_parse_float(row[pos[schema.outcome_col]], row_no, schema.outcome_col))
            for c in aux_cols:
                aux[c[len(AUX_PREFIX):]].append(_parse_float(row[pos[c]], row_no, c))

    return ExperimentDataset(
        treatments=treatments,
        ids=np.array(ids, dtype=object),
        X=np.array(X, dtype=float).reshape(len(ids), len(features)),
        t=np.array(t, dtype=np.int64),
        y=np.array(y, dtype=float),
        feature_names=tuple(features),
        aux={k: np.array(v, dtype=float) for k, v in aux.items()},
    )


def format_float(v: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(v))


def write_experiment(ds: ExperimentDataset, path, schema: Optional[Schema] = None) -> None:
    schema = schema or Schema(labels=ds.treatments.labels)
    header = [schema.id_col, *ds.feature_names, schema.treatment_col, schema.outcome_col]
    header += [AUX_PREFIX + name for name in ds.aux_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [ds.ids[i], *(format_float(v) for v in ds.X[i])]
            row += [ds.treatments.labels[ds.t[i]], format_float(ds.y[i])]
            row += [format_float(ds.aux[name][i]) for name in ds.aux_names]
            w.writerow(row)


@dataclass(frozen=True)
class Issue:
    level: str  # "error" or "warning"
    code: str
    message: str


@dataclass
class ValidationReport:
    issues: List[Issue] = field(default_factory=list)

    @property
    def errors(self) -> List[Issue]:
        return [i for i in self.issues if i.level == "error"]

    @property
    def warnings(self) -> List[Issue]:
        return [i for i in self.issues if i.level == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)


def validate(ds: ExperimentDataset) -> ValidationReport:
    report = ValidationReport()
    uniq, counts = np.unique(ds.ids, return_counts=True)
    for dup in uniq[counts > 1]:
        report.issues.append(Issue("error", "duplicate_id", f"duplicate id {dup!r}"))
    for k, c in enumerate(ds.arm_counts()):
        if c == 0:
            report.issues.append(
                Issue("warning", "empty_arm", f"arm {k} empty ({ds.treatments.labels[k]})")
            )
    if len(ds) > 0:
        for j, name in enumerate(ds.feature_names):
            col = ds.X[:, j]
            if np.all(col == col[0]):
                report.issues.append(
                    Issue("warning", "constant_covariate", f"covariate {name!r} is constant")
                )
    if np.isnan(ds.y).any():
        rows = (np.flatnonzero(np.isnan(ds.y)) + 1).tolist()
        report.issues.append(Issue("error", "nan_outcome", f"NaN outcome in rows {rows[:10]}"))
    for name, values in ds.aux.items():
        if np.isnan(values).any():
            report.issues.append(
                Issue("error", "nan_outcome", f"NaN in auxiliary outcome {name!r}")
            )
    return report


def split(
    ds: ExperimentDataset, eval_fraction: float, seed: int
) -> Tuple[ExperimentDataset, ExperimentDataset]:
    """Stratified train/eval split; each arm contributes round(fraction * n_arm) to eval."""
    if not (0.0 < eval_fraction < 1.0):
        raise ValueError(f"eval_fraction must lie in (0, 1), got {eval_fraction}")
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    is_eval = np.zeros(len(ds), dtype=bool)
    for k in range(ds.n_arms):
        members = np.flatnonzero(ds.t == k)
        n_eval = int(round(eval_fraction * members.size))
        is_eval[rng.permutation(members)[:n_eval]] = True
    return ds.subset(np.flatnonzero(~is_eval)), ds.subset(np.flatnonzero(is_eval))
