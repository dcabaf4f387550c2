"""Synthetic randomized experiments with known structural response functions.

Every generated dataset comes with a :class:`GroundTruth` that exposes the
noiseless conditional means, so CATE estimates and policy values computed
downstream can be checked against exact answers.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import ExperimentDataset, TreatmentSet
from .errors import ConfigError

FAMILIES = ("linear", "piecewise", "logistic")


@dataclass(frozen=True)
class Response:
    """Conditional mean of one outcome under one arm.

    All families share ``intercept + coef . x``; ``piecewise`` adds a step
    function of ``x[feature]`` (``values[j]`` on the j-th interval cut by
    ``thresholds``), ``logistic`` passes the sum through a sigmoid.
    """

    family: str = "linear"
    intercept: float = 0.0
    coef: Tuple[float, ...] = ()
    feature: int = 0
    thresholds: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        object.__setattr__(self, "thresholds", tuple(float(c) for c in self.thresholds))
        object.__setattr__(self, "values", tuple(float(c) for c in self.values))
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown response family {self.family!r}")
        if self.values and len(self.values) != len(self.thresholds) + 1:
            raise ConfigError("piecewise response needs len(values) == len(thresholds) + 1")
        if self.family == "piecewise" and not self.values:
            raise ConfigError("piecewise response needs step values")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ConfigError("thresholds must be sorted")

    def check_dim(self, d: int) -> None:
        if len(self.coef) > d:
            raise ConfigError(f"{len(self.coef)} coefficients for d={d}")
        if self.values and not (0 <= self.feature < d):
            raise ConfigError(f"step feature {self.feature} outside 0..{d - 1}")

    def mean(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.intercept)
        if self.coef:
            out = out + X[:, : len(self.coef)] @ np.asarray(self.coef)
        if self.values:
            bins = np.searchsorted(self.thresholds, X[:, self.feature], side="right")
            out = out + np.asarray(self.values)[bins]
        if self.family == "logistic":
            out = 1.0 / (1.0 + np.exp(-out))
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Response":
        return cls(**dict(d))


@dataclass(frozen=True)
class OutcomeSpec:
    """Per-arm responses plus the noise model for one outcome."""

    arms: Tuple[Response, ...]
    noise_sd: float = 0.0
    binary: bool = False

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")

    def draw(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.binary:
            return (rng.random(mean.shape[0]) < np.clip(mean, 0.0, 1.0)).astype(float)
        if self.noise_sd == 0:
            return mean.copy()
        return mean + self.noise_sd * rng.standard_normal(mean.shape[0])

    @classmethod
    def from_dict(cls, d: Mapping) -> "OutcomeSpec":
        return cls(
            arms=tuple(Response.from_dict(r) for r in d["arms"]),
            noise_sd=float(d.get("noise_sd", 0.0)),
            binary=bool(d.get("binary", False)),
        )


@dataclass(frozen=True)
class SynthConfig:
    """Configuration of a synthetic experiment.

    ``response`` holds one :class:`Response` per arm (control first). If
    ``net_of=(a, b)`` is set the primary outcome is ``aux[a] - aux[b]`` (plus
    optional extra noise) and ``response`` may be empty; this mirrors
    ``Y = Sales - Rewards``.
    """

    n: int
    d: int
    K: int = 1
    response: Tuple[Response, ...] = ()
    noise_sd: float = 0.0
    binary: bool = False
    aux: Mapping[str, OutcomeSpec] = field(default_factory=dict)
    net_of: Optional[Tuple[str, str]] = None
    propensities: Optional[Tuple[float, ...]] = None
    labels: Optional[Tuple[str, ...]] = None
    feature_names: Optional[Tuple[str, ...]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "response", tuple(self.response))
        if self.net_of is not None:
            object.__setattr__(self, "net_of", tuple(self.net_of))
        if self.propensities is not None:
            object.__setattr__(self, "propensities", tuple(float(p) for p in self.propensities))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        k1 = self.K + 1
        if self.net_of is None:
            if len(self.response) != k1:
                raise ConfigError(f"need {k1} arm responses, got {len(self.response)}")
        else:
            for name in self.net_of:
                if name not in self.aux:
                    raise ConfigError(f"net_of references unknown aux outcome {name!r}")
        for r in self.response:
            r.check_dim(self.d)
        for name, spec in self.aux.items():
            if len(spec.arms) != k1:
                raise ConfigError(f"aux {name!r} needs {k1} arm responses")
            for r in spec.arms:
                r.check_dim(self.d)
        if self.feature_names is not None and len(self.feature_names) != self.d:
            raise ConfigError("feature_names length must equal d")
        self.treatment_set()  # validates labels / propensities

    def treatment_set(self) -> TreatmentSet:
        labels = self.labels or ("control",) + tuple(f"t{k}" for k in range(1, self.K + 1))
        if len(labels) != self.K + 1:
            raise ConfigError("labels must list K+1 treatments, control first")
        if self.propensities is None:
            return TreatmentSet.uniform(labels)
        try:
            return TreatmentSet(labels, self.propensities)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def names(self) -> Tuple[str, ...]:
        return self.feature_names or tuple(f"x{j + 1}" for j in range(self.d))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["aux"] = {k: asdict(v) for k, v in self.aux.items()}
        for key, value in list(out.items()):
            if isinstance(value, tuple):
                out[key] = list(value)
        return _lists(out)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys {sorted(unknown)}")
        try:
            d["response"] = tuple(Response.from_dict(r) for r in d.get("response", ()))
            d["aux"] = {k: OutcomeSpec.from_dict(v) for k, v in (d.get("aux") or {}).items()}
            return cls(**d)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed synth config: {exc}") from exc

    def with_seed(self, seed: int) -> "SynthConfig":
        return SynthConfig.from_dict({**self.to_dict(), "seed": seed})


def _lists(obj):
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


class GroundTruth:
    """Noiseless conditional means implied by a :class:`SynthConfig`."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg

    def mean_aux(self, name: str, arm: int, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        out = self.cfg.aux[name].arms[arm].mean(x)
        return float(out[0]) if x.ndim == 1 else out

    def mean_outcome(self, arm: int, x) -> np.ndarray | float:
        if not (0 <= arm <= self.cfg.K):
            raise ValueError(f"arm {arm} outside 0..{self.cfg.K}")
        x = np.asarray(x, dtype=float)
        if self.cfg.net_of is not None:
            a, b = self.cfg.net_of
            X = np.atleast_2d(x)
            out = self.cfg.aux[a].arms[arm].mean(X) - self.cfg.aux[b].arms[arm].mean(X)
        else:
            out = self.cfg.response[arm].mean(x)
        return float(out[0]) if x.ndim == 1 else out

    def mean(self, outcome: str, arm: int, x):
        if outcome in ("y", "outcome"):
            return self.mean_outcome(arm, x)
        return self.mean_aux(outcome, arm, x)


def generate(
    cfg: SynthConfig, covariates: Optional[np.ndarray] = None
) -> Tuple[ExperimentDataset, GroundTruth]:
    """Draw a randomized experiment from ``cfg``.

    Passing ``covariates`` keeps the customer population fixed and redraws only
    the logged treatments and outcomes (a fresh logging replay).
    """
    rng = np.random.default_rng(cfg.seed)
    ts = cfg.treatment_set()
    gt = GroundTruth(cfg)
    if covariates is None:
        X = rng.random((cfg.n, cfg.d))
    else:
        X = np.asarray(covariates, dtype=float)
        if X.shape != (cfg.n, cfg.d):
            raise ConfigError(f"covariates shape {X.shape} != {(cfg.n, cfg.d)}")
    t = rng.choice(ts.n_arms, size=cfg.n, p=np.asarray(ts.propensities))

    aux = {}
    for name in sorted(cfg.aux):
        spec = cfg.aux[name]
        mean = np.empty(cfg.n)
        for k in range(ts.n_arms):
            mask = t == k
            mean[mask] = spec.arms[k].mean(X[mask]) if mask.any() else 0.0
        aux[name] = spec.draw(mean, rng)

    if cfg.net_of is not None:
        a, b = cfg.net_of
        y = aux[a] - aux[b]
        if cfg.noise_sd > 0:
            y = y + cfg.noise_sd * rng.standard_normal(cfg.n)
    else:
        mean = np.empty(cfg.n)
        for k in range(ts.n_arms):
            mask = t == k
            mean[mask] = cfg.response[k].mean(X[mask]) if mask.any() else 0.0
        spec = OutcomeSpec(cfg.response, cfg.noise_sd, cfg.binary)
        y = spec.draw(mean, rng)

    width = max(6, len(str(cfg.n - 1)))
    ids = np.array([f"c{i:0{width}d}" for i in range(cfg.n)], dtype=object)
    ds = ExperimentDataset(ts, ids, X, t, y, cfg.names(), aux)
    return ds, gt


def true_cate(gt: GroundTruth, arm: int, x) -> np.ndarray | float:
    if arm < 1:
        raise ValueError("control arm has no CATE; arm must be >= 1")
    return gt.mean_outcome(arm, x) - gt.mean_outcome(0, x)


def true_policy_value(gt: GroundTruth, ds: ExperimentDataset, policy, outcome: str = "y") -> float:
    """Exact expected per-customer outcome if ``policy`` were deployed on ``ds``."""
    assign = np.asarray(policy.assignment)
    if assign.shape[0] != len(ds):
        raise ValueError(f"policy covers {assign.shape[0]} customers, dataset has {len(ds)}")
    if hasattr(policy, "ids") and not np.array_equal(np.asarray(policy.ids), ds.ids):
        raise ValueError("policy ids are not aligned with the dataset")
    total = 0.0
    for k in np.unique(assign):
        mask = assign == k
        total += float(np.sum(gt.mean(outcome, int(k), ds.X[mask])))
    return total / len(ds)


# Ready-made populations used by tests and scripts.

def step_cate_config(
    n: int = 5000, seed: int = 0, noise_sd: float = 0.1, propensities=None, d: int = 2
) -> SynthConfig:
    """CATE of 2 below x1 = 0.5 and 0 above, on a linear control surface."""
    base = dict(intercept=1.0, coef=(1.0, 0.5)[:d])
    return SynthConfig(
        n=n,
        d=d,
        K=1,
        response=(
            Response("linear", **base),
            Response("piecewise", feature=0, thresholds=(0.5,), values=(2.0, 0.0), **base),
        ),
        noise_sd=noise_sd,
        propensities=propensities,
        seed=seed,
    )


def zero_effect_config(n: int = 5000, seed: int = 0, d: int = 2, level: float = 3.0) -> SynthConfig:
    """Identical, covariate-free responses in both arms and no noise."""
    r = Response("linear", intercept=level)
    return SynthConfig(n=n, d=d, K=1, response=(r, r), noise_sd=0.0, seed=seed)


def retention_config(n: int = 40000, seed: int = 0) -> SynthConfig:
    """Binary retention population indexed by a retention score.

    Retention probability rises with the score. Messaging hurts customers with
    low scores, helps a band of mid-score customers and does nothing above 0.6.
    """
    control = Response("piecewise", intercept=0.55, coef=(0.4,), feature=0,
                       thresholds=(0.6,), values=(0.0, 0.0))
    treated = Response("piecewise", intercept=0.55, coef=(0.4,), feature=0,
                       thresholds=(0.3, 0.42, 0.6), values=(-0.08, -0.02, 0.1, 0.0))
    return SynthConfig(
        n=n, d=1, K=1, response=(control, treated), binary=True,
        feature_names=("retention_score",), labels=("no_message", "message"), seed=seed,
    )


def revenue_config(n: int = 20000, seed: int = 0) -> SynthConfig:
    """Two reward levels (low = control, high = treatment) and Y = sales - rewards.

    The high reward lifts sales mostly for customers with a low completion
    score; rewards cost a fixed share of sales.
    """
    sales = OutcomeSpec(
        arms=(
            Response("linear", intercept=100.0, coef=(40.0, 5.0)),
            Response("piecewise", intercept=100.0, coef=(40.0, 5.0), feature=0,
                     thresholds=(0.3, 0.7), values=(12.0, 4.0, 0.5)),
        ),
        noise_sd=10.0,
    )
    rewards = OutcomeSpec(
        arms=(
            Response("linear", intercept=2.0, coef=(0.8, 0.1)),
            Response("piecewise", intercept=5.0, coef=(2.0, 0.25), feature=0,
                     thresholds=(0.3, 0.7), values=(0.6, 0.2, 0.0)),
        ),
        noise_sd=0.5,
    )
    completed = OutcomeSpec(
        arms=(
            Response("logistic", intercept=-1.0, coef=(2.5, 0.0)),
            Response("logistic", intercept=-0.6, coef=(2.2, 0.0)),
        ),
        binary=True,
    )
    return SynthConfig(
        n=n, d=2, K=1, aux={"sales": sales, "rewards": rewards, "completed": completed},
        net_of=("sales", "rewards"), feature_names=("completion_score", "tenure"),
        labels=("P1", "P2"), seed=seed,
    )
