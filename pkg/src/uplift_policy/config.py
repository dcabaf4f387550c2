"""Run configuration shared by every CLI subcommand."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Mapping, Optional

import yaml

from .dataset import Schema
from .errors import ConfigError
from .policy import ConstraintSpec
from .synth import SynthConfig
from .uplift.tree import TreeParams

BASELINE_KINDS = ("threshold", "treat_all", "treat_none", "constant")


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "t"
    params: TreeParams = TreeParams()


@dataclass(frozen=True)
class OptimizerConfig:
    constraint: ConstraintSpec = ConstraintSpec()
    n_groups: int = 20
    solver: str = "auto"
    resolution: float = 1e-3


@dataclass(frozen=True)
class BaselineConfig:
    name: str
    kind: str
    feature: Optional[str] = None
    threshold: Optional[float] = None
    direction: str = "below"
    arm: int = 1


@dataclass(frozen=True)
class EvaluationConfig:
    outcomes: tuple = ("y",)
    sales: Optional[str] = None
    rewards: Optional[str] = None
    baseline_sales: Optional[float] = None
    permutations: int = 200


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out: Path
    data_path: Optional[Path] = None
    schema: Optional[Schema] = None
    synth: Optional[SynthConfig] = None
    eval_fraction: float = 0.3
    features: Optional[tuple] = None
    estimator: EstimatorConfig = EstimatorConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    baselines: List[BaselineConfig] = field(default_factory=list)


def _section(raw: Mapping, key: str) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"section {key!r} must be a mapping")
    return dict(value)


def parse_config(raw: Mapping, base_dir: Path = Path("."), seed=None, out=None) -> RunConfig:
    """Build a :class:`RunConfig`; ``seed``/``out`` override the file values."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a mapping")
    try:
        seed = int(raw.get("seed", 0) if seed is None else seed)
        out = Path(out if out is not None else raw.get("out", "out"))

        data = _section(raw, "data")
        synth = data.get("synth")
        data_path = data.get("path")
        if synth is None and data_path is None:
            raise ConfigError("data needs either 'path' or 'synth'")
        if synth is not None and data_path is not None:
            raise ConfigError("data takes 'path' or 'synth', not both")
        synth_cfg = None
        if synth is not None:
            synth_cfg = SynthConfig.from_dict({**synth, "seed": seed})
        schema = None
        if data_path is not None:
            data_path = Path(data_path)
            if not data_path.is_absolute():
                data_path = base_dir / data_path
            if "schema" not in data:
                raise ConfigError("data.path needs a data.schema with treatment labels")
            schema = Schema.from_dict(data["schema"])

        split = _section(raw, "split")
        eval_fraction = float(split.get("eval_fraction", 0.3))
        if not (0.0 < eval_fraction < 1.0):
            raise ConfigError("split.eval_fraction must lie in (0, 1)")

        est = _section(raw, "estimator")
        estimator = EstimatorConfig(
            kind=str(est.get("kind", "t")).lower(),
            params=TreeParams(
                max_depth=int(est.get("max_depth", 6)),
                min_leaf_size=int(est.get("min_leaf_size", 20)),
                n_trees=int(est.get("n_trees", 1)),
                seed=seed,
            ),
        )

        con = _section(raw, "constraint")
        caps = con.get("caps")
        optimizer = OptimizerConfig(
            constraint=ConstraintSpec(
                kind=con.get("kind", "none"),
                caps=tuple(caps) if isinstance(caps, list) else caps,
                aux=con.get("aux"),
                epsilon=float(con.get("epsilon", 0.01)),
                reference_arm=int(con.get("reference_arm", 1)),
            ),
            n_groups=int(con.get("n_groups", 20)),
            solver=con.get("solver", "auto"),
            resolution=float(con.get("resolution", 1e-3)),
        )

        ev = _section(raw, "evaluation")
        eff = ev.get("efficiency") or {}
        evaluation = EvaluationConfig(
            outcomes=tuple(ev.get("outcomes", ["y"])),
            sales=eff.get("sales"),
            rewards=eff.get("rewards"),
            baseline_sales=None if eff.get("baseline_sales") is None
            else float(eff["baseline_sales"]),
            permutations=int(ev.get("permutations", 200)),
        )
        if eff and None in (evaluation.sales, evaluation.rewards, evaluation.baseline_sales):
            raise ConfigError("evaluation.efficiency needs sales, rewards and baseline_sales")

        baselines = []
        for b in raw.get("baselines") or []:
            bc = BaselineConfig(
                name=str(b["name"]), kind=b["kind"], feature=b.get("feature"),
                threshold=None if b.get("threshold") is None else float(b["threshold"]),
                direction=b.get("direction", "below"), arm=int(b.get("arm", 1)),
            )
            if bc.kind not in BASELINE_KINDS:
                raise ConfigError(f"unknown baseline kind {bc.kind!r}")
            if bc.kind == "threshold" and (bc.feature is None or bc.threshold is None):
                raise ConfigError(f"threshold baseline {bc.name!r} needs feature and threshold")
            baselines.append(bc)
        features = raw.get("features")
        return RunConfig(
            seed=seed, out=out, data_path=data_path, schema=schema, synth=synth_cfg,
            eval_fraction=eval_fraction,
            features=None if features is None else tuple(features),
            estimator=estimator, optimizer=optimizer, evaluation=evaluation,
            baselines=baselines,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path, seed=None, out=None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw or {}, path.parent, seed=seed, out=out)
