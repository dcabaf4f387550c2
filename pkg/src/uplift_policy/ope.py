"""Offline evaluation of assignment policies on randomized experiment logs.

All estimators use only records whose logged arm agrees with the policy
("matches"). When a quantity is undefined, e.g. SNIPS with no matches, an
:class:`~uplift_policy.errors.UndefinedMetricError` is raised; reports record
such cells as flagged instead of inventing a number.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .dataset import ExperimentDataset, format_float
from .errors import UndefinedMetricError
from .policy import Policy


def _matches(ds: ExperimentDataset, p: Policy) -> np.ndarray:
    if len(p) != len(ds) or not np.array_equal(p.ids, ds.ids):
        raise ValueError("policy is not aligned with the dataset ids")
    if p.n_arms != ds.n_arms:
        raise ValueError(f"policy has {p.n_arms} arms, dataset {ds.n_arms}")
    return p.assignment == ds.t


def ips(ds: ExperimentDataset, p: Policy, outcome: str = "y") -> float:
    """Inverse propensity score estimate of the mean outcome under ``p``.

    (1/N) * sum_i Z_i * 1{p(i) == T_i} / p_{T_i}
    """
    z = ds.outcome(outcome)
    match = _matches(ds, p)
    if len(ds) == 0:
        raise UndefinedMetricError("IPS on an empty dataset")
    prop = np.asarray(ds.treatments.propensities)[ds.t]
    return math.fsum((z[match] / prop[match]).tolist()) / len(ds)


def snips(ds: ExperimentDataset, p: Policy, outcome: str = "y") -> float:
    """Self-normalized IPS: matched importance-weighted mean of the outcome."""
    z = ds.outcome(outcome)
    match = _matches(ds, p)
    if not match.any():
        raise UndefinedMetricError("SNIPS is undefined: no logged arm matches the policy")
    w = 1.0 / np.asarray(ds.treatments.propensities)[ds.t[match]]
    value = math.fsum((z[match] * w).tolist()) / math.fsum(w.tolist())
    # a weighted mean lies between the matched outcomes; clamping only removes rounding
    return float(min(max(value, z[match].min()), z[match].max()))


def match_count(ds: ExperimentDataset, p: Policy) -> int:
    return int(_matches(ds, p).sum())


def expected_sales_under_policy(ds: ExperimentDataset, p: Policy, outcome: str) -> float:
    """Plain mean of ``outcome`` over records whose logged arm matches the policy."""
    z = ds.outcome(outcome)
    match = _matches(ds, p)
    if not match.any():
        raise UndefinedMetricError("no logged arm matches the policy")
    return math.fsum(z[match].tolist()) / int(match.sum())


class EfficiencyRatio(NamedTuple):
    """Reward expense per unit of incremental sales."""

    value: float
    incremental_sales: float

    @property
    def negative_incremental(self) -> bool:
        return self.incremental_sales < 0


def e_pct_is(
    ds: ExperimentDataset, p: Policy, sales: str, rewards: str, baseline_sales: float
) -> EfficiencyRatio:
    """Mean matched rewards / (mean matched sales - ``baseline_sales``).

    ``baseline_sales`` is the counterfactual average sale without the
    campaign; it has to come from outside the experiment.
    """
    avg_sales = expected_sales_under_policy(ds, p, sales)
    avg_rewards = expected_sales_under_policy(ds, p, rewards)
    incremental = avg_sales - float(baseline_sales)
    if incremental == 0:
        raise UndefinedMetricError("average sale equals the baseline; e%iS undefined")
    return EfficiencyRatio(avg_rewards / incremental, incremental)


def threshold_policy(
    ds: ExperimentDataset, score, threshold: float, direction: str = "below", arm: int = 1
) -> Policy:
    """Static score-threshold baseline, e.g. "retention score < 0.391"."""
    score = np.asarray(score, dtype=float)
    if score.shape[0] != len(ds):
        raise ValueError("one score per customer is required")
    if direction == "below":
        hit = score < threshold
    elif direction == "above":
        hit = score > threshold
    else:
        raise ValueError(f"direction must be 'below' or 'above', got {direction!r}")
    if not (0 <= arm < ds.n_arms):
        raise ValueError(f"arm {arm} outside 0..{ds.n_arms - 1}")
    return Policy(ds.ids, np.where(hit, arm, 0), ds.n_arms)


def relative_lift(proposed: float, baseline: float):
    """(lift, flag). Normalized by |baseline|; absolute difference if baseline is 0."""
    if baseline == 0:
        return proposed - baseline, "absolute_difference"
    return (proposed - baseline) / abs(baseline), ""


@dataclass(frozen=True)
class EfficiencySpec:
    sales: str
    rewards: str
    baseline_sales: float


@dataclass
class PolicyEvalReport:
    """Estimates per policy plus lifts of the proposed policy over each baseline.

    ``policies[name]["metrics"][outcome]`` holds ``ips``, ``snips`` (None when
    undefined) and ``match_count``. ``lifts`` is long-form: one row per
    (baseline, outcome, estimator).
    """

    proposed: str
    outcomes: List[str]
    policies: Dict[str, dict] = field(default_factory=dict)
    lifts: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "proposed": self.proposed,
            "outcomes": list(self.outcomes),
            "policies": self.policies,
            "lifts": self.lifts,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def lift_table(self) -> List[List[str]]:
        """Baseline x metric grid in the layout of a lift table."""
        columns = []
        for row in self.lifts:
            key = (row["outcome"], row["estimator"])
            if key not in columns:
                columns.append(key)
        header = ["baseline"] + [f"{o} {e}" for o, e in columns] + ["flags"]
        table = [header]
        baselines = list(dict.fromkeys(r["baseline"] for r in self.lifts))
        for b in baselines:
            cells, flags = {}, []
            for r in self.lifts:
                if r["baseline"] != b:
                    continue
                key = (r["outcome"], r["estimator"])
                cells[key] = "undefined" if r["lift"] is None else format_float(r["lift"])
                if r["flag"]:
                    flags.append(f"{r['outcome']} {r['estimator']}: {r['flag']}")
            table.append([b] + [cells.get(c, "") for c in columns] + ["; ".join(flags)])
        return table

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.lift_table())

    def policy_table(self) -> List[List[str]]:
        """One row per policy: targeting proportion and IPS/SNIPS per outcome."""
        header = ["policy", "targeting_proportion"]
        for o in self.outcomes:
            header += [f"{o} ips", f"{o} snips"]
        has_eff = any("e_pct_is" in v for v in self.policies.values())
        if has_eff:
            header.append("e_pct_is")
        rows = [header]
        for name, entry in self.policies.items():
            row = [name, format_float(entry["targeting_proportion"])]
            for o in self.outcomes:
                m = entry["metrics"][o]
                row.append(format_float(m["ips"]))
                row.append("undefined" if m["snips"] is None else format_float(m["snips"]))
            if has_eff:
                e = entry.get("e_pct_is")
                row.append("undefined" if e is None or e["value"] is None
                           else format_float(e["value"]))
            rows.append(row)
        return rows

    def add_ground_truth(self, name: str, outcome: str, true_value: float) -> None:
        """Attach an exact policy value and the IPS/SNIPS relative errors against it."""
        m = self.policies[name]["metrics"][outcome]
        entry = {"true_value": true_value}
        for est in ("ips", "snips"):
            if m[est] is not None and true_value != 0:
                entry[f"{est}_relative_error"] = abs(m[est] - true_value) / abs(true_value)
        self.policies[name].setdefault("ground_truth", {})[outcome] = entry


def _evaluate(ds, p, outcomes, efficiency: Optional[EfficiencySpec]) -> dict:
    entry = {"targeting_proportion": p.targeting_proportion, "metrics": {}}
    for o in outcomes:
        try:
            s = snips(ds, p, o)
        except UndefinedMetricError:
            s = None
        entry["metrics"][o] = {"ips": ips(ds, p, o), "snips": s, "match_count": match_count(ds, p)}
    if efficiency is not None:
        try:
            r = e_pct_is(ds, p, efficiency.sales, efficiency.rewards, efficiency.baseline_sales)
            entry["e_pct_is"] = {"value": r.value, "incremental_sales": r.incremental_sales,
                                 "negative_incremental": r.negative_incremental}
        except UndefinedMetricError:
            entry["e_pct_is"] = {"value": None, "incremental_sales": None,
                                 "negative_incremental": False}
    return entry


def lift_report(
    ds: ExperimentDataset,
    proposed: Policy,
    baselines: Mapping[str, Policy],
    outcomes: Sequence[str] = ("y",),
    efficiency: Optional[EfficiencySpec] = None,
    proposed_name: str = "proposed",
) -> PolicyEvalReport:
    report = PolicyEvalReport(proposed_name, list(outcomes))
    report.policies[proposed_name] = _evaluate(ds, proposed, outcomes, efficiency)
    for name, p in baselines.items():
        report.policies[name] = _evaluate(ds, p, outcomes, efficiency)

    mine = report.policies[proposed_name]
    for name in baselines:
        theirs = report.policies[name]
        for o in outcomes:
            for est in ("ips", "snips"):
                a, b = mine["metrics"][o][est], theirs["metrics"][o][est]
                report.lifts.append(_lift_row(name, o, est, a, b))
        if efficiency is not None:
            a, b = mine["e_pct_is"]["value"], theirs["e_pct_is"]["value"]
            report.lifts.append(_lift_row(name, "e_pct_is", "ratio", a, b))
    return report


def _lift_row(baseline, outcome, estimator, proposed_value, baseline_value) -> dict:
    row = {"baseline": baseline, "outcome": outcome, "estimator": estimator,
           "proposed": proposed_value, "baseline_value": baseline_value}
    if proposed_value is None or baseline_value is None:
        row.update(lift=None, flag="undefined")
    else:
        lift, flag = relative_lift(proposed_value, baseline_value)
        row.update(lift=lift, flag=flag)
    return row
