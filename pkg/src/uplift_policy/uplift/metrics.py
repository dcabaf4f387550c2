"""Cumulative uplift curve, its area, and bucketed difference-in-means."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List

import numpy as np

from ..dataset import ExperimentDataset, format_float
from .learners import UpliftEstimates


@dataclass(frozen=True, eq=False)
class UpliftCurve:
    """Point r holds the uplift of treating the top-r ranked customers.

    ``order`` indexes the evaluated dataset rows in rank order;
    ``undefined[r-1]`` is set when the prefix lacks treated or control rows
    (the value is then reported as 0).
    """

    ranks: np.ndarray
    values: np.ndarray
    undefined: np.ndarray
    order: np.ndarray

    @property
    def n(self) -> int:
        return int(self.ranks.size)

    @property
    def fractions(self) -> np.ndarray:
        return self.ranks / self.n

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "fraction", "value", "undefined_flag"])
            for r, f, v, u in zip(self.ranks, self.fractions, self.values, self.undefined):
                w.writerow([int(r), format_float(f), format_float(v), int(u)])


def rank_order(scores, ids) -> np.ndarray:
    """Indices sorting ``scores`` descending, ties by ascending id."""
    scores = np.asarray(scores, dtype=float)
    ids = np.asarray(ids).astype(str)
    return np.lexsort((ids, -scores))


def curve_from_ranking(y: np.ndarray, treated: np.ndarray, order: np.ndarray) -> UpliftCurve:
    """Curve for an explicit ranking of rows that are either treated or control."""
    y = np.asarray(y, dtype=float)[order]
    treated = np.asarray(treated, dtype=bool)[order]
    n = y.size
    if n == 0:
        raise ValueError("cannot build an uplift curve on zero records")
    # a common offset cancels in the difference and keeps prefix sums small
    offset = float(np.median(y))
    yc = y - offset
    n_t = np.cumsum(treated)
    n_c = np.cumsum(~treated)
    s_t = np.cumsum(np.where(treated, yc, 0.0))
    s_c = np.cumsum(np.where(treated, 0.0, yc))
    defined = (n_t > 0) & (n_c > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = s_t / n_t - s_c / n_c
    ranks = np.arange(1, n + 1)
    values = np.where(defined, diff * ranks / n, 0.0)
    return UpliftCurve(ranks, values, ~defined, order)


def cumulative_uplift_curve(
    eval_ds: ExperimentDataset, est: UpliftEstimates, arm: int = 1
) -> UpliftCurve:
    """Sweep the policy "treat the top r by predicted uplift of ``arm``".

    Only rows logged in ``arm`` or in control take part; N is their count.
    Point r equals (mean Y of treated rows in the prefix - mean Y of control
    rows in the prefix) * r / N.
    """
    if not np.array_equal(est.ids, eval_ds.ids):
        raise ValueError("estimates are not aligned with the evaluation dataset")
    rows = np.flatnonzero((eval_ds.t == 0) | (eval_ds.t == arm))
    treated = eval_ds.t[rows] == arm
    if not treated.any() or treated.all():
        raise ValueError(f"evaluation data needs rows in both control and arm {arm}")
    order = rank_order(est.arm(arm)[rows], eval_ds.ids[rows])
    curve = curve_from_ranking(eval_ds.y[rows], treated, order)
    return UpliftCurve(curve.ranks, curve.values, curve.undefined, rows[order])


def uplift_auc(curve: UpliftCurve) -> float:
    """Trapezoidal area under (r/N, value) on [0, 1] starting from the origin."""
    if curve.n == 0:
        raise ValueError("empty curve")
    x = np.concatenate([[0.0], curve.fractions])
    v = np.concatenate([[0.0], curve.values])
    return float(np.sum(np.diff(x) * (v[1:] + v[:-1]) / 2.0))


def random_ranking_auc(eval_ds: ExperimentDataset, seed: int, arm: int = 1) -> float:
    """AUC of a seeded uniformly random ranking on the same rows."""
    rng = np.random.default_rng(seed)
    scores = rng.random((len(eval_ds), 1))
    est = UpliftEstimates(eval_ds.ids, np.repeat(scores, eval_ds.n_arms - 1, axis=1))
    return uplift_auc(cumulative_uplift_curve(eval_ds, est, arm))


def permutation_null_auc(
    eval_ds: ExperimentDataset, est: UpliftEstimates, n_perm: int, seed: int, arm: int = 1
) -> np.ndarray:
    """AUCs of the fixed ranking after shuffling treatment labels among the rows.

    Shuffling breaks any treatment effect, so the spread of these values is the
    no-effect reference band for an observed AUC.
    """
    rows = np.flatnonzero((eval_ds.t == 0) | (eval_ds.t == arm))
    order = rank_order(est.arm(arm)[rows], eval_ds.ids[rows])
    y = eval_ds.y[rows]
    treated = eval_ds.t[rows] == arm
    rng = np.random.default_rng(seed)
    out = np.empty(n_perm)
    for b in range(n_perm):
        out[b] = uplift_auc(curve_from_ranking(y, rng.permutation(treated), order))
    return out


@dataclass(frozen=True)
class BucketUplift:
    score_min: float
    score_max: float
    value: float
    n_treated: int
    n_control: int
    defined: bool


def bucket_true_uplift(
    ds: ExperimentDataset, score, n_buckets: int, arm: int = 1
) -> List[BucketUplift]:
    """Difference in mean outcome (arm minus control) inside score buckets.

    Customers are sorted by ascending score (ties by id) and cut into
    ``n_buckets`` groups whose sizes differ by at most one, the larger groups
    first. Buckets missing either arm are reported with ``defined=False`` and
    value 0.
    """
    score = np.asarray(score, dtype=float)
    if score.shape[0] != len(ds):
        raise ValueError("one score per customer is required")
    if n_buckets < 1 or n_buckets > len(ds):
        raise ValueError(f"n_buckets must be in 1..{len(ds)}, got {n_buckets}")
    if not ((ds.t == 0).any() and (ds.t == arm).any()):
        raise ValueError(f"need records in control and arm {arm}")
    order = np.lexsort((ds.ids.astype(str), score))
    out = []
    for rows in np.array_split(order, n_buckets):
        t, y = ds.t[rows], ds.y[rows]
        in_t, in_c = t == arm, t == 0
        nt, nc = int(in_t.sum()), int(in_c.sum())
        defined = nt > 0 and nc > 0
        value = float(y[in_t].mean() - y[in_c].mean()) if defined else 0.0
        out.append(BucketUplift(float(score[rows].min()), float(score[rows].max()),
                                value, nt, nc, defined))
    return out
