"""Stage two: turn uplift estimates into a treatment assignment.

Solves

    maximize  sum_i sum_{k>=1} pi_ik * w_i * tau_k(x_i)
    s.t.      one arm per customer, plus a budget or a sales-ratio constraint

with exact solvers where the structure allows, an exhaustive oracle for
verification, and bucketing to shrink large populations.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from .dataset import ExperimentDataset
from .errors import CapacityError, InfeasibleError
from .uplift.learners import UpliftEstimates

MAX_ENUMERATION = 2 ** 20
ENUMERATION_MAX_GROUPS = 20
_CHUNK = 1 << 15


@dataclass(frozen=True)
class SolveInfo:
    solver: str
    objective: float
    quantization_unit: Optional[float] = None
    objective_gap_bound: float = 0.0
    notes: str = ""


@dataclass(frozen=True, eq=False)
class Policy:
    """Dense encoding of the one-hot assignment matrix: one arm index per customer."""

    ids: np.ndarray
    assignment: np.ndarray
    n_arms: int
    weights: Optional[np.ndarray] = None
    info: Optional[SolveInfo] = None

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=object).astype(str)
        a = np.asarray(self.assignment, dtype=np.int64).reshape(-1)
        if a.shape[0] != ids.shape[0]:
            raise ValueError("one assignment per customer id is required")
        if a.size and (a.min() < 0 or a.max() >= self.n_arms):
            raise ValueError(f"arm indices must lie in 0..{self.n_arms - 1}")
        w = np.ones(a.size) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != a.shape:
            raise ValueError("one weight per customer is required")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return int(self.assignment.size)

    @property
    def targeting_proportion(self) -> float:
        return float(np.mean(self.assignment != 0)) if len(self) else 0.0

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_arms)

    def matrix(self) -> np.ndarray:
        m = np.zeros((len(self), self.n_arms), dtype=np.int8)
        m[np.arange(len(self)), self.assignment] = 1
        return m

    def same_assignment(self, other: "Policy") -> bool:
        return np.array_equal(self.ids, other.ids) and np.array_equal(
            self.assignment, other.assignment
        )

    @classmethod
    def constant(cls, ids, arm: int, n_arms: int) -> "Policy":
        ids = np.asarray(ids)
        return cls(ids, np.full(ids.shape[0], arm, dtype=np.int64), n_arms)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "arm"])
            for i, a in zip(self.ids, self.assignment):
                w.writerow([i, int(a)])

    @classmethod
    def read_csv(cls, path, n_arms: int) -> "Policy":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([r["id"] for r in rows], [int(r["arm"]) for r in rows], n_arms)


@dataclass(frozen=True)
class ConstraintSpec:
    """``kind`` is ``none``, ``budget`` (caps per non-control arm) or ``ratio_floor``.

    ``ratio_floor`` keeps the policy's total ``aux`` outcome at least
    ``(1 - epsilon)`` times the total under ``reference_arm`` for everyone.
    """

    kind: str = "none"
    caps: Optional[tuple] = None
    aux: Optional[str] = None
    epsilon: float = 0.01
    reference_arm: int = 1

    def __post_init__(self):
        if self.kind not in ("none", "budget", "ratio_floor"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "budget":
            if self.caps is None:
                raise ValueError("budget constraint needs caps")
            caps = tuple(int(c) for c in np.atleast_1d(self.caps))
            if any(c < 0 for c in caps):
                raise ValueError("caps must be >= 0")
            object.__setattr__(self, "caps", caps)
        if self.kind == "ratio_floor":
            if self.aux is None:
                raise ValueError("ratio_floor constraint needs an aux outcome name")
            if not (0.0 <= self.epsilon < 1.0):
                raise ValueError("epsilon must lie in [0, 1)")


def _check_aligned(ids_a, ids_b):
    if not np.array_equal(np.asarray(ids_a).astype(str), np.asarray(ids_b).astype(str)):
        raise ValueError("policy and estimates are not aligned on customer ids")


def _gains(est: UpliftEstimates, weights) -> np.ndarray:
    """N x (K+1) gain matrix with a zero control column."""
    w = np.ones(est.n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (est.n,):
        raise ValueError("one weight per customer is required")
    return np.hstack([np.zeros((est.n, 1)), w[:, None] * est.values])


def policy_objective(p: Policy, est: UpliftEstimates) -> float:
    """sum_i w_i * tau_{assigned arm}(x_i); control contributes nothing."""
    _check_aligned(p.ids, est.ids)
    if est.K != p.n_arms - 1:
        raise ValueError("policy arm count does not match the estimates")
    treated = np.flatnonzero(p.assignment > 0)
    terms = p.weights[treated] * est.values[treated, p.assignment[treated] - 1]
    return math.fsum(terms.tolist())


def _finish(est, assignment, weights, solver, **info) -> Policy:
    p = Policy(est.ids, assignment, est.K + 1, weights)
    obj = policy_objective(p, est)
    return Policy(p.ids, p.assignment, p.n_arms, p.weights, SolveInfo(solver, obj, **info))


def optimize_positive(est: UpliftEstimates, weights=None) -> Policy:
    """Give each customer the arm with the largest weighted uplift if it is > 0."""
    g = _gains(est, weights)
    best = np.argmax(g, axis=1)  # control column is 0, so ties at 0 keep control
    best = np.where(g[np.arange(est.n), best] > 0, best, 0)
    return _finish(est, best, weights, "closed_form")


def optimize_budget(est: UpliftEstimates, caps, weights=None) -> Policy:
    """Respect ``caps[k-1]`` customers per treatment arm k.

    Binary treatment: the top positive weighted uplifts (ties by id), which is
    optimal. Several arms: greedy over (customer, arm) pairs by descending gain.
    """
    caps = [int(c) for c in np.atleast_1d(caps)]
    if len(caps) != est.K:
        raise ValueError(f"need {est.K} caps, got {len(caps)}")
    if any(c < 0 for c in caps):
        raise ValueError("caps must be >= 0")
    g = _gains(est, weights)
    assign = np.zeros(est.n, dtype=np.int64)
    if est.K == 1:
        pos = np.flatnonzero(g[:, 1] > 0)
        order = pos[np.lexsort((est.ids[pos], -g[pos, 1]))]
        assign[order[: caps[0]]] = 1
        return _finish(est, assign, weights, "exact_sort")

    rows, arms = np.nonzero(g[:, 1:] > 0)
    arms = arms + 1
    vals = g[rows, arms]
    order = np.lexsort((arms, est.ids[rows], -vals))
    left = list(caps)
    done = np.zeros(est.n, dtype=bool)
    for j in order:
        i, k = rows[j], arms[j]
        if not done[i] and left[k - 1] > 0:
            assign[i] = k
            done[i] = True
            left[k - 1] -= 1
    return _finish(est, assign, weights, "greedy",
                   notes="greedy pair assignment; not guaranteed optimal for K > 1")


@dataclass(frozen=True, eq=False)
class BucketSet:
    """Customers grouped by descending predicted uplift (binary treatment).

    ``aux_mean[b, k]`` is the mean of the aux outcome over rows of bucket b
    logged in arm k. Buckets lacking an arm are ``flagged``; their missing
    entry is filled with that arm's overall mean and the optimizer pins them
    to the reference arm.
    """

    ids: np.ndarray
    groups: List[np.ndarray]
    sizes: np.ndarray
    mean_tau: np.ndarray
    aux_name: str
    aux_mean: np.ndarray
    arm_counts: np.ndarray
    flagged: np.ndarray

    @property
    def G(self) -> int:
        return len(self.groups)

    def expand(self, bucket_arms) -> np.ndarray:
        """Per-customer assignment from one arm per bucket."""
        out = np.zeros(self.ids.size, dtype=np.int64)
        for rows, a in zip(self.groups, bucket_arms):
            out[rows] = int(a)
        return out


def bucketize(
    est: UpliftEstimates, ds: ExperimentDataset, n_groups: int, aux: str, weights=None
) -> BucketSet:
    if ds.n_arms != 2 or est.K != 1:
        raise ValueError("bucketing supports binary treatment only")
    _check_aligned(est.ids, ds.ids)
    if not (1 <= n_groups <= len(ds)):
        raise ValueError(f"n_groups must be in 1..{len(ds)}")
    z = ds.outcome(aux)
    g = _gains(est, weights)[:, 1]
    order = np.lexsort((ds.ids, -g))
    groups = np.array_split(order, n_groups)
    global_mean = np.array([z[ds.t == k].mean() if (ds.t == k).any() else 0.0 for k in (0, 1)])
    sizes = np.array([r.size for r in groups])
    mean_tau = np.array([g[r].mean() for r in groups])
    aux_mean = np.empty((n_groups, 2))
    counts = np.empty((n_groups, 2), dtype=np.int64)
    for b, rows in enumerate(groups):
        for k in (0, 1):
            mask = ds.t[rows] == k
            counts[b, k] = int(mask.sum())
            aux_mean[b, k] = z[rows][mask].mean() if mask.any() else global_mean[k]
    flagged = (counts == 0).any(axis=1)
    return BucketSet(ds.ids, groups, sizes, mean_tau, aux, aux_mean, counts, flagged)


def floor_slack(a: np.ndarray, x: np.ndarray, reference_arm: int, epsilon: float) -> float:
    """Exactly summed slack of the aux floor for bucket arms ``x``.

    ``a[b, k]`` is bucket b's aux total under arm k. The floor
    ``sum_b a[b, x_b] >= (1 - eps) * sum_b a[b, ref]`` is evaluated as
    ``sum_{b: x_b != ref} (a[b, x_b] - a[b, ref]) + eps * sum_b a[b, ref]``,
    so the all-reference assignment has slack ``eps * R`` without rounding.
    """
    ref = a[:, reference_arm]
    moved = [float(a[b, x[b]] - ref[b]) for b in np.flatnonzero(x != reference_arm)]
    return math.fsum(moved + [epsilon * math.fsum(ref.tolist())])


def _slack_rows(bits, a, x, free, reference_arm, epsilon) -> np.ndarray:
    """Floor slack of every row of 0/1 arms for the ``free`` buckets.

    Fixed buckets keep their arm from ``x``. Rows whose vectorized slack is
    within rounding distance of zero are recomputed with :func:`floor_slack`.
    """
    base = x.copy()
    base[free] = reference_arm
    const = floor_slack(a, base, reference_arm, epsilon)
    leave = a[free, 1 - reference_arm] - a[free, reference_arm]
    slack = const + (bits != reference_arm).astype(float) @ leave
    tol = 1e-9 * (abs(const) + float(np.abs(leave).sum()))
    for r in np.flatnonzero(np.abs(slack) <= tol):
        base[free] = bits[r]
        slack[r] = floor_slack(a, base, reference_arm, epsilon)
    return slack


def _enumerate_buckets(v, a, x, free, reference_arm, epsilon):
    """Best feasible 0/1 vector over ``free`` items, lexicographically smallest on ties."""
    m = free.size
    best_obj, best_j = -np.inf, -1
    shifts = np.arange(m - 1, -1, -1)
    for start in range(0, 1 << m, _CHUNK):
        j = np.arange(start, min(start + _CHUNK, 1 << m))
        bits = (j[:, None] >> shifts) & 1
        obj = bits @ v[free]
        slack = _slack_rows(bits, a, x, free, reference_arm, epsilon)
        obj = np.where(slack >= 0, obj, -np.inf)
        k = int(np.argmax(obj))
        if obj[k] > best_obj:
            best_obj, best_j = obj[k], int(j[k])
    if best_j < 0:
        raise InfeasibleError("no bucket assignment satisfies the ratio floor")
    return np.array([(best_j >> s) & 1 for s in shifts], dtype=np.int64)


def _knapsack_buckets(v, a, x, free, reference_arm, epsilon, fixed_obj, resolution, max_cells):
    """Approximate solve by dynamic programming over quantized objective loss.

    Starts from "treat every positive-uplift bucket" and buys back the missing
    aux total by flipping buckets, minimising the objective given up. Losses
    are rounded up to multiples of a unit derived from a feasible greedy
    solution, so the result is feasible exactly and within
    ``len(items) * unit`` of the optimum.
    """
    x0 = x.copy()
    x0[free] = v[free] > 0
    slack0 = floor_slack(a, x0, reference_arm, epsilon)
    if slack0 >= 0:
        return x0[free], None, 0.0
    deficit = -slack0
    idx = np.arange(v.size)
    gain = a[idx, 1 - x0] - a[idx, x0]
    cost = np.abs(v)
    items = np.array([b for b in free if gain[b] > 0], dtype=np.int64)
    if items.size == 0:
        raise InfeasibleError("no bucket assignment satisfies the ratio floor")

    # greedy cover by cost per unit of recovered aux gives a feasible bound
    acc, greedy_cost = 0.0, 0.0
    for b in items[np.lexsort((items, cost[items] / gain[items]))]:
        acc += gain[b]
        greedy_cost += cost[b]
        if acc >= deficit:
            break
    m = items.size
    lower = fixed_obj + float(v[free][x0[free] == 1].sum()) - greedy_cost
    scale = lower if lower > 0 else greedy_cost
    unit = resolution * scale / m if scale > 0 else 1.0
    cells = int(math.ceil(greedy_cost / unit)) + m + 1
    limit = max(64, max_cells // m)
    if cells > limit:
        unit = greedy_cost / (limit - m - 1)
        cells = limit
    q = np.ceil(cost[items] / unit).astype(np.int64)

    best = np.full(cells, -np.inf)
    best[0] = 0.0
    take = np.zeros((m, cells), dtype=bool)
    for j, b in enumerate(items):
        qc = int(q[j])
        if qc >= cells:
            continue
        cand = np.full(cells, -np.inf)
        cand[qc:] = best[: cells - qc] + gain[b]
        take[j] = cand > best
        best = np.where(take[j], cand, best)
    for c in np.flatnonzero(best >= deficit * (1 - 1e-12)):
        x1 = x0.copy()
        c = int(c)
        for j in range(m - 1, -1, -1):
            if take[j, c]:
                x1[items[j]] = 1 - x1[items[j]]
                c -= int(q[j])
        # the table sums gains in its own order; the exact check decides
        if floor_slack(a, x1, reference_arm, epsilon) >= 0:
            return x1[free], unit, m * unit
    raise InfeasibleError("dynamic program found no feasible assignment")


def optimize_ratio_constrained(
    buckets: BucketSet,
    epsilon: float,
    reference_arm: int = 1,
    solver: str = "auto",
    resolution: float = 1e-3,
    max_cells: int = 50_000_000,
) -> Policy:
    """Choose one arm per bucket under a floor on the aux total.

    Maximizes ``sum_b size_b * mean_tau_b * x_b`` subject to
    ``sum_b size_b * aux_mean[b, x_b] >= (1 - epsilon) * sum_b size_b * aux_mean[b, ref]``.
    Up to 20 free buckets are enumerated exhaustively; larger instances (or
    ``solver="dp"``) use a knapsack dynamic program whose objective shortfall
    is bounded by ``resolution`` times a feasible objective.
    """
    if not (0.0 <= epsilon < 1.0):
        raise ValueError("epsilon must lie in [0, 1)")
    if reference_arm not in (0, 1):
        raise ValueError("reference arm must be 0 or 1 for binary treatment")
    if solver not in ("auto", "enumeration", "dp"):
        raise ValueError(f"unknown solver {solver!r}")
    v = buckets.sizes * buckets.mean_tau
    a = buckets.sizes[:, None] * buckets.aux_mean
    if epsilon * math.fsum(a[:, reference_arm].tolist()) < 0:
        raise InfeasibleError("reference-arm total is negative; the floor cannot be met")

    x = np.zeros(buckets.G, dtype=np.int64)
    fixed = np.flatnonzero(buckets.flagged)
    free = np.flatnonzero(~buckets.flagged)
    x[fixed] = reference_arm

    unit, gap = None, 0.0
    path = solver
    if solver == "auto":
        path = "enumeration" if free.size <= ENUMERATION_MAX_GROUPS else "dp"
    if free.size:
        if path == "enumeration":
            if free.size > ENUMERATION_MAX_GROUPS:
                raise CapacityError(f"{free.size} free buckets is too many to enumerate")
            x[free] = _enumerate_buckets(v, a, x, free, reference_arm, epsilon)
        else:
            fixed_obj = float(np.dot(v[fixed], x[fixed]))
            x[free], unit, gap = _knapsack_buckets(
                v, a, x, free, reference_arm, epsilon, fixed_obj, resolution, max_cells
            )

    notes = f"{fixed.size} flagged bucket(s) pinned to arm {reference_arm}" if fixed.size else ""
    info = SolveInfo(path, float(np.dot(v, x)), unit, gap, notes)
    return Policy(buckets.ids, buckets.expand(x), 2, None, info)


def ratio_totals(policy: Policy, buckets: BucketSet, reference_arm: int):
    """(policy aux total, reference aux total) under the bucket model.

    Written as a plain loop over buckets so it can serve as an independent
    check of the optimizers.
    """
    achieved, reference = 0.0, 0.0
    for b, rows in enumerate(buckets.groups):
        arms = set(int(a) for a in policy.assignment[rows])
        if len(arms) != 1:
            raise ValueError(f"bucket {b} members received different arms")
        arm = arms.pop()
        achieved += buckets.sizes[b] * buckets.aux_mean[b, arm]
        reference += buckets.sizes[b] * buckets.aux_mean[b, reference_arm]
    return achieved, reference


def check_constraints(
    policy: Policy, spec: ConstraintSpec, buckets: Optional[BucketSet] = None
) -> Dict[str, float]:
    """Slack of every constraint in ``spec`` (negative means violated).

    Also verifies the one-arm-per-customer encoding.
    """
    m = policy.matrix()
    if not (m.sum(axis=1) == 1).all():
        raise AssertionError("policy does not assign exactly one arm per customer")
    slack: Dict[str, float] = {}
    if spec.kind == "budget":
        counts = policy.arm_counts()
        for k, cap in enumerate(spec.caps, start=1):
            slack[f"cap_arm{k}"] = float(cap - counts[k])
    elif spec.kind == "ratio_floor":
        if buckets is None:
            raise ValueError("ratio constraint checking needs the bucket set")
        achieved, reference = ratio_totals(policy, buckets, spec.reference_arm)
        ref = spec.reference_arm
        moved, ref_terms = [], []
        for b, rows in enumerate(buckets.groups):
            arm = int(policy.assignment[rows[0]])
            ref_terms.append(float(buckets.sizes[b] * buckets.aux_mean[b, ref]))
            if arm != ref:
                moved.append(float(buckets.sizes[b] * buckets.aux_mean[b, arm]
                                   - buckets.sizes[b] * buckets.aux_mean[b, ref]))
        slack["ratio_floor"] = math.fsum(moved + [spec.epsilon * math.fsum(ref_terms)])
        if reference:
            slack["aux_deterioration"] = float(1.0 - achieved / reference)
    return slack


def is_feasible(policy: Policy, spec: ConstraintSpec, buckets: Optional[BucketSet] = None) -> bool:
    slack = check_constraints(policy, spec, buckets)
    return all(v >= 0 for k, v in slack.items() if k != "aux_deterioration")


def brute_force_policy(
    est: UpliftEstimates,
    ds: Optional[ExperimentDataset],
    spec: ConstraintSpec,
    buckets: Optional[BucketSet] = None,
    weights=None,
) -> Policy:
    """Exhaustive search for the best feasible policy.

    Customer-level for ``none``/``budget``; bucket-level for ``ratio_floor``
    (members of a bucket share an arm, flagged buckets take the reference
    arm). Ties go to the lexicographically smallest assignment.
    """
    if ds is not None:
        _check_aligned(est.ids, ds.ids)
    if spec.kind == "ratio_floor":
        if buckets is None or ds is None:
            raise ValueError("ratio-constrained brute force needs the dataset and bucket set")
        return _brute_force_buckets(est, ds, spec, buckets, weights)

    n, k1 = est.n, est.K + 1
    if k1 ** n > MAX_ENUMERATION:
        raise CapacityError(f"{k1}^{n} assignments exceed the enumeration limit")
    g = _gains(est, weights)
    caps = np.array(spec.caps) if spec.kind == "budget" else None
    powers = k1 ** np.arange(n - 1, -1, -1)
    best_obj, best_digits = -np.inf, None
    for start in range(0, k1 ** n, _CHUNK):
        j = np.arange(start, min(start + _CHUNK, k1 ** n))
        digits = (j[:, None] // powers) % k1
        obj = g[np.arange(n), digits].sum(axis=1)
        if caps is not None:
            for k in range(1, k1):
                obj = np.where((digits == k).sum(axis=1) <= caps[k - 1], obj, -np.inf)
        i = int(np.argmax(obj))
        if obj[i] > best_obj:
            best_obj, best_digits = obj[i], digits[i].copy()
    if best_digits is None:
        raise InfeasibleError("no feasible assignment")
    return _finish(est, best_digits, weights, "brute_force")


def _brute_force_buckets(est, ds, spec, buckets, weights):
    G = buckets.G
    if 2 ** G > MAX_ENUMERATION:
        raise CapacityError(f"2^{G} bucket assignments exceed the enumeration limit")
    w = np.ones(est.n) if weights is None else np.asarray(weights, dtype=float)
    z = ds.outcome(spec.aux)
    overall = [z[ds.t == k].mean() if (ds.t == k).any() else 0.0 for k in (0, 1)]
    value = np.empty(G)
    aux_tot = np.empty((G, 2))
    pinned = np.zeros(G, dtype=bool)
    for b, rows in enumerate(buckets.groups):
        value[b] = math.fsum((w[rows] * est.values[rows, 0]).tolist())
        for k in (0, 1):
            sel = rows[ds.t[rows] == k]
            if sel.size:
                aux_tot[b, k] = rows.size * z[sel].mean()
            else:
                aux_tot[b, k] = rows.size * overall[k]
                pinned[b] = True
    every = np.arange(G)
    template = np.zeros(G, dtype=np.int64)
    shifts = np.arange(G - 1, -1, -1)
    best_obj, best_j = -np.inf, -1
    for start in range(0, 1 << G, _CHUNK):
        j = np.arange(start, min(start + _CHUNK, 1 << G))
        bits = (j[:, None] >> shifts) & 1
        ok = (bits[:, pinned] == spec.reference_arm).all(axis=1)
        slack = _slack_rows(bits, aux_tot, template, every, spec.reference_arm, spec.epsilon)
        obj = np.where(ok & (slack >= 0), bits @ value, -np.inf)
        i = int(np.argmax(obj))
        if obj[i] > best_obj:
            best_obj, best_j = obj[i], int(j[i])
    if best_j < 0:
        raise InfeasibleError("no feasible bucket assignment")
    bucket_arms = [(best_j >> s) & 1 for s in shifts]
    return _finish(est, buckets.expand(bucket_arms), weights, "brute_force")


def optimizer_report(policy: Policy, spec: ConstraintSpec, buckets: Optional[BucketSet] = None) -> dict:
    info = policy.info or SolveInfo("unknown", float("nan"))
    report = {
        "solver": info.solver,
        "objective": info.objective,
        "targeting_proportion": policy.targeting_proportion,
        "arm_counts": policy.arm_counts().tolist(),
        "constraint": _spec_dict(spec),
        "constraint_slack": check_constraints(policy, spec, buckets),
        "quantization_unit": info.quantization_unit,
        "objective_gap_bound": info.objective_gap_bound,
    }
    if info.notes:
        report["notes"] = info.notes
    return report


def _spec_dict(spec: ConstraintSpec) -> dict:
    d = asdict(spec)
    if d["caps"] is not None:
        d["caps"] = list(d["caps"])
    return d


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
