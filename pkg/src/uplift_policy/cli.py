"""Command line pipeline: simulate -> fit -> optimize -> evaluate -> report.

Every stage reads the same config file and the artifacts earlier stages left
in the output directory. Exit codes: 0 ok, 2 config error, 3 data error,
4 infeasible or too large to solve.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import ope, synth
from .config import RunConfig, load_config
from .dataset import (ExperimentDataset, Schema, load_experiment, split, validate,
                      write_experiment)
from .errors import (CapacityError, ConfigError, DataError, InfeasibleError,
                     UnsupportedError)
from .policy import (Policy, bucketize, optimize_budget, optimize_positive,
                     optimize_ratio_constrained, optimizer_report, write_report)
from .uplift import (cumulative_uplift_curve, fit_cate, load_model, permutation_null_auc,
                     predict_cate, random_ranking_auc, save_model, uplift_auc)

log = logging.getLogger("uplift_policy")

DATA_FILE = "data.csv"
MANIFEST_FILE = "manifest.json"
MODEL_FILE = "model.json"
CURVE_FILE = "uplift_curve.csv"
FIT_REPORT = "fit_report.json"
POLICY_FILE = "policy.csv"
OPT_REPORT = "optimizer_report.json"
EVAL_JSON = "eval_report.json"
EVAL_CSV = "eval_report.csv"
POLICY_TABLE = "policy_table.csv"
SUMMARY = "summary.md"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVE = 0, 2, 3, 4


def _dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _out_dir(cfg: RunConfig) -> Path:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.out}: {exc}") from exc
    return cfg.out


def _manifest(cfg: RunConfig) -> Optional[dict]:
    path = cfg.out / MANIFEST_FILE
    if cfg.synth is None or not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _ground_truth(cfg: RunConfig) -> Optional[synth.GroundTruth]:
    manifest = _manifest(cfg)
    if manifest is None:
        return None
    return synth.GroundTruth(synth.SynthConfig.from_dict(manifest["synth"]))


def load_dataset(cfg: RunConfig) -> ExperimentDataset:
    if cfg.data_path is not None:
        ds = load_experiment(cfg.data_path, cfg.schema)
    else:
        path = cfg.out / DATA_FILE
        manifest = _manifest(cfg)
        if manifest is None or not path.exists():
            raise ConfigError(f"no simulated data in {cfg.out}; run 'simulate' first")
        ds = load_experiment(path, Schema.from_dict(manifest["schema"]))
    report = validate(ds)
    for issue in report.warnings:
        log.warning(issue.message)
    if not report.ok:
        raise DataError("; ".join(i.message for i in report.errors))
    return ds


def eval_split(cfg: RunConfig, model_features: bool = True):
    """Train/eval split; the partition depends only on arms and seed, not on columns."""
    ds = load_dataset(cfg)
    if model_features and cfg.features is not None:
        ds = ds.select_features(cfg.features)
    return split(ds, cfg.eval_fraction, cfg.seed)


def cmd_simulate(cfg: RunConfig) -> dict:
    if cfg.synth is None:
        raise ConfigError("simulate needs data.synth in the config")
    out = _out_dir(cfg)
    ds, _ = synth.generate(cfg.synth)
    schema = Schema(labels=ds.treatments.labels, propensities=ds.treatments.propensities)
    write_experiment(ds, out / DATA_FILE, schema)
    manifest = {"synth": cfg.synth.to_dict(), "schema": schema.to_dict(), "n": len(ds),
                "data": DATA_FILE}
    _dump(manifest, out / MANIFEST_FILE)
    return manifest


def cmd_fit(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    train, ev = eval_split(cfg)
    model = fit_cate(cfg.estimator.kind, train, cfg.estimator.params)
    save_model(model, out / MODEL_FILE)
    est = predict_cate(model, ev)
    report = {
        "estimator": model.description,
        "substitution": "meta-learner over an in-package regression tree "
                        "(stands in for forest-based CATE estimators)",
        "features": list(model.feature_names),
        "n_train": len(train),
        "n_eval": len(ev),
        "arms": {},
    }
    gt = _ground_truth(cfg)
    for k in range(1, model.K + 1):
        curve = cumulative_uplift_curve(ev, est, k)
        name = CURVE_FILE if model.K == 1 else f"uplift_curve_arm{k}.csv"
        curve.write_csv(out / name)
        auc = uplift_auc(curve)
        null = permutation_null_auc(ev, est, cfg.evaluation.permutations, cfg.seed, k)
        entry = {
            "curve": name,
            "auc": auc,
            "random_ranking_auc": random_ranking_auc(ev, cfg.seed, k),
            "permutation_null": {
                "n": int(null.size),
                "mean": float(null.mean()),
                "sd": float(null.std(ddof=1)) if null.size > 1 else 0.0,
            },
            "undefined_points": int(curve.undefined.sum()),
        }
        sd = entry["permutation_null"]["sd"]
        entry["within_3sd_of_null"] = bool(abs(auc) < 3 * sd) if sd > 0 else auc == 0
        if gt is not None:
            truth = synth.true_cate(gt, k, eval_split(cfg, model_features=False)[1].X)
            entry["true_cate_mae"] = float(np.mean(np.abs(est.arm(k) - truth)))
        report["arms"][str(k)] = entry
    _dump(report, out / FIT_REPORT)
    return report


def cmd_optimize(cfg: RunConfig, model_path: Optional[Path] = None) -> dict:
    out = _out_dir(cfg)
    _, ev = eval_split(cfg)
    model = load_model(model_path or out / MODEL_FILE)
    try:
        est = predict_cate(model, ev)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    oc = cfg.optimizer
    spec = oc.constraint
    buckets = None
    if spec.kind == "none":
        policy = optimize_positive(est)
    elif spec.kind == "budget":
        policy = optimize_budget(est, spec.caps)
    else:
        buckets = bucketize(est, ev, min(oc.n_groups, len(ev)), spec.aux)
        policy = optimize_ratio_constrained(buckets, spec.epsilon, spec.reference_arm,
                                            solver=oc.solver, resolution=oc.resolution)
    policy.write_csv(out / POLICY_FILE)
    report = optimizer_report(policy, spec, buckets)
    if buckets is not None:
        report["n_groups"] = buckets.G
        report["flagged_buckets"] = int(buckets.flagged.sum())
    write_report(report, out / OPT_REPORT)
    return report


def build_baselines(cfg: RunConfig, ds: ExperimentDataset) -> Dict[str, Policy]:
    out = {}
    for b in cfg.baselines:
        if b.kind == "threshold":
            if b.feature not in ds.feature_names:
                raise ConfigError(f"baseline {b.name!r}: unknown feature {b.feature!r}")
            score = ds.X[:, ds.feature_names.index(b.feature)]
            out[b.name] = ope.threshold_policy(ds, score, b.threshold, b.direction, b.arm)
        elif b.kind == "treat_all":
            out[b.name] = Policy.constant(ds.ids, b.arm, ds.n_arms)
        elif b.kind == "treat_none":
            out[b.name] = Policy.constant(ds.ids, 0, ds.n_arms)
        else:
            out[b.name] = Policy.constant(ds.ids, b.arm, ds.n_arms)
    return out


def _read_policy(path: Path, ds: ExperimentDataset) -> Policy:
    if not path.exists():
        raise ConfigError(f"policy file {path} not found; run 'optimize' first")
    p = Policy.read_csv(path, ds.n_arms)
    if not np.array_equal(p.ids, ds.ids):
        have, want = set(p.ids.tolist()), set(ds.ids.tolist())
        missing = sorted(want - have)[:5]
        extra = sorted(have - want)[:5]
        raise DataError(
            f"policy {path.name} is not aligned with the evaluation data: "
            f"missing ids {missing}, unexpected ids {extra}"
            + ("" if missing or extra else " (order differs)")
        )
    return p


def cmd_evaluate(cfg: RunConfig, policy_path: Optional[Path] = None) -> dict:
    out = _out_dir(cfg)
    _, ev = eval_split(cfg, model_features=False)
    proposed = _read_policy(policy_path or out / POLICY_FILE, ev)
    baselines = build_baselines(cfg, ev)
    e = cfg.evaluation
    eff = None
    if e.sales is not None:
        eff = ope.EfficiencySpec(e.sales, e.rewards, e.baseline_sales)
    report = ope.lift_report(ev, proposed, baselines, e.outcomes, eff)
    gt = _ground_truth(cfg)
    if gt is not None:
        everything = {"proposed": proposed, **baselines}
        for name, p in everything.items():
            for o in e.outcomes:
                report.add_ground_truth(name, o, synth.true_policy_value(gt, ev, p, o))
    report.write_json(out / EVAL_JSON)
    report.write_csv(out / EVAL_CSV)
    with open(out / POLICY_TABLE, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(report.policy_table())
    return report.to_dict()


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_report(cfg: RunConfig) -> str:
    out = cfg.out
    lines = ["# Targeting run summary", ""]
    fit_path, opt_path, eval_path = out / FIT_REPORT, out / OPT_REPORT, out / EVAL_JSON
    if not fit_path.exists() and not opt_path.exists() and not eval_path.exists():
        raise ConfigError(f"no stage outputs found in {out}")
    if fit_path.exists():
        fit = json.loads(fit_path.read_text(encoding="utf-8"))
        lines += ["## Uplift model", "", f"- estimator: {fit['estimator']}",
                  f"- features: {', '.join(fit['features'])}",
                  f"- train/eval rows: {fit['n_train']}/{fit['n_eval']}", ""]
        lines += ["| arm | AUC | random-ranking AUC | null mean | null sd |",
                  "|---|---|---|---|---|"]
        for k, a in fit["arms"].items():
            pn = a["permutation_null"]
            lines.append(f"| {k} | {_fmt(a['auc'])} | {_fmt(a['random_ranking_auc'])} | "
                         f"{_fmt(pn['mean'])} | {_fmt(pn['sd'])} |")
        lines.append("")
    if opt_path.exists():
        opt = json.loads(opt_path.read_text(encoding="utf-8"))
        lines += ["## Optimizer", "", f"- constraint: {opt['constraint']['kind']}",
                  f"- solver: {opt['solver']}", f"- objective: {_fmt(opt['objective'])}",
                  f"- targeting proportion: {_fmt(opt['targeting_proportion'])}",
                  f"- constraint slack: {json.dumps(opt['constraint_slack'])}", ""]
    if eval_path.exists():
        ev = json.loads(eval_path.read_text(encoding="utf-8"))
        outcomes = ev["outcomes"]
        head = ["policy", "targeting proportion"]
        for o in outcomes:
            head += [f"{o} IPS", f"{o} SNIPS"]
        lines += ["## Policy estimates", "", "| " + " | ".join(head) + " |",
                  "|" + "---|" * len(head)]
        for name, p in ev["policies"].items():
            row = [name, _fmt(p["targeting_proportion"])]
            for o in outcomes:
                row += [_fmt(p["metrics"][o]["ips"]), _fmt(p["metrics"][o]["snips"])]
            lines.append("| " + " | ".join(row) + " |")
        lines += ["", "## Relative lift of the proposed policy", "",
                  "| baseline | outcome | estimator | lift | flag |", "|---|---|---|---|---|"]
        for r in ev["lifts"]:
            lift = "undefined" if r["lift"] is None else f"{100 * r['lift']:.3f}%"
            lines.append(f"| {r['baseline']} | {r['outcome']} | {r['estimator']} | "
                         f"{lift} | {r['flag']} |")
        lines.append("")
    text = "\n".join(lines)
    (out / SUMMARY).write_text(text + "\n", encoding="utf-8", newline="\n")
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uplift-policy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "write a synthetic experiment and its ground-truth manifest"),
        ("fit", "fit the uplift model and score it on the held-out split"),
        ("optimize", "turn uplift estimates into a policy"),
        ("evaluate", "offline evaluation against baseline policies"),
        ("report", "summarize stage outputs as markdown"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="override the output directory")
        if name == "optimize":
            p.add_argument("--model", type=Path, default=None)
        if name == "evaluate":
            p.add_argument("--policy", type=Path, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "optimize":
            cmd_optimize(cfg, args.model)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.policy)
        else:
            print(cmd_report(cfg))
    except (ConfigError, UnsupportedError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (InfeasibleError, CapacityError) as exc:
        log.error("cannot solve: %s", exc)
        return EXIT_SOLVE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
