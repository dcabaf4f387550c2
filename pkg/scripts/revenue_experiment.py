"""Revenue scenario: sweep the allowed sales loss and report the trade-off.

For each tolerance the ratio-constrained policy is solved on the held-out
split; the script prints its targeting share, the achieved sales relative to
giving everyone the richer reward, and the true net revenue per customer.
"""
import argparse

from uplift_policy.config import load_config
from uplift_policy.dataset import split
from uplift_policy.policy import bucketize, optimize_ratio_constrained, ratio_totals
from uplift_policy.synth import generate, true_policy_value
from uplift_policy.uplift import fit_cate, predict_cate


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/revenue.yaml")
    parser.add_argument("--epsilons", type=float, nargs="+", default=[0.0, 0.005, 0.01, 0.02, 0.05])
    args = parser.parse_args()
    cfg = load_config(args.config)
    full, gt = generate(cfg.synth)
    train, ev_full = split(full, cfg.eval_fraction, cfg.seed)
    if cfg.features is not None:
        train = train.select_features(cfg.features)
    ev = ev_full.select_features(train.feature_names)
    est = predict_cate(fit_cate(cfg.estimator.kind, train, cfg.estimator.params), ev)
    aux = cfg.optimizer.constraint.aux
    buckets = bucketize(est, ev_full, cfg.optimizer.n_groups, aux)
    print(f"{'epsilon':>8} {'P2 share':>9} {'sales ratio':>12} {'true net':>10} solver")
    for eps in args.epsilons:
        p = optimize_ratio_constrained(buckets, eps, reference_arm=1)
        achieved, reference = ratio_totals(p, buckets, 1)
        net = true_policy_value(gt, ev_full, p, "y")
        print(f"{eps:>8.3f} {p.targeting_proportion:>9.1%} {achieved / reference:>12.4f} "
              f"{net:>10.3f} {p.info.solver}")
