"""Compare S-, T- and X-learners on the step-CATE scenario over several seeds.

For each learner prints the mean held-out MAE against the true effect and the
share of seeds whose uplift AUC beats a random ranking.
"""
import argparse

import numpy as np

from uplift_policy.dataset import split
from uplift_policy.synth import generate, step_cate_config, true_cate
from uplift_policy.uplift import (TreeParams, cumulative_uplift_curve, fit_cate, predict_cate,
                                  random_ranking_auc, uplift_auc)


def one_seed(kind: str, seed: int, n: int, propensities):
    ds, gt = generate(step_cate_config(n=n, seed=seed, propensities=propensities))
    train, ev = split(ds, 0.3, seed)
    est = predict_cate(fit_cate(kind, train, TreeParams(max_depth=5, min_leaf_size=20)), ev)
    mae = float(np.mean(np.abs(est.arm(1) - true_cate(gt, 1, ev.X))))
    auc = uplift_auc(cumulative_uplift_curve(ev, est))
    return mae, auc > random_ranking_auc(ev, seed)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--n", type=int, default=3000)
    parser.add_argument("--treated-share", type=float, default=0.5)
    args = parser.parse_args()
    props = (1 - args.treated_share, args.treated_share)
    print(f"{'learner':<8} {'mean MAE':>9} {'worst MAE':>10} {'AUC wins':>9}")
    for kind in ("s", "t", "x"):
        rows = [one_seed(kind, s, args.n, props) for s in range(args.seeds)]
        maes = np.array([r[0] for r in rows])
        wins = sum(r[1] for r in rows)
        print(f"{kind.upper():<8} {maes.mean():>9.4f} {maes.max():>10.4f} {wins:>5}/{args.seeds}")
