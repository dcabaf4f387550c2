"""Run every CLI stage for one config and print the markdown summary.

Usage: python3 scripts/run_pipeline.py configs/retention.yaml [--seed N] [--out DIR]
"""
import argparse
import sys
from pathlib import Path

from uplift_policy.cli import main

STAGES = ("simulate", "fit", "optimize", "evaluate", "report")


def run(config: Path, extra) -> int:
    for stage in STAGES:
        code = main([stage, "--config", str(config), *extra])
        if code != 0:
            print(f"stage {stage} exited with {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path)
    args = parser.parse_args()
    extra = []
    if args.seed is not None:
        extra += ["--seed", str(args.seed)]
    if args.out is not None:
        extra += ["--out", str(args.out)]
    code = run(args.config, extra)
    if code == 0:
        from uplift_policy.config import load_config
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        print((cfg.out / "summary.md").read_text(encoding="utf-8"))
    sys.exit(code)
