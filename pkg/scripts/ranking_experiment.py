"""Held-out sentence-ranking quality of the learned ranker against baselines.

Usage: python3 scripts/ranking_experiment.py [--tasks 200] [--seeds 0 1 2]
"""

import argparse
import time

from ttgen.harness import EvalSettings, evaluate
from ttgen.synthetic import SyntheticConfig, make_corpus

SELECTORS = ("ttgen", "lexical", "length", "random")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tasks", type=int, default=200)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--folds", type=int, default=5)
    args = ap.parse_args()

    print(f"{'seed':>4}  " + "  ".join(f"{s:>15}" for s in SELECTORS))
    for seed in args.seeds:
        tasks = make_corpus(SyntheticConfig(n_tasks=args.tasks, seed=seed))
        cells = []
        for sel in SELECTORS:
            t0 = time.perf_counter()
            rep = evaluate(tasks, EvalSettings(folds=args.folds, seed=seed, selector=sel, answerer=None))
            cells.append(f"{rep.map:.3f}/{rep.mrr:.3f} {time.perf_counter() - t0:4.1f}s")
        print(f"{seed:>4}  " + "  ".join(f"{c:>15}" for c in cells))
    print("cells: MAP/MRR and wall time")


if __name__ == "__main__":
    main()
