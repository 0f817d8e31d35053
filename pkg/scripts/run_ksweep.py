"""QA accuracy by number of selected sentences, per selector.

Runs cross-validated evaluation on a synthetic corpus, or on a user corpus
with --corpus. Pass --scorer to answer with an external reader instead of
the token-overlap answerer.
"""

import argparse

from ttgen.harness import EvalSettings, ExternalScorer, evaluate, load_corpus
from ttgen.synthetic import SyntheticConfig, make_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus")
    ap.add_argument("--tasks", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scorer", help="tcp://host:port or a command line")
    ap.add_argument("--selectors", nargs="+", default=["ttgen", "lexical", "random"])
    ap.add_argument("--ks", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    args = ap.parse_args()

    tasks = load_corpus(args.corpus) if args.corpus else make_corpus(
        SyntheticConfig(n_tasks=args.tasks, seed=args.seed)
    )
    scorer = ExternalScorer(args.scorer) if args.scorer else None
    answerer = "external" if scorer else "baseline"
    try:
        for sel in args.selectors:
            settings = EvalSettings(seed=args.seed, selector=sel, answerer=answerer, k_sweep=args.ks)
            rep = evaluate(tasks, settings, scorer=scorer)
            print(f"== {sel}")
            print(rep.format_table())
            print()
        for sel in ("linearization", "templation", "none"):
            rep = evaluate(tasks, EvalSettings(seed=args.seed, selector=sel, answerer=answerer), scorer=scorer)
            print(f"== {sel}: accuracy {rep.accuracy:.3f}")
    finally:
        if scorer:
            scorer.close()


if __name__ == "__main__":
    main()
