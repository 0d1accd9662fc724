"""Prune the random toy transformer and compare against metric and random masks.

    python3 scripts/toy_pruning.py --seeds 0 1 2 --out toy_results.json

Each seed builds its own model and teacher corpus (about 40 s), then trains
scores through the retained fractions in decreasing order (about 60 s).
"""

import argparse
import json
import sys

from pgprune.experiment import make_toy_setup, run_toy_pruning


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.7, 0.6, 0.5])
    ap.add_argument("--learning-rate", type=float, default=0.02)
    ap.add_argument("--epochs", type=float, default=1.0)
    ap.add_argument("--segments", type=int, default=4096)
    ap.add_argument("--kinds", nargs="+", default=["head"], choices=["head", "mlp_channel", "layer"])
    ap.add_argument("--out", help="write per-seed results as JSON")
    args = ap.parse_args(argv)

    rows = []
    for seed in args.seeds:
        setup = make_toy_setup(seed, n_train=args.segments, kinds=tuple(args.kinds))
        results = run_toy_pruning(
            setup, rhos=args.rhos, learning_rate=args.learning_rate, epochs_total=args.epochs,
            log=lambda msg: print(msg, flush=True),
        )
        for r in results:
            rows.append({
                "seed": seed,
                "rho": r.rho,
                "optimized": r.ppl_optimized,
                "optimized_local": r.ppl_optimized_local,
                "metric": r.ppl_metric,
                "metric_local": r.ppl_metric_local,
                "random_mean": r.ppl_random_mean,
                "random": r.ppl_random,
            })

    print(f"\n{'seed':>4} {'rho':>5} {'optimized':>10} {'local':>8} {'metric':>8} {'random':>10}")
    for row in rows:
        print(f"{row['seed']:>4} {row['rho']:>5.2f} {row['optimized']:>10.3f} {row['optimized_local']:>8.3f} "
              f"{row['metric']:>8.3f} {row['random_mean']:>10.2f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
