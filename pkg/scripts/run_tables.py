"""Multi-seed comparison table for one scenario (NegoNets vs baseline).

    python scripts/run_tables.py --scenario paper-sim --seeds 0 1 2 3
    python scripts/run_tables.py --scenario nonmonotone --lam 10 --out nm.csv

Prints per-seed rows and a mean/std summary; ``--out`` also writes them as CSV.
"""

import argparse
import csv
import sys

import numpy as np

from negonets.experiment import ExperimentConfig, run_experiment
from negonets.losses import LossConfig

METRICS = ("f1", "monotonicity", "pdf1", "pif1", "rs", "price_std")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="paper-sim")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--out", help="CSV path for the per-seed rows")
    args = ap.parse_args(argv)

    rows = []
    for seed in args.seeds:
        cfg = ExperimentConfig(scenario=args.scenario, seed=seed, loss=LossConfig(lam=args.lam))
        _, models, reports = run_experiment(cfg)
        for model, rep in reports.items():
            rows.append({"seed": seed, "model": model, **{k: getattr(rep, k) for k in METRICS}})
        print(f"seed {seed}: {len(models.history.records)} epochs", file=sys.stderr)

    header = ["seed", "model", *METRICS]
    print("  ".join(f"{h:>12s}" for h in header))
    for r in rows:
        print("  ".join(f"{_fmt(r[h]):>12s}" for h in header))
    print()
    for model in dict.fromkeys(r["model"] for r in rows):
        sub = [r for r in rows if r["model"] == model]
        cells = []
        for k in METRICS:
            vals = np.array([r[k] for r in sub if r[k] is not None], dtype=float)
            cells.append(f"{vals.mean():.3f}±{vals.std():.3f}" if vals.size else "n/a")
        print(f"{model:>12s}  " + "  ".join(f"{k}={c}" for k, c in zip(METRICS, cells)))

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, header, lineterminator="\n")
            w.writeheader()
            w.writerows({k: _fmt(v) for k, v in r.items()} for r in rows)


def _fmt(v):
    if v is None:
        return "n/a"
    return f"{v:.4f}" if isinstance(v, float) else str(v)


if __name__ == "__main__":
    main()
