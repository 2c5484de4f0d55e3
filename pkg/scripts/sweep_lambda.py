"""Boundary weight sweep: band compliance, price spread and seller metrics per lambda.

    python scripts/sweep_lambda.py --values 0 0.1 1 10 100 1000 --seed 0

Band compliance is the share of training interactions whose suggestion lies
inside [L, U]; a near-zero ``price_std`` marks a collapsed seller.
"""

import argparse

from negonets.experiment import ExperimentConfig, evaluate_models, prepare_data, train_models
from negonets.losses import LossConfig, boundary_penalty
from negonets.training import suggest_prices


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="paper-sim")
    ap.add_argument("--values", type=float, nargs="+", default=[0.0, 0.1, 1.0, 10.0, 100.0, 1000.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"{'lambda':>8s} {'in_band':>8s} {'price_std':>9s} {'pdf1':>6s} {'pif1':>6s} {'rs':>6s} {'M':>6s}")
    for lam in sorted(args.values):
        cfg = ExperimentConfig(scenario=args.scenario, seed=args.seed, baseline=False, loss=LossConfig(lam=lam))
        splits = prepare_data(cfg)
        models = train_models(cfg, splits)
        tr = splits.train
        in_band = (boundary_penalty(suggest_prices(models.seller, tr.x), tr.p, tr.y, cfg.loss) == 0).mean()
        rep = evaluate_models(models, splits.test, cfg)["NegoNets"]
        cells = [_f(v) for v in (rep.pdf1, rep.pif1, rep.rs, rep.monotonicity)]
        print(f"{lam:8g} {in_band:8.3f} {rep.price_std:9.4f} " + " ".join(f"{c:>6s}" for c in cells))


def _f(v):
    return "n/a" if v is None else f"{v:.3f}"


if __name__ == "__main__":
    main()
