"""Conversion rate by offered-price decile for each built-in scenario.

    python scripts/preset_deciles.py --seeds 0 1 2 3

The monotone presets should fall across deciles; the non-monotone pool rises.
"""

import argparse

import numpy as np

from negonets.simulator import PRESET_NAMES, conversion_by_bucket, preset_bundle, simulate_market


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args(argv)
    np.set_printoptions(precision=3, suppress=True)
    for name in PRESET_NAMES:
        for seed in args.seeds:
            for part, scenario in preset_bundle(name, seed).items():
                d = simulate_market(scenario)
                _, rates, _ = conversion_by_bucket(d.p, d.y)
                print(f"{name:12s} seed {seed} {part:5s} N={len(d):5d} conv={d.conversion_rate():.3f} {rates}")


if __name__ == "__main__":
    main()
