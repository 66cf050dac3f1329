"""Noise-bound vs loss-gap table, second-order ratios and gradient statistics.

    python scripts/probe_table.py --seeds 42 43 44
"""

import argparse

import numpy as np

from rankloss.calibrator import calibrate, gradient_stats, probe_table
from rankloss.fixtures import build_fixture
from rankloss.network import gradients


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[42])
    args = parser.parse_args()

    for seed in args.seeds:
        fx = build_fixture(seed=seed)
        grads = gradients(fx.net, fx.calib)
        profile, records = calibrate(fx.net, fx.calib, grads=grads)
        zero, below = gradient_stats(grads)
        print(f"seed {seed}: eps {profile.eps}, gradient entries zero {zero:.4f}, "
              f"below 1e-3 {below:.4f}")
        print(f"  {'layer':>5} {'eps bound':>10} {'max loss gap':>14}")
        for layer, bound, worst in probe_table(records):
            print(f"  {layer:>5} {bound:>10g} {worst:>14.3e}")
        for bound in sorted({r.eps_bound for r in records}):
            ratios = [abs(r.first_order) / abs(r.residual) for r in records
                      if r.eps_bound == bound and r.residual != 0]
            print(f"  eps <= {bound:g}: median |first|/|residual| = {np.median(ratios):.1f} "
                  f"(n={len(ratios)})")


if __name__ == "__main__":
    main()
