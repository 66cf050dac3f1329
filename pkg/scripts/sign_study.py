"""How often a negative first-order prediction means a real loss drop.

Enumerates every compressive truncation of every fixture layer whose noise
is within the calibrated eps and whose predicted change is negative, then
applies it and measures.

    python scripts/sign_study.py --seeds 42 43 44 45 46 47
"""

import argparse

import numpy as np

from rankloss.calibrator import calibrate
from rankloss.constraints import max_compressive_rank
from rankloss.fixtures import build_fixture
from rankloss.linalg import noise, svd, truncate
from rankloss.network import apply_factorization, dataset_loss, gradients


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=list(range(42, 48)))
    args = parser.parse_args()

    total = agree = 0
    for seed in args.seeds:
        fx = build_fixture(seed=seed)
        net, data = fx.net, fx.calib
        grads = gradients(net, data)
        base = dataset_loss(net, data)
        profile, _ = calibrate(net, data, grads=grads)
        n = a = 0
        for i, layer in enumerate(net.layers):
            dec = svd(layer.weight)
            for k in range(1, max_compressive_rank(*layer.shape) + 1):
                f = truncate(dec, k)
                delta, max_abs, _ = noise(layer.weight, f)
                if np.sum(grads[i] * delta) < 0 and max_abs <= profile.eps[i]:
                    n += 1
                    a += dataset_loss(apply_factorization(net, i, f), data) < base
        print(f"seed {seed}: {a}/{n} predicted drops confirmed")
        total += n
        agree += a
    print(f"overall: {agree}/{total} ({agree / max(total, 1):.1%})")


if __name__ == "__main__":
    main()
