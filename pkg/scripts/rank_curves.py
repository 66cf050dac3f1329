"""Loss-vs-rank curves for every fixture layer, written as CSV.

Each row is one truncation rank; the original loss is printed so the
crossing point can be located. Plot with, e.g.:

    python scripts/rank_curves.py --out curves
    python -c "import pandas as pd, matplotlib.pyplot as plt; \
d = pd.read_csv('curves/curve_layer1.csv'); d.plot(x='rank', y='loss', logy=True); \
plt.savefig('curve_layer1.png')"
"""

import argparse
from pathlib import Path

from rankloss.calibrator import calibrate
from rankloss.fixtures import build_fixture
from rankloss.network import dataset_loss, gradients
from rankloss.report import rank_curve, write_curve_csv


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", default="curves")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fx = build_fixture(seed=args.seed)
    grads = gradients(fx.net, fx.calib)
    profile, _ = calibrate(fx.net, fx.calib, grads=grads)
    base = dataset_loss(fx.net, fx.calib)
    print(f"original calibration loss {base:.9f}")
    for i in range(len(fx.net.layers)):
        points = rank_curve(fx.net, fx.calib, i, profile.eps[i], grads)
        write_curve_csv(points, i, out / f"curve_layer{i}.csv")
        below = [p.rank for p in points if p.loss <= base]
        first = below[0] if below else None
        print(f"layer {i}: eps {profile.eps[i]:g}, {len(points)} ranks, "
              f"first rank at or below the original loss: {first}, "
              f"admissible: {[p.rank for p in points if p.admissible]}")


if __name__ == "__main__":
    main()
