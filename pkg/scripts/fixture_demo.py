"""Train the seeded toy fixture and compress it in both modes.

    python scripts/fixture_demo.py --seed 42
"""

import argparse

from rankloss.fixtures import build_fixture
from rankloss.optimizer import CompressionConfig, compress_network
from rankloss.report import format_drop_rate


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--eps", default="calibrate")
    args = parser.parse_args()

    fx = build_fixture(seed=args.seed)
    print(f"fixture seed {args.seed}: train loss {fx.train_loss:.6f}, "
          f"{fx.net.param_count} weight parameters")
    print(f"{'mode':<9} {'ranks':<14} {'calib loss':>22} {'held-out loss':>22} {'drop':>9}")
    for mode in ("lossless", "compact"):
        _, rep = compress_network(fx.net, fx.calib, CompressionConfig(mode=mode, eps=args.eps),
                                  holdout=fx.holdout)
        ranks = ",".join("-" if d.rank is None else str(d.rank) for d in rep.layers)
        calib = f"{rep.calibration_before.loss:.6f}->{rep.calibration_after.loss:.6f}"
        hold = f"{rep.holdout_before.loss:.6f}->{rep.holdout_after.loss:.6f}"
        print(f"{mode:<9} {ranks:<14} {calib:>22} {hold:>22} {format_drop_rate(rep.drop_rate):>9}")
        for d in rep.layers:
            if d.skip_reason:
                print(f"  layer {d.layer} skipped: {d.skip_reason}")


if __name__ == "__main__":
    main()
