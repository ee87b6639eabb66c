"""Offsets a_n - 2n/d, increments and identity residuals for every (d, variant)."""
import argparse

import numpy as np

from loopsoup.sequences import build_a_sequence


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n-max", type=int, default=10 ** 5)
    p.add_argument("--dims", default="1,2,3")
    args = p.parse_args()

    print(f"{'d':>2} {'variant':>10} {'a_1':>10} {'offset(n_max)':>14} {'sup|offset|':>12} "
          f"{'|inc-2/d|':>10} {'max resid':>10}")
    for d in (int(x) for x in args.dims.split(",")):
        for variant in ("discrete", "continuous"):
            seq = build_a_sequence(d, variant, args.n_max)
            off = seq.offsets()
            inc = abs(seq.increments()[-1] - 2.0 / d)
            print(f"{d:>2} {variant:>10} {seq.a[0]:10.6f} {off[-2]:14.6f} {seq.tail_constant:12.6f} "
                  f"{inc:10.2e} {np.max(seq.identity_residual):10.2e}")


if __name__ == "__main__":
    main()
