"""Growth of the bridge-coupling discrepancy with loop size, per dimension and variant."""
import argparse
import math

import numpy as np

from loopsoup.coupling import couple_bridges
from loopsoup.rng import RandomStream


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dims", default="1,2,3")
    p.add_argument("--sizes", default="16,64,256,1024,4096,16384")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    stream = RandomStream(args.seed).child("coupling-rates")
    print(f"{'d':>2} {'variant':>10} {'n':>7} {'mean sup':>9} {'p90 sup':>9} {'mean/log n':>11}")
    for d in (int(x) for x in args.dims.split(",")):
        for variant in ("discrete", "continuous"):
            for n in (int(x) for x in args.sizes.split(",")):
                arg = n if variant == "discrete" else 2.0 * n
                sups = np.array([couple_bridges(d, variant, arg, stream.child(d, variant, n, i), levels=2).sup_dist
                                 for i in range(args.reps)])
                print(f"{d:>2} {variant:>10} {n:>7} {sups.mean():9.3f} {np.percentile(sups, 90):9.3f} "
                      f"{sups.mean() / math.log(n):11.3f}")


if __name__ == "__main__":
    main()
