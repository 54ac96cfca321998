"""Worst finite-difference error of the empirical-projection Lions derivatives, per functional.

    python scripts/projection_check.py --clouds 20 --sizes 8 64 --dims 1 2
"""

import argparse
import sys
import time

from iwlions.oracles import projection_checks


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--clouds", type=int, default=20)
    p.add_argument("--sizes", type=int, nargs="+", default=[8, 64])
    p.add_argument("--dims", type=int, nargs="+", default=[1, 2])
    p.add_argument("--seed", type=int, default=20240611)
    args = p.parse_args()

    t0 = time.perf_counter()
    checks = projection_checks(args.seed, args.clouds, tuple(args.sizes), tuple(args.dims))
    for c in checks:
        print(c.line())
    print(f"{time.perf_counter() - t0:.1f}s")
    return 0 if all(c.passed for c in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
