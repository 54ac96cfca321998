"""Mollified empirical projection against the plain projection for n = 4, 16, 64, ...

    python scripts/mollification_study.py --functional variance --N 64 --levels 4 16 64 256
"""

import argparse
import sys

from iwlions.functionals import MeasureFunctional
from iwlions.harness import mollification_study
from iwlions.oracles import catalogue


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--functional", default="variance", choices=sorted(catalogue(1)))
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--Q", type=int, default=10_000)
    p.add_argument("--levels", type=int, nargs="+", default=[4, 16, 64, 256])
    p.add_argument("--seed", type=int, default=20240611)
    args = p.parse_args()

    F = catalogue(args.d)[args.functional] if args.functional != "variance" else MeasureFunctional.variance()
    x = [0.5] * args.d if not F.x_free else None
    rows = mollification_study(F, args.N, args.levels, Q=args.Q, seed=args.seed, d=args.d, x=x)
    print(f"{args.functional}, N={args.N}, d={args.d}, Q={args.Q}, Lipschitz bound {rows[0].lipschitz:.4g}")
    print(f"{'n':>6} {'|u^Nn - u^N|':>14} {'mc se':>10} {'Lip/n':>10} {'max W2':>10} {'W2 ok':>6}")
    for r in rows:
        print(f"{r.n:>6} {r.error:>14.3e} {r.se:>10.2e} {r.bound:>10.4g} {r.max_w2:>10.3e} {str(r.w2_ok):>6}"
              + ("" if r.w2_exact else "  (W2 from identity coupling)"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
