"""Print the residual table and fitted rates of one config's (M, N) ladder.

    python scripts/convergence_study.py full_gaussian
    python scripts/convergence_study.py path/to/config.toml --R 32 --csv out.csv
"""

import argparse
import os
import sys

from iwlions.config import load_config
from iwlions.harness import convergence_study, write_convergence_csv
from iwlions.oracles import builtin_config


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", help="built-in suite config name or TOML path")
    p.add_argument("--R", type=int, help="replications per ladder point")
    p.add_argument("--seed", type=int)
    p.add_argument("--design", choices=("cross", "full"))
    p.add_argument("--csv", help="write the table as CSV here")
    args = p.parse_args()

    cfg = load_config(args.config) if os.path.exists(args.config) else builtin_config(args.config)
    kw = {k: v for k, v in (("R", args.R), ("seed", args.seed), ("design", args.design)) if v is not None}
    cfg = cfg.with_overrides(**kw) if kw else cfg

    def progress(M, N, out):
        st = out["main"]
        chaos = f"{st.corrected_rms:>12.5f}" if st.corrected_rms == st.corrected_rms else f"{'-':>12}"
        print(f"{M:>7} {N:>7} {st.mean:>+12.5f} {st.rms:>10.5f} {st.se:>9.5f} {chaos} {st.seconds:>7.1f}s",
              flush=True)

    print(f"{cfg.name}: {cfg.theorem}, R={cfg.R}, seed={cfg.seed}")
    print(f"{'M':>7} {'N':>7} {'mean':>12} {'rms':>10} {'se':>9} {'rms-chaos':>12} {'time':>8}")
    table = convergence_study(cfg, progress=progress)["main"]
    for label, fit in (("M", table.slope_M), ("N", table.slope_N), ("M, net of particle noise", table.corrected_slope_M)):
        if fit is not None:
            print(f"rate along {label}: {fit.rate:.3f}  (95% ci {fit.ci_low:.3f} .. {fit.ci_high:.3f})")
    for w in table.warnings:
        print(f"warning: {w}")
    if args.csv:
        write_convergence_csv(args.csv, table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
