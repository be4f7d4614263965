"""Run simulation designs and write their reports.

    python3 scripts/run_designs.py                      # every design in scripts/designs
    python3 scripts/run_designs.py designs/cox_null_fixed.cfg --out results
"""

import argparse
import glob
import os
import time

from postsel.sim import load_design, run_design, write_report

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("designs", nargs="*")
    ap.add_argument("--out", default=os.path.join(HERE, "results"))
    ap.add_argument("--replications", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    paths = args.designs or sorted(glob.glob(os.path.join(HERE, "designs", "*.cfg")))
    print(f"{'design':28s} {'reps':>5s} {'KS':>7s} {'naive@.05':>9s} {'miscov':>7s} "
          f"{'med.len':>8s} {'inf':>5s} {'sec':>6s}")
    for path in paths:
        design = load_design(path).replace(n_jobs=args.jobs)
        if args.replications:
            design = design.replace(replications=args.replications)
        t0 = time.perf_counter()
        rep = run_design(design)
        write_report(rep, os.path.join(args.out, design.name))
        s = rep.summary()
        print(f"{design.name:28s} {rep.counts['screened']:5d} {rep.ks_statistic:7.4f} "
              f"{s['naive_ecdf_null_at_0.05']:9.3f} {rep.miscoverage:7.3f} "
              f"{rep.median_finite_length:8.2f} {rep.infinite_fraction:5.3f} "
              f"{time.perf_counter() - t0:6.1f}")
        for key, info in s["nonnull"].items():
            print(f"    {key}: selected {info['selection_frequency']:.3f}, "
                  f"P(p <= 0.1) = {info['ecdf_at_0.1']:.3f}")


if __name__ == "__main__":
    main()
