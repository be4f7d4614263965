"""Miscoverage and median interval length for the null logistic and gaussian regimes.

Columns: (n=30, p=10) and (n=40, p=60), each with a fixed lambda (half of
lambda_max) and with cross-validation. The gaussian n < p cells use the true
error variance; the n > p cells estimate it from the selected-model residuals.
"""

import argparse
import time

from postsel.sim import SimDesign, coverage_table, run_design

REFERENCE = {
    "logistic": (0.11, 0.11, 0.14, 0.14),
    "gaussian": (0.11, 0.12, 0.13, 0.10),
}
CELLS = [((30, 10), "fixed"), ((30, 10), "cv"), ((40, 60), "fixed"), ((40, 60), "cv")]


def designs(family, replications=1000, seed=0):
    out = []
    for k, ((n, p), rule) in enumerate(CELLS):
        sigma2 = "true" if family == "gaussian" and n < p else "estimate"
        out.append(SimDesign(name=f"{family}_n{n}_p{p}_{rule}", family=family, n=n, p=p, rho=0.2,
                             lambda_rule=rule, sigma2=sigma2, replications=replications,
                             seed=seed + k))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--family", choices=("logistic", "gaussian", "both"), default="both")
    ap.add_argument("--replications", type=int, default=1000)
    args = ap.parse_args()
    fams = ("logistic", "gaussian") if args.family == "both" else (args.family,)
    for fam in fams:
        print(f"\n{fam}")
        print(f"{'cell':26s} {'miscov':>7s} {'ref':>5s} {'med.len':>8s} {'inf':>6s} {'n.int':>6s} {'sec':>6s}")
        for d, ref in zip(designs(fam, args.replications), REFERENCE[fam]):
            t0 = time.perf_counter()
            row = coverage_table([run_design(d)])[0]
            print(f"{row['design']:26s} {row['miscoverage']:7.3f} {ref:5.2f} "
                  f"{row['median_finite_length']:8.2f} {row['infinite_fraction']:6.3f} "
                  f"{row['n_intervals']:6d} {time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
