"""Which steepness values satisfy C0, C1 and C2, over a log grid and several N.

Writes ``conditions_scan.csv`` (one row per N and a) and ``thresholds.csv``
(the smallest a meeting each condition, per N).

    python scripts/conditions_scan.py --n 50 100 500 --out results/
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from dcctrack import dcc
from dcctrack.io import fmt
from dcctrack.model import DEFAULT_EPS, DccParams


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[50, 100, 500])
    ap.add_argument("--eps", type=float, default=DEFAULT_EPS)
    ap.add_argument("--lo", type=float, default=1.0)
    ap.add_argument("--hi", type=float, default=1e7)
    ap.add_argument("--steps", type=int, default=141)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    grid = np.geomspace(args.lo, args.hi, args.steps)
    with (args.out / "conditions_scan.csv").open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["n", "a", "c0", "c1", "c2", "e", "n_times_e"])
        for n in args.n:
            for a in grid:
                r = dcc.check_conditions(n, DccParams(a=float(a), K=1, eps=args.eps))
                out.writerow([n, fmt(a), int(r.c0), int(r.c1), int(r.c2), fmt(r.error_integral), fmt(r.n_times_e)])
    with (args.out / "thresholds.csv").open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["n", "eps", "min_a_c0", "min_a_c1", "min_a_c2", "min_a_overall"])
        for n in args.n:
            t = dcc.condition_thresholds(n, args.eps)
            out.writerow([n, fmt(args.eps), *map(fmt, t), fmt(max(t))])
            print(f"N={n:5d}  C0 {t[0]:12.1f}  C1 {t[1]:10.3f}  C2 {t[2]:10.2f}  overall {max(t):12.1f}")
    print(f"wrote {args.out / 'conditions_scan.csv'} and {args.out / 'thresholds.csv'}")


if __name__ == "__main__":
    main()
