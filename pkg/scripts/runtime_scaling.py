"""Wall time of DCC, forward and backward selection against K and against N.

Writes ``runtime_vs_k.csv`` and ``runtime_vs_n.csv``; each cell is the
minimum over ``--repeats`` runs, summed over ``--panels`` panels.

    python scripts/runtime_scaling.py --out results/
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from dcctrack import dcc
from dcctrack.baselines import backward_selection, forward_selection
from dcctrack.io import SynthSpec, fmt, synthetic_panel
from dcctrack.model import DEFAULT_EPS, DccParams
from dcctrack.solver import partial_replication_dcc


def _dcc(panel, K):
    return partial_replication_dcc(panel, DccParams(a=dcc.tolerance_matched_a(panel.n_assets, DEFAULT_EPS), K=K))


FITS = {"dcc": _dcc, "forward": forward_selection, "backward": backward_selection}


def _time(fit, panels, K, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for panel in panels:
            fit(panel, K)
        best = min(best, time.perf_counter() - t0)
    return best


def _sweep(path, label, cases, repeats):
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow([label, "k", *FITS])
        for x, panels, K in cases:
            times = [_time(fit, panels, K, repeats) for fit in FITS.values()]
            out.writerow([x, K, *map(fmt, times)])
            print(f"{label}={x:4d} K={K:3d}  " + "  ".join(f"{m} {t:.4f}s" for m, t in zip(FITS, times)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60, help="N for the sweep over K")
    ap.add_argument("--k-grid", type=int, nargs="+", default=[5, 15, 30, 45])
    ap.add_argument("--n-grid", type=int, nargs="+", default=[25, 50, 100, 200])
    ap.add_argument("--k", type=int, default=10, help="K for the sweep over N")
    ap.add_argument("--days", type=int, default=252)
    ap.add_argument("--panels", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)

    def panels(n):
        return [synthetic_panel(SynthSpec(n, args.days, min(15, n - 1), 0.002, seed=s))[0] for s in range(args.panels)]

    fixed = panels(args.n)
    _sweep(args.out / "runtime_vs_k.csv", "n", [(args.n, fixed, K) for K in args.k_grid], args.repeats)
    _sweep(args.out / "runtime_vs_n.csv", "n", [(n, panels(n), args.k) for n in args.n_grid], args.repeats)


if __name__ == "__main__":
    main()
