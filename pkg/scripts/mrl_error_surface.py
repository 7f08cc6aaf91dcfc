"""Estimated minus true non-transplant MRL over a (t, v) grid for one replicate.

Fits the index on one simulated dataset, then tabulates m_N-hat - m_N on
the grid. With ``--seeds`` several replicates are summarized by their sup
error, which shows how much a single-replicate check depends on the draw.

    python scripts/mrl_error_surface.py --study 1 --n 2000 --out err.csv
    python scripts/mrl_error_surface.py --study 1 --n 2000 --seeds 0:10
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from mrlreg import GroupLabel
from mrlreg.estimator import FitConfig, solve_beta
from mrlreg.simgen import calibrate_censoring, get_study, sample_dataset, truth_mrl
from mrlreg.smoother import GroupSmoother

NT = GroupLabel.NONTRANSPLANT


def error_surface(spec, seed, ts, vs):
    law = calibrate_censoring(spec, np.random.default_rng([seed, 1]))
    data = sample_dataset(spec, np.random.default_rng(seed), law)
    fit = solve_beta(data, FitConfig(d=spec.d))
    sm = GroupSmoother(data, NT, fit.beta_hat, fit.bandwidths)
    return np.array([[sm.mrl(t, [v]) - truth_mrl(spec, NT, t, v) for v in vs] for t in ts])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--study", default="1", choices=["1", "2", "4"])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--censoring", type=float, default=0.0)
    ap.add_argument("--t", default="0.2:1.5:13", help="start:stop:intervals")
    ap.add_argument("--v", default="-0.8:0.8:16", help="start:stop:intervals")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", help="start:stop range of seeds; prints sup errors only")
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    def grid(text):
        a, b, k = text.split(":")
        return np.linspace(float(a), float(b), int(k) + 1)

    ts, vs = grid(args.t), grid(args.v)
    spec = get_study(args.study, n=args.n, censoring=args.censoring)
    if args.seeds:
        lo, hi = (int(s) for s in args.seeds.split(":"))
        sups = []
        for seed in range(lo, hi):
            sups.append(np.abs(error_surface(spec, seed, ts, vs)).max())
            print(f"seed {seed}: sup error {sups[-1]:.4f}", flush=True)
        print(f"median sup {np.median(sups):.4f}, max {np.max(sups):.4f}")
        return
    err = error_surface(spec, args.seed, ts, vs)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["t", "v", "error"])
    for i, t in enumerate(ts):
        for j, v in enumerate(vs):
            wr.writerow([f"{t:.4g}", f"{v:.4g}", f"{err[i, j]:.6g}"])
    if args.out:
        fh.close()
    print(f"sup error {np.abs(err).max():.4f}", file=sys.stderr)


if __name__ == "__main__":
    main()
