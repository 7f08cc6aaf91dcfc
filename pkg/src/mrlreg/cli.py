"""Command-line entry point: fit, predict, grid, simulate and validate.

Exit codes: 0 success, 2 usage error, 3 nonconvergence, 4 data error.
Diagnostics go to stderr; tables and JSON go to stdout or ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from .domain import DataError, Dataset, GroupLabel, IndexMatrix, index_values, load_dataset
from .estimator import (
    EstimationError,
    FitConfig,
    FitResult,
    NonConvergenceError,
    initial_beta,
    improvement,
    mrl_variance,
    solve_beta,
)
from .kernel import BandwidthConfig, Bandwidths, KernelKind, default_bandwidths
from .smoother import DomainError, GroupSmoother, TrimmedCellError

log = logging.getLogger("mrlreg")

EXIT_OK, EXIT_USAGE, EXIT_NONCONV, EXIT_DATA = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# argument helpers


def parse_range(text: str) -> np.ndarray:
    """Parse ``start:stop:count`` into an inclusive grid.

    An integer third field is the number of intervals, giving count + 1
    points; a fractional one is the step between points.
    """
    parts = text.split(":")
    if len(parts) == 1:
        return np.array([float(parts[0])])
    if len(parts) != 3:
        raise UsageError(f"bad range {text!r}; expected start:stop:count")
    try:
        start, stop = float(parts[0]), float(parts[1])
        third = float(parts[2])
    except ValueError:
        raise UsageError(f"bad range {text!r}") from None
    if not third > 0:
        raise UsageError(f"range count/step must be positive in {text!r}")
    if third.is_integer() and "." not in parts[2]:
        count = int(third)
    else:
        count = int(round(abs(stop - start) / third))
    if count == 0:
        return np.array([start])
    return np.linspace(start, stop, count + 1)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _bandwidths(args, data: Dataset, beta: IndexMatrix) -> Bandwidths | str:
    kernel = KernelKind(args.kernel) if args.kernel else None
    if args.h is None and args.b is None and kernel is None:
        return "auto"
    base = default_bandwidths(data, beta, kernel)
    d = beta.d

    def override(cfg, extra):
        if cfg is None:
            return None
        h = cfg.h
        if args.h is not None:
            given = _floats(args.h)
            if len(given) not in (d, d + 1):
                raise UsageError(f"--h needs {d} or {d + 1} values")
            h = given[:d] + (tuple(given[d:]) or cfg.h[d:]) if extra else given[:d]
        b = cfg.b if args.b is None else args.b
        return BandwidthConfig(h, b, cfg.kernel)

    return Bandwidths(override(base.nontransplant, False), override(base.transplant, True))


def _standardize(data: Dataset):
    mean = data.x.mean(axis=0)
    sd = data.x.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    scaled = Dataset((data.x - mean) / sd, data.z, data.delta, data.w, tau=data.tau, columns=data.columns)
    return scaled, mean, sd


def _write(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    data = load_dataset(args.data)
    s = data.summary()
    lines = [
        f"n\t{s['n']}",
        f"p\t{s['p']}",
        f"censoring_rate\t{s['censoring_rate']:.4f}",
        f"transplant_fraction\t{s['transplant_fraction']:.4f}",
        f"tau\t{s['tau']:.6g}",
        "column\tmean\tsd\tmin\tmax",
    ]
    cols = [("z", data.z)] + [(c, data.x[:, k]) for k, c in enumerate(data.columns)]
    w = data.w_filled[data.transplanted]
    if w.size:
        cols.insert(1, ("w", w))
    for name, vals in cols:
        sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        lines.append(f"{name}\t{vals.mean():.4g}\t{sd:.4g}\t{vals.min():.4g}\t{vals.max():.4g}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_fit(args) -> int:
    data = load_dataset(args.data, tau=args.tau)
    shift = scale = None
    if args.standardize:
        data, shift, scale = _standardize(data)
    cfg = FitConfig(d=args.d, init=args.init, tol=args.tol, max_iter=args.max_iter,
                    n_starts=args.starts, seed=args.seed,
                    kernel=KernelKind(args.kernel) if args.kernel else None)
    if cfg.d < 1 or cfg.d >= data.p:
        raise UsageError(f"--d must satisfy 1 <= d < p = {data.p}")
    cfg.bw = _bandwidths(args, data, initial_beta(data, cfg))
    fit = solve_beta(data, cfg)
    obj = fit.to_dict()
    obj["data_path"] = str(Path(args.data).resolve())
    obj["tau"] = data.tau
    obj["standardize"] = None if shift is None else {"mean": shift.tolist(), "sd": scale.tolist()}
    _write(json.dumps(obj, indent=2) + "\n", args.out)
    log.info("converged: residual %.3g after %d iterations", fit.score_norm, fit.iterations)
    return EXIT_OK


def _load_fit(args):
    with open(args.fit, encoding="utf-8") as fh:
        obj = json.load(fh)
    fit = FitResult.from_dict(obj)
    path = args.data or obj.get("data_path")
    if not path:
        raise UsageError("fit file does not record its data; pass --data")
    data = load_dataset(path, tau=obj.get("tau"))
    std = obj.get("standardize")
    if std:
        mean, sd = np.asarray(std["mean"]), np.asarray(std["sd"])
        data = Dataset((data.x - mean) / sd, data.z, data.delta, data.w, tau=data.tau, columns=data.columns)
    return fit, data, std


def _covariates(text: str, std, p: int) -> np.ndarray:
    x = np.asarray(_floats(text))
    if x.size != p:
        raise UsageError(f"--x needs {p} values, got {x.size}")
    if std:
        x = (x - np.asarray(std["mean"])) / np.asarray(std["sd"])
    return x


def cmd_predict(args) -> int:
    fit, data, std = _load_fit(args)
    x = _covariates(args.x, std, data.p)
    value, se = improvement(args.t, x, args.w, fit, data)
    wr = csv.writer(sys.stdout, lineterminator="\n")
    wr.writerow(["t", "w", "improvement", "se"])
    wr.writerow([args.t, args.w, f"{value:.6g}", f"{se:.6g}"])
    return EXIT_OK


def _safe(fn):
    try:
        val = fn()
    except (DomainError, TrimmedCellError, ValueError):
        return math.nan
    return float(val)


def cmd_grid(args) -> int:
    fit, data, _ = _load_fit(args)
    beta = fit.beta_hat
    if beta.d != 1:
        raise UsageError("grid supports single-index fits only")
    bw = fit.bandwidths or default_bandwidths(data, beta)
    ts, vs, ws = parse_range(args.t), parse_range(args.v), parse_range(args.w)
    sm_n = GroupSmoother(data, GroupLabel.NONTRANSPLANT, beta, bw)
    sm_t = GroupSmoother(data, GroupLabel.TRANSPLANT, beta, bw) if data.transplanted.sum() >= 2 else None
    buf = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "v", "w", "m_T", "m_N", "improvement", "se_T", "se_N"])
        for w in ws:
            for t in ts:
                for v in vs:
                    m_n = _safe(lambda: sm_n.mrl(t, v))
                    se_n = _safe(lambda: math.sqrt(mrl_variance(GroupLabel.NONTRANSPLANT, t, v, None, beta, data, bw)))
                    if sm_t is not None and w < t:
                        m_t = _safe(lambda: sm_t.mrl(t, v, w))
                        se_t = _safe(lambda: math.sqrt(mrl_variance(GroupLabel.TRANSPLANT, t, v, w, beta, data, bw)))
                    else:
                        m_t = se_t = math.nan
                    wr.writerow([f"{t:.6g}", f"{v:.6g}", f"{w:.6g}", f"{m_t:.6g}", f"{m_n:.6g}",
                                 f"{m_t - m_n:.6g}", f"{se_t:.6g}", f"{se_n:.6g}"])
    finally:
        if args.out:
            buf.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simgen import get_study, run_monte_carlo

    spec = get_study(args.study, n=args.n, censoring=args.censoring)
    summary = run_monte_carlo(spec, args.reps, seed=args.seed, n_jobs=args.jobs)
    text = summary.to_csv()
    _write(text, args.out)
    log.info("realized censoring %.3f, transplant fraction %.3f, failures %d/%d",
             summary.realized_censoring, summary.realized_transplant, summary.failures, summary.n_rep)
    if summary.flagged:
        log.warning("more than 5%% of replicates failed")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrlreg", description="Covariate-dependent mean residual life with a time-dependent transplant.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def bw_flags(p):
        p.add_argument("--h", help="index (and transplant-time) bandwidths, comma-separated")
        p.add_argument("--b", type=float, help="time bandwidth")
        p.add_argument("--kernel", choices=[k.value for k in KernelKind])

    p = sub.add_parser("fit", help="estimate the index matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--init", choices=["sir", "zeros"], default="sir")
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--tau", type=float)
    p.add_argument("--standardize", action="store_true", help="z-score covariates before fitting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    bw_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="transplant improvement in mean residual life")
    p.add_argument("--fit", required=True)
    p.add_argument("--data")
    p.add_argument("--x", required=True, help="covariate row, comma-separated")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--w", type=float, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grid", help="MRL surfaces over (t, v, w) as CSV")
    p.add_argument("--fit", required=True)
    p.add_argument("--data")
    p.add_argument("--t", required=True, help="start:stop:count")
    p.add_argument("--v", required=True, help="start:stop:count")
    p.add_argument("--w", required=True, help="value or start:stop:count")
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("simulate", help="Monte Carlo study table")
    p.add_argument("--study", required=True, choices=["1", "2", "3", "4"])
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--censoring", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, help="worker processes (default MRL_THREADS or CPU count)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="check and summarize a data file")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


_NEGATIVE = re.compile(r"^-[\d.]")


def _attach_negative_values(argv):
    """Rewrite ``--v -2:2:0.2`` as ``--v=-2:2:0.2`` so argparse keeps it a value."""
    out = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and _NEGATIVE.match(tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def run(argv=None) -> int:
    ap = build_parser()
    argv = _attach_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
