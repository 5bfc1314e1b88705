"""Command-line interface.

Subcommands: fit, simulate, kernel-table, select-gamma, bandwidth.
Exit codes: 0 success, 2 usage or malformed input, 3 estimation failure.
Inputs are validated before any output file is opened, so a failing run
leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .errors import DomainError, GuidedQlikError
from .families import Dataset, get_family
from .guide import GuideSpec, fit_guide, parse_guide
from .kernel_theory import KernelRegion, kernel_moment, kernel_product_moment, nu_moment
from .local_fit import LocalFitSpec, estimate_curve
from .selection import (
    DEFAULT_GAMMA_GRID,
    select_bandwidth,
    select_gamma,
)
from .simulation import (
    DEFAULT_J,
    DEFAULT_R,
    EstimatorConfig,
    ExampleSpec,
    run_monte_carlo,
)

FLOAT_FMT = "%.12g"


def _fmt(v) -> str:
    return FLOAT_FMT % float(v)


def parse_linear_grid(text: str) -> np.ndarray:
    """lo:hi:count, endpoints inclusive."""
    parts = text.split(":")
    if len(parts) != 3:
        raise DomainError(f"grid must be lo:hi:count, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise DomainError(f"bad grid {text!r}: {exc}") from None
    if count < 1 or not lo < hi:
        raise DomainError(f"grid needs lo < hi and count >= 1, got {text!r}")
    return np.linspace(lo, hi, count)


def parse_geometric_grid(text: str) -> np.ndarray:
    """lo:hi:count with geometric spacing; requires lo > 0."""
    parts = text.split(":")
    if len(parts) != 3:
        raise DomainError(f"h-grid must be lo:hi:count, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise DomainError(f"bad h-grid {text!r}: {exc}") from None
    if count < 1 or not 0 < lo < hi:
        raise DomainError(f"h-grid needs 0 < lo < hi and count >= 1, got {text!r}")
    return np.geomspace(lo, hi, count)


def read_xy_csv(path: str) -> Dataset:
    """Read a two-column CSV with header x,y."""
    try:
        with open(path, newline="") as fp:
            reader = csv.reader(fp)
            try:
                header = next(reader)
            except StopIteration:
                raise DomainError(f"{path}: empty file") from None
            if [c.strip() for c in header] != ["x", "y"]:
                raise DomainError(f"{path}: header must be x,y, got {header}")
            xs, ys = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != 2:
                    raise DomainError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
                try:
                    xs.append(float(row[0]))
                    ys.append(float(row[1]))
                except ValueError:
                    raise DomainError(f"{path}:{lineno}: non-numeric value") from None
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc}") from None
    if not xs:
        raise DomainError(f"{path}: no data rows")
    return Dataset(np.asarray(xs), np.asarray(ys))


def _write_text(path: str, text: str) -> None:
    with open(path, "w", newline="") as fp:
        fp.write(text)


def _default_threads(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("GUIDEDQLIK_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise DomainError(f"GUIDEDQLIK_THREADS must be an integer, got {env!r}") from None
    return 1


def _info(args, message: str) -> None:
    # keep stdout machine-readable when it carries the CSV itself
    stream = sys.stdout if getattr(args, "output", None) else sys.stderr
    print(message, file=stream)


def cmd_fit(args) -> int:
    data = read_xy_csv(args.data)
    fam = get_family(args.family)
    data.validate_for(fam)
    if args.grid:
        grid = parse_linear_grid(args.grid)
    else:
        grid = np.linspace(float(np.min(data.x)), float(np.max(data.x)), 100)

    if args.guide:
        gspec = parse_guide(args.guide)
        gfit = fit_guide(data, fam, gspec)
        mode = "unified"
        gamma = args.gamma
    else:
        gfit = None
        mode = "vanilla"
        gamma = 0.0

    if args.h == "auto":
        sel = select_bandwidth(data, fam, gfit, LocalFitSpec(args.p, 1.0, gamma, mode), grid)
        h = sel.chosen_h
        _info(args, f"chosen_h={_fmt(h)}")
    else:
        try:
            h = float(args.h)
        except ValueError:
            raise DomainError(f"--h must be a number or 'auto', got {args.h!r}") from None
        if h <= 0:
            raise DomainError("--h must be positive")

    curve = estimate_curve(data, fam, gfit, LocalFitSpec(args.p, h, gamma, mode), grid)
    eta = curve.eta_hat
    mu = fam.mean(eta)
    lines = ["x,eta_hat,mu_hat"]
    for j in range(len(grid)):
        lines.append(",".join((_fmt(grid[j]), _fmt(eta[j]), _fmt(mu[j]))))
    text = "\n".join(lines) + "\n"
    if args.output:
        _write_text(args.output, text)
    else:
        sys.stdout.write(text)
    for note in curve.notes:
        print(f"note: {note}", file=sys.stderr)
    return 0


def _parse_methods(text: str):
    """Comma list of vanilla | additive | multiplicative | unified:<gamma>."""
    methods = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "vanilla":
            methods.append((token, None))
        elif token == "additive":
            methods.append((token, 0.0))
        elif token == "multiplicative":
            methods.append((token, 1.0))
        elif token.startswith("unified:"):
            try:
                methods.append((token, float(token.split(":", 1)[1])))
            except ValueError:
                raise DomainError(f"bad method {token!r}") from None
        else:
            raise DomainError(f"unknown method {token!r}")
    if not methods:
        raise DomainError("no methods given")
    return methods


def cmd_simulate(args) -> int:
    spec = ExampleSpec(kind=args.example, n=args.n, seed=args.seed)
    methods = _parse_methods(args.methods)
    guided = [m for m, g in methods if g is not None]
    gspec = parse_guide(args.guide) if args.guide else None
    if guided and gspec is None:
        raise DomainError(f"methods {guided} need --guide")
    threads = _default_threads(args.threads)

    fixed_h = None
    if args.h != "select":
        try:
            fixed_h = float(args.h)
        except ValueError:
            raise DomainError(f"--h must be a number or 'select', got {args.h!r}") from None
        if fixed_h <= 0:
            raise DomainError("--h must be positive")
    if args.same_h and "vanilla" not in [m for m, _ in methods]:
        raise DomainError("--same-h needs vanilla among the methods")

    configs = []
    for name, gamma in methods:
        if gamma is None:
            kind, guide = "vanilla", None
        else:
            kind, guide = "unified", gspec
        if fixed_h is not None:
            policy, h = "fixed", fixed_h
        elif args.same_h and gamma is not None:
            policy, h = "share-vanilla", None
        else:
            policy, h = "select", None
        configs.append(EstimatorConfig(name=name, kind=kind, guide=guide,
                                       gamma=gamma or 0.0, p=args.p, h=h, h_policy=policy))

    reports = run_monte_carlo(spec, configs, R=args.replications, J=args.grid_size,
                              threads=threads)

    summary = [r.aggregates() for r in reports]
    json_text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    if args.out_prefix:
        for r in reports:
            safe = r.config["name"].replace(":", "_")
            _write_text(f"{args.out_prefix}_{safe}.csv", r.to_csv_text())
        _write_text(f"{args.out_prefix}_summary.json", json_text)
        for r in reports:
            flag = " FLAGGED" if r.flagged else ""
            print(f"{r.config['name']}: h={_fmt(r.h_used)} B2={_fmt(r.B2)} "
                  f"V={_fmt(r.V)} MSE={_fmt(r.MSE)}{flag}")
    else:
        sys.stdout.write(json_text)
    return 0


def cmd_kernel_table(args) -> int:
    region = KernelRegion(*_parse_region(args.boundary)) if args.boundary else KernelRegion()
    p = args.p
    lines = ["quantity,value"]
    for ell in range(args.max_moment + 1):
        lines.append(f"nu_{ell}," + _fmt(nu_moment(ell, region)))
    lines.append("K2," + _fmt(kernel_product_moment(0, 0, 0, region)))
    for r in range(p + 1):
        for q in range(p + 3):
            lines.append(f"m_{q}_{r}_{p}," + _fmt(kernel_moment(q, r, p, region)))
        lines.append(f"sigma2num_{r}_{p}," + _fmt(kernel_product_moment(r, r, p, region)))
    text = "\n".join(lines) + "\n"
    if args.output:
        _write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _parse_region(text: str):
    parts = text.split(":")
    if len(parts) != 2:
        raise DomainError(f"--boundary must be lo:hi, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise DomainError(f"bad boundary {text!r}") from None
    return lo, hi


def _parse_gamma_grid(text: str) -> np.ndarray:
    try:
        values = np.asarray([float(t) for t in text.split(",") if t.strip()], dtype=float)
    except ValueError:
        raise DomainError(f"bad gamma grid {text!r}") from None
    if values.size == 0:
        raise DomainError("empty gamma grid")
    if np.any(values < 0):
        raise DomainError("gamma values must be nonnegative")
    return values


def cmd_select_gamma(args) -> int:
    fam = get_family(args.family)
    samples = [read_xy_csv(path) for path in args.data]
    for s in samples:
        s.validate_for(fam)
    guide_specs = [parse_guide(g) for g in args.guide]
    grid = _parse_gamma_grid(args.gamma_grid) if args.gamma_grid else DEFAULT_GAMMA_GRID
    result = select_gamma(samples, fam, guide_specs, grid=grid, method=args.method)

    lines = ["gamma," + ",".join(f"score_{i}" for i in range(len(guide_specs)))]
    for j, g in enumerate(result.grid):
        row = [_fmt(g)] + [_fmt(result.theta_hat[i, j]) for i in range(len(guide_specs))]
        lines.append(",".join(row))
    if result.chosen_guide < 0:
        lines.append("chosen_gamma,none")
    else:
        lines.append("chosen_gamma," + _fmt(result.chosen_gamma))
    text = "\n".join(lines) + "\n"
    if args.output:
        _write_text(args.output, text)
        print(lines[-1])
    else:
        sys.stdout.write(text)
    return 0


def cmd_bandwidth(args) -> int:
    data = read_xy_csv(args.data)
    fam = get_family(args.family)
    data.validate_for(fam)
    if args.guide:
        gfit = fit_guide(data, fam, parse_guide(args.guide))
        mode, gamma = "unified", args.gamma
    else:
        gfit, mode, gamma = None, "vanilla", 0.0
    if args.grid:
        x_grid = parse_linear_grid(args.grid)
    else:
        x_grid = np.linspace(float(np.min(data.x)), float(np.max(data.x)), 100)
    h_grid = parse_geometric_grid(args.h_grid) if args.h_grid else None

    sel = select_bandwidth(data, fam, gfit, LocalFitSpec(args.p, 1.0, gamma, mode),
                           x_grid, h_grid=h_grid)
    lines = ["h,imse,chosen"]
    for h, v in zip(sel.h_grid, sel.imse_hat):
        marker = "1" if h == sel.chosen_h else "0"
        lines.append(",".join((_fmt(h), _fmt(v), marker)))
    text = "\n".join(lines) + "\n"
    if args.output:
        _write_text(args.output, text)
        print(f"chosen_h={_fmt(sel.chosen_h)}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guidedqlik",
        description="Guided local quasi-likelihood estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a guided local curve to a CSV of (x, y)")
    p_fit.add_argument("--family", required=True, help="gaussian | poisson | bernoulli")
    p_fit.add_argument("--data", required=True, help="input CSV with header x,y")
    p_fit.add_argument("--guide", default=None, help="const | poly:K | sin:omega=W,phase=P")
    p_fit.add_argument("--gamma", type=float, default=0.0, help="correction exponent")
    p_fit.add_argument("--p", type=int, default=1, help="local polynomial degree")
    p_fit.add_argument("--h", required=True, help="bandwidth value or 'auto'")
    p_fit.add_argument("--grid", default=None, help="evaluation grid lo:hi:count")
    p_fit.add_argument("-o", "--output", default=None, help="output CSV path (default stdout)")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="replicated bias/variance benchmark")
    p_sim.add_argument("--example", required=True, help="poisson71 | bernoulli72")
    p_sim.add_argument("--n", type=int, default=0, help="sample size (0 = example default)")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--methods", default="vanilla",
                       help="comma list: vanilla, additive, multiplicative, unified:<gamma>")
    p_sim.add_argument("--guide", default=None)
    p_sim.add_argument("--gamma", type=float, default=0.0, help=argparse.SUPPRESS)
    p_sim.add_argument("--p", type=int, default=1)
    p_sim.add_argument("--h", default="select", help="bandwidth value or 'select'")
    p_sim.add_argument("--same-h", action="store_true",
                       help="guided methods reuse the bandwidth selected for vanilla")
    p_sim.add_argument("--replications", "-R", type=int, default=DEFAULT_R)
    p_sim.add_argument("--grid-size", "-J", type=int, default=DEFAULT_J)
    p_sim.add_argument("--threads", type=int, default=None,
                       help="worker processes (default GUIDEDQLIK_THREADS or 1)")
    p_sim.add_argument("--out-prefix", default=None,
                       help="write <prefix>_<method>.csv and <prefix>_summary.json")
    p_sim.set_defaults(func=cmd_simulate)

    p_ker = sub.add_parser("kernel-table", help="kernel moments and equivalent-kernel constants")
    p_ker.add_argument("--p", type=int, default=1)
    p_ker.add_argument("--max-moment", type=int, default=6)
    p_ker.add_argument("--boundary", default=None, help="integration region lo:hi within [-1,1]")
    p_ker.add_argument("-o", "--output", default=None)
    p_ker.set_defaults(func=cmd_kernel_table)

    p_gam = sub.add_parser("select-gamma", help="pick the correction exponent from samples")
    p_gam.add_argument("--family", required=True)
    p_gam.add_argument("--data", required=True, nargs="+", help="one or more CSVs with header x,y")
    p_gam.add_argument("--guide", required=True, action="append",
                       help="guide spec; repeat to compare several")
    p_gam.add_argument("--method", choices=("theta", "cv"), default="theta")
    p_gam.add_argument("--gamma-grid", default=None, help="comma list of gamma values")
    p_gam.add_argument("-o", "--output", default=None)
    p_gam.set_defaults(func=cmd_select_gamma)

    p_bw = sub.add_parser("bandwidth", help="pre-asymptotic bandwidth selection")
    p_bw.add_argument("--family", required=True)
    p_bw.add_argument("--data", required=True)
    p_bw.add_argument("--guide", default=None)
    p_bw.add_argument("--gamma", type=float, default=0.0)
    p_bw.add_argument("--p", type=int, default=1)
    p_bw.add_argument("--grid", default=None, help="evaluation grid lo:hi:count")
    p_bw.add_argument("--h-grid", default=None, help="candidate bandwidths lo:hi:count, geometric")
    p_bw.add_argument("-o", "--output", default=None)
    p_bw.set_defaults(func=cmd_bandwidth)

    return parser


_COLON_VALUE_FLAGS = ("--grid", "--h-grid", "--boundary")


def _absorb_grid_values(argv):
    """Join colon-grid flags with values that start with a minus sign.

    argparse mistakes "-2:2:100" for an option name; rewriting the pair as
    "--grid=-2:2:100" keeps the documented space-separated form working.
    """
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if tok in _COLON_VALUE_FLAGS and nxt is not None and nxt.startswith("-") and ":" in nxt:
            out.append(f"{tok}={nxt}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_absorb_grid_values(sys.argv[1:] if argv is None else list(argv)))
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GuidedQlikError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
