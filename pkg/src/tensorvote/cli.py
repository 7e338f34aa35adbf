"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or malformed
input), 3 numerical failure (degenerate support, non-convergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import datagen, emtv, mrftv, oracle, robustfit
from .errors import (DegenerateInputError, InvalidInputError, NumericalFailure, TensorVoteError,
                     UnderflowError)
from .spatial import PointSet
from .tensors import Scale

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("tensorvote")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ parsing

_SPLIT = re.compile(r"[,\s]+")


def read_rows(path: str | os.PathLike, width: int | None = None) -> np.ndarray:
    """Float rows from a comma- or whitespace-separated file.

    Blank lines and lines starting with ``#`` are skipped. The row width is
    taken from the first data row unless ``width`` is given.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f for f in _SPLIT.split(line) if f]
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise DataError(f"{path}:{lineno}: not a list of numbers: {raw.strip()!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{lineno}: non-finite value")
        if width is None:
            width = len(vals)
        if len(vals) != width:
            raise DataError(f"{path}:{lineno}: expected {width} values, found {len(vals)}")
        rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def _parse_vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")], dtype=float)
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}; expected comma-separated numbers") from None
    if v.size < 2 or not np.all(np.isfinite(v)) or not np.linalg.norm(v) > 0:
        raise UsageError(f"vector {text!r} must have at least 2 finite, not all zero entries")
    return v / np.linalg.norm(v)


def _dump_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    _write(text, out)


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc.strerror or exc}") from exc


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a).reshape(-1)]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _positive(name: str, value) -> None:
    _require(value is not None and math.isfinite(value) and value > 0, f"--{name} must be positive")


# ---------------------------------------------------------------- commands

def cmd_vote_field(args) -> int:
    _positive("sigma-d", args.sigma_d)
    _positive("half-extent", args.half_extent)
    _require(args.steps >= 2, "--steps must be at least 2")
    _require(args.samples >= 1, "--samples must be positive")
    scale = Scale(args.sigma_d)
    grid = oracle.GridSpec(args.half_extent, args.steps, plane=args.plane)
    sampling = oracle.DirectionSampling(samples=args.samples, ico_depth=args.ico_depth)
    field = oracle.generate_field(args.kind, args.dim, scale, grid, method=args.method,
                                  sampling=sampling, cutoff45=args.cutoff45,
                                  symmetric=args.symmetric)
    if args.output in (None, "-"):
        field.write_csv(sys.stdout)
        sys.stdout.flush()
    else:
        try:
            field.to_csv(args.output)
        except OSError as exc:
            raise DataError(f"cannot write {args.output}: {exc.strerror or exc}") from exc
    return EXIT_OK


def cmd_filter(args) -> int:
    _positive("sigma-d", args.sigma_d)
    _positive("g", args.g)
    _require(1 <= args.q < 2, "--q must lie in [1, 2)")
    _require(args.max_iters >= 1, "--max-iters must be positive")
    _positive("tol", args.tol)
    _positive("step-tol", args.step_tol)
    pts = read_rows(args.input)
    ps = PointSet(pts)
    cfg = mrftv.MrfConfig(scale=Scale(args.sigma_d), g=args.g, q=args.q, max_iters=args.max_iters,
                          tol=args.tol, step_tol=args.step_tol, update=args.update)
    state, report = mrftv.run(ps, cfg)
    sal = report.saliency
    threshold = args.threshold if args.threshold is not None else mrftv.otsu_threshold(sal)
    kept = sal >= threshold
    records = []
    for i in range(ps.n):
        records.append({
            "index": i,
            "tensor": [_floats(row) for row in state.K[i]],
            "eigenvalues": _floats(report.eigenvalues[i]),
            "saliency": float(sal[i]),
            "normal": _floats(report.normals[i]),
            "kept": bool(kept[i]),
        })
    _dump_json({
        "sites": records,
        "threshold": float(threshold),
        "sweeps": report.sweeps,
        "converged": report.converged,
        "energies": _floats(report.energies),
    }, args.output)
    return EXIT_OK if report.converged else EXIT_NUMERIC


def cmd_fit_line(args) -> int:
    _positive("sigma-d", args.sigma_d)
    _require(args.C is None or (math.isfinite(args.C) and args.C > 0), "--C must be positive")
    _require(args.alpha is None or 0 <= args.alpha <= 1, "--alpha must lie in [0, 1]")
    _require(0 < args.threshold < 1, "--threshold must lie in (0, 1)")
    _require(args.max_iters >= 1, "--max-iters must be positive")
    _positive("tol", args.tol)
    truth = _parse_vector(args.truth) if args.truth else None
    pts = read_rows(args.input)
    if args.homogeneous:
        pts = np.hstack([pts, np.ones((pts.shape[0], 1))])
    if truth is not None and truth.shape[0] != pts.shape[1]:
        raise UsageError(f"--truth has {truth.shape[0]} entries, data is {pts.shape[1]}-dimensional")
    cfg = emtv.EmtvConfig(scale=Scale(args.sigma_d), C=args.C, alpha_fixed=args.alpha,
                          max_iters=args.max_iters, tol=args.tol, inlier_threshold=args.threshold)
    report = emtv.fit(PointSet(pts), cfg)
    out = report.to_dict()
    if truth is not None:
        out["angular_error_vs_truth"] = datagen.angular_error_deg(report.v, truth)
    _dump_json(out, args.output)
    return EXIT_OK if report.converged else EXIT_NUMERIC


def cmd_fit_fundamental(args) -> int:
    _positive("sigma-d", args.sigma_d)
    _positive("ransac-scale", args.ransac_scale)
    rows = read_rows(args.input, width=4)
    x1, x2 = rows[:, :2], rows[:, 2:]
    cfg = emtv.EmtvConfig(scale=Scale(args.sigma_d), max_iters=args.max_iters)
    fit = robustfit.fit_fundamental(x1, x2, method=args.method, cfg=cfg,
                                    ransac_scale=args.ransac_scale, seed=args.seed)
    if args.clean:
        clean = read_rows(args.clean, width=4)
        rms = robustfit.rms_error(fit.F, clean[:, :2], clean[:, 2:])
    else:
        mask = fit.inliers if fit.inliers.any() else np.ones(len(x1), dtype=bool)
        rms = robustfit.rms_error(fit.F, x1[mask], x2[mask])
    out = {
        "F": [_floats(r) for r in fit.F],
        "rms": rms,
        "rms_over": "clean" if args.clean else "inliers",
        "inliers": [bool(b) for b in fit.inliers],
        "method": fit.method,
        "iterations": int(fit.iterations),
    }
    _dump_json(out, args.output)
    if fit.report is not None and not fit.report.converged:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    _require(methods and all(m in datagen.METHODS for m in methods),
             f"--methods must be a comma list drawn from {','.join(datagen.METHODS)}")
    _require(args.trials >= 1, "--trials must be positive")
    _positive("sigma-d", args.sigma_d)
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise UsageError("--values must be comma-separated numbers") from None
        variable = args.variable
    elif args.variable == "oi_ratio":
        values = datagen.set_grid(args.set)
        variable = "oi_ratio"
    elif args.variable == "noise_sd":
        values, variable = datagen.noise_grid(), "noise_sd"
    else:
        raise UsageError("--variable sigma_d needs --values")
    base = datagen.LineInstanceSpec(oi_ratio=args.oi, noise_sd=args.noise_sd)
    spec = datagen.SweepSpec(variable=variable, values=values, methods=methods, trials=args.trials,
                             seed=args.seed, base=base, sigma_d=args.sigma_d,
                             ransac_scale=args.ransac_scale)
    rows = datagen.run_sweep(spec, threads=args.threads)
    _write(datagen.sweep_csv(rows), args.output)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: all available cores); results do not depend on it")
    p.add_argument("--config", default=None,
                   help="JSON file whose keys (option names, '-' or '_') override the flags")
    p.add_argument("--output", "-o", default=None, help="output path (default: stdout)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tensorvote", description="Closed-form tensor voting, MRF refinement "
                     "and robust EM model fitting.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("vote-field", help="write a voting field on a regular grid as CSV")
    _common(p)
    p.add_argument("--kind", choices=["stick", "plate", "ball"], default="stick",
                   help="voter tensor at the origin (default: stick)")
    p.add_argument("--dim", type=int, choices=[2, 3], default=2, help="dimension (default: 2)")
    p.add_argument("--sigma-d", type=float, default=1.0,
                   help="scale in squared distance units (default: 1.0)")
    p.add_argument("--half-extent", type=float, default=1.0,
                   help="grid covers [-h, h] per axis, in distance units (default: 1.0)")
    p.add_argument("--steps", type=int, default=21, help="grid nodes per axis (default: 21)")
    p.add_argument("--plane", action="store_true", help="3D fields: sample only the z = 0 plane")
    p.add_argument("--method", choices=["closed_form", "discrete"], default="closed_form",
                   help="closed-form votes or sampled stick integration (default: closed_form)")
    p.add_argument("--cutoff45", action="store_true",
                   help="zero votes for receivers more than 45 degrees off the voter's tangent")
    p.add_argument("--symmetric", action="store_true",
                   help="closed form: symmetric votes instead of the asymmetric default")
    p.add_argument("--samples", type=int, default=oracle.DEFAULT_SAMPLES_2D,
                   help=f"discrete 2D: normals on the half circle (default: {oracle.DEFAULT_SAMPLES_2D})")
    p.add_argument("--ico-depth", type=int, default=oracle.DEFAULT_ICO_DEPTH,
                   help=f"discrete 3D: icosphere subdivisions (default: {oracle.DEFAULT_ICO_DEPTH})")
    p.set_defaults(func=cmd_vote_field)

    p = sub.add_parser("filter", help="MRF-refined structure tensors and saliency filtering")
    _common(p)
    p.add_argument("--input", "-i", required=True, help="points CSV, one point per row")
    p.add_argument("--sigma-d", type=float, default=0.1,
                   help="scale in squared distance units (default: 0.1)")
    p.add_argument("--g", type=float, default=1.0, help="smoothness weight (default: 1.0)")
    p.add_argument("--q", type=float, default=1.5, help="SOR weight in [1, 2) (default: 1.5)")
    p.add_argument("--update", choices=["exact", "approx"], default="exact",
                   help="per-site update rule (default: exact)")
    p.add_argument("--max-iters", type=int, default=100, help="sweep limit (default: 100)")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="relative energy change to stop at (default: 1e-8)")
    p.add_argument("--step-tol", type=float, default=1e-6,
                   help="largest per-site tensor change (Frobenius) allowed at convergence "
                   "(default: 1e-6)")
    p.add_argument("--threshold", type=float, default=None,
                   help="keep sites with saliency (l1 - l2) / l1 at least this, dimensionless in [0, 1] "
                   "(default: Otsu threshold)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("fit-line", help="robust hyperplane fit x'v = 0 with EMTV",
                       description="Fits a hyperplane through the origin. Pass --homogeneous to "
                       "append a constant 1 coordinate so that offset models a'x + b = 0 fit too.")
    _common(p)
    p.add_argument("--input", "-i", required=True, help="points CSV, one point per row")
    p.add_argument("--sigma-d", type=float, default=0.1,
                   help="scale in squared distance units (default: 0.1)")
    p.add_argument("--truth", default=None, help="true normal as comma list, for the error report")
    p.add_argument("--homogeneous", action="store_true", help="append a constant 1 coordinate")
    p.add_argument("--C", type=float, default=None,
                   help="outlier density constant (default: largest bounding box side)")
    p.add_argument("--alpha", type=float, default=None,
                   help="pin the inlier prior (default: re-estimated, starting at 0.5)")
    p.add_argument("--threshold", type=float, default=0.8,
                   help="posterior above which a point is an inlier (default: 0.8)")
    p.add_argument("--max-iters", type=int, default=100, help="EM iteration limit (default: 100)")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="relative log-likelihood change to stop at (default: 1e-8)")
    p.set_defaults(func=cmd_fit_line)

    p = sub.add_parser("fit-fundamental", help="rank-2 fundamental matrix from correspondences")
    _common(p)
    p.add_argument("--input", "-i", required=True, help="rows 'u v u2 v2' in pixels")
    p.add_argument("--method", choices=["emtv", "ransac", "tls"], default="emtv",
                   help="hyperplane fitter in design-vector space (default: emtv)")
    p.add_argument("--sigma-d", type=float, default=0.1,
                   help="EMTV scale in normalized design-vector units (default: 0.1)")
    p.add_argument("--ransac-scale", type=float, default=1e-2,
                   help="RANSAC algebraic residual threshold, normalized units (default: 0.01)")
    p.add_argument("--max-iters", type=int, default=100, help="EM iteration limit (default: 100)")
    p.add_argument("--seed", type=int, default=0, help="RANSAC seed (default: 0)")
    p.add_argument("--clean", default=None,
                   help="noise-free correspondences to measure RMS on (default: estimated inliers)")
    p.set_defaults(func=cmd_fit_fundamental)

    p = sub.add_parser("sweep", help="robustness sweep over synthetic line data, CSV out")
    _common(p)
    p.add_argument("--set", type=int, choices=[1, 2], default=1,
                   help="OI grid: 1 = 0.1..1 step 0.1, 2 = 1..100 step 1 (default: 1)")
    p.add_argument("--variable", choices=["oi_ratio", "noise_sd", "sigma_d"], default="oi_ratio",
                   help="swept quantity (default: oi_ratio)")
    p.add_argument("--values", default=None, help="explicit comma-separated grid")
    p.add_argument("--methods", default="emtv,ransac,tls", help="comma list (default: all)")
    p.add_argument("--trials", type=int, default=100, help="datasets per cell (default: 100)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p.add_argument("--sigma-d", type=float, default=0.1,
                   help="EMTV scale, squared distance units (default: 0.1)")
    p.add_argument("--oi", type=float, default=10.0,
                   help="OI ratio when sweeping noise_sd or sigma_d (default: 10)")
    p.add_argument("--noise-sd", type=float, default=0.1,
                   help="inlier noise when not swept, distance units (default: 0.1)")
    p.add_argument("--ransac-scale", type=float, default=None,
                   help="RANSAC inlier band (default: twice the noise sd)")
    p.set_defaults(func=cmd_sweep)
    return parser


def _apply_config(args, parser_for_cmd) -> None:
    if not args.config:
        return
    try:
        data = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.config}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise DataError(f"{args.config}: top level must be an object")
    known = {a.dest: a for a in parser_for_cmd._actions}
    for key, value in sorted(data.items()):
        dest = key.replace("-", "_")
        if dest in ("config", "help", "func", "command") or dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        action = known[dest]
        if action.type is not None and value is not None and not isinstance(value, bool):
            try:
                value = action.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"config key {key!r}: bad value {value!r}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r} must be one of {list(action.choices)}")
        setattr(args, dest, value)


def _configure_threads(threads: int | None) -> int:
    n = (os.cpu_count() or 1) if threads is None else threads
    _require(n >= 1, "--threads must be at least 1")
    return n


_NUMBER_LIST = re.compile(r"^-\.?\d")


def _join_negative_values(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Glue ``--opt -0.5,1`` into ``--opt=-0.5,1`` so argparse sees a value."""
    takes_value = set()
    for sub in parser._subparsers._group_actions[0].choices.values():
        for action in sub._actions:
            if action.nargs is None and action.option_strings:
                takes_value.update(o for o in action.option_strings if o.startswith("--"))
    out: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in takes_value and i + 1 < len(argv) and _NUMBER_LIST.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        argv = sys.argv[1:] if argv is None else list(argv)
        args = parser.parse_args(_join_negative_values(parser, argv))
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(args, sub)
        args.threads = _configure_threads(args.threads)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, UnderflowError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, DegenerateInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TensorVoteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
