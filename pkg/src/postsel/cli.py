"""Command-line interface: ``postsel {fit,infer,cv,glasso,simulate}``.

Every flag can also be set through an environment variable named
``POSTSEL_<FLAG>`` (upper case, dashes as underscores), e.g.
``POSTSEL_LEVEL=0.95``. Command-line values take precedence.

Exit codes: 0 success, 2 input error, 3 numerical error or empty selection.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from typing import Sequence

import numpy as np

from .errors import EmptySelectionError, InputError, NumericalError, PostSelError
from .families import Dataset, FamilySpec
from .glasso import fit_glasso, glasso_infer, sample_covariance
from .lasso import PenaltySpec, cross_validate_lambda, fit_lasso, lambda_max
from .selective import SelectiveReport, infer
from .sim import load_design, run_design, write_report

ENV_PREFIX = "POSTSEL_"
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
COV_METHODS = {"plugin": "plugin", "pairs": "pairs_bootstrap", "sandwich": "sandwich"}
INFER_COLUMNS = ("variable", "beta_bar", "stderr", "vlo", "vhi", "naive_p", "selective_p",
                 "ci_lo", "ci_hi")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


# ------------------------------------------------------------------ ingest

def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise InputError(f"{path} is not valid UTF-8") from None
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path} is empty (a header row is required)")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise InputError("duplicate column names in header")
    return header, rows[1:]


_MISSING = {"", "na", "nan", "null", "none", "?"}


def read_numeric_csv(path):
    """Header plus a float matrix; rows with a missing cell are dropped.

    Returns ``(header, matrix, n_dropped)``.
    """
    header, body = _read_rows(path)
    out, dropped = [], 0
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputError(f"row {i}: expected {len(header)} fields, found {len(row)}")
        cells = [c.strip() for c in row]
        if any(c.lower() in _MISSING for c in cells):
            dropped += 1
            continue
        vals = []
        for name, c in zip(header, cells):
            try:
                v = float(c)
            except ValueError:
                raise InputError(f"row {i}, column {name!r}: non-numeric value {c!r}") from None
            if not math.isfinite(v):
                raise InputError(f"row {i}, column {name!r}: non-finite value {c!r}")
            vals.append(v)
        out.append(vals)
    if not out:
        raise InputError("no usable rows after dropping rows with missing values")
    return header, np.array(out, dtype=float).reshape(len(out), len(header)), dropped


def ingest_csv(path, family: str, response: str | None = None, intercept: bool = True,
               report=None) -> Dataset:
    """Build a Dataset from a CSV with a header row.

    gaussian/logistic read the response from ``response`` (default ``y``);
    cox reads ``time`` and ``status``. Every other column is a feature. An
    unpenalized intercept column is prepended unless disabled (never for cox,
    whose partial likelihood has no intercept).
    """
    header, M, dropped = read_numeric_csv(path)
    if family == "cox":
        needed = ["time", "status"]
    else:
        needed = [response or "y"]
    for col in needed:
        if col not in header:
            raise InputError(f"missing required column {col!r}")
    feats = [h for h in header if h not in needed]
    if not feats:
        raise InputError("no feature columns")
    X = M[:, [header.index(h) for h in feats]]
    status = None
    if family == "cox":
        y = M[:, header.index("time")]
        status = M[:, header.index("status")]
    else:
        y = M[:, header.index(needed[0])]
    names = tuple(feats)
    unpen = ()
    if intercept and family != "cox":
        X = np.column_stack([np.ones(X.shape[0]), X])
        names = ("intercept",) + names
        unpen = (0,)
    if report is not None and dropped:
        report(f"dropped {dropped} row(s) with missing values")
    return Dataset(X, y, status=status, unpenalized=unpen, names=names)


# ---------------------------------------------------------------- formatting

def fmt_number(x) -> str:
    """12 significant digits; infinities as ``inf``/``-inf``."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.12g}"


def json_number(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return None
    return x


def infer_table(report: SelectiveReport) -> list[dict]:
    return [
        {
            "variable": r.name, "beta_bar": r.beta_bar, "stderr": r.stderr, "vlo": r.vlo,
            "vhi": r.vhi, "naive_p": r.naive_pvalue, "selective_p": r.pvalue,
            "ci_lo": r.ci_lo, "ci_hi": r.ci_hi, "status": r.status,
        }
        for r in report.rows
    ]


def render(rows: list[dict], columns: Sequence[str], fmt: str, meta: dict | None = None) -> str:
    if fmt == "json":
        doc = {"rows": [{c: (json_number(r[c]) if isinstance(r[c], (float, np.floating)) else r[c])
                         for c in columns} for r in rows]}
        if meta:
            doc.update({k: (json_number(v) if isinstance(v, float) else v) for k, v in meta.items()})
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt_number(r[c]) if isinstance(r[c], (float, np.floating)) else r[c]
                    for c in columns])
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands

def _family_spec(args) -> FamilySpec:
    if args.sigma2 is not None and args.family != "gaussian":
        raise InputError("--sigma2 applies to the gaussian family only")
    return FamilySpec(args.family, dispersion=args.sigma2)


def _load(args, log) -> Dataset:
    return ingest_csv(args.input, args.family, args.response, not args.no_intercept, log)


def _resolve_lambda(args, family, data, log) -> float:
    chosen = [args.lam is not None, args.lambda_frac is not None, args.cv]
    if sum(chosen) > 1:
        raise InputError("use only one of --lambda, --lambda-frac and --cv")
    if args.cv:
        res = cross_validate_lambda(family, data, folds=args.folds, seed=args.seed)
        log(f"cross-validated lambda = {fmt_number(res.lambda_cv)}")
        return res.lambda_cv
    if args.lambda_frac is not None:
        return args.lambda_frac * lambda_max(family.unit(), data)
    if args.lam is None:
        raise InputError("one of --lambda, --lambda-frac or --cv is required")
    lam = args.lam * data.n if args.lambda_per_obs else args.lam
    if lam < 0:
        raise InputError("lambda must be nonnegative")
    return lam


def cmd_fit(args, log) -> int:
    family = _family_spec(args)
    data = _load(args, log)
    lam = _resolve_lambda(args, family, data, log)
    fit = fit_lasso(family, data, PenaltySpec(lam))
    active = set(fit.active)
    rows = [{"variable": data.names[j], "coef": float(fit.coef[j]),
             "active": int(j in active), "penalized": int(j not in fit.unpenalized)}
            for j in range(data.p)]
    meta = {"lambda": lam, "iterations": fit.iterations,
            "max_kkt_violation": fit.max_kkt_violation}
    _emit(render(rows, ("variable", "coef", "active", "penalized"), args.format, meta), args.out)
    return EXIT_OK


def run_infer(args, log) -> SelectiveReport:
    family = _family_spec(args)
    data = _load(args, log)
    lam = _resolve_lambda(args, family, data, log)
    fit = fit_lasso(family, data, PenaltySpec(lam))
    return infer(family, data, fit, level=args.level, covariance_method=COV_METHODS[args.cov],
                 B=args.bootstrap, seed=args.seed)


def cmd_infer(args, log) -> int:
    report = run_infer(args, log)
    for r in report.rows:
        if r.status not in ("ok", "unpenalized"):
            log(f"{r.name}: {r.status}")
    meta = {"lambda": report.lam, "level": report.level, "family": report.family,
            "covariance_method": report.covariance_method, "dispersion": report.dispersion}
    _emit(render(infer_table(report), INFER_COLUMNS, args.format, meta), args.out)
    return EXIT_OK


def cmd_cv(args, log) -> int:
    family = _family_spec(args)
    data = _load(args, log)
    res = cross_validate_lambda(family, data, folds=args.folds, seed=args.seed)
    rows = [{"lambda": float(l), "cv_mean": float(m), "cv_se": float(s),
             "valid_folds": int(v)}
            for l, m, s, v in zip(res.lambdas, res.cv_mean, res.cv_se, res.valid.sum(axis=0))]
    meta = {"lambda_cv": res.lambda_cv}
    _emit(render(rows, ("lambda", "cv_mean", "cv_se", "valid_folds"), args.format, meta), args.out)
    return EXIT_OK


def cmd_glasso(args, log) -> int:
    if args.cov_input:
        if args.n is None:
            raise InputError("--n is required with --cov-input")
        header, S, dropped = read_numeric_csv(args.cov_input)
        if dropped:
            raise InputError("covariance matrix has missing entries")
        n = args.n
    else:
        header, X, dropped = read_numeric_csv(args.input)
        if dropped:
            log(f"dropped {dropped} row(s) with missing values")
        if args.center:
            X = X - X.mean(axis=0)
        S, n = sample_covariance(X), X.shape[0]
    if args.lam is None:
        raise InputError("--lambda is required for glasso")
    fit = fit_glasso(S, n, args.lam, names=header)
    report = glasso_infer(fit, level=args.level)
    rows = infer_table(report)
    meta = {"lambda": args.lam, "level": args.level, "edges": len(fit.edges)}
    _emit(render(rows, INFER_COLUMNS, args.format, meta), args.out)
    return EXIT_OK


def cmd_simulate(args, log) -> int:
    design = load_design(args.design)
    if args.seed_given:
        design = design.replace(seed=args.seed)
    if args.replications is not None:
        design = design.replace(replications=args.replications)
    report = run_design(design)
    outdir = args.out or "."
    write_report(report, outdir)
    log(f"KS = {fmt_number(report.ks_statistic)}, miscoverage = {fmt_number(report.miscoverage)}; "
        f"wrote {outdir}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="postsel", description="Selective inference for l1-penalized models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        if data:
            p.add_argument("input", nargs="?", help="CSV file with a header row")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output file (directory for simulate)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--level", type=float, default=0.9)

    def model(p, with_lambda=True):
        p.add_argument("--family", choices=("gaussian", "logistic", "cox"), default="gaussian")
        p.add_argument("--response", default=None, help="response column (default 'y')")
        p.add_argument("--no-intercept", action="store_true")
        p.add_argument("--sigma2", type=_positive_float, default=None)
        p.add_argument("--folds", type=int, default=10)
        if with_lambda:
            p.add_argument("--lambda", dest="lam", type=float, default=None)
            p.add_argument("--lambda-frac", type=float, default=None)
            p.add_argument("--lambda-per-obs", action="store_true",
                           help="treat --lambda as per-observation (multiplied by n)")
            p.add_argument("--cv", action="store_true")

    p = sub.add_parser("fit", help="fit the penalized model")
    common(p)
    model(p)
    p = sub.add_parser("infer", help="selective p-values and intervals")
    common(p)
    model(p)
    p.add_argument("--cov", choices=tuple(COV_METHODS), default="plugin")
    p.add_argument("--bootstrap", type=int, default=1000, help="pairs bootstrap replicates")
    p = sub.add_parser("cv", help="cross-validation curve")
    common(p)
    model(p, with_lambda=False)
    p = sub.add_parser("glasso", help="graphical lasso with edge inference")
    common(p)
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=None)
    p.add_argument("--cov-input", default=None, help="CSV covariance matrix instead of data")
    p.add_argument("--n", type=int, default=None, help="sample size behind --cov-input")
    p.add_argument("--center", action="store_true", help="center the data columns first")
    p = sub.add_parser("simulate", help="run a simulation design")
    common(p, data=False)
    p.add_argument("--design", required=True)
    p.add_argument("--replications", type=int, default=None)
    return parser


def _env_args(parser: argparse.ArgumentParser, command: str, environ) -> list[str]:
    """Translate POSTSEL_* variables into flags for ``command``."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd_parser = sub.choices.get(command)
    if cmd_parser is None:
        return []
    extra = []
    for action in cmd_parser._actions:
        flags = [s for s in action.option_strings if s.startswith("--")]
        if not flags or flags[0] == "--help":
            continue
        key = ENV_PREFIX + flags[0][2:].upper().replace("-", "_")
        if key not in environ:
            continue
        val = environ[key]
        if action.nargs == 0:
            if val.strip().lower() in ("1", "true", "yes", "on"):
                extra.append(flags[0])
        else:
            extra.extend([flags[0], val])
    return extra


def main(argv: Sequence[str] | None = None, environ=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    environ = os.environ if environ is None else environ

    def log(msg):
        print(msg, file=sys.stderr)

    parser = build_parser()
    try:
        command = next((a for a in argv if not a.startswith("-")), None)
        # environment first so explicit flags override
        if command is not None:
            rest = list(argv)
            rest.remove(command)
            argv = [command] + _env_args(parser, command, environ) + rest
        args = parser.parse_args(argv)
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0
        if not 0.0 < args.level < 1.0:
            raise InputError("--level must lie in (0, 1)")
        if args.command != "simulate" and not (args.command == "glasso" and args.cov_input) \
                and not args.input:
            raise InputError("an input CSV file is required")
        handler = {"fit": cmd_fit, "infer": cmd_infer, "cv": cmd_cv, "glasso": cmd_glasso,
                   "simulate": cmd_simulate}[args.command]
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return handler(args, log)
    except EmptySelectionError as exc:
        log(f"error: empty selection: {exc}")
        return EXIT_NUMERICAL
    except InputError as exc:
        log(f"error: {exc}")
        return EXIT_INPUT
    except NumericalError as exc:
        log(f"numerical error: {exc}")
        return EXIT_NUMERICAL
    except PostSelError as exc:
        log(f"error: {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
