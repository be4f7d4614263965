"""Simulation designs, replication runner and report writers.

A design is a flat dataclass that can be read from a ``key = value`` text
file. Each replication draws its data from ``SeedSequence([seed, rep])`` so
results do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import EmptySelectionError, InputError, NumericalError
from .families import Dataset, FamilySpec
from .glasso import fit_glasso, glasso_infer, sample_covariance
from .lasso import PenaltySpec, cross_validate_lambda, fit_lasso, lambda_max
from .selective import infer

FAMILIES = ("gaussian", "logistic", "cox", "glasso")
HETEROSKEDASTIC_RULES = ("none", "noise_mean", "noise_spread")
ECDF_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)


@dataclass(frozen=True)
class SimDesign:
    """One simulation design.

    ``beta`` lists the leading true coefficients; the rest are zero. For the
    glasso family the truth is the identity covariance except
    ``corr(X1, X2) = glasso_corr``.
    """

    name: str = "design"
    family: str = "logistic"
    n: int = 30
    p: int = 10
    rho: float = 0.2
    beta: tuple[float, ...] = ()
    intercept: bool = True
    lambda_rule: str = "fixed"
    lambda_frac: float = 0.5
    lambda_value: Optional[float] = None
    cv_folds: int = 10
    n_lambda: int = 50
    censoring: float = 0.0
    heteroskedastic: str = "none"
    het_scale: float = 0.0
    sigma: float = 1.0
    sigma2: str = "estimate"
    covariance_method: str = "plugin"
    bootstrap_B: int = 1000
    level: float = 0.9
    replications: int = 1000
    seed: int = 0
    screening: str = "none"
    screen_edge: tuple[int, int] = (0, 1)
    glasso_corr: float = 0.7
    n_jobs: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown family {self.family!r}")
        if self.n < 2 or self.p < 1:
            raise InputError("need n >= 2 and p >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise InputError("rho must lie in [0, 1)")
        if len(self.beta) > self.p:
            raise InputError("beta is longer than p")
        if self.lambda_rule not in ("fixed", "cv"):
            raise InputError("lambda_rule must be 'fixed' or 'cv'")
        if self.lambda_rule == "cv" and self.family == "glasso":
            raise InputError("cv is not available for the glasso family")
        if not 0.0 <= self.censoring < 1.0:
            raise InputError("censoring must lie in [0, 1)")
        if self.heteroskedastic not in HETEROSKEDASTIC_RULES:
            raise InputError(f"unknown heteroskedastic rule {self.heteroskedastic!r}")
        if self.heteroskedastic != "none" and self.family != "gaussian":
            raise InputError("heteroskedastic errors apply to the gaussian family only")
        if self.sigma2 not in ("estimate", "true"):
            try:
                if not float(self.sigma2) > 0:
                    raise ValueError
            except ValueError:
                raise InputError("sigma2 must be 'estimate', 'true' or a positive number") from None
        if self.covariance_method not in ("plugin", "pairs_bootstrap", "sandwich"):
            raise InputError(f"unknown covariance method {self.covariance_method!r}")
        if self.screening not in ("none", "support", "edge"):
            raise InputError("screening must be 'none', 'support' or 'edge'")
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise InputError("level must lie in (0, 1)")
        if self.family == "glasso" and not -1.0 < self.glasso_corr < 1.0:
            raise InputError("glasso_corr must lie in (-1, 1)")

    @property
    def beta_true(self) -> np.ndarray:
        b = np.zeros(self.p)
        b[: len(self.beta)] = self.beta
        return b

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.beta_true))

    @property
    def has_intercept(self) -> bool:
        return self.intercept and self.family in ("gaussian", "logistic")

    def replace(self, **changes) -> "SimDesign":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Replicate:
    """Generated data for one replication plus its ground truth."""

    data: Optional[Dataset]
    truth: np.ndarray
    S: Optional[np.ndarray] = None
    sigma2: float = 1.0
    aux_seed: int = 0


@dataclass
class CoordinateSamples:
    pvalues: list = field(default_factory=list)
    naive: list = field(default_factory=list)
    selected: int = 0


@dataclass
class SimReport:
    design: SimDesign
    null_pvalues: np.ndarray
    naive_null_pvalues: np.ndarray
    nonnull: dict
    ks_statistic: float
    ks_naive: float
    coverage: float
    median_finite_length: float
    infinite_fraction: float
    n_intervals: int
    counts: dict

    @property
    def miscoverage(self) -> float:
        return 1.0 - self.coverage

    def ecdf(self, t, key: Optional[str] = None, naive: bool = False) -> float:
        """ECDF at ``t`` of the pooled null p-values, or of coordinate ``key``."""
        if key is None:
            return ecdf_at(self.naive_null_pvalues if naive else self.null_pvalues, t)
        cs = self.nonnull[key]
        return ecdf_at(cs.naive if naive else cs.pvalues, t)

    def ecdf_rows(self) -> list[tuple[str, float, float]]:
        groups = {"null_selective": self.null_pvalues, "null_naive": self.naive_null_pvalues}
        for key, cs in self.nonnull.items():
            groups[f"{key}_selective"] = np.asarray(cs.pvalues)
            groups[f"{key}_naive"] = np.asarray(cs.naive)
        return [(g, float(t), ecdf_at(v, t)) for g, v in groups.items() for t in ECDF_GRID]

    def summary(self) -> dict:
        return {
            "design": dataclasses.asdict(self.design),
            "ks_statistic": self.ks_statistic,
            "ks_naive": self.ks_naive,
            "null_pvalue_count": int(self.null_pvalues.size),
            "ecdf_null_at_0.05": self.ecdf(0.05),
            "naive_ecdf_null_at_0.05": ecdf_at(self.naive_null_pvalues, 0.05),
            "miscoverage": self.miscoverage,
            "median_finite_length": self.median_finite_length,
            "infinite_fraction": self.infinite_fraction,
            "n_intervals": self.n_intervals,
            "nonnull": {
                k: {
                    "selection_frequency": cs.selected / max(1, self.counts["screened"]),
                    "pvalue_count": len(cs.pvalues),
                    "ecdf_at_0.1": ecdf_at(cs.pvalues, 0.1),
                }
                for k, cs in self.nonnull.items()
            },
            "counts": dict(self.counts),
        }


def ecdf_at(values, t) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return math.nan
    return float(np.mean(values <= t))


def ks_uniform(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return math.nan
    return float(stats.kstest(values, "uniform").statistic)


def equicorrelated(rng: np.random.Generator, n: int, p: int, rho: float) -> np.ndarray:
    """Gaussian rows with unit variances and all pairwise correlations ``rho``."""
    common = rng.standard_normal((n, 1))
    return math.sqrt(rho) * common + math.sqrt(1.0 - rho) * rng.standard_normal((n, p))


def censoring_rate(design: SimDesign) -> float:
    """Exponential censoring rate giving the target censored fraction.

    With unit-baseline exponential event times the censored fraction is
    ``E[c / (c + exp(x'beta))]``, a function of the linear predictor's
    variance only; ``c = f / (1 - f)`` under the null.
    """
    f = design.censoring
    if f == 0.0:
        return 0.0
    b = design.beta_true
    var = float(design.rho * b.sum() ** 2 + (1.0 - design.rho) * b @ b)
    if var == 0.0:
        return f / (1.0 - f)
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    weights = weights / weights.sum()
    hazards = np.exp(math.sqrt(var) * nodes)

    def frac(log_c):
        c = math.exp(log_c)
        return float(weights @ (c / (c + hazards))) - f

    return math.exp(optimize.brentq(frac, -50.0, 50.0, xtol=1e-14))


def _noise_sd(design: SimDesign, X: np.ndarray) -> np.ndarray:
    noise = [j for j in range(design.p) if j not in set(design.support)]
    a = design.het_scale
    if design.heteroskedastic == "none" or not noise:
        return np.full(X.shape[0], design.sigma)
    N = X[:, noise]
    if design.heteroskedastic == "noise_mean":
        return design.sigma * np.exp(a * N.mean(axis=1))
    # spread of the noise features within each row; its mean is (q-1)(1-rho)
    q = len(noise)
    spread = ((N - N.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
    return design.sigma * np.exp(0.5 * a * (spread - (q - 1) * (1.0 - design.rho)))


def glasso_truth(design: SimDesign) -> np.ndarray:
    C = np.eye(design.p)
    if design.p >= 2:
        C[0, 1] = C[1, 0] = design.glasso_corr
    return C


def generate(design: SimDesign, replication: int) -> Replicate:
    """Data for replication ``replication``; deterministic in (seed, replication)."""
    ss = np.random.SeedSequence([design.seed, replication])
    data_ss, aux_ss = ss.spawn(2)
    rng = np.random.default_rng(data_ss)
    aux_seed = int(np.random.default_rng(aux_ss).integers(2**32))
    n, p = design.n, design.p
    if design.family == "glasso":
        C = glasso_truth(design)
        X = rng.standard_normal((n, p)) @ np.linalg.cholesky(C).T
        return Replicate(None, np.linalg.inv(C), sample_covariance(X), 1.0, aux_seed)
    X = equicorrelated(rng, n, p, design.rho)
    beta = design.beta_true
    eta = X @ beta
    names = tuple(f"X{j + 1}" for j in range(p))
    status = None
    if design.family == "gaussian":
        sd = _noise_sd(design, X)
        y = eta + sd * rng.standard_normal(n)
    elif design.family == "logistic":
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    else:
        t_event = rng.exponential(1.0, n) * np.exp(-eta)
        rate = censoring_rate(design)
        if rate > 0:
            t_cens = rng.exponential(1.0 / rate, n)
            y = np.minimum(t_event, t_cens)
            status = (t_event <= t_cens).astype(float)
        else:
            y, status = t_event, np.ones(n)
    if design.has_intercept:
        X = np.column_stack([np.ones(n), X])
        names = ("intercept",) + names
        unpen = (0,)
    else:
        unpen = ()
    data = Dataset(X, y, status=status, unpenalized=unpen, names=names)
    return Replicate(data, beta, None, design.sigma**2, aux_seed)


def _family(design: SimDesign, rep: Replicate) -> FamilySpec:
    if design.family != "gaussian":
        return FamilySpec(design.family)
    if design.sigma2 == "estimate":
        return FamilySpec("gaussian")
    if design.sigma2 == "true":
        if design.heteroskedastic != "none":
            raise InputError("the true error variance is not constant under heteroskedasticity")
        return FamilySpec("gaussian", dispersion=rep.sigma2)
    return FamilySpec("gaussian", dispersion=float(design.sigma2))


def choose_lambda(design: SimDesign, family: FamilySpec, data: Dataset, seed: int) -> float:
    if design.lambda_rule == "cv":
        cv = cross_validate_lambda(family, data, folds=design.cv_folds, seed=seed,
                                   n_lambda=design.n_lambda)
        return cv.lambda_cv
    if design.lambda_value is not None:
        return float(design.lambda_value)
    return design.lambda_frac * lambda_max(family.unit(), data)


def _glasso_lambda(design: SimDesign, S: np.ndarray) -> float:
    if design.lambda_value is not None:
        return float(design.lambda_value)
    off = np.abs(S - np.diag(np.diag(S)))
    return design.lambda_frac * float(off.max())


@dataclass(frozen=True)
class ReplicationResult:
    """Outcome of one replication: ``status`` is ok, empty, unscreened or failed."""

    status: str
    # (key, is_null, pvalue, naive_pvalue, ci_lo, ci_hi, truth) per selected coordinate
    rows: tuple = ()
    selected: tuple = ()
    degenerate_rows: int = 0
    message: str = ""


def _screened(design: SimDesign, selected: Sequence) -> bool:
    if design.screening == "support":
        return set(design.support) <= set(selected)
    if design.screening == "edge":
        return tuple(sorted(design.screen_edge)) in set(selected)
    return True


def run_replication(design: SimDesign, replication: int) -> ReplicationResult:
    rep = generate(design, replication)
    try:
        if design.family == "glasso":
            return _glasso_replication(design, rep)
        return _regression_replication(design, rep)
    except EmptySelectionError as exc:
        return ReplicationResult("empty", message=str(exc))
    except NumericalError as exc:
        return ReplicationResult("failed", message=f"{type(exc).__name__}: {exc}")


def _collect(report, keys, truth, is_null):
    rows, degenerate = [], 0
    for row, key, t, null in zip(report.selected(), keys, truth, is_null):
        if row.status != "ok":
            degenerate += 1
            continue
        rows.append((key, null, row.pvalue, row.naive_pvalue, row.ci_lo, row.ci_hi, t))
    return tuple(rows), degenerate


def _regression_replication(design: SimDesign, rep: Replicate) -> ReplicationResult:
    family = _family(design, rep)
    data = rep.data
    lam = choose_lambda(design, family, data, rep.aux_seed)
    fit = fit_lasso(family, data, PenaltySpec(lam))
    if not fit.active:
        return ReplicationResult("empty")
    offset = 1 if design.has_intercept else 0
    selected = tuple(j - offset for j in fit.active)
    if not _screened(design, selected):
        return ReplicationResult("unscreened", selected=selected)
    report = infer(family, data, fit, level=design.level,
                   covariance_method=design.covariance_method, B=design.bootstrap_B,
                   seed=rep.aux_seed)
    truth = rep.truth[list(selected)]
    keys = [f"X{j + 1}" for j in selected]
    rows, degenerate = _collect(report, keys, truth, truth == 0.0)
    return ReplicationResult("ok", rows, selected, degenerate)


def _glasso_replication(design: SimDesign, rep: Replicate) -> ReplicationResult:
    lam = _glasso_lambda(design, rep.S)
    fit = fit_glasso(rep.S, design.n, lam)
    if not fit.edges:
        return ReplicationResult("empty")
    if not _screened(design, fit.edges):
        return ReplicationResult("unscreened", selected=fit.edges)
    report = glasso_infer(fit, level=design.level)
    truth = np.array([rep.truth[i, j] for i, j in fit.edges])
    keys = [f"X{i + 1}-X{j + 1}" for i, j in fit.edges]
    rows, degenerate = _collect(report, keys, truth, truth == 0.0)
    return ReplicationResult("ok", rows, fit.edges, degenerate)


def _replications(design: SimDesign) -> list[ReplicationResult]:
    idx = range(design.replications)
    if design.n_jobs == 1:
        return [run_replication(design, r) for r in idx]
    workers = design.n_jobs if design.n_jobs > 0 else (os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_replication, [design] * design.replications, idx,
                             chunksize=max(1, design.replications // (4 * workers))))


def _nonnull_keys(design: SimDesign) -> list[str]:
    if design.family == "glasso":
        T = np.linalg.inv(glasso_truth(design))
        p = design.p
        return [f"X{i + 1}-X{j + 1}" for i in range(p) for j in range(i + 1, p)
                if abs(T[i, j]) > 1e-12]
    return [f"X{j + 1}" for j in design.support]


def run_design(design: SimDesign) -> SimReport:
    """Run every replication and pool p-values and intervals.

    Replications with an empty selection or failing the screening filter
    are counted and skipped. Numerical failures are counted too; more
    failures than half of the replications that reached inference is an
    error.
    """
    results = _replications(design)
    counts = {"attempted": len(results), "selected_nonempty": 0, "screened": 0,
              "empty": 0, "failed": 0, "degenerate_rows": 0}
    null_p, null_naive = [], []
    nonnull = {k: CoordinateSamples() for k in _nonnull_keys(design)}
    covered, lengths = [], []
    for res in results:
        if res.status == "empty":
            counts["empty"] += 1
            continue
        if res.status == "failed":
            counts["failed"] += 1
            continue
        counts["selected_nonempty"] += 1
        if res.status == "unscreened":
            continue
        counts["screened"] += 1
        counts["degenerate_rows"] += res.degenerate_rows
        seen = set()
        for key, is_null, p, naive, lo, hi, truth in res.rows:
            if is_null:
                null_p.append(p)
                null_naive.append(naive)
            else:
                cs = nonnull.setdefault(key, CoordinateSamples())
                cs.pvalues.append(p)
                cs.naive.append(naive)
                seen.add(key)
            covered.append(lo <= truth <= hi)
            lengths.append(hi - lo)
        for key in seen:
            nonnull[key].selected += 1
    reached = counts["attempted"] - counts["empty"]
    if reached and counts["failed"] > 0.5 * reached:
        raise NumericalError(f"{counts['failed']} of {reached} replications failed")
    lengths = np.asarray(lengths, dtype=float)
    finite = lengths[np.isfinite(lengths)]
    null_p = np.asarray(null_p, dtype=float)
    null_naive = np.asarray(null_naive, dtype=float)
    return SimReport(
        design=design,
        null_pvalues=null_p,
        naive_null_pvalues=null_naive,
        nonnull=nonnull,
        ks_statistic=ks_uniform(null_p),
        ks_naive=ks_uniform(null_naive),
        coverage=float(np.mean(covered)) if covered else math.nan,
        median_finite_length=float(np.median(finite)) if finite.size else math.nan,
        infinite_fraction=float(np.mean(~np.isfinite(lengths))) if lengths.size else math.nan,
        n_intervals=int(lengths.size),
        counts=counts,
    )


def coverage_table(designs: Iterable) -> list[dict]:
    """Miscoverage, median finite length and infinite fraction per design.

    Accepts designs (which are run) or already computed reports.
    """
    rows = []
    for item in designs:
        rep = item if isinstance(item, SimReport) else run_design(item)
        rows.append({
            "design": rep.design.name,
            "level": rep.design.level,
            "miscoverage": rep.miscoverage,
            "median_finite_length": rep.median_finite_length,
            "infinite_fraction": rep.infinite_fraction,
            "n_intervals": rep.n_intervals,
        })
    return rows


# ---------------------------------------------------------------- config I/O

def _convert(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if name == "beta":
            return tuple(float(v) for v in raw.replace(",", " ").split()) if raw else ()
        if name == "screen_edge":
            a, b = (int(v) for v in raw.replace(",", " ").split())
            return (a, b)
        if name == "lambda_value":
            return None if raw.lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise InputError(f"bad value for {name}: {raw!r}") from None


def parse_design(text: str) -> SimDesign:
    """Parse ``key = value`` lines (``#`` starts a comment) into a design."""
    defaults = {f.name: f.default for f in dataclasses.fields(SimDesign)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise InputError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, defaults[key])
    return SimDesign(**values)


def load_design(path) -> SimDesign:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_design(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read design file: {exc}") from None


def format_design(design: SimDesign) -> str:
    lines = []
    for f in dataclasses.fields(SimDesign):
        v = getattr(design, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def _num(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.12g}"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return None
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def write_report(report: SimReport, outdir) -> dict:
    """Write ``ecdf.csv``, ``coverage.csv`` and ``summary.json`` into ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    paths = {k: os.path.join(outdir, k) for k in ("ecdf.csv", "coverage.csv", "summary.json")}
    with open(paths["ecdf.csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "t", "ecdf"])
        for g, t, v in report.ecdf_rows():
            w.writerow([g, _num(t), _num(v)])
    with open(paths["coverage.csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["design", "level", "miscoverage", "median_finite_length", "infinite_fraction",
                "n_intervals"]
        w.writerow(cols)
        for row in coverage_table([report]):
            w.writerow([row["design"]] + [_num(row[c]) for c in cols[1:-1]] + [row["n_intervals"]])
    with open(paths["summary.json"], "w", encoding="utf-8") as fh:
        json.dump(_json_safe(report.summary()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
