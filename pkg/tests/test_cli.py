import csv
import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from postsel.cli import INFER_COLUMNS, fmt_number, ingest_csv, main
from postsel.errors import InputError
from postsel.families import FamilySpec
from postsel.lasso import PenaltySpec, fit_lasso, lambda_max
from postsel.selective import infer


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def run(argv, capsys, environ=None):
    code = main(argv, environ=environ or {})
    out, err = capsys.readouterr()
    return code, out, err


def null_gaussian_csv(tmp_path, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 5))
    y = rng.normal(size=50)
    path = write_csv(tmp_path / f"g{seed}.csv", [f"x{j}" for j in range(1, 6)] + ["y"],
                     np.column_stack([X, y]).tolist())
    return path


def test_infer_round_trip_matches_library(tmp_path, capsys):
    fam = FamilySpec("gaussian")
    for seed in range(50):
        path = null_gaussian_csv(tmp_path, seed)
        data = ingest_csv(path, "gaussian")
        lam = 0.5 * lambda_max(fam, data)
        fit = fit_lasso(fam, data, PenaltySpec(lam))
        if fit.active:
            break
    report = infer(fam, data, fit)
    code, out, err = run(["infer", path, "--lambda-frac", "0.5", "--seed", "1"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert tuple(rows[0].keys()) == INFER_COLUMNS
    assert len(rows) == len(report.rows)
    for got, r in zip(rows, report.rows):
        expect = [r.name, r.beta_bar, r.stderr, r.vlo, r.vhi, r.naive_pvalue, r.pvalue,
                  r.ci_lo, r.ci_hi]
        assert got["variable"] == expect[0]
        for col, v in zip(INFER_COLUMNS[1:], expect[1:]):
            assert got[col] == fmt_number(v)


def test_infer_json_output(tmp_path, capsys):
    path = null_gaussian_csv(tmp_path, 3)
    out_path = tmp_path / "r.json"
    code, out, _ = run(["infer", path, "--lambda-frac", "0.2", "--format", "json",
                        "--out", str(out_path)], capsys)
    assert code == 0 and out == ""
    doc = json.loads(out_path.read_text())
    assert doc["family"] == "gaussian"
    assert all(set(INFER_COLUMNS) <= set(r) for r in doc["rows"])
    # intercept row carries infinite truncation limits
    vals = [r["vhi"] for r in doc["rows"]]
    assert "inf" in vals and all(isinstance(v, (float, str)) for v in vals)


def test_infinite_values_serialized_as_strings():
    assert fmt_number(math.inf) == "inf" and fmt_number(-math.inf) == "-inf"
    assert fmt_number(0.1234567890123456) == "0.123456789012"


def test_empty_selection_exit_code(tmp_path, capsys):
    path = null_gaussian_csv(tmp_path, 0)
    code, out, err = run(["infer", path, "--lambda-frac", "1.5"], capsys)
    assert code == 3 and out == "" and "empty" in err


def test_malformed_csv(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("x1,y\n1,2\nabc,3\n")
    code, out, err = run(["infer", str(path), "--lambda", "1"], capsys)
    assert code == 2 and out == ""
    assert "row 3" in err and "x1" in err


@pytest.mark.parametrize("argv", [
    ["infer", "/nonexistent.csv", "--lambda", "1"],
    ["frobnicate"],
    ["infer"],
    ["infer", "FILE", "--lambda", "1", "--cv"],
    ["infer", "FILE", "--lambda", "1", "--level", "1.5"],
    ["infer", "FILE", "--family", "logistic", "--sigma2", "1", "--lambda", "1"],
    ["fit", "FILE"],
])
def test_input_errors_exit_2(tmp_path, capsys, argv):
    path = null_gaussian_csv(tmp_path, 0)
    argv = [path if a == "FILE" else a for a in argv]
    code, out, _ = run(argv, capsys)
    assert code == 2 and out == ""


def test_cox_missing_status_column(tmp_path, capsys):
    path = write_csv(tmp_path / "c.csv", ["x1", "time"], [[0.1, 1.0], [0.2, 2.0]])
    code, out, err = run(["fit", path, "--family", "cox", "--lambda", "0.1"], capsys)
    assert code == 2 and "'status'" in err


def test_three_by_two_csv(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["x", "y"], [[1, 2], [2, 3], [4, 1]])
    data = ingest_csv(path, "gaussian")
    assert data.n == 3 and data.p == 2 and data.names == ("intercept", "x")
    assert data.unpenalized == (0,)
    assert ingest_csv(path, "gaussian", intercept=False).p == 1


def test_liver_format_with_missing_rows(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n, p = 120, 17
    header = [f"X{j}" for j in range(1, p + 1)] + ["time", "status"]
    X = rng.normal(size=(n, p))
    t = rng.exponential(1.0, n) * np.exp(-0.8 * X[:, 0])
    status = rng.integers(0, 2, n)
    rows = np.column_stack([X, t, status]).astype(object)
    missing = [3, 17, 40, 41, 99]
    for k, i in enumerate(missing):
        rows[i, k % p] = "NA" if k % 2 else ""
    path = write_csv(tmp_path / "liver.csv", header, rows.tolist())
    messages = []
    data = ingest_csv(path, "cox", report=messages.append)
    assert data.n == n - len(missing) and data.p == p
    assert data.unpenalized == ()
    assert messages and str(len(missing)) in messages[0]
    code, out, err = run(["infer", path, "--family", "cox", "--lambda-frac", "0.3"], capsys)
    assert code == 0 and "dropped 5" in err
    assert list(csv.DictReader(io.StringIO(out)))


def test_no_usable_rows(tmp_path):
    path = write_csv(tmp_path / "e.csv", ["x", "y"], [["NA", 1], [2, ""]])
    with pytest.raises(InputError):
        ingest_csv(path, "gaussian")


def test_environment_override(tmp_path, capsys):
    path = null_gaussian_csv(tmp_path, 3)
    env = {"POSTSEL_LAMBDA_FRAC": "0.2", "POSTSEL_FORMAT": "json"}
    code, out, _ = run(["fit", path], capsys, environ=env)
    assert code == 0
    doc = json.loads(out)
    code, out2, _ = run(["fit", path, "--format", "csv"], capsys, environ=env)
    assert code == 0 and out2.startswith("variable,coef")
    code, out3, _ = run(["fit", path, "--lambda-frac", "0.2", "--format", "json"], capsys)
    assert json.loads(out3) == doc


def test_cv_and_fit_commands(tmp_path, capsys):
    path = null_gaussian_csv(tmp_path, 5)
    code, out, _ = run(["cv", path, "--folds", "5", "--seed", "2"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 50 and set(rows[0]) == {"lambda", "cv_mean", "cv_se", "valid_folds"}
    code, out, _ = run(["fit", path, "--cv", "--folds", "5", "--seed", "2"], capsys)
    assert code == 0 and out.startswith("variable,coef")


def test_glasso_command(tmp_path, capsys):
    rng = np.random.default_rng(1)
    C = np.eye(4)
    C[0, 1] = C[1, 0] = 0.6
    X = rng.normal(size=(200, 4)) @ np.linalg.cholesky(C).T
    path = write_csv(tmp_path / "x.csv", ["a", "b", "c", "d"], X.tolist())
    code, out, _ = run(["glasso", path, "--lambda", "0.15"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert "a-b" in [r["variable"] for r in rows]
    S = X.T @ X / 200
    cov_path = write_csv(tmp_path / "s.csv", ["a", "b", "c", "d"], S.tolist())
    code, out2, _ = run(["glasso", "--cov-input", cov_path, "--n", "200", "--lambda", "0.15"],
                        capsys)
    assert code == 0 and out2 == out
    code, _, _ = run(["glasso", "--cov-input", cov_path, "--lambda", "0.15"], capsys)
    assert code == 2


def test_simulate_is_deterministic(tmp_path, capsys):
    design = tmp_path / "d.cfg"
    design.write_text("family = logistic\nn = 30\np = 5\nreplications = 15\nseed = 4\n")
    outs = []
    for k in range(2):
        d = tmp_path / f"out{k}"
        code, _, err = run(["simulate", "--design", str(design), "--out", str(d)], capsys)
        assert code == 0 and "KS" in err
        outs.append({f: (d / f).read_bytes() for f in ("ecdf.csv", "coverage.csv", "summary.json")})
    assert outs[0] == outs[1]
    code, _, _ = run(["simulate", "--design", str(tmp_path / "missing.cfg")], capsys)
    assert code == 2


def test_noise_variables_get_larger_selective_pvalues(tmp_path, capsys):
    """Nine informative covariates plus 100 pure-noise columns, logistic response."""
    wins = losses = 0
    for seed in range(4):
        rng = np.random.default_rng(100 + seed)
        n = 462
        Z = rng.normal(size=(n, 9))
        eta = -0.6 + Z @ np.array([0.2, 0.4, 0.4, 0.0, 0.45, 0.35, -0.1, 0.0, 0.7])
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
        N = rng.normal(size=(n, 100))
        header = [f"v{j}" for j in range(1, 10)] + [f"noise{j}" for j in range(1, 101)] + ["chd"]
        path = write_csv(tmp_path / f"h{seed}.csv", header, np.column_stack([Z, N, y]).tolist())
        code, out, _ = run(["infer", path, "--family", "logistic", "--response", "chd",
                            "--lambda-frac", "0.25"], capsys)
        assert code == 0
        for r in csv.DictReader(io.StringIO(out)):
            if r["variable"].startswith("noise") and r["selective_p"] != "nan":
                if float(r["selective_p"]) > float(r["naive_p"]):
                    wins += 1
                else:
                    losses += 1
    assert wins + losses >= 8
    assert stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue < 0.01
