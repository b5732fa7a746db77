import csv

import numpy as np
import pytest

from parocpd.cli import main
from parocpd.experiments import (
    ExperimentSpec,
    SuccessTable,
    make_tensor,
    parse_variant,
    run_convergence,
    run_success_ratio,
)
from parocpd.generators import MultTensorSpec, mult_tensor
from parocpd.tensor import read_tensor, write_tensor

SPEC = """
# small rank-1 study
kind = success-ratio
task = rank1
generator = gaussian
dims = 3,3,3
variants = als/svd, roro/svd
runs = 4
seed = 2
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_spec_parse():
    spec = ExperimentSpec.parse(SPEC)
    assert spec.dims == (3, 3, 3)
    assert spec.variants == ("als/svd", "roro/svd")
    assert spec.runs == 4 and spec.seed == 2
    assert spec.snr_db == float("inf")


@pytest.mark.parametrize(
    "text",
    [
        "kind = nope",
        "bogus = 1",
        "runs = 0",
        "task = rank1\nvariants = als/foo",
        "variants = paro/fixed:1/hals",
        "no equals sign",
        "generator = file",
    ],
)
def test_spec_rejects(text):
    with pytest.raises(ValueError):
        ExperimentSpec.parse(text)


def test_parse_variant():
    assert parse_variant("rank1", "r1lm/ttsvd-best") == {"algo": "r1lm", "init": "ttsvd-best"}
    v = parse_variant("cpd", "paro/adaptive:20:1.5:5/roro")
    assert v["inner"] == "roro" and v["schedule"].factor == 1.5
    assert parse_variant("cpd", "paro/fixed:1")["inner"] == "als"


def test_outcome_classification():
    table = SuccessTable(["a"], np.array([[0.0], [1e-3], [0.5]]), np.zeros((3, 1), int), np.ones((3, 1), bool),
                         np.zeros(3), 1e-6, 1e-2)
    assert [table.outcome(i, 0) for i in range(3)] == ["success", "middle", "failure"]
    r = table.ratios("a")
    assert r == {"success": 1 / 3, "failure": 1 / 3, "middle": 1 / 3}


def test_single_variant_is_always_successful(tmp_path):
    spec = ExperimentSpec.parse(SPEC.replace("als/svd, roro/svd", "als/svd"))
    table = run_success_ratio(spec)
    assert table.ratios("als/svd")["success"] == 1.0


def test_superset_never_raises_ratio():
    small = run_success_ratio(ExperimentSpec.parse(SPEC))
    big = run_success_ratio(ExperimentSpec.parse(SPEC.replace("roro/svd", "roro/svd, r1lm/ttsvd-best")))
    for v in ("als/svd", "roro/svd"):
        assert big.ratios(v)["success"] <= small.ratios(v)["success"]


def test_csv_outputs_are_deterministic(tmp_path):
    spec = ExperimentSpec.parse(SPEC)
    spec.output = str(tmp_path / "a")
    run_success_ratio(spec)
    spec.output = str(tmp_path / "b")
    run_success_ratio(spec)
    for suffix in ("_raw.csv", "_summary.csv"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
    raw = read_csv(tmp_path / "a_raw.csv")
    assert list(raw[0]) == ["run", "variant", "relative_error", "reference", "iterations", "converged", "outcome"]
    assert len(raw) == 8
    summary = read_csv(tmp_path / "a_summary.csv")
    assert [r["variant"] for r in summary] == ["als/svd", "roro/svd"]


def test_convergence_trace(tmp_path):
    spec = ExperimentSpec.parse(
        "kind = convergence\ngenerator = mult\nmult = 2,2,2\nrank = 7\nruns = 1\nmax_iters = 5\n"
        f"variants = als, paro/fixed:1\noutput = {tmp_path / 'c'}"
    )
    rows = run_convergence(spec)
    assert len(rows) == 12
    got = read_csv(tmp_path / "c_trace.csv")
    assert list(got[0]) == ["run", "variant", "iter", "relative_error", "mu", "gammaR", "elapsed_ms"]
    paro_rows = [r for r in got if r["variant"] == "paro/fixed:1"]
    assert all(float(r["mu"]) == 0.5 for r in paro_rows)


def test_make_tensor_variants(tmp_path):
    t = make_tensor(ExperimentSpec(generator="mult", mult=(2, 2, 2)), 0)
    np.testing.assert_array_equal(t, mult_tensor(MultTensorSpec(2, 2, 2)))
    path = tmp_path / "x.ten"
    write_tensor(path, t)
    np.testing.assert_array_equal(make_tensor(ExperimentSpec(generator="file", input=str(path)), 3), t)
    a = make_tensor(ExperimentSpec(dims=(3, 3, 3), true_rank=2, snr_db=20.0), 1)
    b = make_tensor(ExperimentSpec(dims=(3, 3, 3), true_rank=2, snr_db=20.0), 1)
    np.testing.assert_array_equal(a, b)


# ---- command line ----


def test_cli_gen_and_solvers(tmp_path, capsys):
    mult = tmp_path / "m.ten"
    assert main(["gen", "mult", "2", "2", "2", "-o", str(mult)]) == 0
    np.testing.assert_array_equal(read_tensor(mult), mult_tensor(MultTensorSpec(2, 2, 2)))

    rnd = tmp_path / "r.ten"
    assert main(["gen", "random", "--dims", "3,3,3", "--rank", "1", "--seed", "4", "-o", str(rnd)]) == 0
    trace = tmp_path / "r1.csv"
    assert main(["rank1", "-i", str(rnd), "--algo", "roro", "--trace", str(trace)]) == 0
    assert read_csv(trace)[0]["variant"] == "roro/svd"

    assert main(["cpd", "-i", str(mult), "--rank", "7", "--max-iters", "3"]) == 2
    cp_trace = tmp_path / "cp.csv"
    code = main(["cpd", "-i", str(rnd), "--rank", "1", "--algo", "als", "--tol", "1e-9", "--trace", str(cp_trace)])
    assert code == 0
    assert "relative_error" in capsys.readouterr().out


def test_cli_collinear_generator(tmp_path):
    out = tmp_path / "c.ten"
    args = ["gen", "random", "--dims", "5,5,5", "--rank", "8", "--collinear", "0.95,0.999", "--blocks", "4,4"]
    assert main(args + ["-o", str(out)]) == 0
    assert read_tensor(out).shape == (5, 5, 5)


def test_cli_errors(tmp_path, capsys):
    assert main(["rank1", "-i", str(tmp_path / "missing.ten")]) == 1
    bad = tmp_path / "bad.spec"
    bad.write_text("kind = nope\n")
    assert main(["experiment", "success-ratio", "--spec", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["cpd", "-i", "x", "--rank", "2", "--schedule", "weird"])


def test_cli_experiment(tmp_path, capsys):
    spec = tmp_path / "s.spec"
    spec.write_text(SPEC)
    assert main(["experiment", "success-ratio", "--spec", str(spec), "--output", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o_summary.csv").exists()
    assert "als/svd" in capsys.readouterr().out
