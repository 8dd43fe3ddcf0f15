import json
import math
import subprocess
import sys

import numpy as np
import pytest

from ordicc.cli import EXIT_INPUT, EXIT_IO, EXIT_OK, main
from ordicc.estimation import fit_clmm, fit_lmm
from ordicc.icc import icc_from_clmm, icc_from_lmm
from ordicc.io import SchemaError, dataset_from_table, format_csv, parse_csv, read_csv
from ordicc.simulation import SimConfig, generate_dataset

HEADER = "subject_id,ear_id,measurement,category,x1"


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def single_csv(tmp_path, capsys):
    path = tmp_path / "single.csv"
    assert run(["generate", "--seed", "7", "--out", str(path)], capsys)[0] == EXIT_OK
    return path


# io

def test_parse_reports_line_numbers():
    text = HEADER + "\n1,,1,2,0.5\n1,,2,zero,0.1\n2,,1,3,nan\n"
    with pytest.raises(SchemaError) as info:
        parse_csv(text)
    diags = info.value.diagnostics
    assert diags[0].startswith("line 3:") and "category" in diags[0]
    assert diags[1].startswith("line 4:") and "x1" in diags[1]


def test_parse_empty_and_header_problems():
    with pytest.raises(SchemaError, match="line 1: empty file"):
        parse_csv("")
    with pytest.raises(SchemaError, match="category"):
        parse_csv("subject_id,measurement,x1\n1,1,0.2\n")
    with pytest.raises(SchemaError, match="no data rows"):
        parse_csv(HEADER + "\n")
    with pytest.raises(SchemaError, match="x9"):
        parse_csv(HEADER + "\n1,,1,1,0.2\n", covariates=["x9"])


def test_long_diagnostics_are_truncated():
    text = HEADER + "\n" + "".join(f"{i},,1,0,0.1\n" for i in range(40))
    with pytest.raises(SchemaError) as info:
        parse_csv(text)
    assert len(info.value.diagnostics) == 40
    assert str(info.value).endswith("... and 20 more")


def test_ear_ids_are_scoped_by_subject():
    text = HEADER + "\n" + "".join(
        f"{s},{e},{m},{1 + (s + m) % 3},0.0\n" for s in (1, 2) for e in ("L", "R") for m in (1, 2))
    data = dataset_from_table(parse_csv(text), nested=True)
    assert data.n_ears == 4 and data.n_clusters == 2
    left = dataset_from_table(parse_csv(text), ear="L")
    assert left.n_obs == 4 and left.nesting == "single"


def test_format_and_read_round_trip(tmp_path, sim_nested):
    path = tmp_path / "n.csv"
    path.write_text(format_csv(sim_nested))
    back = read_csv(path, nested=True)
    assert np.array_equal(back.categories, sim_nested.categories)
    assert np.array_equal(back.covariates, sim_nested.covariates)
    assert back.n_ears == sim_nested.n_ears


# cli: generate

def test_generate_schema_and_row_counts(single_csv, tmp_path, capsys):
    lines = single_csv.read_text().splitlines()
    assert lines[0] == HEADER
    assert len(lines) == 176
    nested = tmp_path / "nested.csv"
    assert run(["generate", "--design", "nested", "--out", str(nested)], capsys)[0] == EXIT_OK
    assert len(nested.read_text().splitlines()) == 351


def test_generate_is_byte_identical(single_csv, tmp_path, capsys):
    again = tmp_path / "again.csv"
    run(["generate", "--seed", "7", "--out", str(again)], capsys)
    assert again.read_bytes() == single_csv.read_bytes()


def test_generate_io_failure(tmp_path, capsys):
    code, _, err = run(["generate", "--out", str(tmp_path / "missing" / "x.csv")], capsys)
    assert code == EXIT_IO and "cannot write" in err


def test_config_file_with_inline_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_subjects": 4, "n_obs": 3, "seed": 1}))
    code, out, _ = run(["generate", "--config", str(cfg), "--n-obs", "2"], capsys)
    assert code == EXIT_OK and len(out.splitlines()) == 9
    cfg.write_text(json.dumps({"n_subject": 4}))
    code, _, err = run(["generate", "--config", str(cfg)], capsys)
    assert code == EXIT_INPUT and "n_subject" in err


# cli: fit

def test_fit_three_blocks_json(single_csv, capsys):
    code, out, _ = run(["fit", str(single_csv), "--naive"], capsys)
    assert code == EXIT_OK
    report = json.loads(out)
    assert set(report) == {"input", "models", "version", "seed"}
    assert [m["model"] for m in report["models"]] == ["clmm_probit", "clmm_logistic", "naive_lmm"]
    assert [m["ci_method"] for m in report["models"]] == ["profile_transform", "profile_transform", "delta"]
    for m in report["models"]:
        lo, hi = m["ci"]
        assert 0 <= lo <= m["icc"] <= hi <= 1
        assert m["n_obs"] == 175 and m["n_clusters"] == 35 and m["converged"]
    assert report["version"]["schema"] == "ordicc.report/1"


def test_fit_nested_uses_delta(tmp_path, capsys):
    path = tmp_path / "nested.csv"
    run(["generate", "--design", "nested", "--seed", "3", "--out", str(path)], capsys)
    code, out, _ = run(["fit", str(path), "--nested", "--link", "probit"], capsys)
    block = json.loads(out)["models"][0]
    assert code == EXIT_OK and block["ci_method"] == "delta"
    assert block["n_ears"] == 70 and set(block["variance_components"]) == {"sigma_b_sq", "sigma_c_sq"}


def test_fit_naive_method_flag(single_csv, capsys):
    blocks = {}
    for method in ("reml", "ml"):
        code, out, _ = run(["fit", str(single_csv), "--link", "probit", "--naive", "--naive-method", method], capsys)
        assert code == EXIT_OK
        blocks[method] = json.loads(out)["models"][1]
        assert blocks[method]["estimation"] == method
    ml, reml = blocks["ml"]["variance_components"], blocks["reml"]["variance_components"]
    assert reml["sigma_b_sq"] > ml["sigma_b_sq"]
    assert run(["fit", str(single_csv), "--naive", "--naive-method", "bayes"], capsys)[0] == EXIT_INPUT


def test_fit_text_format(single_csv, capsys):
    code, out, _ = run(["fit", str(single_csv), "--link", "probit", "--format", "text"], capsys)
    assert code == EXIT_OK
    assert out.splitlines()[1].split()[:4] == ["model", "icc", "ci_lower", "ci_upper"]
    assert out.splitlines()[2].startswith("clmm_probit")


def test_fit_input_errors(tmp_path, single_csv, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    code, _, err = run(["fit", str(empty)], capsys)
    assert code == EXIT_INPUT and "line 1" in err
    code, _, err = run(["fit", str(tmp_path / "nope.csv")], capsys)
    assert code == EXIT_IO
    no_ear = tmp_path / "no_ear.csv"
    no_ear.write_text("subject_id,measurement,category,x1\n1,1,1,0.1\n1,2,2,0.3\n2,1,2,0.0\n2,2,1,0.2\n")
    code, _, err = run(["fit", str(no_ear), "--nested"], capsys)
    assert code == EXIT_INPUT and "ear_id" in err
    code, _, err = run(["fit", str(single_csv), "--nested"], capsys)
    assert code == EXIT_INPUT and "ear_id" in err and len(err.splitlines()) == 1
    code, _, _ = run(["fit", str(single_csv), "--level", "1.5"], capsys)
    assert code == EXIT_INPUT
    code, _, _ = run(["fit", str(single_csv), "--link", "cauchit"], capsys)
    assert code == EXIT_INPUT


def test_fit_estimator_failure_is_partial_report(tmp_path, capsys):
    path = tmp_path / "const.csv"
    rows = "".join(f"{s},,{m},{1 + s % 3},{0.1 * m - 0.05 * s}\n" for s in range(6) for m in range(4))
    path.write_text(HEADER + "\n" + rows)
    code, out, _ = run(["fit", str(path), "--link", "probit", "--naive"], capsys)
    assert code == EXIT_OK
    probit, naive = json.loads(out)["models"]
    assert probit["degenerate"] and probit["ci"] is None and probit["icc"] == 1.0
    assert naive["icc"] == pytest.approx(1.0, abs=1e-6) and naive["ci"] is None and naive["note"]


def test_fit_rejects_constant_covariate(tmp_path, capsys):
    path = tmp_path / "flat.csv"
    rows = "".join(f"{s},,{m},{1 + (s + m) % 3},1.5\n" for s in range(6) for m in range(4))
    path.write_text(HEADER + "\n" + rows)
    code, _, err = run(["fit", str(path)], capsys)
    assert code == EXIT_INPUT and "x1" in err


# cli: simulate

def test_simulate_summary_and_thread_determinism(tmp_path, capsys):
    args = ["simulate", "--n-replicates", "4", "--seed", "5"]
    one, two = tmp_path / "one.csv", tmp_path / "two.csv"
    reps, report = tmp_path / "reps.csv", tmp_path / "report.json"
    assert run(args + ["--threads", "1", "--out", str(one), "--replicates-out", str(reps),
                       "--report", str(report)], capsys)[0] == EXIT_OK
    assert run(args + ["--threads", "2", "--out", str(two)], capsys)[0] == EXIT_OK
    assert one.read_bytes() == two.read_bytes()
    header = one.read_text().splitlines()[0]
    assert header == "design,error_family,estimator,bias,sd,coverage,n_ci_unavailable,n_nonconverged,seed"
    assert len(reps.read_text().splitlines()) == 13
    rep = json.loads(report.read_text())
    assert rep["seed"] == 5 and rep["input"]["true_icc"] == pytest.approx(0.8)


def test_simulate_invalid_config(capsys):
    code, _, err = run(["simulate", "--n-subjects", "0"], capsys)
    assert code == EXIT_INPUT and "n_subjects" in err
    code, _, _ = run(["simulate", "--threads", "0", "--n-replicates", "1"], capsys)
    assert code == EXIT_INPUT


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "ordicc", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("ordicc ")


# round trip through the CSV schema

def _roundtrip(config, i, nested):
    data = dataset_from_table(parse_csv(format_csv(generate_dataset(config, i))), nested=nested)
    return data


@pytest.mark.parametrize("design", ["single", "nested"])
def test_generate_fit_recovers_icc(design):
    cfg = SimConfig(design=design, seed=31)
    nested = design == "nested"
    values = [icc_from_clmm(fit_clmm(_roundtrip(cfg, i, nested), "probit")).value for i in range(12)]
    sd = np.std(values, ddof=1)
    assert abs(values[0] - cfg.true_icc) <= 3 * sd
    assert abs(np.mean(values) - cfg.true_icc) <= 3 * sd / math.sqrt(len(values))


def test_ordinal_icc_exceeds_naive_on_average():
    cfg = SimConfig(seed=101)
    ordinal, naive = [], []
    for i in range(100):
        data = _roundtrip(cfg, i, False)
        ordinal.append(icc_from_clmm(fit_clmm(data, "probit")).value)
        naive.append(icc_from_lmm(fit_lmm(data)).value)
    assert np.mean(ordinal) > np.mean(naive)
