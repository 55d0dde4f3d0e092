import math
from pathlib import Path

import numpy as np
import pytest

from gpdfuse.cli import EXIT_INPUT, build_config, main, read_config_file, read_matrix, read_table, write_matrix
from gpdfuse.inference import return_level
from gpdfuse.simulate import ScenarioConfig, generate


@pytest.fixture
def small_input(tmp_path):
    cfg = ScenarioConfig(n=300, J=6, rho=0.5, gamma=(0.2,) * 6, sigma=(1.0,) * 6, seed=2)
    path = tmp_path / "data.csv"
    write_matrix(path, generate(cfg))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_lambda_zero_grid_keeps_initial_estimates(tmp_path, small_input):
    out = tmp_path / "fit"
    assert run("fit", "-i", small_input, "--out-dir", out, "--set", "threshold=k:60",
               "--set", "lambda_grid=0") == 0
    rows = read_table(out / "clusters.csv")
    for r in rows:
        assert float(r["gamma_hat"]) == pytest.approx(float(r["gamma_tilde"]), abs=1e-6)
    assert len(read_table(out / "path.csv")) == 1
    rep = read_table(out / "report.csv")
    assert {"cluster", "group", "gamma", "return_level", "ci_lower", "ci_upper", "group_size"} <= set(rep[0])


def test_two_groups_with_chi_graph(tmp_path):
    cfg = ScenarioConfig(n=2000, J=10, rho=0.9, gamma=(0.3,) * 5 + (-0.1,) * 5,
                         sigma=tuple(np.linspace(1, 3, 10)), seed=1)
    data = tmp_path / "two.csv"
    write_matrix(data, generate(cfg))
    out = tmp_path / "out"
    assert run("fit", "-i", data, "--out-dir", out, "--set", "threshold=k:500", "--set", "graph=chi:0.3",
               "--set", "lambda_grid=auto:15") == 0
    groups = [int(r["group"]) for r in read_table(out / "clusters.csv")]
    assert groups == [1] * 5 + [2] * 5
    assert list(out.glob("chi_u*.csv"))


def test_csv_roundtrip_full_precision(tmp_path, small_input):
    raw, header = read_matrix(small_input)
    assert header == [f"c{j}" for j in range(1, 7)]
    again = tmp_path / "again.csv"
    write_matrix(again, raw)
    assert np.array_equal(read_matrix(again)[0], raw)


def test_input_errors(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run("fit", "-i", empty, "--out-dir", tmp_path) == EXIT_INPUT
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error:input:")
    holes = tmp_path / "holes.csv"
    holes.write_text("1,2\n3,\n")
    assert run("fit", "-i", holes, "--out-dir", tmp_path) == EXIT_INPUT
    assert run("fit", "--out-dir", tmp_path) == EXIT_INPUT
    assert run("fit", "-i", holes, "--set", "graph=ring") == EXIT_INPUT
    assert run("fit", "-i", holes, "--set", "bogus=1") == EXIT_INPUT


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--preset", "s5-small", "--seed", 11, "--out-dir", a) == 0
    assert run("simulate", "--preset", "s5-small", "--seed", 11, "--out-dir", b) == 0
    for name in ("data.csv", "truth.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    raw, _ = read_matrix(a / "data.csv")
    assert raw.shape == (120, 110)


def test_simulate_unknown_preset():
    with pytest.raises(SystemExit) as exc:
        run("simulate", "--preset", "nope")
    assert exc.value.code == 2


def test_simulate_with_evaluation(tmp_path):
    out = tmp_path / "ev"
    assert run("simulate", "--preset", "s5-small", "--seed", 1, "--out-dir", out,
               "--replications", 2, "--set", "procedures=clusterwise") == 0
    assert len((out / "eval.csv").read_text().splitlines()) == 111


def test_graph_band_edge_file(tmp_path):
    assert run("graph", "--set", "J=1100", "--set", "graph=band:1,2,3,4", "--out-dir", tmp_path) == 0
    assert len((tmp_path / "edges.csv").read_text().splitlines()) == 4384


def test_threshold_single_k(tmp_path, small_input):
    assert run("threshold", "-i", small_input, "--set", "k_grid=40:40", "--set", "k_method=min",
               "--out-dir", tmp_path) == 0
    rows = read_table(tmp_path / "risk_path.csv")
    assert [(r["k"], r["selected"]) for r in rows] == [("40", "1")]
    assert read_table(tmp_path / "mrl.csv")


def test_return_level_closed_form(tmp_path, small_input):
    params = tmp_path / "params.csv"
    lines = ["cluster,n_exceed,threshold,gamma_tilde,gamma_hat,group,sigma_hat"]
    lines += [f"{j},0,0,0,0,{j},40" for j in range(1, 7)]
    params.write_text("\n".join(lines) + "\n")
    assert run("return-level", "-i", small_input, "--set", f"params={params}", "--set", "tau=1/240",
               "--out-dir", tmp_path) == 0
    rows = read_table(tmp_path / "return_levels.csv")
    raw, _ = read_matrix(small_input)
    xi = np.count_nonzero(raw[:, 0] > 0) / raw.shape[0]
    assert float(rows[0]["return_level"]) == pytest.approx(40 * math.log(240 * xi), rel=1e-14)
    assert float(rows[0]["return_level"]) == return_level(0.0, 40.0, 1 / 240, xi, 0.0)


def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nseed = 5\nthreshold = k:30  # inline\nband_truncate = false\n")
    pairs = read_config_file(f)
    cfg = build_config(pairs)
    assert cfg.seed == 5 and cfg.threshold == "k:30" and cfg.band_truncate is False
    f.write_text("seed 5\n")
    with pytest.raises(ValueError):
        read_config_file(f)
