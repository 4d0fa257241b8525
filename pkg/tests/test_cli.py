import json

import pytest

from mixgame import __version__
from mixgame.cli import run

PI2 = "6.283185307179586"


def read_csv_metadata(path):
    meta = {}
    for line in path.read_text().splitlines():
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition(": ")
        meta[key] = value
    return meta


def test_unknown_subcommand_exits_2(capsys):
    assert run(["bogus"]) == 2
    assert "invalid choice" in capsys.readouterr().err


def test_missing_spec_names_the_path(tmp_path, capsys):
    missing = tmp_path / "absent.toml"
    assert run(["value", "--spec", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_strategy_file_exits_2(tmp_path):
    assert run(["value", "--spec", "matching_pennies_linear", "--families", str(tmp_path / "none.toml")]) == 2


def test_bad_grid_is_a_usage_error():
    assert run(["solve-pde", "--spec", "heat", "--grid=1:0:5"]) == 2


def test_computation_failure_exits_1(tmp_path):
    # epsilon below the Monte Carlo resolution violates the saddle precondition
    code = run(["saddle-search", "--spec", "matching_pennies_linear", "--paths", "200", "--epsilon", "1e-6",
                "--out", str(tmp_path)])
    assert code == 1


def test_hamiltonian_report(tmp_path):
    assert run(["hamiltonian", "--spec", "matching_pennies", "--p", "2", "--M", "1", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "hamiltonian.json").read_text())
    assert rep["H_minus"] == pytest.approx(-1.5) and rep["H"] == pytest.approx(0.5)
    assert rep["H_plus"] == pytest.approx(2.5)
    assert rep["metadata"]["version"] == __version__ and rep["metadata"]["seed"] == 0


def test_solve_pde_csv(tmp_path):
    assert run(["solve-pde", "--spec", "heat", f"--grid=-{PI2}:{PI2}:41", "--seed", "3", "--out", str(tmp_path)]) == 0
    path = tmp_path / "value_grid.csv"
    meta = read_csv_metadata(path)
    assert meta["seed"] == "3" and "spec_hash" in meta and "boundary" in " ".join(meta)
    body = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    assert body[0].split(",")[:2] == ["t", "x1"]


@pytest.mark.parametrize("argv, produced", [
    (["mixing", "probe", "--spec", "switching_volatility", "--samples", "100"], "mixing_probe.json"),
    (["simulate", "--spec", "matching_pennies", "--paths", "500", "--record-every", "0"], "paths.csv"),
    (["simulate", "--spec", "matching_pennies", "--paths", "2000", "--report", "laws"], "laws_report.json"),
    (["simulate", "--spec", "matching_pennies", "--paths", "2000", "--report", "defect", "--t1", "0.5",
      "--record-every", "10"],
     "defect_report.json"),
    (["value", "--spec", "matching_pennies_linear", "--paths", "1000"], "value_report.json"),
    (["dpp-check", "--spec", "heat", "--paths", "1000", f"--grid=-{PI2}:{PI2}:41"], "dpp_report.json"),
    (["saddle-search", "--spec", "matching_pennies_linear", "--paths", "2000", "--epsilon", "0.2"],
     "saddle_report.json"),
])
def test_subcommands_write_reports(tmp_path, argv, produced):
    assert run(argv + ["--out", str(tmp_path), "--seed", "11"]) == 0
    path = tmp_path / produced
    if path.suffix == ".json":
        assert json.loads(path.read_text())["metadata"]["seed"] == 11
    else:
        assert read_csv_metadata(path)["seed"] == "11"


def test_strategy_file_option(tmp_path):
    from mixgame.config import shipped_spec_path

    strategies = shipped_spec_path("heat").parent / "strategies" / "switching.toml"
    assert run(["simulate", "--spec", "matching_pennies", "--paths", "300", "--strategies", str(strategies),
                "--out", str(tmp_path)]) == 0
    assert "switch-on-hit" in read_csv_metadata(tmp_path / "paths.csv")["mu"]


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MIXGAME_OUT_DIR", str(tmp_path))
    assert run(["hamiltonian", "--spec", "heat", "--p", "1", "--M", "1"]) == 0
    assert (tmp_path / "hamiltonian.json").exists()


def test_stdout_when_no_output_directory(capsys, monkeypatch):
    monkeypatch.delenv("MIXGAME_OUT_DIR", raising=False)
    assert run(["hamiltonian", "--spec", "heat", "--p", "1", "--M", "1"]) == 0
    assert '"H"' in capsys.readouterr().out


def test_reruns_are_byte_identical(tmp_path):
    argv = ["value", "--spec", "matching_pennies_linear", "--paths", "5000", "--seed", "2"]
    assert run(argv + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert run(argv + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert (tmp_path / "a" / "value_report.json").read_bytes() == (tmp_path / "b" / "value_report.json").read_bytes()


def test_solve_pde_stencil_option(tmp_path):
    assert run(["solve-pde", "--spec", "matching_pennies", "--grid=-3:3:21", "--stencil", "fixed-point",
                "--out", str(tmp_path)]) == 0
    assert read_csv_metadata(tmp_path / "value_grid.csv")["pde.stencil"] == "fixed_point"


def test_shipped_strategy_file_by_name(tmp_path):
    assert run(["simulate", "--spec", "matching_pennies", "--paths", "300", "--strategies", "switching",
                "--out", str(tmp_path)]) == 0
    assert "switch-on-hit" in read_csv_metadata(tmp_path / "paths.csv")["mu"]


def test_verify_defaults_to_the_acceptance_seed():
    from mixgame.acceptance import Settings
    from mixgame.cli import build_parser

    parser = build_parser()
    assert parser.parse_args(["verify"]).seed == Settings().seed
    assert parser.parse_args(["value", "--spec", "heat"]).seed == 0


def test_verify_subset(tmp_path, capsys):
    assert run(["verify", "--quick", "--only", "C1,C2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] C1" in out and "[PASS] C2" in out and "C3" not in out
