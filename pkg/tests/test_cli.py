"""End-to-end command-line behavior: exit codes, emitted files, determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from lowrank_eiv import cli
from lowrank_eiv.experiment import CSV_COLUMNS
from lowrank_eiv.simulate import load_dataset


def dataset_config(**overrides):
    data = {
        "schema_version": 1,
        "d1": 4,
        "d2": 3,
        "rank": 1,
        "spectrum": {"kind": "constant", "value": 2.0},
        "sigma_x": {"kind": "identity"},
        "corruption": {"kind": "additive", "sigma_w": {"kind": "identity", "scale": 0.25}},
        "sigma_eps": 0.5,
        "n": 60,
        "seed": 7,
    }
    data.update(overrides)
    return data


def experiment_config(**overrides):
    data = {
        "schema_version": 1,
        "d1": 3,
        "d2": 3,
        "rank": 1,
        "spectrum": {"kind": "constant", "value": 2.0},
        "sigma_x": {"kind": "identity"},
        "corruption": {"kind": "additive", "sigma_w": {"kind": "identity", "scale": 0.25}},
        "sigma_eps": 0.5,
        "n_grid": [40, 60],
        "replicates": 2,
        "regularizers": [
            {"kind": "scad", "shape": 3.7, "lambda_rule": {"kind": "fixed", "value": 0.5}},
            {"kind": "nuclear", "lambda_rule": {"kind": "fixed", "value": 0.3}},
        ],
        "omega_rule": {"kind": "nuclear_multiple", "factor": 1.5},
        "solver": {"tol": 1e-6, "max_iters": 2000},
        "seed": 99,
    }
    data.update(overrides)
    return data


def write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


@pytest.fixture
def simulated(tmp_path):
    cfg = write_json(tmp_path / "data.json", dataset_config())
    out = tmp_path / "data.npz"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    return out


def read_rows(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    assert header == list(CSV_COLUMNS)
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_loadable_dataset(tmp_path, simulated):
    obs, model = load_dataset(simulated)
    assert obs.z.shape == (60, 4, 3)
    assert obs.corruption == "additive"
    assert model.theta.shape == (4, 3)
    assert model.rank == 1


def test_simulate_seed_override_changes_draw(tmp_path, simulated):
    cfg = write_json(tmp_path / "data2.json", dataset_config())
    out2 = tmp_path / "data2.npz"
    assert cli.main(["simulate", "--config", cfg, "--seed", "8", "--out", str(out2)]) == 0
    obs1, _ = load_dataset(simulated)
    obs2, _ = load_dataset(out2)
    assert obs2.seed == 8
    assert not np.array_equal(obs1.z, obs2.z)


def test_simulate_rejects_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1,,}', encoding="utf-8")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x.npz")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_simulate_rejects_unknown_key(tmp_path):
    cfg = write_json(tmp_path / "data.json", dataset_config(n_grid=[40]))
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "x.npz")]) == 2


def test_simulate_requires_out_somewhere(tmp_path):
    cfg = write_json(tmp_path / "data.json", dataset_config())
    assert cli.main(["simulate", "--config", cfg]) == 2
    inline = write_json(
        tmp_path / "data_out.json", dataset_config(out=str(tmp_path / "inline.npz"))
    )
    assert cli.main(["simulate", "--config", inline]) == 0
    assert (tmp_path / "inline.npz").exists()


# ---------------------------------------------------------------------------
# solve


def test_solve_writes_one_row(tmp_path, simulated):
    out = tmp_path / "row.csv"
    code = cli.main(
        ["solve", "--data", str(simulated), "--reg", "scad", "--lam", "0.4",
         "--shape", "3.7", "--out", str(out)]
    )
    assert code == 0
    rows = read_rows(out)
    assert len(rows) == 1
    row = rows[0]
    assert row["reg_kind"] == "scad"
    assert row["N"] == "60"
    assert row["seed"] == "7"
    assert row["corruption"] == "additive"
    assert float(row["corruption_param"]) == 0.25
    assert row["converged"] in {"0", "1"}
    assert float(row["op_norm_proj_grad"]) <= float(row["op_norm_full_grad"]) + 1e-12


def test_solve_prints_csv_without_out(simulated, capsys):
    assert cli.main(["solve", "--data", str(simulated), "--reg", "nuclear", "--lam", "0.4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 2
    assert lines[1].split(",")[9] == "nuclear"


def test_solve_rejects_infeasible_omega(simulated, capsys):
    code = cli.main(
        ["solve", "--data", str(simulated), "--reg", "nuclear", "--lam", "0.4",
         "--omega", "0.5"]
    )
    assert code == 2
    assert "feasible" in capsys.readouterr().err


def test_solve_rejects_omega_conflict(simulated):
    assert cli.main(
        ["solve", "--data", str(simulated), "--reg", "nuclear", "--lam", "0.4",
         "--omega", "10", "--omega-factor", "2.0"]
    ) == 2


def test_solve_rejects_shape_for_nuclear(simulated):
    assert cli.main(
        ["solve", "--data", str(simulated), "--reg", "nuclear", "--lam", "0.4",
         "--shape", "3.0"]
    ) == 2


def test_solve_rejects_bad_scad_shape(simulated):
    assert cli.main(
        ["solve", "--data", str(simulated), "--reg", "scad", "--lam", "0.4",
         "--shape", "1.5"]
    ) == 2


def test_solve_incompatible_fixed_step_is_config_error(simulated):
    # step * mu >= 1 breaks the prox decomposition; rejected up front
    assert cli.main(
        ["solve", "--data", str(simulated), "--reg", "mcp", "--lam", "0.4",
         "--shape", "2.0", "--step", "2.5"]
    ) == 2


def test_solve_divergence_exit_code(tmp_path, capsys):
    # N < M makes the corrected Gramian indefinite; a huge fixed step with an
    # unbounded feasible set then blows up and must surface as exit 3
    cfg = write_json(
        tmp_path / "small.json",
        dataset_config(d1=4, d2=4, n=8, corruption={
            "kind": "additive", "sigma_w": {"kind": "identity", "scale": 1.0},
        }),
    )
    data = tmp_path / "small.npz"
    assert cli.main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    with np.errstate(over="ignore", invalid="ignore"):
        code = cli.main(
            ["solve", "--data", str(data), "--reg", "nuclear", "--lam", "1e-9",
             "--omega", "inf", "--step", "10", "--tol", "1e-12"]
        )
    assert code == 3
    assert "diverged" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# experiment


def test_experiment_from_config_file(tmp_path):
    cfg = write_json(tmp_path / "exp.json", experiment_config())
    out = tmp_path / "exp.csv"
    assert cli.main(["experiment", "--config", cfg, "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 8  # 2 N x 2 regs x 2 reps
    assert [r["N"] for r in rows] == ["40", "40", "40", "40", "60", "60", "60", "60"]


def test_experiment_byte_identical_across_threads_and_reruns(tmp_path):
    cfg = write_json(tmp_path / "exp.json", experiment_config())
    outs = []
    for name, threads in (("a.csv", "1"), ("b.csv", "1"), ("c.csv", "3")):
        out = tmp_path / name
        assert cli.main(
            ["experiment", "--config", cfg, "--out", str(out), "--threads", threads]
        ) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_experiment_seed_override_changes_rows(tmp_path):
    cfg = write_json(tmp_path / "exp.json", experiment_config())
    out1, out2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    assert cli.main(["experiment", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["experiment", "--config", cfg, "--seed", "100", "--out", str(out2)]) == 0
    assert out1.read_bytes() != out2.read_bytes()
    assert all(r["seed"] == "100" for r in read_rows(out2))


def test_experiment_requires_exactly_one_source(tmp_path):
    cfg = write_json(tmp_path / "exp.json", experiment_config())
    assert cli.main(["experiment", "--out", str(tmp_path / "x.csv")]) == 2
    assert cli.main(
        ["experiment", "--config", cfg, "--preset", "cone-additive",
         "--out", str(tmp_path / "x.csv")]
    ) == 2


def test_experiment_unknown_preset_is_usage_error(tmp_path):
    assert cli.main(
        ["experiment", "--preset", "no-such-preset", "--out", str(tmp_path / "x.csv")]
    ) == 2


def test_experiment_infeasible_fixed_omega(tmp_path, capsys):
    cfg = write_json(
        tmp_path / "exp.json",
        experiment_config(omega_rule={"kind": "fixed", "value": 0.25}),
    )
    assert cli.main(["experiment", "--config", cfg, "--out", str(tmp_path / "x.csv")]) == 2
    assert "feasible" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# check


def test_check_structure_passes(capsys):
    assert cli.main(["check", "structure", "--trials", "40"]) == 0
    out = capsys.readouterr().out
    assert "penalty_subadditive" in out
    assert "structure: OK" in out


def test_check_gradients_passes(capsys):
    assert cli.main(["check", "gradients", "--trials", "4"]) == 0
    out = capsys.readouterr().out
    assert "additive" in out and "missing" in out
    assert "gradients: OK" in out


def test_check_prox_passes(capsys):
    assert cli.main(["check", "prox", "--trials", "60"]) == 0
    assert "prox: OK" in capsys.readouterr().out


def test_check_lsc_rsc_passes(capsys):
    assert cli.main(["check", "lsc-rsc", "--trials", "30"]) == 0
    out = capsys.readouterr().out
    assert "lsc-rsc: OK" in out


def test_check_unknown_suite_is_usage_error(capsys):
    assert cli.main(["check", "spectra"]) == 2


def test_no_command_is_usage_error():
    assert cli.main([]) == 2


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "lowrank_eiv.cli", "check", "structure", "--trials", "5"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert "structure: OK" in proc.stdout
