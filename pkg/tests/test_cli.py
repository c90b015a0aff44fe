"""CLI subcommands end to end: config validation, result files, exit codes,
bitwise reproducibility."""

import json
import math

import numpy as np
import pytest

from lyapco import cli
from lyapco.config import PRESETS, ExperimentConfig, load_config
from lyapco.errors import ConfigError
from lyapco.results import read_record, read_table, strip_volatile, validate_record


def run_cli(*argv):
    return cli.main(list(argv))


def write_config(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


TINY_LINEAR = {
    "system": {"id": "linear", "dim": 1, "params": {"a": 0.5}, "dt": 1.0},
    "initial_state": {"vector": [1.0]},
    "steps": 50,
    "estimator": "qr_propagated",
    "units": "per_step",
    "seed": 7,
}


# -- config validation ------------------------------------------------------------


def test_unknown_top_level_key_named():
    with pytest.raises(ConfigError, match="frobnicate"):
        ExperimentConfig({"system": {"id": "logistic"}, "frobnicate": 1})


def test_unknown_nested_keys_named():
    with pytest.raises(ConfigError, match="colour"):
        ExperimentConfig({"system": {"id": "logistic", "colour": "red"}})
    with pytest.raises(ConfigError, match="wobble"):
        ExperimentConfig(
            {
                "system": {"id": "logistic"},
                "loss": {"horizon": 5, "terms": [{"kind": "base_height", "wobble": 1}]},
            }
        )


def test_bad_field_values_rejected():
    with pytest.raises(ConfigError, match="steps"):
        ExperimentConfig({"system": {"id": "logistic"}, "steps": -5})
    with pytest.raises(ConfigError, match="estimator"):
        ExperimentConfig({"system": {"id": "logistic"}, "estimator": "magic"})
    with pytest.raises(ConfigError, match="vector"):
        ExperimentConfig({"system": {"id": "henon"}, "initial_state": {"vector": [1.0]}})
    with pytest.raises(ConfigError, match="burn_in"):
        ExperimentConfig({"system": {"id": "logistic"}, "steps": 10, "burn_in": 10})
    with pytest.raises(ConfigError):
        ExperimentConfig({"system": {"id": "logistic"}, "sweep": {"grid": {"r": [4.0], "x": [1], "y": [2]}}})


def test_sweep_grid_names_validated():
    with pytest.raises(ConfigError, match="krunch"):
        ExperimentConfig({"system": {"id": "logistic"}, "sweep": {"grid": {"krunch": [1.0]}}})


def test_optimizer_free_names_validated():
    with pytest.raises(ConfigError, match="warp"):
        ExperimentConfig(
            {"system": {"id": "logistic"}, "optimizer": {"iters": 1, "free": ["warp"]}}
        )


def test_all_presets_validate():
    for name in PRESETS:
        cfg = load_config(name)
        assert cfg.preset == name


def test_cli_exit_codes(tmp_path):
    assert run_cli("spectrum", "--config", "definitely-not-a-config") == cli.EXIT_CONFIG
    bad = write_config(tmp_path, "bad.json", {"system": {"id": "logistic"}, "nope": 1})
    assert run_cli("spectrum", "--config", bad) == cli.EXIT_CONFIG
    # diverging map -> simulation error
    blow = dict(TINY_LINEAR)
    blow["system"] = {"id": "linear", "dim": 1, "params": {"a": 3.0}, "dt": 1.0}
    blow["steps"] = 500
    path = write_config(tmp_path, "blow.json", blow)
    assert run_cli("spectrum", "--config", path, "--out", str(tmp_path / "b.json")) == cli.EXIT_SIMULATION


# -- spectrum ----------------------------------------------------------------------


def test_spectrum_identity_map_lambda_zero(tmp_path):
    cfg = {
        "system": {"id": "linear", "dim": 2, "params": {"matrix": [[1.0, 0.0], [0.0, 1.0]]}, "dt": 1.0},
        "initial_state": {"vector": [0.3, 0.4]},
        "steps": 20,
    }
    path = write_config(tmp_path, "id.json", cfg)
    out = tmp_path / "id-result.json"
    assert run_cli("spectrum", "--config", path, "--out", str(out)) == 0
    rec = read_record(str(out))
    assert rec["lambda"] == [0.0, 0.0]


def test_spectrum_logistic_preset_close_to_ln2(tmp_path):
    out = tmp_path / "log.json"
    assert run_cli("spectrum", "--config", "logistic", "--out", str(out)) == 0
    rec = read_record(str(out))
    assert abs(rec["lambda"][0] - math.log(2.0)) < 1e-3


def test_spectrum_vanderpol_preset_metric_window(tmp_path):
    out = tmp_path / "vdp.json"
    assert run_cli("spectrum", "--config", "vanderpol", "--out", str(out)) == 0
    rec = read_record(str(out))
    assert -1e-2 <= rec["L_lambda"] < 0.0


def test_result_record_schema_roundtrip(tmp_path):
    out = tmp_path / "r.json"
    path = write_config(tmp_path, "tiny.json", TINY_LINEAR)
    assert run_cli("spectrum", "--config", path, "--out", str(out)) == 0
    rec = read_record(str(out))
    validate_record(rec)
    assert rec["lambda"][0] == pytest.approx(math.log(0.5), rel=1e-15)
    assert rec["trace"][-1] == rec["lambda"]
    assert rec["config_digest"]


def test_bitwise_reproducibility_across_runs_and_threads(tmp_path):
    path = write_config(
        tmp_path,
        "henon.json",
        {
            "system": {"id": "henon", "dt": 1.0},
            "initial_state": {"vector": [0.1, 0.1]},
            "steps": 20_000,
            "estimator": "svd_local",
            "seed": 3,
        },
    )
    outs = []
    for i, threads in enumerate((1, 2, 8)):
        out = tmp_path / ("h%d.json" % i)
        assert run_cli("spectrum", "--config", path, "--threads", str(threads), "--out", str(out)) == 0
        outs.append(strip_volatile(read_record(str(out))))
    assert outs[0] == outs[1] == outs[2]


def test_seed_override_changes_digest_and_draw(tmp_path):
    cfg = {
        "system": {"id": "vanderpol", "dt": 1e-3},
        "initial_state": {"box": {"low": [-1.0, -1.0], "high": [1.0, 1.0]}},
        "steps": 100,
    }
    path = write_config(tmp_path, "box.json", cfg)
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert run_cli("spectrum", "--config", path, "--seed", "1", "--out", str(a)) == 0
    assert run_cli("spectrum", "--config", path, "--seed", "2", "--out", str(b)) == 0
    ra, rb = read_record(str(a)), read_record(str(b))
    assert ra["config_digest"] != rb["config_digest"]
    assert ra["trajectory_summary"]["final_state"] != rb["trajectory_summary"]["final_state"]


# -- rollout -----------------------------------------------------------------------


def test_rollout_writes_table(tmp_path):
    path = write_config(tmp_path, "tiny.json", TINY_LINEAR)
    out = tmp_path / "roll.csv"
    assert run_cli("rollout", "--config", path, "--out", str(out)) == 0
    header, rows = read_table(str(out))
    assert header == ["step", "t", "x0"]
    assert float(rows[0][2]) == 1.0
    assert int(rows[-1][0]) == 50


# -- invariance --------------------------------------------------------------------


def test_invariance_subcommand(tmp_path):
    cfg = {
        "system": {"id": "logistic", "dt": 1.0},
        "initial_state": {"box": {"low": [0.1], "high": [0.9]}},
        "steps": 20_000,
        "samples": 6,
        "units": "per_step",
        "seed": 11,
    }
    path = write_config(tmp_path, "inv.json", cfg)
    out = tmp_path / "inv.json.out"
    assert run_cli("invariance", "--config", path, "--threads", "2", "--out", str(out)) == 0
    rec = json.load(open(out))
    assert rec["samples"] == 6
    assert len(rec["lambdas"]) == 6
    assert rec["max_spread"] < 0.05
    assert rec["failures"] == []


# -- sweep -------------------------------------------------------------------------


def test_sweep_degenerate_grid_matches_spectrum(tmp_path):
    cfg = dict(TINY_LINEAR)
    cfg["sweep"] = {"grid": {"a": [0.5]}}
    path = write_config(tmp_path, "s.json", cfg)
    out_csv = tmp_path / "s.csv"
    out_json = tmp_path / "s.json.out"
    assert run_cli("sweep", "--config", path, "--out", str(out_csv)) == 0
    assert run_cli("spectrum", "--config", path, "--out", str(out_json)) == 0
    header, rows = read_table(str(out_csv))
    rec = read_record(str(out_json))
    assert header == ["a", "L_lambda", "lambda_0", "status"]
    assert float(rows[0][2]) == rec["lambda"][0]
    assert rows[0][3] == "ok"


def test_sweep_linear_map_exact_values(tmp_path):
    cfg = dict(TINY_LINEAR)
    cfg["steps"] = 30
    cfg["sweep"] = {"grid": {"a": [0.5, 1.0, 2.0]}}
    path = write_config(tmp_path, "s3.json", cfg)
    out = tmp_path / "s3.csv"
    assert run_cli("sweep", "--config", path, "--out", str(out)) == 0
    _, rows = read_table(str(out))
    got = [float(r[1]) for r in rows]
    want = [math.log(0.5), 0.0, math.log(2.0)]
    assert np.allclose(got, want, rtol=1e-12, atol=0.0)


def test_sweep_records_per_point_failures(tmp_path):
    cfg = dict(TINY_LINEAR)
    cfg["steps"] = 400
    cfg["sweep"] = {"grid": {"a": [0.5, 3.0]}}
    path = write_config(tmp_path, "sf.json", cfg)
    out = tmp_path / "sf.csv"
    assert run_cli("sweep", "--config", path, "--out", str(out)) == 0
    _, rows = read_table(str(out))
    assert rows[0][-1] == "ok"
    assert rows[1][-1] == "SimulationBlowupError"
    assert math.isnan(float(rows[1][1]))


def test_sweep_thread_count_invariance(tmp_path):
    cfg = {
        "system": {"id": "henon", "dt": 1.0},
        "initial_state": {"vector": [0.1, 0.1]},
        "steps": 5000,
        "sweep": {"grid": {"a": [1.2, 1.3, 1.4], "b": [0.2, 0.3]}},
    }
    path = write_config(tmp_path, "sw.json", cfg)
    texts = []
    for i, threads in enumerate((1, 2, 8)):
        out = tmp_path / ("sw%d.csv" % i)
        assert run_cli("sweep", "--config", path, "--threads", str(threads), "--out", str(out)) == 0
        texts.append(open(out).read())
    assert texts[0] == texts[1] == texts[2]


# -- optimize ----------------------------------------------------------------------


def test_optimize_zero_iterations_history(tmp_path):
    cfg = dict(TINY_LINEAR)
    cfg["loss"] = {"horizon": 30, "terms": [], "weight_robustness": 1.0, "units": "per_step"}
    cfg["optimizer"] = {"iters": 0}
    path = write_config(tmp_path, "o0.json", cfg)
    out = tmp_path / "o0.json.out"
    assert run_cli("optimize", "--config", path, "--out", str(out)) == 0
    header, rows = read_table(str(out) + ".history.csv")
    assert len(rows) == 1
    assert int(rows[0][0]) == 0
    assert float(rows[0][1]) == pytest.approx(math.log(0.5), rel=1e-12)


def test_optimize_small_run_improves(tmp_path):
    cfg = {
        "system": {"id": "manipulator2r", "dt": 1e-3},
        "initial_state": {"vector": [0.0, 0.0, 0.0, 0.0]},
        "loss": {
            "horizon": 300,
            "terms": [{"kind": "target_position", "reference": [0.7, 0.7], "weight": 1.0}],
            "weight_robustness": 0.001,
        },
        "optimizer": {
            "iters": 8,
            "lr": 0.05,
            "normalize_steps": True,
            "free": ["Kp1", "Kp2", "Kd1", "Kd2"],
            "bounds": {"Kp1": [5, 60], "Kp2": [5, 60], "Kd1": [1, 12], "Kd2": [1, 12]},
        },
    }
    path = write_config(tmp_path, "opt.json", cfg)
    out = tmp_path / "opt.json.out"
    assert run_cli("optimize", "--config", path, "--out", str(out)) == 0
    rec = json.load(open(out))
    header, rows = read_table(str(out) + ".history.csv")
    assert rec["best_loss"] < rec["initial_loss"]
    assert len(rows) == 9
    assert header[0] == "iteration"


# -- validate ----------------------------------------------------------------------


def test_validate_subcommand_passes(tmp_path, capsys):
    out = tmp_path / "report.txt"
    code = run_cli("validate", "--out", str(out))
    text = capsys.readouterr().out
    assert code == 0
    assert "henon_det_identity" in text
    assert "FAIL" not in text


def test_validate_negative_control_floor_disabled():
    from lyapco.validate import run_all_checks

    checks = run_all_checks(sv_floor=0.0, n_jacobian_states=3)
    by_name = {c.name: c for c in checks}
    assert not by_name["sv_floor_engaged"].passed
    assert any(not c.passed for c in checks)
