import json
import pathlib

import pytest

from slowfast.cli import main
from slowfast.harness import ExperimentConfig, load_config
from slowfast.presets import MODEL1_DEFAULT, MODEL2_LINEAR

REPO = pathlib.Path(__file__).resolve().parent.parent


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    cfg = ExperimentConfig.from_dict(data)
    path.write_text(json.dumps(cfg.to_dict()))
    return str(path)


@pytest.fixture
def m1_config(tmp_path):
    return write_config(
        tmp_path, {**MODEL1_DEFAULT, "replicas": 30, "eps_ladder": [0.5, 0.02]}
    )


def test_validate_ok(m1_config, capsys):
    assert main(["validate", "--config", m1_config]) == 0
    assert "config OK" in capsys.readouterr().out


def test_validate_shipped_configs():
    for name in ("model1_default", "model2_linear", "model2_holder"):
        assert main(["validate", "--config", str(REPO / "configs" / f"{name}.toml")]) == 0


def test_validate_bad_config_exit_64(tmp_path, capsys):
    bad = dict(MODEL1_DEFAULT, replicas=0)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["validate", "--config", str(path)]) == 64
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exit_64(capsys):
    assert main(["validate", "--config", "/nonexistent/x.toml"]) == 64


def test_converge_model_mismatch_exit_64(m1_config):
    assert main(["converge", "--model", "2", "--config", m1_config]) == 64


def test_converge_writes_outputs_and_passes(m1_config, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["converge", "--model", "1", "--config", m1_config, "--out", str(out)])
    assert code == 0
    assert (out / "model1_convergence.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["replicas"] == 30
    assert "verdict: PASS" in capsys.readouterr().out


def test_converge_seed_override(m1_config, tmp_path):
    out1, out2, out3 = (tmp_path / n for n in ("a", "b", "c"))
    main(["converge", "--model", "1", "--config", m1_config, "--out", str(out1), "--seed", "7"])
    main(["converge", "--model", "1", "--config", m1_config, "--out", str(out2), "--seed", "7"])
    main(["converge", "--model", "1", "--config", m1_config, "--out", str(out3), "--seed", "8"])
    a = (out1 / "model1_convergence.csv").read_bytes()
    assert a == (out2 / "model1_convergence.csv").read_bytes()
    assert a != (out3 / "model1_convergence.csv").read_bytes()


def test_simulate_writes_trajectory(m1_config, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", m1_config, "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "time,xi,eta,u_norm_sq,v_norm_sq"
    assert len(lines) == 102  # T/h + 1 rows after the header


def test_average_writes_bbar(tmp_path):
    cfg = {
        **MODEL1_DEFAULT,
        "replicas": 4,
        "bbar_grid": [-1.0, 0.0, 1.0],
        "bbar_ergodic": {"T": 5.0, "burn_in": 0.5, "replicas": 4, "h": 0.02},
    }
    path = write_config(tmp_path, cfg)
    out = tmp_path / "avg"
    assert main(["average", "--config", path, "--out", str(out)]) == 0
    lines = (out / "bbar.csv").read_text().splitlines()
    assert lines[0] == "xi,estimate,stderr"
    assert len(lines) == 4


def test_check_subset_and_unknown(m1_config, capsys):
    assert main(["check", "--config", m1_config, "--checks", "hypotheses"]) == 0
    assert "PASS: hypotheses" in capsys.readouterr().out
    assert main(["check", "--config", m1_config, "--checks", "bogus"]) == 64


def test_check_empty_subset_exit_zero(m1_config, capsys):
    assert main(["check", "--config", m1_config, "--checks", ""]) == 0
    assert capsys.readouterr().out == ""


def test_toml_config_loads(tmp_path):
    cfg = load_config(str(REPO / "configs" / "model2_linear.toml"))
    assert cfg.model == 2
    assert cfg == ExperimentConfig.from_dict(MODEL2_LINEAR)
