import json

import pytest

from hjlab.cli import main


def write(tmp_path, data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_verify_hr_pendulum(tmp_path):
    out = tmp_path / "out"
    assert main(["verify-hr", "--config", write(tmp_path, {"preset": "pendulum", "potential": "cos", "R": 5}), "--out", str(out)]) == 0
    rec = json.loads((out / "verification.json").read_text())
    assert rec["claims"]["min_eigenvalue"] > 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"verification.json", "config.resolved.json", "metadata.json"} <= set(manifest["files"])


def test_critical_value_zero(tmp_path):
    cfg = {"preset": "mechanical", "potential": "zero", "N": 128, "c_T": 2}
    out = tmp_path / "out"
    assert main(["critical-value", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert abs(json.loads((out / "critical_value.json").read_text())["c_est"]) < 1e-3


def test_evolve_writes_trace(tmp_path):
    cfg = {"preset": "pendulum", "potential": "cos", "N": 64, "T": 1, "initial_data": ["cosine"]}
    out = tmp_path / "out"
    assert main(["evolve", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    for name in ("trace.csv", "trace.json", "orbit.csv", "evolve.json"):
        assert (out / name).exists()


def test_regularity_rerun_is_byte_identical(tmp_path):
    cfg = {"preset": "mechanical", "potential": "zero", "N": 64, "T": 0.3, "c_T": 1, "initial_data": ["zero", "cosine"]}
    path = write(tmp_path, cfg)
    main(["regularity-experiment", "--config", path, "--out", str(tmp_path / "a")])
    main(["regularity-experiment", "--config", path, "--out", str(tmp_path / "b"), "--threads", "2"])
    for name in ("lip_series.csv", "regularity_report.json", "config.resolved.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_unknown_key_exit_one(tmp_path, capsys):
    assert main(["verify-hr", "--config", write(tmp_path, {"preset": "pendulum", "potential": "cos", "taus": 1})]) == 1
    assert "/taus" in capsys.readouterr().err


def test_missing_config_exit_one(tmp_path):
    assert main(["verify-hr", "--config", str(tmp_path / "nope.json")]) == 1


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        main(["fly", "--config", "x.json"])
