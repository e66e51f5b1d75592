import csv

import numpy as np
import pytest

from sdmc.cli import main
from sdmc.codesign import read_sweep_csv
from sdmc.config import ConfigError, dump_config, load_config, parse_config, preset_text
from sdmc.simulator import read_envelope_csv, read_trajectory_csv


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_preset_exact_values(preset):
    ch = preset.channel
    assert ch.column(0, 0, 0).tolist() == [0.8, 0.2]
    assert ch.column(1, 1, 0).tolist() == [0.5, 0.5]
    assert ch.column(0, 1, 1).tolist() == [0.1, 0.9]
    assert preset.mdp.transitions[:, 0, 1].tolist() == [0.1, 0.9]
    assert preset.stability.L == 17.887 and preset.stability.zeta == 26.5415
    assert list(preset.stability.lambdas) == [1.0, 0.5]
    assert preset.lambda_bar == 0.64
    assert preset.plant.A[0].tolist() == [1.38, -0.2077, 6.715, -5.676]


def test_dump_roundtrip(preset):
    text = dump_config(preset)
    again = parse_config(text)
    assert dump_config(again) == text
    assert np.array_equal(again.channel.transitions, preset.channel.transitions)
    assert np.array_equal(again.plant.K, preset.plant.K)
    assert np.array_equal(again.costs.joint((2, 2, 2)), preset.costs.joint((2, 2, 2)))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(preset_text().replace("[sim]\n", "[sim]\nbogus = 1\n"))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(preset_text() + "\n[extra]\na = 1\n")


def test_missing_column_rejected():
    with pytest.raises(ConfigError, match="missing"):
        parse_config(preset_text().replace("r2/s2/L = 0.5 0.5\n", ""))


def test_validate_ok(capsys, tmp_path):
    code, out, _ = _run(capsys, "validate", "--out", str(tmp_path))
    assert code == 0 and "configuration valid" in out


def test_validate_non_stochastic_slice(capsys, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(preset_text().replace("r1/s2/H = 0.1 0.9", "r1/s2/H = 0.3 0.9"))
    code, _, err = _run(capsys, "validate", "--config", str(bad), "--out", str(tmp_path))
    assert code == 1
    assert "(0, 1, 1)" in err and "s2" in err


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as info:
        main(["validate", "--nope"])
    assert info.value.code == 2


def test_lambda_bar(capsys, tmp_path):
    code, out, _ = _run(capsys, "lambda-bar", "--out", str(tmp_path))
    assert code == 0 and "0.632455532" in out and "0.894427191" in out


def test_mati_prints_both(capsys, tmp_path):
    code, out, _ = _run(capsys, "mati", "--out", str(tmp_path))
    assert code == 0
    assert "bound" in out and "ode" in out.lower()
    assert "0.009850849" in out


def test_control_lp_codes(capsys, tmp_path):
    code, out, _ = _run(capsys, "control-lp", "--target", "0.5 0.5", "--out", str(tmp_path))
    assert code == 0 and "cost: 0.5" in out
    code, _, err = _run(capsys, "control-lp", "--target", "0 1", "--out", str(tmp_path))
    assert code == 2 and err


def test_codesign_lp_and_infeasible(capsys, tmp_path):
    code, out, _ = _run(capsys, "codesign", "--method", "lp", "--out", str(tmp_path))
    assert code == 0 and "cost: 1.557992593" in out
    path = tmp_path / "measure_lp.csv"
    rows = list(csv.DictReader(path.open()))
    assert sum(float(r["probability"]) for r in rows) == pytest.approx(1.0, abs=1e-9)
    code, _, _ = _run(capsys, "codesign", "--method", "lp", "--lambda-bar", "0.64", "--bound-form", "proof",
                      "--out", str(tmp_path / "x"))
    assert code == 2


def test_simulate_reproducible(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, out, _ = _run(capsys, "simulate", "--runs", "8", "--horizon", "1", "--out", str(d))
        assert code == 0
    for name in ("trajectory.csv", "envelope.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    traj = read_trajectory_csv(a / "trajectory.csv")
    env = read_envelope_csv(a / "envelope.csv")
    assert traj.t.size == env["t"].size == 101


def test_seed_override_changes_output(capsys, tmp_path):
    for d, seed in (("a", "1"), ("b", "2")):
        _run(capsys, "simulate", "--runs", "2", "--horizon", "0.5", "--seed", seed, "--out", str(tmp_path / d))
    assert (tmp_path / "a/envelope.csv").read_bytes() != (tmp_path / "b/envelope.csv").read_bytes()


def test_simulate_divergence_removes_outputs(capsys, tmp_path):
    cfg = tmp_path / "frozen.ini"
    text = preset_text()
    for k in ("r1/s1/L", "r1/s1/H", "r1/s2/L", "r1/s2/H", "r2/s1/L", "r2/s1/H", "r2/s2/L", "r2/s2/H"):
        text = "\n".join(f"{k} = 1 0" if line.startswith(k + " ") else line for line in text.split("\n"))
    cfg.write_text(text)
    out = tmp_path / "o"
    code, _, err = _run(capsys, "simulate", "--config", str(cfg), "--runs", "2", "--horizon", "30",
                        "--out", str(out))
    assert code == 3 and "diverged" in err
    assert not (out / "trajectory.csv").exists() and not (out / "envelope.csv").exists()


def test_mati_search_cli(capsys, tmp_path):
    code, out, _ = _run(capsys, "mati-search", "--runs", "20", "--out", str(tmp_path))
    assert code == 0 and "empirical MATI" in out
    code, _, _ = _run(capsys, "mati-search", "--runs", "5", "--rate-matrix", "1 1; 0 0", "--t-low", "0.001",
                      "--out", str(tmp_path))
    assert code == 3


def test_sweep_and_compare(capsys, tmp_path):
    code, _, _ = _run(capsys, "sweep-fading", "--from", "0", "--to", "0.05", "--step", "0.05",
                      "--out", str(tmp_path))
    assert code == 0
    rows = read_sweep_csv(tmp_path / "sweep_fading.csv")
    assert len(rows) == 2
    code, out, _ = _run(capsys, "sweep-fading", "--from", "0.5", "--to", "0.1", "--step", "0.05",
                        "--out", str(tmp_path))
    assert code == 1
    code, out, _ = _run(capsys, "compare", "--out", str(tmp_path))
    assert code == 0 and "separation" in out


def test_channel_from_fading(capsys, tmp_path):
    cfg = tmp_path / "fading.ini"
    cfg.write_text(preset_text() + "\n[fading]\npower_levels = 1 4\nshadowing = 1 0.3\nnoise_density = 1\n"
                   "bandwidth = 1\nsnr_thresholds = 0 1 inf\ndoppler = 10\npacket_period = 0.01\n")
    code, out, _ = _run(capsys, "channel-from-fading", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 0
    rows = list(csv.reader((tmp_path / "channel.csv").open()))
    assert len(rows) == 9
    for r in rows[1:]:
        assert sum(float(v) for v in r[3:]) == pytest.approx(1.0, abs=1e-9)


def test_output_env_var(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SDMC_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "--runs", "1", "--horizon", "0.1"]) == 0
    capsys.readouterr()
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_load_config_file(tmp_path, preset):
    p = tmp_path / "c.ini"
    p.write_text(preset_text())
    assert np.array_equal(load_config(p).channel.transitions, preset.channel.transitions)
