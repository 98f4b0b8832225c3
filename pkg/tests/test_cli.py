import json
import re
import subprocess
import sys

import pytest

from afcsim.cli import main

ERROR_LINE = re.compile(r"^error: code=[A-Z_]+ exit=\d+ msg=\S.*$")


def run(args, capsys):
    status = main(args)
    out, err = capsys.readouterr()
    return status, out, err


def assert_single_error(err, code, status, expected_status):
    lines = err.strip().splitlines()
    assert len(lines) == 1 and ERROR_LINE.match(lines[0])
    assert f"code={code}" in lines[0]
    assert status == expected_status and f"exit={status}" in lines[0]


def test_selftest_passes(capsys):
    status, out, _ = run(["selftest", "--seed", "0"], capsys)
    assert status == 0
    assert out.count("PASS") >= 8 and "FAIL" not in out


def test_figure_4_paper_preset(tmp_path, capsys):
    status, out, _ = run(["figure", "4", "--preset", "paper", "--seed", "1", "--out", str(tmp_path)], capsys)
    assert status == 0
    g2 = json.loads((tmp_path / "fig4_g2.json").read_text())
    assert {"value", "std_error", "nonclassical", "point_nonclassical"} <= set(g2["g2_echo"])
    assert g2["pulses"] >= 1e8
    header = (tmp_path / "fig4_histogram.csv").read_text().splitlines()[0]
    assert header == "delay_ns,counts"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 1 and "fig4_g2.json" in manifest["files"]


def test_ideal_sweep_reaches_limit(tmp_path, capsys):
    status, out, _ = run(["comb", "--ideal-sweep", "--ods", "90", "100", "110", "--seed", "0",
                          "--out", str(tmp_path)], capsys)
    assert status == 0
    report = json.loads((tmp_path / "comb_ideal_sweep.json").read_text())
    assert report["max_numeric_efficiency"] == pytest.approx(0.541, abs=0.005)


def test_comb_and_store(tmp_path, capsys):
    assert run(["comb", "--preset", "paper", "--seed", "0", "--out", str(tmp_path / "c")], capsys)[0] == 0
    report = json.loads((tmp_path / "c" / "comb_report.json").read_text())
    assert report["analytic_efficiency"] == pytest.approx(0.01, rel=1e-6)
    assert report["band_averaged_efficiency"] == pytest.approx(0.003, rel=1e-3)
    assert run(["store", "--preset", "paper", "--seed", "0", "--out", str(tmp_path / "s")], capsys)[0] == 0
    echo = json.loads((tmp_path / "s" / "echo.json").read_text())
    assert echo["echo_efficiencies"][0][1] == pytest.approx(48.0)


def test_holeburn_and_g2(tmp_path, capsys):
    status, out, _ = run(["holeburn", "--seed", "4", "--out", str(tmp_path)], capsys)
    assert status == 0
    fits = json.loads((tmp_path / "holeburn_fits.json").read_text())
    assert fits["side_holes"]["93Nb"]["detuning_MHz"] == pytest.approx(1.15 * 19, abs=0.05)
    cfg = tmp_path / "g2.yaml"
    cfg.write_text("seed: 2\ntiming: {cycles: 1}\n")
    status, out, _ = run(["g2", "--config", str(cfg), "--preset", "paper", "--out", str(tmp_path / "g")], capsys)
    assert status == 0
    g2 = json.loads((tmp_path / "g" / "g2.json").read_text())
    assert g2["g2_source"]["value"] > 10


def test_output_root_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("AFCSIM_OUT", str(tmp_path / "env"))
    assert run(["figure", "3", "--seed", "0"], capsys)[0] == 0
    assert (tmp_path / "env" / "fig3_summary.json").exists()


def test_same_seed_same_bytes(tmp_path, capsys):
    for sub in ("a", "b"):
        run(["figure", "all", "--preset", "paper", "--seed", "3", "--out", str(tmp_path / sub)], capsys)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) >= 12
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# --- error paths ---------------------------------------------------------------------

def test_missing_seed(capsys):
    status, _, err = run(["comb"], capsys)
    assert_single_error(err, "USAGE", status, 64)


def test_unknown_subcommand(capsys):
    status, _, err = run(["frobnicate", "--seed", "1"], capsys)
    assert_single_error(err, "USAGE", status, 64)


def test_unknown_figure(capsys):
    status, _, err = run(["figure", "7", "--seed", "1"], capsys)
    assert_single_error(err, "USAGE", status, 64)


def test_invalid_config(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\ncomb:\n  finesse: 0.5\n")
    status, _, err = run(["comb", "--config", str(p)], capsys)
    assert_single_error(err, "CONFIG_INVALID", status, 2)
    assert "finesse" in err


def test_unknown_config_key(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nsource:\n  mu: 0.1\n")
    status, _, err = run(["g2", "--config", str(p)], capsys)
    assert_single_error(err, "CONFIG_INVALID", status, 2)


def test_resolution_error(tmp_path, capsys):
    p = tmp_path / "fine.yaml"
    p.write_text("seed: 1\ncomb: {finesse: 400, bandwidth: 20, delta: 5}\nexperiment: {relax: false}\n")
    status, _, err = run(["comb", "--config", str(p), "--out", str(tmp_path)], capsys)
    assert_single_error(err, "RESOLUTION", status, 4)


def test_insufficient_counts(tmp_path, capsys):
    p = tmp_path / "dark.yaml"
    p.write_text("seed: 1\nsource: {mean_pairs: 0.0, dark_rate_idler: 0}\n"
                 "timing: {store_ms: 1}\n")
    status, _, err = run(["g2", "--config", str(p), "--out", str(tmp_path)], capsys)
    assert_single_error(err, "INSUFFICIENT_COUNTS", status, 6)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "afcsim", "figure", "3", "--seed", "0", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "afcsim", "store"], capture_output=True, text=True)
    assert proc.returncode == 64 and ERROR_LINE.match(proc.stderr.strip())
