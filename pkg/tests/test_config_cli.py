import json
import subprocess
import sys
import textwrap
from importlib import resources

import pytest

from spadsim import cli, fitters
from spadsim.config import parse_spec, validate

BUNDLED = sorted(p for p in resources.files("spadsim").joinpath("experiments").iterdir()
                 if p.name.endswith(".yaml"))

SMALL_AFTERPULSE = textwrap.dedent("""\
    kind: afterpulse_sweep
    seed: 7
    device:
      detection_efficiency: 0.1
      dark_rate_per_ns: 0.0
      traps:
        - {amplitude: 1.0, detrap_tau_ns: 1500}
    schedule:
      mode: gated
      gate_frequency_Hz: 10000
      gate_width_ns: 100
      cd_gate_width_ns: 100
      deadtime_ns: 800
    source:
      kind: pulsed
      mean_photon_number: 5.0
    sweep:
      values: [800, 1500, 3000, 6000]
    statistics:
      n_gates: 4000
    fit:
      n_species: 1
    """)


def _diag(text):
    spec, diags = parse_spec(text)
    assert spec is None
    return diags


def test_bundled_specs_validate_cleanly():
    assert len(BUNDLED) == 7
    for path in BUNDLED:
        assert validate(path) == [], path.name


def test_small_spec_parses():
    spec, diags = parse_spec(SMALL_AFTERPULSE)
    assert diags == []
    assert spec.kind == "afterpulse_sweep" and spec.seed == 7
    assert list(spec.sweep_values) == [800.0, 1500.0, 3000.0, 6000.0]


def test_missing_seed_is_reported():
    diags = _diag(SMALL_AFTERPULSE.replace("seed: 7\n", ""))
    assert any(d.path == "seed" and "missing" in d.message for d in diags)


def test_duty_cycle_above_one_is_reported():
    diags = _diag(SMALL_AFTERPULSE.replace("gate_frequency_Hz: 10000", "gate_frequency_Hz: 2.0e+7"))
    assert any(d.path.startswith("schedule") for d in diags)


def test_negative_and_short_deadtimes_are_reported():
    diags = _diag(SMALL_AFTERPULSE.replace("values: [800, 1500, 3000, 6000]", "values: [400, 1500]"))
    assert any("800 ns" in d.message for d in diags)
    diags = _diag(SMALL_AFTERPULSE.replace("deadtime_ns: 800", "deadtime_ns: -5"))
    assert any(d.path == "schedule.deadtime_ns" for d in diags)


def test_unknown_kind_and_unknown_field():
    diags = _diag(SMALL_AFTERPULSE.replace("kind: afterpulse_sweep", "kind: telepathy"))
    assert any(d.path == "kind" and "telepathy" in d.message for d in diags)
    diags = _diag(SMALL_AFTERPULSE.replace("  mean_photon_number: 5.0", "  mean_photon_number: 5.0\n  colour: red"))
    bad = [d for d in diags if d.path == "source.colour"]
    assert bad and bad[0].line == 17


def test_parse_error_carries_a_line_number():
    diags = _diag("kind: double_gate\nseed: [1, 2\n")
    assert diags[0].line is not None and "parse error" in diags[0].message
    assert str(diags[0]).startswith(f"line {diags[0].line}:")


def test_type_error_is_not_also_reported_missing():
    diags = _diag(SMALL_AFTERPULSE.replace("n_gates: 4000", "n_gates: lots"))
    paths = [d.path for d in diags]
    assert paths.count("statistics.n_gates") == 1


def test_validate_flag_exits_zero_without_outputs(tmp_path, capsys):
    spec = tmp_path / "ok.yaml"
    spec.write_text(SMALL_AFTERPULSE)
    out = tmp_path / "out"
    assert cli.main([str(spec), "--validate", "--out-dir", str(out)]) == cli.EXIT_OK
    assert not out.exists()
    assert "ok" in capsys.readouterr().out


def test_invalid_spec_exits_one_and_writes_nothing(tmp_path, capsys):
    spec = tmp_path / "bad.yaml"
    spec.write_text(SMALL_AFTERPULSE.replace("seed: 7\n", ""))
    out = tmp_path / "out"
    assert cli.main([str(spec), "--out-dir", str(out)]) == cli.EXIT_VALIDATION
    assert not out.exists()
    assert "seed" in capsys.readouterr().err


def test_missing_spec_file_exits_one(tmp_path):
    assert cli.main([str(tmp_path / "nope.yaml")]) == cli.EXIT_VALIDATION


def test_unwritable_output_directory_exits_two(tmp_path):
    spec = tmp_path / "ok.yaml"
    spec.write_text(SMALL_AFTERPULSE)
    blocker = tmp_path / "a_file"
    blocker.write_text("")
    assert cli.main([str(spec), "--out-dir", str(blocker / "sub")]) == cli.EXIT_RUNTIME


def test_run_writes_result_files(tmp_path):
    spec = tmp_path / "ok.yaml"
    spec.write_text(SMALL_AFTERPULSE)
    out = tmp_path / "out"
    assert cli.main([str(spec), "--out-dir", str(out)]) == cli.EXIT_OK
    assert {p.name for p in out.iterdir()} == {"sweep.csv", "result.json", "fit_report.json", "plot_data.csv"}
    result = json.loads((out / "result.json").read_text())
    assert result["config"]["seed"] == 7
    report = json.loads((out / "fit_report.json").read_text())
    assert [q["name"] for q in report["afterpulse"]["parameters"]] == ["a_1", "dt_1"]
    header = (out / "sweep.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "deadtime_ns" and header[-1] == "seed"


def test_seed_override_changes_results_and_is_recorded(tmp_path):
    spec = tmp_path / "ok.yaml"
    spec.write_text(SMALL_AFTERPULSE)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main([str(spec), "--out-dir", str(a)]) == 0
    assert cli.main([str(spec), "--out-dir", str(b), "--seed-override", "7"]) == 0
    assert cli.main([str(spec), "--out-dir", str(c), "--seed-override", "8"]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert (a / "sweep.csv").read_bytes() != (c / "sweep.csv").read_bytes()
    assert json.loads((c / "result.json").read_text())["config"]["seed"] == 8


def test_strict_mode_exits_three_on_nonconvergence(tmp_path, monkeypatch):
    spec = tmp_path / "ok.yaml"
    spec.write_text(SMALL_AFTERPULSE)
    monkeypatch.setattr(fitters, "MAX_ITERATIONS", 1)
    assert cli.main([str(spec), "--out-dir", str(tmp_path / "lax")]) == cli.EXIT_OK
    assert cli.main([str(spec), "--out-dir", str(tmp_path / "strict"), "--strict"]) == cli.EXIT_NONCONVERGED
    # results are still written so the failed fit can be inspected
    assert (tmp_path / "strict" / "fit_report.json").exists()


@pytest.mark.parametrize("flag", ["--jobs=0", "--seed-override=-1"])
def test_bad_flag_values_exit_one(tmp_path, flag):
    spec = tmp_path / "ok.yaml"
    spec.write_text(SMALL_AFTERPULSE)
    assert cli.main([str(spec), flag, "--out-dir", str(tmp_path / "o")]) == cli.EXIT_VALIDATION


def test_module_entry_point(tmp_path):
    spec = tmp_path / "ok.yaml"
    spec.write_text(SMALL_AFTERPULSE)
    proc = subprocess.run([sys.executable, "-m", "spadsim", str(spec), "--validate"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout


def _bundled(name):
    return str(resources.files("spadsim").joinpath("experiments", name))


def test_double_gate_spec_reports_the_configured_efficiency(tmp_path):
    assert cli.main([_bundled("double_gate.yaml"), "--out-dir", str(tmp_path)]) == 0
    est = json.loads((tmp_path / "result.json").read_text())["estimate"]
    assert abs(est["P_DE"] - 0.10) < 3 * est["se_P_DE"]


@pytest.mark.slow
def test_three_species_afterpulse_spec_recovers_its_time_constants(tmp_path):
    assert cli.main([_bundled("afterpulse_three_species_210K.yaml"), "--out-dir", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "fit_report.json").read_text())["afterpulse"]
    taus = sorted(q["value"] for q in fit["parameters"] if q["name"].startswith("dt_"))
    assert taus == pytest.approx([615.0, 2560.0, 10135.0], rel=0.15)
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("deadtime_ns,P_AP") and len(rows) == 17
