import json

import numpy as np
import pytest

from spadsim.device_model import AfterpulseModel, TrapSpecies
from spadsim.errors import ConfigurationError, DomainError, SaturationError
from spadsim.mc_sim import DeviceConfig, GateSchedule, PhotonSource
from spadsim.protocols import (
    SweepResult,
    config_digest,
    estimate_double_gate,
    expected_double_gate_rates,
    measure_double_gate,
    sweep_afterpulse_vs_deadtime,
    sweep_charge_persistence,
    sweep_dark_vs_temperature,
    sweep_free_running,
    sweep_quench_time,
)
from spadsim.records import RunSummary

LN_099_OVER_090 = 0.09531017980432474  # mpmath, 30 digits


def _summary(c_dc, c_de, c_ap=0.0, n=10**6):
    return RunSummary("gated", 0, n_gates=n, n_gates_dark=n, C_DC=c_dc, C_DE=c_de, C_AP=c_ap)


def test_estimator_oracle():
    est = estimate_double_gate(_summary(100.0, 1000.0, 5.0), f=1e4, mu=1.0, tau_ab=100.0, tau_cd=100.0)
    assert est.P_DE == pytest.approx(LN_099_OVER_090, rel=1e-14)
    assert est.P_DC == pytest.approx(1e-4, rel=1e-14)
    assert est.P_AP == pytest.approx(5.0 / (1000.0 * 100.0), rel=1e-14)
    assert est.valid


@pytest.mark.parametrize("p_de,dark,mu", [(0.1, 1.6e-6, 1.0), (0.25, 1e-5, 0.3), (0.02, 0.0, 5.0)])
def test_exact_counts_invert_to_configuration(p_de, dark, mu):
    dev = DeviceConfig(detection_efficiency=p_de, dark_rate=dark)
    c_dc, c_de = expected_double_gate_rates(dev, GateSchedule(), PhotonSource(mean_photon_number=mu))
    est = estimate_double_gate(_summary(c_dc, c_de), 1e4, mu, 100.0, 100.0)
    assert est.P_DE == pytest.approx(p_de, rel=1e-12)
    configured = -np.expm1(-dark * 100.0) / 100.0
    assert est.P_DC == pytest.approx(configured, rel=1e-12, abs=1e-300)


def test_saturation_and_out_of_range_are_reported():
    with pytest.raises(SaturationError):
        estimate_double_gate(_summary(10.0, 1e4), 1e4, 1.0, 100.0, 100.0)
    est = estimate_double_gate(_summary(500.0, 100.0), 1e4, 1.0, 100.0, 100.0)
    assert est.P_DE < 0 and not est.valid
    assert any("outside" in f for f in est.flags)


def test_measure_double_gate_combines_dark_and_illuminated_runs():
    est, summ = measure_double_gate(DeviceConfig(), GateSchedule(), PhotonSource(), 200_000, 3)
    assert summ.n_gates_dark == 200_000 and summ.C_DC is not None
    assert abs(est.P_DE - 0.1) < 4 * est.se_P_DE


@pytest.mark.slow
def test_estimators_unbiased_over_many_seeds():
    dev = DeviceConfig(dark_rate=1e-5)
    p_de, p_dc = [], []
    for seed in range(50):
        est, _ = measure_double_gate(dev, GateSchedule(cd_gate_width=None), PhotonSource(), 50_000, seed)
        p_de.append(est.P_DE)
        p_dc.append(est.P_DC)
    for values, truth in ((p_de, 0.1), (p_dc, -np.expm1(-1e-3) / 100.0)):
        mean, se = np.mean(values), np.std(values, ddof=1) / np.sqrt(len(values))
        assert abs(mean - truth) < 2 * se + 1e-15


def test_sweep_result_rejects_non_monotone_axis():
    with pytest.raises(ConfigurationError):
        SweepResult("x", "deadtime_ns", [1.0, 3.0, 2.0], [{}, {}, {}], [0, 1, 2])
    with pytest.raises(ConfigurationError):
        SweepResult("x", "deadtime_ns", [], [], [])


def test_afterpulse_sweep_validation():
    dev = DeviceConfig(afterpulse=AfterpulseModel((TrapSpecies(0.2, 1000.0),)))
    with pytest.raises(ConfigurationError):
        sweep_afterpulse_vs_deadtime(dev, GateSchedule(), PhotonSource(), [500.0, 1000.0], 1000, 0)
    with pytest.raises(ConfigurationError):
        sweep_afterpulse_vs_deadtime(dev, GateSchedule(cd_gate_width=None), PhotonSource(),
                                     [800.0], 1000, 0)


def test_sweeps_are_independent_of_parallelism(tmp_path):
    dev = DeviceConfig(afterpulse=AfterpulseModel((TrapSpecies(0.5, 1000.0),)))
    grid = [800.0, 1600.0, 3200.0]
    serial = sweep_afterpulse_vs_deadtime(dev, GateSchedule(), PhotonSource(), grid, 20_000, 11)
    parallel = sweep_afterpulse_vs_deadtime(dev, GateSchedule(), PhotonSource(), grid, 20_000, 11, jobs=2)
    assert serial.rows == parallel.rows and serial.seeds == parallel.seeds
    serial.write_csv(tmp_path / "a.csv")
    parallel.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_sweep_serialization(tmp_path):
    dev = DeviceConfig(afterpulse=AfterpulseModel((TrapSpecies(0.5, 1000.0),)))
    res = sweep_afterpulse_vs_deadtime(dev, GateSchedule(), PhotonSource(), [800.0, 2000.0], 5000, 1)
    res.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",")[:2] == ["deadtime_ns", "P_AP"]
    assert len(lines) == 3
    res.write_json(tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["values"] == [800.0, 2000.0]
    assert data["metadata"]["config_digest"] == config_digest(dev, GateSchedule(), PhotonSource())


def test_afterpulse_sweep_decreases_with_deadtime():
    dev = DeviceConfig(dark_rate=0.0, afterpulse=AfterpulseModel((TrapSpecies(1.0, 1500.0),)))
    res = sweep_afterpulse_vs_deadtime(dev, GateSchedule(), PhotonSource(mean_photon_number=5.0),
                                       [800.0, 2000.0, 5000.0], 30_000, 4)
    p, se = res.column("P_AP"), res.column("se_P_AP")
    assert np.all(np.diff(p) < 3 * np.hypot(se[1:], se[:-1]))
    assert p[0] > p[-1]


def test_dark_sweep_needs_thermal_model_and_tracks_it():
    with pytest.raises(ConfigurationError):
        sweep_dark_vs_temperature(DeviceConfig(), GateSchedule(), [210.0, 220.0], 100, 0)
    from spadsim.device_model import ThermalModel
    dev = DeviceConfig(thermal=ThermalModel.calibrated(0.35, 223.0, 1e-5))
    res = sweep_dark_vs_temperature(dev, GateSchedule(), [210.0, 238.0], 100_000, 0)
    assert res.column("dark_rate_configured")[1] > res.column("dark_rate_configured")[0]
    assert res.column("P_DC")[1] > res.column("P_DC")[0]


def test_free_running_sweep_reports_model_alongside_measurement():
    dev = DeviceConfig(dark_rate=1e-6)
    sched = GateSchedule(mode="free_running")
    res = sweep_free_running(dev, sched, PhotonSource(kind="cw", rate=1e5), [0.0, 1000.0], 2e8, 2)
    rate, model = res.column("rate"), res.column("model_rate")
    se = res.column("se_rate")
    assert np.all(np.abs(rate - model) < 4 * se + 0.02 * model)
    with pytest.raises(ConfigurationError):
        sweep_free_running(dev, GateSchedule(), PhotonSource(kind="cw", rate=1e5), [0.0], 1e6, 0)


def test_charge_persistence_sweep_validation_and_decay():
    with pytest.raises(DomainError):
        sweep_charge_persistence(DeviceConfig(), GateSchedule(), PhotonSource(), [-1.0, 1.0], 100, 0)
    dev = DeviceConfig()
    dev = dev.replace(charge_persistence=dev.charge_persistence.calibrated(1.6e-4))
    res = sweep_charge_persistence(dev, GateSchedule(), PhotonSource(mean_photon_number=100.0),
                                   [0.0, 10.0], 50_000, 0)
    assert res.column("cp_per_photon")[0] > res.column("cp_per_photon")[1]


def test_quench_sweep_requires_wide_grid():
    with pytest.raises(ConfigurationError):
        sweep_quench_time(DeviceConfig(), GateSchedule(), PhotonSource(), [-1.0, 0.0, 1.0], 100, 0)


def test_quench_sweep_plateau_and_dark_floor():
    dev = DeviceConfig(dark_rate=1e-6)
    res = sweep_quench_time(dev, GateSchedule(), PhotonSource(), [-50.0, -3.0, 3.0, 10.0], 20_000, 0)
    det = res.column("detection_rate")
    assert det[0] == pytest.approx(det[1], rel=0.1)
    # far past the gate only dark counts remain
    assert det[-1] < 2.0


def test_equal_dark_and_detection_counts_give_zero_efficiency():
    est = estimate_double_gate(_summary(250.0, 250.0), 1e4, 1.0, 100.0, 100.0)
    assert est.P_DE == 0.0


def test_no_detections_leaves_afterpulse_undefined_and_flagged():
    est = estimate_double_gate(_summary(0.0, 0.0), 1e4, 1.0, 100.0, 100.0)
    assert not est.valid
    assert any("P_AP" in f for f in est.flags)


def test_no_traps_gives_afterpulse_at_the_dark_floor():
    dev = DeviceConfig(dark_rate=1.6e-6)
    res = sweep_afterpulse_vs_deadtime(dev, GateSchedule(), PhotonSource(mean_photon_number=20.0),
                                       [800.0, 5000.0], 50_000, 21)
    floor = -np.expm1(-1.6e-6 * 100.0) / 100.0
    assert np.all(np.abs(res.column("P_AP") - floor) < 4 * np.maximum(res.column("se_P_AP"), floor / 10))
