"""Measurement procedures run on top of the simulator.

Each sweep performs one independent simulation per axis point. Per-point
seeds are derived from the master seed and the axis index only, so results
do not depend on ``jobs``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .device_model import (
    FreeRunningModel,
    afterpulse_probability,
    charge_persistence_probability,
    free_running_rate,
    integrated_afterpulse,
)
from .errors import ConfigurationError, DomainError, SaturationError
from .events import child_seeds
from .mc_sim import (
    DeviceConfig,
    GateSchedule,
    PhotonSource,
    inject_pre_gate_photons,
    run_free,
    run_gated,
)
from .records import Cause, GateClass, RunSummary

MIN_AFTERPULSE_DEADTIME = 800.0  # ns


@dataclass(frozen=True)
class DoubleGateEstimate:
    """Double-gate estimates with delta-method standard errors.

    ``P_DC`` and ``P_AP`` are per ns, ``P_DE`` is dimensionless. Out-of-range
    values are reported as-is with ``valid=False``; nothing is clamped.
    """

    P_DC: float
    P_AP: float
    P_DE: float
    se_P_DC: float
    se_P_AP: float
    se_P_DE: float
    valid: bool
    flags: tuple = ()
    inputs: dict = field(default_factory=dict)


def _binomial_se(p, n):
    if not n:
        return np.nan
    return float(np.sqrt(max(p * (1.0 - p), 0.0) / n))


def estimate_double_gate(summary: RunSummary, f: float, mu: float,
                         tau_ab: float, tau_cd: float) -> DoubleGateEstimate:
    """Invert the double-gate count rates into P_DC, P_AP and P_DE.

    ``summary`` must carry ``C_DC`` (from an unilluminated run), ``C_DE`` and
    ``C_AP``; all in Hz. ``f`` is the gate frequency in Hz, ``tau_ab`` and
    ``tau_cd`` the gate widths in ns.
    """
    c_dc, c_de = summary.C_DC, summary.C_DE
    c_ap = summary.C_AP if summary.C_AP is not None else np.nan
    if c_dc is None or c_de is None:
        raise ConfigurationError("summary must provide C_DC and C_DE")
    if c_dc >= f or c_de >= f:
        raise SaturationError(f"count rate reaches the gate frequency (C_DC={c_dc}, C_DE={c_de}, f={f})")
    flags = []
    p_dc, p_de = c_dc / f, c_de / f
    P_DC = c_dc / (f * tau_ab)
    if c_de > 0:
        P_AP = c_ap / (c_de * tau_cd)
    else:
        P_AP = np.nan
        flags.append("P_AP undefined: C_DE = 0")
    if mu > 0:
        P_DE = float(np.log((1.0 - p_dc) / (1.0 - p_de)) / mu)
    else:
        P_DE = np.nan
        flags.append("P_DE undefined: mu = 0")

    se_dc = _binomial_se(p_dc, summary.n_gates_dark)
    se_de = _binomial_se(p_de, summary.n_gates)
    n_trig = c_de * summary.n_gates / f
    se_ap = _binomial_se(P_AP * tau_cd, n_trig) / tau_cd if c_de > 0 else np.nan
    se_pde = (float(np.hypot(se_dc / (1.0 - p_dc), se_de / (1.0 - p_de)) / mu)
              if mu > 0 else np.nan)
    valid = bool(np.isfinite(P_DE) and 0.0 <= P_DE <= 1.0 and np.isfinite(P_AP))
    if np.isfinite(P_DE) and not 0.0 <= P_DE <= 1.0:
        flags.append("P_DE outside [0, 1]")
    return DoubleGateEstimate(
        P_DC=float(P_DC), P_AP=float(P_AP), P_DE=P_DE,
        se_P_DC=se_dc / tau_ab, se_P_AP=se_ap, se_P_DE=se_pde,
        valid=valid, flags=tuple(flags),
        inputs=dict(f=f, mu=mu, tau_AB=tau_ab, tau_CD=tau_cd, C_DC=c_dc, C_AP=c_ap, C_DE=c_de))


def expected_double_gate_rates(device: DeviceConfig, schedule: GateSchedule,
                               source: PhotonSource) -> tuple[float, float]:
    """Exact expected ``(C_DC, C_DE)`` in Hz for a trap-free device with in-gate photons."""
    p_dark = -np.expm1(-device.dark_rate * schedule.gate_width)
    f = schedule.gate_frequency
    c_de = f * (1.0 - np.exp(-source.mean_photon_number * device.detection_efficiency) * (1.0 - p_dark))
    return float(f * p_dark), float(c_de)


def measure_double_gate(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
                        n_gates: int, seed: int):
    """Illuminated run plus an unilluminated calibration run of the same length.

    Returns ``(DoubleGateEstimate, RunSummary)`` where the summary is the
    illuminated one with ``C_DC`` filled in from the dark run.
    """
    lit_seed, dark_seed = child_seeds(seed, 2)
    _, lit = run_gated(device, schedule, source, n_gates, lit_seed)
    _, dark = run_gated(device, schedule.replace(cd_gate_width=None),
                        source.replace(mean_photon_number=0.0), n_gates, dark_seed)
    merged = dataclasses.replace(lit, C_DC=dark.C_DC, n_gates_dark=dark.n_gates)
    est = estimate_double_gate(merged, schedule.gate_frequency, source.mean_photon_number,
                               schedule.gate_width, schedule.cd_gate_width or np.nan)
    return est, merged


# -- sweep plumbing -------------------------------------------------------------

def to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {"type": type(obj).__name__,
                **{f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_digest(*objects) -> str:
    blob = json.dumps(to_jsonable(list(objects)), sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SweepResult:
    """One row per axis point; ``rows[i]`` holds the measured quantities at ``values[i]``."""

    kind: str
    axis: str
    values: np.ndarray
    rows: list
    seeds: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        d = np.diff(self.values)
        if len(self.values) == 0 or not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigurationError(f"sweep axis {self.axis!r} must be non-empty and strictly monotone")
        if len(self.rows) != len(self.values) or len(self.seeds) != len(self.values):
            raise ConfigurationError("one row and one seed per axis point required")

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    @property
    def columns(self) -> list[str]:
        return [self.axis, *self.rows[0].keys(), "seed"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for v, row, s in zip(self.values, self.rows, self.seeds):
                writer.writerow([repr(float(v)), *(_fmt(x) for x in row.values()), s])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "axis": self.axis, "values": self.values.tolist(),
                "rows": to_jsonable(self.rows), "seeds": list(self.seeds),
                "metadata": to_jsonable(self.metadata)}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=repr)
            fh.write("\n")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _run_points(func, args_list, jobs):
    if jobs and jobs > 1 and len(args_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, *zip(*args_list)))
    return [func(*a) for a in args_list]


def _sweep(kind, axis, values, point_func, point_args, seed, jobs, metadata):
    values = list(values)
    seeds = child_seeds(seed, len(values))
    rows = _run_points(point_func, [(*point_args(v), s) for v, s in zip(values, seeds)], jobs)
    return SweepResult(kind, axis, np.asarray(values, float), rows, seeds,
                       {"master_seed": int(seed), **metadata})


# -- afterpulse vs deadtime -------------------------------------------------------

def _afterpulse_point(device, schedule, source, n_gates, seed):
    est, summ = measure_double_gate(device, schedule, source, n_gates, seed)
    model = device.afterpulse_model(schedule.cd_gate_width)
    return {
        "P_AP": est.P_AP, "se_P_AP": est.se_P_AP,
        "P_DE": est.P_DE, "se_P_DE": est.se_P_DE,
        "P_DC": est.P_DC, "se_P_DC": est.se_P_DC,
        "C_DC": est.inputs["C_DC"], "C_AP": est.inputs["C_AP"], "C_DE": est.inputs["C_DE"],
        "n_triggered": summ.n_triggered,
        "n_cd_clicks": summ.count(GateClass.CD),
        "P_AP_closed_form": float(afterpulse_probability(model, schedule.deadtime)),
    }


def sweep_afterpulse_vs_deadtime(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
                                 deadtimes, n_gates: int, seed: int, *,
                                 min_deadtime: float = MIN_AFTERPULSE_DEADTIME,
                                 jobs: int = 1) -> SweepResult:
    """Double-gate P_AP at each deadtime (ns)."""
    deadtimes = [float(t) for t in deadtimes]
    if not deadtimes:
        raise ConfigurationError("deadtime grid is empty")
    if schedule.cd_gate_width is None:
        raise ConfigurationError("afterpulse sweep needs a CD gate")
    if min(deadtimes) < min_deadtime:
        raise ConfigurationError(f"deadtimes below {min_deadtime} ns requested")
    return _sweep("afterpulse_sweep", "deadtime_ns", deadtimes, _afterpulse_point,
                  lambda t: (device, schedule.replace(deadtime=t), source, n_gates), seed, jobs,
                  {"config_digest": config_digest(device, schedule, source)})


# -- dark counts vs temperature -----------------------------------------------------

def _dark_point(device, schedule, n_gates, seed):
    _, summ = run_gated(device, schedule.replace(cd_gate_width=None),
                        PhotonSource(mean_photon_number=0.0), n_gates, seed)
    f, w = schedule.gate_frequency, schedule.gate_width
    p = summ.C_DC / f
    return {"P_DC": summ.C_DC / (f * w), "se_P_DC": _binomial_se(p, n_gates) / w,
            "C_DC": summ.C_DC, "n_dark": summ.count(GateClass.AB),
            "dark_rate_configured": device.dark_rate}


def sweep_dark_vs_temperature(device: DeviceConfig, schedule: GateSchedule, temperatures,
                              n_gates: int, seed: int, *, jobs: int = 1) -> SweepResult:
    """Unilluminated gated runs at each temperature (K); needs ``device.thermal``."""
    if device.thermal is None:
        raise ConfigurationError("device.thermal is required for a temperature sweep")
    temps = [float(t) for t in temperatures]
    return _sweep("arrhenius", "temperature_K", temps, _dark_point,
                  lambda t: (device.at_temperature(t), schedule, n_gates), seed, jobs,
                  {"config_digest": config_digest(device, schedule)})


# -- free running -------------------------------------------------------------------

TRIAL_RATE_HZ = 1e9  # one trial per ns when mapping CW light onto the per-trial rate model


def free_running_model(device: DeviceConfig, source: PhotonSource, deadtime: float,
                       horizon: float = 100_000.0, illuminated: bool = True) -> FreeRunningModel:
    """Rate-model inputs for CW light: one trial per ns, mean photon number ``rate * 1 ns``."""
    mu = source.rate / TRIAL_RATE_HZ if illuminated else 0.0
    ap = integrated_afterpulse(device.afterpulse_model(), deadtime, horizon) if deadtime < horizon else 0.0
    return FreeRunningModel(
        detection_efficiency=device.detection_efficiency,
        dark_probability=float(-np.expm1(-device.dark_rate * 1e9 / TRIAL_RATE_HZ)),
        mean_photon_number=mu, photon_rate=TRIAL_RATE_HZ, deadtime=deadtime,
        integrated_afterpulse=float(ap), integration_horizon=horizon)


def _rate_or_nan(model):
    # outside the dead-time correction's validity the model has no prediction
    try:
        return free_running_rate(model)
    except DomainError:
        return np.nan


def _free_point(device, schedule, source, duration, horizon, seed):
    lit_seed, dark_seed = child_seeds(seed, 2)
    _, lit = run_free(device, schedule, source, duration, lit_seed)
    _, dark = run_free(device, schedule, source.replace(rate=0.0), duration, dark_seed)
    seconds = duration * 1e-9
    model = free_running_model(device, source, schedule.deadtime, horizon)
    noise_model = free_running_model(device, source, schedule.deadtime, horizon, illuminated=False)
    return {
        "rate": lit.click_rate, "se_rate": np.sqrt(lit.total_clicks) / seconds,
        "noise_rate": dark.click_rate, "se_noise_rate": np.sqrt(dark.total_clicks) / seconds,
        "model_rate": _rate_or_nan(model),
        "model_noise_rate": _rate_or_nan(noise_model),
        "P_AP_bar": model.integrated_afterpulse,
        "afterpulse_fraction": lit.count(cause=Cause.AFTERPULSE) / max(lit.total_clicks, 1),
    }


def sweep_free_running(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
                       deadtimes, duration: float, seed: int, *, horizon: float = 100_000.0,
                       jobs: int = 1) -> SweepResult:
    """Detection and noise rates (Hz) versus deadtime, alongside the rate-model prediction."""
    if schedule.mode != "free_running":
        raise ConfigurationError("free-running sweep needs a free_running schedule")
    if source.kind != "cw":
        raise ConfigurationError("free-running sweep needs a CW source")
    return _sweep("free_running", "deadtime_ns", [float(t) for t in deadtimes], _free_point,
                  lambda t: (device, schedule.replace(deadtime=t), source, duration, horizon),
                  seed, jobs, {"config_digest": config_digest(device, schedule, source),
                               "duration_ns": duration, "horizon_ns": horizon})


# -- charge persistence ---------------------------------------------------------------

def _cp_point(device, schedule, source, dt, n_gates, seed):
    summ = inject_pre_gate_photons(device, schedule, source, dt, n_gates, seed)
    mu = source.mean_photon_number
    noise = summ.count(GateClass.AB) / n_gates
    cp = summ.count(GateClass.AB, Cause.CHARGE_PERSISTENCE) / n_gates
    dark_level = float(-np.expm1(-device.dark_rate * schedule.gate_width))
    cp_per_photon = cp / mu if mu > 0 else 0.0
    se = _binomial_se(cp, n_gates) / mu if mu > 0 else 0.0
    return {
        "noise_per_gate": noise,
        "normalized_noise": noise / mu if mu > 0 else np.nan,
        "cp_per_photon": cp_per_photon, "se_cp_per_photon": se,
        "dark_level": dark_level,
        "cp_fraction_of_dark": cp_per_photon / dark_level if dark_level > 0 else np.nan,
        "se_cp_fraction_of_dark": se / dark_level if dark_level > 0 else np.nan,
        "cp_model": float(charge_persistence_probability(device.charge_persistence, dt, 1.0)),
    }


def sweep_charge_persistence(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
                             offsets, n_gates: int, seed: int, *, jobs: int = 1) -> SweepResult:
    """Noise per gate versus how long (ns) before the gate the photons arrive."""
    if schedule.mode != "gated":
        raise ConfigurationError("charge-persistence sweep needs gated mode")
    offsets = [float(x) for x in offsets]
    if min(offsets) < 0:
        raise DomainError("photon-to-gate time differences must be >= 0 ns")
    return _sweep("charge_persistence", "photon_lead_ns", offsets, _cp_point,
                  lambda dt: (device, schedule, source, dt, n_gates), seed, jobs,
                  {"config_digest": config_digest(device, schedule, source)})


# -- quenching time ---------------------------------------------------------------------

def _quench_point(device, schedule, source, n_gates, seed):
    _, summ = run_gated(device, schedule, source, n_gates, seed)
    seconds = n_gates / schedule.gate_frequency
    n_ab, n_cd = summ.count(GateClass.AB), summ.count(GateClass.CD)
    # undo the per-gate Poisson saturation: mean avalanches per gate is linear in the acceptance
    frac = n_ab / n_gates
    mean = -np.log1p(-frac) if frac < 1 else np.inf
    se_mean = np.sqrt(max(n_ab, 1)) / n_gates / (1.0 - frac) if frac < 1 else np.inf
    return {"detection_rate": summ.C_DE, "se_detection_rate": np.sqrt(max(n_ab, 1)) / seconds,
            "detection_mean": mean, "se_detection_mean": se_mean,
            "afterpulse_rate": summ.C_AP, "se_afterpulse_rate": np.sqrt(max(n_cd, 1)) / seconds}


def sweep_quench_time(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
                      delays, n_gates: int, seed: int, *, deadtime: float = 5000.0,
                      jobs: int = 1) -> SweepResult:
    """Detection and afterpulse rates (Hz) versus photon delay relative to the AB gate end (ns)."""
    if schedule.mode != "gated" or schedule.cd_gate_width is None:
        raise ConfigurationError("quench-time sweep needs gated mode with a CD gate")
    delays = [float(d) for d in delays]
    c = device.quench_timing.closing_time
    if min(delays) > -3 * c or max(delays) < 3 * c:
        raise ConfigurationError(
            f"delay grid must span at least [-{3 * c}, {3 * c}] ns around the gate end")
    base = schedule.replace(deadtime=deadtime)
    return _sweep("quench_time", "delay_ns", delays, _quench_point,
                  lambda d: (device, base.replace(photon_offset=base.gate_width + d), source, n_gates),
                  seed, jobs, {"config_digest": config_digest(device, base, source),
                               "deadtime_ns": deadtime})
