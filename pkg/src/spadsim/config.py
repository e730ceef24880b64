"""YAML experiment specifications with unit-suffixed keys.

A spec describes the device, gate schedule, photon source, sweep axis,
statistics, optional fit and output directory of one experiment. Every
problem found while reading it is reported as a :class:`Diagnostic` carrying
the YAML line and dotted field path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .device_model import (
    AfterpulseModel,
    ChargePersistenceModel,
    QuenchTimingModel,
    SegmentedThermalModel,
    ThermalModel,
    TrapSpecies,
)
from .errors import ConfigurationError
from .mc_sim import DeviceConfig, GateSchedule, PhotonSource

KINDS = ("double_gate", "afterpulse_sweep", "arrhenius", "free_running",
         "charge_persistence", "quench_time")

# sweep axis name and whether the statistics block needs n_gates or duration_ns
KIND_AXIS = {
    "double_gate": None,
    "afterpulse_sweep": "deadtime_ns",
    "arrhenius": "temperature_K",
    "free_running": "deadtime_ns",
    "charge_persistence": "photon_lead_ns",
    "quench_time": "delay_ns",
}


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str
    line: int | None = None

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.path}: {self.message}"


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    seed: int
    device: DeviceConfig
    schedule: GateSchedule
    source: PhotonSource
    sweep_values: tuple = ()
    n_gates: int | None = None
    duration_ns: float | None = None
    fit: dict = field(default_factory=dict)
    output_dir: str | None = None
    horizon_ns: float = 100_000.0

    @property
    def axis(self) -> str | None:
        return KIND_AXIS[self.kind]


def _line_map(text: str) -> dict:
    """Map dotted field paths to 1-based YAML line numbers."""
    lines = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                sub = f"{path}.{k.value}" if path else str(k.value)
                lines[sub] = k.start_mark.line + 1
                walk(v, sub)
                lines[sub] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    root = yaml.compose(text)
    if root is not None:
        walk(root, "")
    return lines


class _Reader:
    """Pulls typed fields out of nested dicts while collecting diagnostics."""

    def __init__(self, lines):
        self.lines = lines
        self.diags = []

    def error(self, path, message):
        line = self.lines.get(path)
        probe = path
        while line is None and probe:
            probe = probe.rsplit(".", 1)[0] if "." in probe else ""
            line = self.lines.get(probe)
        self.diags.append(Diagnostic(path, message, line))

    def section(self, data, key, path="", required=False):
        full = f"{path}.{key}" if path else key
        value = data.get(key) if isinstance(data, dict) else None
        if value is None:
            if required:
                self.error(full, "required section is missing")
            return {}, full
        if not isinstance(value, dict):
            self.error(full, "must be a mapping")
            return {}, full
        return value, full

    def allow(self, data, path, keys):
        for k in data:
            if k not in keys:
                self.error(f"{path}.{k}" if path else str(k),
                           f"unknown field (allowed: {', '.join(sorted(keys))})")

    def number(self, data, key, path, default=None, required=False, check=None, what=""):
        full = f"{path}.{key}" if path else key
        if key not in data or data[key] is None:
            if required:
                self.error(full, "mandatory field is missing")
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(full, f"must be a number, got {value!r}")
            return default
        if check is not None and not check(value):
            self.error(full, f"must be {what}, got {value!r}")
            return default
        return value


def _positive(x):
    return x > 0


def _nonnegative(x):
    return x >= 0


def _probability(x):
    return 0 <= x <= 1


def _read_traps(rd, dev, path):
    items = dev.get("traps", []) or []
    if not isinstance(items, list):
        rd.error(f"{path}.traps", "must be a list")
        return ()
    traps = []
    for i, item in enumerate(items):
        p = f"{path}.traps[{i}]"
        if not isinstance(item, dict):
            rd.error(p, "must be a mapping")
            continue
        rd.allow(item, p, {"amplitude", "detrap_tau_ns", "activation_energy_eV",
                           "reference_temperature_K"})
        amp = rd.number(item, "amplitude", p, required=True, check=_nonnegative, what=">= 0")
        tau = rd.number(item, "detrap_tau_ns", p, required=True, check=_positive, what="> 0 ns")
        e_ta = rd.number(item, "activation_energy_eV", p, check=_nonnegative, what=">= 0 eV")
        t_ref = rd.number(item, "reference_temperature_K", p, check=_positive, what="> 0 K")
        if amp is None or tau is None:
            continue
        try:
            traps.append(TrapSpecies(float(amp), float(tau),
                                     None if e_ta is None else float(e_ta),
                                     None if t_ref is None else float(t_ref)))
        except ConfigurationError as exc:
            rd.error(p, str(exc))
    return tuple(traps)


def _read_thermal(rd, dev, path):
    th, p = rd.section(dev, "thermal", path)
    if not th:
        return None
    rd.allow(th, p, {"activation_energy_eV", "calibration_temperature_K",
                     "calibration_dark_rate_per_ns", "hot_activation_energy_eV",
                     "break_temperature_K"})
    e_a = rd.number(th, "activation_energy_eV", p, required=True, check=_nonnegative, what=">= 0 eV")
    t_cal = rd.number(th, "calibration_temperature_K", p, required=True, check=_positive, what="> 0 K")
    r_cal = rd.number(th, "calibration_dark_rate_per_ns", p, required=True,
                      check=_positive, what="> 0 ns^-1")
    hot = rd.number(th, "hot_activation_energy_eV", p, check=_nonnegative, what=">= 0 eV")
    t_break = rd.number(th, "break_temperature_K", p, check=_positive, what="> 0 K")
    if None in (e_a, t_cal, r_cal):
        return None
    if hot is None:
        return ThermalModel.calibrated(e_a, t_cal, r_cal)
    if t_break is None:
        rd.error(f"{p}.break_temperature_K", "required with hot_activation_energy_eV")
        return None
    # carry the calibration point along its own segment to the break temperature
    anchor_energy = e_a if t_cal <= t_break else hot
    at_break = ThermalModel.calibrated(anchor_energy, t_cal, r_cal).dark_rate(t_break)
    return SegmentedThermalModel.continuous(e_a, hot, t_break, at_break)


def _read_device(rd, data):
    dev, p = rd.section(data, "device", required=True)
    rd.allow(dev, p, {"detection_efficiency", "dark_rate_per_ns", "temperature_K",
                      "timestamp_jitter_ns", "avalanche_probability", "traps",
                      "charge_persistence", "quench", "thermal"})
    eff = rd.number(dev, "detection_efficiency", p, 0.10, check=_probability, what="in [0, 1]")
    dark = rd.number(dev, "dark_rate_per_ns", p, 1.6e-6, check=_nonnegative, what=">= 0 ns^-1")
    temp = rd.number(dev, "temperature_K", p, 223.0, check=_positive, what="> 0 K")
    jitter = rd.number(dev, "timestamp_jitter_ns", p, 0.0, check=_nonnegative, what=">= 0 ns")
    eta_av = rd.number(dev, "avalanche_probability", p, 1.0,
                       check=lambda x: 0 < x <= 1, what="in (0, 1]")
    traps = _read_traps(rd, dev, p)
    thermal = _read_thermal(rd, dev, p)

    q, qp = rd.section(dev, "quench", p)
    rd.allow(q, qp, {"reaction_time_ns", "closing_time_ns", "jitter_ns"})
    quench = QuenchTimingModel(
        rd.number(q, "reaction_time_ns", qp, 0.2, check=_nonnegative, what=">= 0 ns"),
        rd.number(q, "closing_time_ns", qp, 1.0, check=_positive, what="> 0 ns"),
        rd.number(q, "jitter_ns", qp, 0.0, check=_nonnegative, what=">= 0 ns"))

    if thermal is not None and "dark_rate_per_ns" not in dev:
        dark = float(thermal.dark_rate(temp))

    c, cpath = rd.section(dev, "charge_persistence", p)
    rd.allow(c, cpath, {"amplitude_per_photon", "decay_tau_ns", "fraction_of_dark",
                        "at_lead_ns"})
    tau_cp = rd.number(c, "decay_tau_ns", cpath, 1.5, check=_positive, what="> 0 ns")
    if "fraction_of_dark" in c:
        frac = rd.number(c, "fraction_of_dark", cpath, 0.1, check=_nonnegative, what=">= 0")
        lead = rd.number(c, "at_lead_ns", cpath, 1.0, check=_nonnegative, what=">= 0 ns")
        width = (data.get("schedule") or {}).get("gate_width_ns", 100.0)
        per_gate = float(-np.expm1(-dark * float(width))) if isinstance(width, (int, float)) else 0.0
        cp = ChargePersistenceModel.calibrated(per_gate, frac, lead, tau_cp)
    else:
        cp = ChargePersistenceModel(
            rd.number(c, "amplitude_per_photon", cpath, 0.0, check=_probability, what="in [0, 1]"),
            tau_cp)

    try:
        ap = AfterpulseModel(traps, eta_av)
    except ConfigurationError as exc:
        rd.error(f"{p}.traps", str(exc))
        ap = AfterpulseModel()
    try:
        return DeviceConfig(eff, dark, ap, cp, quench, temp, jitter, thermal)
    except ConfigurationError as exc:
        rd.error(p, str(exc))
        return None


def _read_schedule(rd, data):
    s, p = rd.section(data, "schedule", required=True)
    rd.allow(s, p, {"mode", "gate_frequency_Hz", "gate_width_ns", "cd_gate_width_ns",
                    "deadtime_ns", "photon_offset", "photon_offset_ns"})
    mode = s.get("mode", "gated")
    if mode not in ("gated", "free_running"):
        rd.error(f"{p}.mode", f"must be 'gated' or 'free_running', got {mode!r}")
        mode = "gated"
    offset = s.get("photon_offset", "mid")
    if "photon_offset_ns" in s:
        offset = rd.number(s, "photon_offset_ns", p, 50.0)
    cd = s.get("cd_gate_width_ns", 100.0)
    if cd is not None:
        cd = rd.number(s, "cd_gate_width_ns", p, 100.0, check=_positive, what="> 0 ns")
    kwargs = dict(
        mode=mode,
        gate_frequency=rd.number(s, "gate_frequency_Hz", p, 1e4, check=_positive, what="> 0 Hz"),
        gate_width=rd.number(s, "gate_width_ns", p, 100.0, check=_positive, what="> 0 ns"),
        deadtime=rd.number(s, "deadtime_ns", p, 800.0, check=_nonnegative, what=">= 0 ns"),
        cd_gate_width=cd, photon_offset=offset)
    try:
        return GateSchedule(**kwargs)
    except ConfigurationError as exc:
        rd.error(p, str(exc))
        return None


def _read_source(rd, data):
    s, p = rd.section(data, "source")
    rd.allow(s, p, {"kind", "mean_photon_number", "rate_Hz", "pulse_fwhm_ns"})
    try:
        return PhotonSource(
            kind=s.get("kind", "pulsed"),
            mean_photon_number=rd.number(s, "mean_photon_number", p, 1.0,
                                         check=_nonnegative, what=">= 0"),
            rate=rd.number(s, "rate_Hz", p, 0.0, check=_nonnegative, what=">= 0 Hz"),
            pulse_fwhm=rd.number(s, "pulse_fwhm_ns", p, 0.2, check=_nonnegative, what=">= 0 ns"))
    except ConfigurationError as exc:
        rd.error(p, str(exc))
        return None


def _read_sweep(rd, data, axis):
    s, p = rd.section(data, "sweep", required=axis is not None)
    if axis is None:
        if s:
            rd.error(p, "double_gate experiments take no sweep")
        return ()
    rd.allow(s, p, {"axis", "values", "start", "stop", "num", "spacing"})
    if s and s.get("axis", axis) != axis:
        rd.error(f"{p}.axis", f"this experiment sweeps {axis!r}, got {s.get('axis')!r}")
    if "values" in s:
        vals = s["values"]
        if not isinstance(vals, list) or not vals or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            rd.error(f"{p}.values", "must be a non-empty list of numbers")
            return ()
        values = np.asarray(vals, dtype=float)
    elif s:
        start = rd.number(s, "start", p, required=True)
        stop = rd.number(s, "stop", p, required=True)
        num = rd.number(s, "num", p, required=True, check=lambda n: int(n) == n and n >= 1,
                        what="a positive integer")
        spacing = s.get("spacing", "linear")
        if spacing not in ("linear", "log"):
            rd.error(f"{p}.spacing", f"must be 'linear' or 'log', got {spacing!r}")
            return ()
        if None in (start, stop, num):
            return ()
        if spacing == "log" and (start <= 0 or stop <= 0):
            rd.error(p, "log spacing needs positive start and stop")
            return ()
        values = (np.geomspace if spacing == "log" else np.linspace)(start, stop, int(num))
    else:
        return ()
    d = np.diff(values)
    if not (np.all(d > 0) or np.all(d < 0)):
        rd.error(p, "sweep values must be strictly monotone")
    return tuple(float(v) for v in values)


def _check_kind(rd, spec_parts, kind):
    device, schedule, source, values, n_gates, duration = spec_parts
    if schedule is None or source is None or device is None:
        return
    gated = kind != "free_running"
    if gated and schedule.mode != "gated":
        rd.error("schedule.mode", f"{kind} needs gated mode")
    if not gated and schedule.mode != "free_running":
        rd.error("schedule.mode", "free_running experiments need mode: free_running")
    if gated and source.kind != "pulsed":
        rd.error("source.kind", f"{kind} needs a pulsed source")
    if not gated and source.kind != "cw":
        rd.error("source.kind", "free_running experiments need a cw source")
    reported = {d.path for d in rd.diags}
    if gated and n_gates is None and "statistics.n_gates" not in reported:
        rd.error("statistics.n_gates", "mandatory field is missing")
    if not gated and duration is None and "statistics.duration_ns" not in reported:
        rd.error("statistics.duration_ns", "mandatory field is missing")
    if kind in ("afterpulse_sweep", "quench_time", "double_gate") and schedule.cd_gate_width is None:
        rd.error("schedule.cd_gate_width_ns", f"{kind} needs a CD gate")
    if not values:
        return
    if kind == "afterpulse_sweep" and min(values) < 800.0:
        rd.error("sweep", "deadtimes below the 800 ns minimum")
    if kind in ("afterpulse_sweep", "free_running") and min(values) < 0:
        rd.error("sweep", "deadtimes must be >= 0 ns")
    if kind == "arrhenius":
        if device.thermal is None:
            rd.error("device.thermal", "arrhenius experiments need a thermal model")
        if min(values) <= 0:
            rd.error("sweep", "temperatures must be > 0 K")
    if kind == "charge_persistence" and min(values) < 0:
        rd.error("sweep", "photon lead times must be >= 0 ns")
    if kind == "quench_time":
        c = device.quench_timing.closing_time
        if min(values) > -3 * c or max(values) < 3 * c:
            rd.error("sweep", f"delay grid must span at least [-{3 * c}, {3 * c}] ns")


FIT_KEYS = {
    "double_gate": set(),
    "afterpulse_sweep": {"n_species", "max_species"},
    "arrhenius": {"windows_K"},
    "free_running": {"free"},
    "charge_persistence": set(),
    "quench_time": set(),
}


def _read_fit(rd, data, kind):
    f, p = rd.section(data, "fit")
    if not f:
        return {}
    rd.allow(f, p, FIT_KEYS[kind] | {"enabled"})
    if kind == "afterpulse_sweep" and "n_species" in f:
        n = f["n_species"]
        if n != "auto" and not (isinstance(n, int) and not isinstance(n, bool) and n >= 1):
            rd.error(f"{p}.n_species", f"must be 'auto' or a positive integer, got {n!r}")
    if kind == "arrhenius" and "windows_K" in f:
        w = f["windows_K"]
        if not isinstance(w, list) or not all(isinstance(x, list) and len(x) == 2 for x in w):
            rd.error(f"{p}.windows_K", "must be a list of [low, high] pairs")
    if kind == "free_running" and "free" in f:
        free = f["free"]
        if not isinstance(free, list) or not set(free) <= {"P_DE", "P_DC", "amplitudes"} or not free:
            rd.error(f"{p}.free", "must be a non-empty subset of [P_DE, P_DC, amplitudes]")
    return dict(f)


def parse_spec(text: str):
    """Parse YAML text into ``(ExperimentSpec or None, [Diagnostic])``."""
    try:
        data = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        return None, [Diagnostic("<document>", f"YAML parse error: {getattr(exc, 'problem', exc)}", line)]
    if not isinstance(data, dict):
        return None, [Diagnostic("<document>", "top level must be a mapping", 1)]
    rd = _Reader(lines)
    rd.allow(data, "", {"kind", "seed", "device", "schedule", "source", "sweep",
                        "statistics", "fit", "output", "description"})
    kind = data.get("kind")
    if kind not in KINDS:
        rd.error("kind", f"unknown experiment kind {kind!r} (expected one of {', '.join(KINDS)})")
        return None, rd.diags
    seed = data.get("seed")
    if seed is None:
        rd.error("seed", "mandatory field is missing")
    elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        rd.error("seed", f"must be a non-negative integer, got {seed!r}")

    device = _read_device(rd, data)
    schedule = _read_schedule(rd, data)
    source = _read_source(rd, data)
    values = _read_sweep(rd, data, KIND_AXIS[kind])

    st, sp = rd.section(data, "statistics", required=True)
    rd.allow(st, sp, {"n_gates", "duration_ns", "horizon_ns"})
    n_gates = rd.number(st, "n_gates", sp, check=lambda n: int(n) == n and n >= 1,
                        what="a positive integer")
    duration = rd.number(st, "duration_ns", sp, check=_positive, what="> 0 ns")
    horizon = rd.number(st, "horizon_ns", sp, 100_000.0, check=_positive, what="> 0 ns")
    _check_kind(rd, (device, schedule, source, values, n_gates, duration), kind)
    fit = _read_fit(rd, data, kind)

    out, op = rd.section(data, "output")
    rd.allow(out, op, {"dir"})
    if rd.diags:
        return None, rd.diags
    spec = ExperimentSpec(
        kind=kind, seed=int(seed), device=device, schedule=schedule, source=source,
        sweep_values=values, n_gates=None if n_gates is None else int(n_gates),
        duration_ns=None if duration is None else float(duration), fit=fit,
        output_dir=out.get("dir"), horizon_ns=float(horizon))
    return spec, []


def load_spec(path):
    """Read and parse a spec file; returns ``(spec or None, diagnostics)``."""
    with open(path) as fh:
        return parse_spec(fh.read())


def validate(path) -> list:
    """Full validation without execution; an empty list means the spec can run."""
    try:
        return load_spec(path)[1]
    except OSError as exc:
        return [Diagnostic(str(path), f"cannot read spec file: {exc.strerror}")]
