"""Discrete-event Monte Carlo of an actively quenched InGaAs/InP SPAD.

Two engines share the same device description:

``run_gated``
    Periodic AB detection gates, optionally followed by a CD afterpulse gate
    opened ``deadtime`` ns after the quench of every AB click (double-gate
    method). Photon, dark and charge-persistence candidates are pre-sampled
    per gate in vectorized chunks; gates without any candidate are skipped
    unless a trap release lands in them. Trap releases live in an
    :class:`~spadsim.events.EventQueue`.

``run_free``
    Free-running detector: active until a click, dead for ``deadtime`` ns,
    active again. Photons, darks, releases and charge-persistence clicks are
    all driven through one event queue.

Timing conventions: a click at onset ``t`` is quenched at
``min(t + reaction, gate_end) + closing``. Traps are filled at the quench
and the deadtime (and the CD gate delay) is counted from the quench.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .device_model import (
    AfterpulseModel,
    ChargePersistenceModel,
    QuenchTimingModel,
    charge_persistence_probability,
    scale_detrap_tau,
)
from .errors import ConfigurationError, UnsupportedConfigurationError
from .events import EventKind, EventQueue, substream
from .records import Cause, ClickStream, GateClass, RunSummary, tally

CHUNK_GATES = 1 << 16

# Photon arrival relative to AB gate opening, as a function of the gate width (ns).
PHOTON_OFFSET_PRESETS = {
    "front": lambda width: 2.0,
    "mid": lambda width: width / 2.0,
    "end": lambda width: width - 5.0,
    "before-gate": lambda width: -1.0,
}


@dataclass(frozen=True)
class GateSchedule:
    """Gate timing. Frequencies in Hz, times in ns.

    ``photon_offset`` is the photon arrival time relative to the AB gate
    opening; negative values mean the photons arrive before the gate. A
    preset name from :data:`PHOTON_OFFSET_PRESETS` is resolved on creation.
    ``cd_gate_width=None`` disables the afterpulse gate.
    """

    mode: str = "gated"
    gate_frequency: float = 1e4
    gate_width: float = 100.0
    deadtime: float = 800.0
    cd_gate_width: float | None = 100.0
    photon_offset: float | str = "mid"

    def __post_init__(self):
        if self.mode not in ("gated", "free_running"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not np.isfinite(self.deadtime) or self.deadtime < 0:
            raise ConfigurationError("deadtime must be >= 0 ns")
        if self.mode == "gated":
            if not self.gate_frequency > 0 or not self.gate_width > 0:
                raise ConfigurationError("gate_frequency and gate_width must be > 0")
            if self.gate_width * self.gate_frequency * 1e-9 >= 1:
                raise ConfigurationError(
                    "duty cycle gate_width * gate_frequency must be < 1")
            if self.cd_gate_width is not None and not self.cd_gate_width > 0:
                raise ConfigurationError("cd_gate_width must be > 0 ns")
        if isinstance(self.photon_offset, str):
            try:
                preset = PHOTON_OFFSET_PRESETS[self.photon_offset]
            except KeyError:
                raise ConfigurationError(
                    f"unknown photon_offset preset {self.photon_offset!r}") from None
            object.__setattr__(self, "photon_offset", float(preset(self.gate_width)))

    @property
    def period(self) -> float:
        return 1e9 / self.gate_frequency

    def replace(self, **changes) -> "GateSchedule":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PhotonSource:
    """Pulsed source (``mean_photon_number`` per gate) or CW source (``rate`` photons/s)."""

    kind: str = "pulsed"
    mean_photon_number: float = 1.0
    rate: float = 0.0
    pulse_fwhm: float = 0.2

    def __post_init__(self):
        if self.kind not in ("pulsed", "cw"):
            raise ConfigurationError(f"unknown source kind {self.kind!r}")
        if self.mean_photon_number < 0 or self.rate < 0 or self.pulse_fwhm < 0:
            raise ConfigurationError("photon numbers, rates and pulse width must be >= 0")

    @property
    def pulse_sigma(self) -> float:
        return self.pulse_fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))

    def replace(self, **changes) -> "PhotonSource":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class DeviceConfig:
    """Everything the simulator needs to know about the diode.

    ``dark_rate`` is in ns^-1. When ``thermal`` is given (any object with a
    ``dark_rate(T)`` method) :meth:`at_temperature` derives the dark rate from
    it. Traps carrying an activation energy are rescaled to ``temperature``.
    """

    detection_efficiency: float = 0.10
    dark_rate: float = 1.6e-6
    afterpulse: AfterpulseModel = AfterpulseModel()
    charge_persistence: ChargePersistenceModel = ChargePersistenceModel()
    quench_timing: QuenchTimingModel = QuenchTimingModel()
    temperature: float = 223.0
    timestamp_jitter: float = 0.0
    thermal: object = None

    def __post_init__(self):
        if not 0 <= self.detection_efficiency <= 1:
            raise ConfigurationError("detection_efficiency must lie in [0, 1]")
        if not np.isfinite(self.dark_rate) or self.dark_rate < 0:
            raise ConfigurationError("dark_rate must be >= 0 ns^-1")
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be > 0 K")
        if self.timestamp_jitter < 0:
            raise ConfigurationError("timestamp_jitter must be >= 0 ns")

    @property
    def trap_amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.afterpulse.traps], dtype=float)

    def detrap_taus(self) -> np.ndarray:
        """Detrapping time constants at the device temperature."""
        return np.array([
            scale_detrap_tau(t, self.temperature) if t.activation_energy is not None
            else t.detrap_tau
            for t in self.afterpulse.traps], dtype=float)

    def afterpulse_model(self, cd_gate_width: float | None = None) -> AfterpulseModel:
        """Closed-form afterpulse model at the device temperature (plain time constants)."""
        traps = tuple(dataclasses.replace(t, detrap_tau=tau, activation_energy=None,
                                          reference_temperature=None)
                      for t, tau in zip(self.afterpulse.traps, self.detrap_taus()))
        return AfterpulseModel(traps, self.afterpulse.avalanche_probability,
                               cd_gate_width or self.afterpulse.cd_gate_width)

    def at_temperature(self, temperature: float) -> "DeviceConfig":
        rate = self.dark_rate if self.thermal is None else float(self.thermal.dark_rate(temperature))
        return dataclasses.replace(self, temperature=float(temperature), dark_rate=rate)

    def replace(self, **changes) -> "DeviceConfig":
        return dataclasses.replace(self, **changes)


def relative_avalanche_charge(quench: QuenchTimingModel, onset_to_gate_end):
    """Avalanche charge relative to an untruncated quench.

    The excess bias stays full for the reaction time (or until the gate
    closes, if sooner) and then ramps linearly to zero over the closing time.
    Onsets after the gate end are clamped to the gate end.
    """
    d = np.maximum(np.asarray(onset_to_gate_end, dtype=float), 0.0)
    r, c = quench.reaction_time, quench.closing_time
    q = (np.minimum(r, d) + 0.5 * c) / (r + 0.5 * c)
    return float(q) if q.ndim == 0 else q


def quench_end(quench: QuenchTimingModel, onset: float, gate_end: float = np.inf) -> float:
    return min(onset + quench.reaction_time, gate_end) + quench.closing_time


def _check_device(device: DeviceConfig):
    if not isinstance(device, DeviceConfig):
        raise ConfigurationError("device must be a DeviceConfig")


class _Run:
    """State shared by both engines: random streams, trap reservoir, click log."""

    def __init__(self, device: DeviceConfig, schedule: GateSchedule, source: PhotonSource, seed: int):
        self.device, self.schedule, self.source, self.seed = device, schedule, source, int(seed)
        self.rng = {name: substream(seed, name) for name in
                    ("photons", "darks", "traps", "charge_persistence", "avalanche", "jitter")}
        self.queue = EventQueue()
        self.amps = device.trap_amplitudes
        self.taus = device.detrap_taus()
        self.eta_av = device.afterpulse.avalanche_probability
        self.quench = device.quench_timing
        self.dead_until = 0.0
        self.created = 0
        self.released = 0
        self._t, self._g, self._c, self._k, self._fill = [], [], [], [], []

    def coin(self) -> bool:
        return self.rng["avalanche"].random() < self.eta_av

    def click(self, t, gate_index, cause, gate_class, gate_end=np.inf) -> float:
        """Record a click at onset ``t``, fill the traps and return the quench end time."""
        t_q = quench_end(self.quench, t, gate_end)
        if len(self.amps):
            q = relative_avalanche_charge(self.quench, gate_end - t) if np.isfinite(gate_end) else 1.0
            counts = self.rng["traps"].poisson(self.amps * q)
            for species, n in enumerate(counts):
                if n:
                    for dt in self.rng["traps"].exponential(self.taus[species], n):
                        self.queue.push(t_q + dt, EventKind.RELEASE, species)
            self.created += int(counts.sum())
        else:
            counts = ()
        self._t.append(t)
        self._g.append(gate_index)
        self._c.append(cause)
        self._k.append(gate_class)
        self._fill.append(counts)
        return t_q

    def stream(self) -> ClickStream:
        n = len(self._t)
        filled = np.zeros((n, len(self.amps)), dtype=np.uint32)
        if len(self.amps):
            for i, f in enumerate(self._fill):
                filled[i] = f
        ts = np.asarray(self._t, dtype=float)
        sigma = self.device.timestamp_jitter
        if sigma > 0 and n:
            ts = ts + self.rng["jitter"].normal(0.0, sigma, n)
        return ClickStream(ts, np.asarray(self._g, dtype=np.int64), np.asarray(self._c, dtype=np.uint8),
                           np.asarray(self._k, dtype=np.uint8), filled)


class _GatedRun(_Run):

    def __init__(self, device, schedule, source, seed):
        super().__init__(device, schedule, source, seed)
        self.period = schedule.period
        self.width = schedule.gate_width
        self.n_triggered = 0
        self.n_cd = 0
        self.inhibited = 0
        self._counted_through = -1
        offset = schedule.photon_offset
        mu = source.mean_photon_number if source.kind == "pulsed" else 0.0
        self.mu = mu
        self.p_cp = 0.0
        if mu > 0 and offset <= 0:
            self.p_cp = float(charge_persistence_probability(device.charge_persistence, -offset, mu))

    # -- per-chunk stimulus ------------------------------------------------
    def _first_photon(self, m):
        dev, src, sch = self.device, self.source, self.schedule
        first = np.full(m, np.inf)
        mean = self.mu * dev.detection_efficiency
        sigma = src.pulse_sigma
        c = self.quench.closing_time
        lo, hi = sch.photon_offset - 10 * sigma, sch.photon_offset + 10 * sigma
        if mean <= 0 or hi < 0 or lo >= self.width + c:
            return first
        rng = self.rng["photons"]
        n = rng.poisson(mean, m)
        total = int(n.sum())
        if not total:
            return first
        gate = np.repeat(np.arange(m), n)
        t = sch.photon_offset + (rng.normal(0.0, sigma, total) if sigma > 0 else np.zeros(total))
        # excess bias seen by the photon: zero before the gate, ramping down after its end
        bias = np.where(t < 0, 0.0, np.clip(1.0 - (t - self.width) / c, 0.0, 1.0))
        ok = rng.random(total) < bias
        np.minimum.at(first, gate[ok], t[ok])
        return first

    def _stimulus(self, m):
        first = np.full(m, np.inf)
        cause = np.full(m, int(Cause.DARK), dtype=np.int8)
        r = self.device.dark_rate
        if r > 0:
            d = self.rng["darks"].exponential(1.0 / r, m)
            first = np.where(d < self.width, d, np.inf)
        p = self._first_photon(m)
        sel = p <= first
        first[sel] = p[sel]
        cause[sel & np.isfinite(p)] = int(Cause.PHOTON)
        if self.p_cp > 0:
            cp = self.rng["charge_persistence"].random(m) < self.p_cp
            first[cp] = 0.0
            cause[cp] = int(Cause.CHARGE_PERSISTENCE)
        return first, cause

    # -- dead-time bookkeeping ---------------------------------------------
    def _set_dead(self, until, gate_index):
        self.dead_until = until
        last = int(np.ceil(until / self.period)) - 1
        start = max(self._counted_through, gate_index)
        if last > start:
            self.inhibited += last - start
            self._counted_through = last

    # -- release handling ----------------------------------------------------
    def _releases_before(self, t_stop):
        """Process every release earlier than ``t_stop`` (which is a gate opening)."""
        q = self.queue
        while q.peek_time() < t_stop:
            t, _, _ = q.pop()
            self.released += 1
            k = int(t // self.period)
            t0 = k * self.period
            if t - t0 < self.width and t0 >= self.dead_until and self.coin():
                self._ab_click(t, k, Cause.AFTERPULSE)

    def _ab_click(self, t, k, cause):
        gate_end = k * self.period + self.width
        t_q = self.click(t, k, int(cause), int(GateClass.AB), gate_end)
        self.n_triggered += 1
        tau_d = self.schedule.deadtime
        w_cd = self.schedule.cd_gate_width
        if w_cd is None:
            self._set_dead(t_q + tau_d, k)
            return
        cd_open = t_q + tau_d
        cd_close = cd_open + w_cd
        self.n_cd += 1
        self._set_dead(cd_close, k)
        r = self.device.dark_rate
        t_dark = cd_open + self.rng["darks"].exponential(1.0 / r) if r > 0 else np.inf
        if t_dark >= cd_close:
            t_dark = np.inf
        q = self.queue
        t_hit, hit_cause = t_dark, Cause.DARK
        while q.peek_time() < min(t_dark, cd_close):
            t_rel, _, _ = q.pop()
            self.released += 1
            if t_rel >= cd_open and self.coin():
                t_hit, hit_cause = t_rel, Cause.AFTERPULSE
                break
        if np.isfinite(t_hit):
            t_q2 = self.click(t_hit, k, int(hit_cause), int(GateClass.CD), cd_close)
            self._set_dead(t_q2 + tau_d, k)

    def run(self, n_gates):
        period, width = self.period, self.width
        q = self.queue
        for start in range(0, n_gates, CHUNK_GATES):
            m = min(CHUNK_GATES, n_gates - start)
            first, cause = self._stimulus(m)
            for j in np.flatnonzero(np.isfinite(first)):
                k = start + int(j)
                t0 = k * period
                self._releases_before(t0)
                if t0 < self.dead_until:
                    continue
                t_cand = t0 + first[j]
                hit = False
                while q.peek_time() < min(t_cand, t0 + width):
                    t_rel, _, _ = q.pop()
                    self.released += 1
                    if self.coin():
                        self._ab_click(t_rel, k, Cause.AFTERPULSE)
                        hit = True
                        break
                if not hit:
                    self._ab_click(t_cand, k, Cause(cause[j]))
        end = n_gates * period
        self._releases_before(end)
        stream = self.stream()
        seconds = n_gates / self.schedule.gate_frequency
        n_ab = int(np.count_nonzero(stream.gate_class == GateClass.AB))
        n_cd = int(np.count_nonzero(stream.gate_class == GateClass.CD))
        remaining = q.count(EventKind.RELEASE)
        summary = RunSummary(
            mode="gated", seed=self.seed, n_gates=n_gates, duration_ns=end, counts=tally(stream),
            n_armed=n_gates - min(self.inhibited, n_gates), n_triggered=self.n_triggered,
            n_cd_gates=self.n_cd, C_DE=n_ab / seconds,
            C_AP=n_cd / seconds if self.schedule.cd_gate_width is not None else None,
            C_DC=n_ab / seconds if self.mu == 0 else None,
            n_gates_dark=n_gates if self.mu == 0 else 0,
            carriers_created=self.created, carriers_released=self.released,
            carriers_remaining=remaining)
        return stream, summary


class _FreeRun(_Run):

    def run(self, duration):
        dev, src = self.device, self.source
        q = self.queue
        tau_d = self.schedule.deadtime
        rate_ph = src.rate * 1e-9 if src.kind == "cw" else 0.0
        r = dev.dark_rate
        rng_ph, rng_dk = self.rng["photons"], self.rng["darks"]
        cp_model = dev.charge_persistence
        if rate_ph > 0:
            q.push(rng_ph.exponential(1.0 / rate_ph), EventKind.PHOTON)
        if r > 0:
            q.push(rng_dk.exponential(1.0 / r), EventKind.DARK)
        epoch = 0

        def fire(t, cause):
            nonlocal epoch
            self.click(t, -1, int(cause), int(GateClass.NONE))
            self.dead_until = t + tau_d
            epoch += 1

        while q and q.peek_time() < duration:
            t, kind, payload = q.pop()
            active = t >= self.dead_until
            if kind is EventKind.PHOTON:
                q.push(t + rng_ph.exponential(1.0 / rate_ph), EventKind.PHOTON)
                if active:
                    if rng_ph.random() < dev.detection_efficiency:
                        fire(t, Cause.PHOTON)
                elif cp_model.amplitude_per_photon > 0:
                    p = charge_persistence_probability(cp_model, self.dead_until - t, 1.0)
                    if self.rng["charge_persistence"].random() < p:
                        q.push(self.dead_until, EventKind.CHARGE_PERSISTENCE, epoch)
            elif kind is EventKind.DARK:
                q.push(t + rng_dk.exponential(1.0 / r), EventKind.DARK)
                if active:
                    fire(t, Cause.DARK)
            elif kind is EventKind.RELEASE:
                self.released += 1
                if active and self.coin():
                    fire(t, Cause.AFTERPULSE)
            elif kind is EventKind.CHARGE_PERSISTENCE:
                if payload == epoch and active:
                    fire(t, Cause.CHARGE_PERSISTENCE)
        stream = self.stream()
        summary = RunSummary(
            mode="free_running", seed=self.seed, duration_ns=float(duration), counts=tally(stream),
            carriers_created=self.created, carriers_released=self.released,
            carriers_remaining=q.count(EventKind.RELEASE))
        return stream, summary


def run_gated(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
              n_gates: int, seed: int):
    """Simulate ``n_gates`` gate periods; returns ``(ClickStream, RunSummary)``."""
    _check_device(device)
    if schedule.mode != "gated":
        raise ConfigurationError("run_gated requires a gated schedule")
    if int(n_gates) < 1:
        raise ConfigurationError("n_gates must be >= 1")
    if source.kind != "pulsed":
        raise ConfigurationError("gated runs use a pulsed source")
    return _GatedRun(device, schedule, source, seed).run(int(n_gates))


def run_free(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
             duration: float, seed: int):
    """Simulate ``duration`` ns of free-running operation; returns ``(ClickStream, RunSummary)``."""
    _check_device(device)
    if schedule.mode != "free_running":
        raise ConfigurationError("run_free requires a free_running schedule")
    if not duration > 0:
        raise ConfigurationError("duration must be > 0 ns")
    if source.kind != "cw" and source.mean_photon_number > 0:
        raise ConfigurationError("free-running runs use a CW source (or none)")
    return _FreeRun(device, schedule, source, seed).run(float(duration))


def inject_pre_gate_photons(device: DeviceConfig, schedule: GateSchedule, source: PhotonSource,
                            dt: float, n_gates: int, seed: int) -> RunSummary:
    """Gated run with the photon pulse ``dt`` ns before each gate opens.

    Charge-persistence clicks are reported separately in the summary counts
    under ``("AB", "charge_persistence")``.
    """
    if schedule.mode != "gated":
        raise UnsupportedConfigurationError("charge-persistence injection needs gated mode")
    if dt < 0:
        raise ConfigurationError("dt must be >= 0 ns")
    _, summary = run_gated(device, schedule.replace(photon_offset=-float(dt)), source, n_gates, seed)
    return summary
