"""Closed-form device models for InGaAs/InP SPADs.

Everything here is deterministic and side-effect free. Time is in ns,
rates in ns^-1, temperatures in K and energies in eV, except for the
free-running count-rate model whose photon rate and output are in Hz.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

K_BOLTZMANN_EV = 8.617333262e-5  # eV / K


@dataclass(frozen=True)
class TrapSpecies:
    """One population of carrier traps.

    Parameters
    ----------
    amplitude : float
        Expected number of carriers trapped per avalanche (>= 0).
    detrap_tau : float
        Detrapping time constant in ns at ``reference_temperature``.
    activation_energy : float, optional
        Trapping activation energy in eV, used only for temperature scaling.
    reference_temperature : float, optional
        Temperature (K) at which ``detrap_tau`` was measured. Required when
        ``activation_energy`` is given.
    """

    amplitude: float
    detrap_tau: float
    activation_energy: float | None = None
    reference_temperature: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise ConfigurationError(f"trap amplitude must be >= 0, got {self.amplitude}")
        if not np.isfinite(self.detrap_tau) or self.detrap_tau <= 0:
            raise ConfigurationError(f"detrap_tau must be > 0 ns, got {self.detrap_tau}")
        if self.activation_energy is not None:
            if self.activation_energy < 0:
                raise ConfigurationError("trap activation_energy must be >= 0 eV")
            if self.reference_temperature is None:
                raise ConfigurationError(
                    "reference_temperature is required when activation_energy is set")
        if self.reference_temperature is not None and self.reference_temperature <= 0:
            raise ConfigurationError("reference_temperature must be > 0 K")


def check_traps(traps: Sequence[TrapSpecies]) -> tuple[TrapSpecies, ...]:
    """Return ``traps`` as a tuple after checking strict ascending order of time constants."""
    traps = tuple(traps)
    taus = [t.detrap_tau for t in traps]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ConfigurationError(
            f"trap list must be sorted by strictly increasing detrap_tau, got {taus}")
    return traps


@dataclass(frozen=True)
class ThermalModel:
    """Arrhenius-type dark rate ``A * T**2 * exp(-E_a / kT)`` in ns^-1."""

    activation_energy: float
    prefactor: float

    def __post_init__(self):
        if self.activation_energy < 0:
            raise ConfigurationError("activation_energy must be >= 0 eV")
        if not self.prefactor > 0:
            raise ConfigurationError("prefactor must be > 0")

    @classmethod
    def calibrated(cls, activation_energy: float, temperature: float, rate: float):
        """Build the model whose dark rate at ``temperature`` equals ``rate``."""
        if temperature <= 0 or rate <= 0:
            raise ConfigurationError("calibration temperature and rate must be > 0")
        a = rate / (temperature ** 2 * np.exp(-activation_energy / (K_BOLTZMANN_EV * temperature)))
        return cls(activation_energy, float(a))

    def dark_rate(self, temperature):
        return dark_rate(self, temperature)


@dataclass(frozen=True)
class SegmentedThermalModel:
    """Piecewise Arrhenius dark rate with a different activation energy per temperature window.

    ``segments`` is a sequence of ``(upper_temperature, ThermalModel)`` pairs in
    ascending order; the last segment extends to infinity.
    """

    segments: tuple

    def __post_init__(self):
        uppers = [u for u, _ in self.segments]
        if not self.segments or any(b <= a for a, b in zip(uppers, uppers[1:])):
            raise ConfigurationError("segments must be non-empty with ascending upper bounds")

    @classmethod
    def continuous(cls, cold_activation_energy, hot_activation_energy,
                   break_temperature, rate_at_break):
        """Two segments joined continuously at ``break_temperature``."""
        cold = ThermalModel.calibrated(cold_activation_energy, break_temperature, rate_at_break)
        hot = ThermalModel.calibrated(hot_activation_energy, break_temperature, rate_at_break)
        return cls(((break_temperature, cold), (np.inf, hot)))

    def dark_rate(self, temperature):
        t = np.asarray(temperature, dtype=float)
        out = np.empty_like(t)
        lower = -np.inf
        for upper, model in self.segments:
            sel = (t > lower) & (t <= upper)
            out[sel] = dark_rate(model, t[sel])
            lower = upper
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class AfterpulseModel:
    """Multiple-trapping afterpulse model probed with a CD gate of width ``cd_gate_width`` ns."""

    traps: tuple = ()
    avalanche_probability: float = 1.0
    cd_gate_width: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "traps", check_traps(self.traps))
        if not 0 < self.avalanche_probability <= 1:
            raise ConfigurationError("avalanche_probability must lie in (0, 1]")
        if not self.cd_gate_width > 0:
            raise ConfigurationError("cd_gate_width must be > 0 ns")

    @property
    def lumped_amplitudes(self) -> np.ndarray:
        """Products ``N_i * eta_av``; the only amplitude combination an afterpulse curve identifies."""
        return np.array([t.amplitude for t in self.traps]) * self.avalanche_probability

    @property
    def detrap_taus(self) -> np.ndarray:
        return np.array([t.detrap_tau for t in self.traps], dtype=float)


@dataclass(frozen=True)
class FreeRunningModel:
    """Inputs of the dead-time corrected free-running count-rate model.

    ``photon_rate`` is in Hz, ``deadtime`` and ``integration_horizon`` in ns.
    """

    detection_efficiency: float
    dark_probability: float
    mean_photon_number: float
    photon_rate: float
    deadtime: float
    integrated_afterpulse: float = 0.0
    integration_horizon: float = 100_000.0

    def __post_init__(self):
        if not 0 <= self.detection_efficiency <= 1:
            raise ConfigurationError("detection_efficiency must lie in [0, 1]")
        if not 0 <= self.dark_probability <= 1:
            raise ConfigurationError("dark_probability must lie in [0, 1]")
        if self.mean_photon_number < 0 or self.photon_rate < 0:
            raise ConfigurationError("mean_photon_number and photon_rate must be >= 0")
        if self.deadtime < 0 or self.integrated_afterpulse < 0:
            raise ConfigurationError("deadtime and integrated_afterpulse must be >= 0")

    @property
    def click_probability(self) -> float:
        """Per-trial click probability with Poisson photon statistics."""
        m = self.mean_photon_number * self.detection_efficiency
        return float(-np.expm1(-m) + np.exp(-m) * self.dark_probability)


@dataclass(frozen=True)
class ChargePersistenceModel:
    """Exponentially decaying charge-persistence click probability."""

    amplitude_per_photon: float = 0.0
    decay_tau: float = 1.5

    def __post_init__(self):
        if not 0 <= self.amplitude_per_photon <= 1:
            raise ConfigurationError("amplitude_per_photon must lie in [0, 1]")
        if not self.decay_tau > 0:
            raise ConfigurationError("decay_tau must be > 0 ns")

    @classmethod
    def calibrated(cls, dark_per_gate: float, fraction: float = 0.1,
                   at_offset: float = 1.0, decay_tau: float = 1.5):
        """Choose the amplitude so one photon arriving ``at_offset`` ns before the
        gate produces ``fraction`` of the per-gate dark probability."""
        amp = fraction * dark_per_gate * np.exp(at_offset / decay_tau)
        return cls(float(amp), decay_tau)


@dataclass(frozen=True)
class QuenchTimingModel:
    """Timing of the active-quench response after avalanche onset (ns)."""

    reaction_time: float = 0.2
    closing_time: float = 1.0
    jitter: float = 0.0

    def __post_init__(self):
        if self.reaction_time < 0:
            raise ConfigurationError("reaction_time must be >= 0 ns")
        if not self.closing_time > 0:
            raise ConfigurationError("closing_time must be > 0 ns")
        if self.jitter < 0:
            raise ConfigurationError("jitter must be >= 0 ns")


def _nonnegative_time(tau_d, name="tau_d"):
    t = np.asarray(tau_d, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DomainError(f"{name} must be >= 0 ns")
    return t


def _maybe_scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def detrapping_rate(traps: Sequence[TrapSpecies], tau_d):
    """Release rate ``sum_i N_i / dt_i * exp(-tau_d / dt_i)`` in ns^-1 after a delay ``tau_d``."""
    t = _nonnegative_time(tau_d)
    rate = np.zeros_like(t)
    for trap in traps:
        rate = rate + trap.amplitude / trap.detrap_tau * np.exp(-t / trap.detrap_tau)
    return _maybe_scalar(rate)


def afterpulse_probability(model: AfterpulseModel, tau_d):
    """Afterpulse probability per ns measured in a CD gate opened ``tau_d`` ns after the quench.

    Poisson statistics within the CD gate give
    ``(1 - exp(-R_AP(tau_d) * eta_av * tau_CD)) / tau_CD``.
    """
    r = np.asarray(detrapping_rate(model.traps, tau_d))
    mean = r * model.avalanche_probability * model.cd_gate_width
    return _maybe_scalar(-np.expm1(-mean) / model.cd_gate_width)


def scale_detrap_tau(trap: TrapSpecies, temperature):
    """Detrapping time constant at ``temperature`` from ``dt ~ exp(E_ta / kT) / T**2``."""
    if trap.activation_energy is None or trap.reference_temperature is None:
        raise ConfigurationError("trap has no activation_energy/reference_temperature to scale with")
    t = np.asarray(temperature, dtype=float)
    if np.any(t <= 0):
        raise DomainError("temperature must be > 0 K")
    t_ref = trap.reference_temperature
    log_ratio = (trap.activation_energy / K_BOLTZMANN_EV * (1.0 / t - 1.0 / t_ref)
                 + 2.0 * np.log(t_ref / t))
    return _maybe_scalar(trap.detrap_tau * np.exp(log_ratio))


def dark_rate(model: ThermalModel, temperature):
    """Dark count rate in ns^-1 at ``temperature``."""
    t = np.asarray(temperature, dtype=float)
    if np.any(t <= 0):
        raise DomainError("temperature must be > 0 K")
    return _maybe_scalar(
        model.prefactor * t ** 2 * np.exp(-model.activation_energy / (K_BOLTZMANN_EV * t)))


def free_running_rate(model: FreeRunningModel) -> float:
    """Free-running count rate in Hz, ``eta*N*(1 - eta*N*tau_d)*(1 + P_AP_bar)``.

    With ``mean_photon_number == 0`` this is the noise rate.
    """
    eta = model.click_probability
    load = eta * model.photon_rate * model.deadtime * 1e-9
    if load >= 1:
        raise DomainError(
            f"eta*N*tau_d = {load:.3g} >= 1, outside the validity of the dead-time correction")
    return float(eta * model.photon_rate * (1.0 - load) * (1.0 + model.integrated_afterpulse))


def integrated_afterpulse(model: AfterpulseModel, tau_d, horizon: float = 100_000.0):
    """Expected number of avalanche-triggering releases between ``tau_d`` and ``horizon`` ns.

    Closed form ``sum_i N_i * eta_av * (exp(-tau_d/dt_i) - exp(-horizon/dt_i))``.
    """
    t = _nonnegative_time(tau_d)
    if np.any(horizon <= t):
        raise DomainError("horizon must exceed tau_d")
    total = np.zeros_like(t)
    for trap in model.traps:
        total = total + trap.amplitude * (
            np.exp(-t / trap.detrap_tau) - np.exp(-horizon / trap.detrap_tau))
    return _maybe_scalar(total * model.avalanche_probability)


def charge_persistence_probability(model: ChargePersistenceModel, dt, mu):
    """Probability of a charge-persistence click at gate opening.

    ``dt`` is how long before the gate the photons arrived (ns), ``mu`` the mean
    photon number. Linear in ``mu`` until it saturates at 1.
    """
    dt = np.asarray(dt, dtype=float)
    p = np.minimum(1.0, np.asarray(mu, dtype=float) * model.amplitude_per_photon
                   * np.exp(-dt / model.decay_tau))
    return _maybe_scalar(p)
