"""Monte Carlo simulation and characterization toolkit for gated and free-running avalanche photodiodes."""

from .device_model import (
    K_BOLTZMANN_EV,
    AfterpulseModel,
    ChargePersistenceModel,
    FreeRunningModel,
    QuenchTimingModel,
    SegmentedThermalModel,
    ThermalModel,
    TrapSpecies,
    afterpulse_probability,
    charge_persistence_probability,
    dark_rate,
    detrapping_rate,
    free_running_rate,
    integrated_afterpulse,
    scale_detrap_tau,
)
from .errors import (
    ConfigurationError,
    DomainError,
    SaturationError,
    SpadSimError,
    UnsupportedConfigurationError,
)
from .fitters import (
    FitResult,
    FreeRunningCurve,
    fit_afterpulse_curve,
    fit_arrhenius,
    fit_free_running,
    fit_quench_timing,
    fit_s_curve,
)
from .mc_sim import (
    DeviceConfig,
    GateSchedule,
    PhotonSource,
    inject_pre_gate_photons,
    run_free,
    run_gated,
)
from .protocols import (
    DoubleGateEstimate,
    SweepResult,
    estimate_double_gate,
    measure_double_gate,
    sweep_afterpulse_vs_deadtime,
    sweep_charge_persistence,
    sweep_dark_vs_temperature,
    sweep_free_running,
    sweep_quench_time,
)
from .records import Cause, ClickStream, GateClass, RunSummary

__version__ = "0.1.0"
