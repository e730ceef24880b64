"""Estimate dark-count, afterpulse and detection probabilities with the double-gate method.

A simulated detector with known parameters is measured the way a bench
experiment would be: an illuminated run with AB and CD gates plus a dark run.
The estimates are then compared with the configuration.

    python3 demos/double_gate_walkthrough.py
"""

import numpy as np

from spadsim import AfterpulseModel, DeviceConfig, GateSchedule, PhotonSource, TrapSpecies
from spadsim.device_model import afterpulse_probability
from spadsim.protocols import measure_double_gate

device = DeviceConfig(
    detection_efficiency=0.10,
    dark_rate=1.6e-6,  # per ns
    afterpulse=AfterpulseModel((TrapSpecies(0.2, 860.0), TrapSpecies(0.2, 4385.0))),
)
schedule = GateSchedule(gate_frequency=1e4, gate_width=100.0, cd_gate_width=100.0, deadtime=800.0)
source = PhotonSource(mean_photon_number=1.0)

est, summary = measure_double_gate(device, schedule, source, n_gates=300_000, seed=1)

print(f"gates: {summary.n_gates} illuminated, {summary.n_gates_dark} dark")
print(f"count rates (Hz): C_DC {summary.C_DC:.2f}  C_DE {summary.C_DE:.2f}  C_AP {summary.C_AP:.3f}")
print()
truth_dc = -np.expm1(-device.dark_rate * schedule.gate_width) / schedule.gate_width
truth_ap = afterpulse_probability(device.afterpulse_model(schedule.cd_gate_width), schedule.deadtime)
for name, value, se, truth in (("P_DE", est.P_DE, est.se_P_DE, device.detection_efficiency),
                               ("P_DC", est.P_DC, est.se_P_DC, truth_dc),
                               ("P_AP", est.P_AP, est.se_P_AP, truth_ap)):
    print(f"{name}: {value:.4e} +- {se:.1e}   configured {truth:.4e}   z = {(value - truth) / se:+.2f}")
print()
print("P_AP is per ns of CD gate. The configured value is the point-rate closed form; the simulator")
print("integrates releases over the gate, which on average sits a few percent lower for these traps.")
