"""Compare simulated free-running count rates with the first-order rate model.

The model counts each afterpulse once. In the simulator afterpulses fill traps
too, so at short deadtimes cascades push the measured rate above the model.
At deadtimes a few times the longest detrapping time the two agree.

    python3 demos/free_running_cascades.py
"""

from spadsim import AfterpulseModel, DeviceConfig, GateSchedule, PhotonSource, TrapSpecies
from spadsim.protocols import sweep_free_running

traps = (TrapSpecies(0.3, 615.0), TrapSpecies(0.3, 2560.0), TrapSpecies(0.4, 10135.0))
device = DeviceConfig(dark_rate=1.6e-7, afterpulse=AfterpulseModel(traps))
schedule = GateSchedule(mode="free_running")
source = PhotonSource(kind="cw", rate=1e4)
deadtimes = [200.0, 500.0, 1000.0, 2000.0, 5000.0, 10_000.0, 20_000.0, 30_000.0, 50_000.0]

sweep = sweep_free_running(device, schedule, source, deadtimes, duration=1e10, seed=5)
print(f"{'deadtime ns':>12} {'measured Hz':>12} {'model Hz':>10} {'ratio':>7} {'afterpulse share':>17}")
for tau, row in zip(sweep.values, sweep.rows):
    print(f"{tau:12.0f} {row['rate']:12.1f} {row['model_rate']:10.1f} "
          f"{row['rate'] / row['model_rate']:7.3f} {row['afterpulse_fraction']:17.3f}")
