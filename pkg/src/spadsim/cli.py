"""Command-line experiment runner.

Exit codes: 0 success, 1 invalid spec, 2 runtime failure (including an
unwritable output directory), 3 a fit did not converge under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fitters
from .config import ExperimentSpec, load_spec
from .device_model import K_BOLTZMANN_EV, afterpulse_probability, charge_persistence_probability
from .errors import SpadSimError
from .protocols import (
    config_digest,
    free_running_model,
    measure_double_gate,
    sweep_afterpulse_vs_deadtime,
    sweep_charge_persistence,
    sweep_dark_vs_temperature,
    sweep_free_running,
    sweep_quench_time,
    to_jsonable,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_NONCONVERGED = 0, 1, 2, 3
PLOT_POINTS = 200


@dataclasses.dataclass
class ExperimentOutput:
    """Everything an experiment produces before it is written to disk."""

    result: dict
    table_columns: list
    table_rows: list
    fits: dict = dataclasses.field(default_factory=dict)
    plot_columns: list = dataclasses.field(default_factory=list)
    plot_rows: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return all(f.converged for f in self.fits.values())


def _provenance(spec: ExperimentSpec) -> dict:
    return {"kind": spec.kind, "seed": spec.seed,
            "device": to_jsonable(spec.device), "schedule": to_jsonable(spec.schedule),
            "source": to_jsonable(spec.source),
            "statistics": {"n_gates": spec.n_gates, "duration_ns": spec.duration_ns,
                           "horizon_ns": spec.horizon_ns},
            "sweep_values": list(spec.sweep_values), "fit": spec.fit,
            "config_digest": config_digest(spec.device, spec.schedule, spec.source)}


def _from_sweep(spec, sweep, fits=None, plot_columns=(), plot_rows=None):
    rows = [[float(v), *row.values(), s] for v, row, s in zip(sweep.values, sweep.rows, sweep.seeds)]
    return ExperimentOutput(
        result={"config": _provenance(spec), "sweep": sweep.to_dict(),
                "fits": {k: f.to_dict() for k, f in (fits or {}).items()}},
        table_columns=sweep.columns, table_rows=rows, fits=fits or {},
        plot_columns=list(plot_columns), plot_rows=plot_rows)


def _fit_enabled(spec):
    return spec.fit.get("enabled", True)


def _run_double_gate(spec, jobs):
    est, summary = measure_double_gate(spec.device, spec.schedule, spec.source, spec.n_gates, spec.seed)
    fields = ["P_DC", "se_P_DC", "P_AP", "se_P_AP", "P_DE", "se_P_DE", "valid"]
    row = [getattr(est, k) for k in fields]
    result = {"config": _provenance(spec), "estimate": to_jsonable(est), "summary": summary.to_dict()}
    return ExperimentOutput(result, fields, [row])


def _run_afterpulse(spec, jobs):
    sweep = sweep_afterpulse_vs_deadtime(spec.device, spec.schedule, spec.source, spec.sweep_values,
                                         spec.n_gates, spec.seed, jobs=jobs)
    tau = sweep.values
    tau_cd = spec.schedule.cd_gate_width
    # a point with no afterpulse counts still carries one count's worth of uncertainty
    floor = 1.0 / (np.maximum(sweep.column("n_triggered"), 1.0) * tau_cd)
    sigma = np.maximum(sweep.column("se_P_AP"), floor)
    fits = {}
    dense = np.geomspace(tau.min(), tau.max(), PLOT_POINTS)
    cols = ["deadtime_ns", "P_AP_closed_form"]
    data = [dense, np.atleast_1d(afterpulse_probability(spec.device.afterpulse_model(tau_cd), dense))]
    if _fit_enabled(spec):
        fit = fitters.fit_afterpulse_curve(tau, sweep.column("P_AP"), sigma,
                                           spec.fit.get("n_species", "auto"), tau_cd,
                                           spec.fit.get("max_species", 4))
        fits["afterpulse"] = fit
        cols.append("P_AP_fit")
        data.append(fitters.afterpulse_curve(fit.params, dense, tau_cd))
    return _from_sweep(spec, sweep, fits, cols, np.column_stack(data))


def _run_arrhenius(spec, jobs):
    sweep = sweep_dark_vs_temperature(spec.device, spec.schedule, spec.sweep_values,
                                      spec.n_gates, spec.seed, jobs=jobs)
    temps = sweep.values
    p, se = sweep.column("P_DC"), sweep.column("se_P_DC")
    fits = {}
    dense = np.linspace(temps.min(), temps.max(), PLOT_POINTS)
    cols = ["temperature_K", "inverse_kT_per_eV", "ln_P_DC_over_T2_configured"]
    data = [dense, 1.0 / (K_BOLTZMANN_EV * dense),
            np.log(spec.device.thermal.dark_rate(dense) / dense ** 2)]
    if _fit_enabled(spec):
        windows = spec.fit.get("windows_K") or [[float(temps.min()), float(temps.max())]]
        for i, window in enumerate(windows):
            fit = fitters.fit_arrhenius(temps, p, se, window)
            fits[f"window_{i}"] = fit
            cols.append(f"ln_P_DC_over_T2_fit_window_{i}")
            data.append(np.log(fit["prefactor"]) - fit["activation_energy"] * data[1])
    return _from_sweep(spec, sweep, fits, cols, np.column_stack(data))


def _run_free_running(spec, jobs):
    sweep = sweep_free_running(spec.device, spec.schedule, spec.source, spec.sweep_values,
                               spec.duration_ns, spec.seed, horizon=spec.horizon_ns, jobs=jobs)
    tau = sweep.values
    fits = {}
    dense = np.linspace(tau.min(), tau.max(), PLOT_POINTS)
    base = free_running_model(spec.device, spec.source, 0.0, spec.horizon_ns)
    traps = spec.device.afterpulse_model()
    configured = fitters.FreeRunningCurve(base, traps, ())
    cols = ["deadtime_ns", "model_rate_configured"]
    data = [dense, configured([], dense)]
    if _fit_enabled(spec):
        free = tuple(spec.fit.get("free", ["amplitudes"] if traps.traps else ["P_DE"]))
        curve = fitters.FreeRunningCurve(base, traps, free)
        fit = fitters.fit_free_running(tau, sweep.column("rate"),
                                       np.maximum(sweep.column("se_rate"), 1e-300), curve)
        fits["free_running"] = fit
        cols.append("model_rate_fit")
        data.append(curve(fit.params, dense))
    return _from_sweep(spec, sweep, fits, cols, np.column_stack(data))


def _run_charge_persistence(spec, jobs):
    sweep = sweep_charge_persistence(spec.device, spec.schedule, spec.source, spec.sweep_values,
                                     spec.n_gates, spec.seed, jobs=jobs)
    lead = sweep.values
    dense = np.linspace(lead.min(), lead.max(), PLOT_POINTS)
    dark = float(-np.expm1(-spec.device.dark_rate * spec.schedule.gate_width))
    cp = np.atleast_1d(charge_persistence_probability(spec.device.charge_persistence, dense, 1.0))
    cols = ["photon_lead_ns", "cp_per_photon_model", "dark_level"]
    return _from_sweep(spec, sweep, {}, cols, np.column_stack([dense, cp, np.full_like(dense, dark)]))


def _run_quench(spec, jobs):
    sweep = sweep_quench_time(spec.device, spec.schedule, spec.source, spec.sweep_values,
                              spec.n_gates, spec.seed, deadtime=spec.schedule.deadtime, jobs=jobs)
    delay = sweep.values
    fits, cols, data = {}, ["delay_ns"], [np.linspace(delay.min(), delay.max(), PLOT_POINTS)]
    extra = {}
    if _fit_enabled(spec):
        est, det, ap = fitters.fit_quench_timing(
            delay, sweep.column("detection_mean"), sweep.column("afterpulse_rate"),
            sweep.column("se_afterpulse_rate"), spec.source.pulse_sigma)
        fits = {"detection": det, "afterpulse": ap}
        extra = {"quench_timing": dataclasses.asdict(est)}
        cols += ["detection_mean_fit", "afterpulse_rate_fit"]
        data += [fitters.s_curve(det.params, data[0]), fitters.s_curve(ap.params, data[0])]
    out = _from_sweep(spec, sweep, fits, cols, np.column_stack(data))
    out.result.update(extra)
    return out


RUNNERS = {
    "double_gate": _run_double_gate,
    "afterpulse_sweep": _run_afterpulse,
    "arrhenius": _run_arrhenius,
    "free_running": _run_free_running,
    "charge_persistence": _run_charge_persistence,
    "quench_time": _run_quench,
}


def execute(spec: ExperimentSpec, jobs: int = 1) -> ExperimentOutput:
    """Run the experiment in memory."""
    return RUNNERS[spec.kind](spec, jobs)


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(x) for x in row])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True, default=repr)
        fh.write("\n")


def write_outputs(output: ExperimentOutput, out_dir) -> list:
    """Write ``sweep.csv``, ``result.json`` and, when present, ``fit_report.json`` and ``plot_data.csv``."""
    out = Path(out_dir)
    written = [out / "sweep.csv", out / "result.json"]
    _write_table(written[0], output.table_columns, output.table_rows)
    _write_json(written[1], output.result)
    if output.fits:
        written.append(out / "fit_report.json")
        _write_json(written[-1], {k: f.to_dict() for k, f in output.fits.items()})
    if output.plot_rows is not None:
        written.append(out / "plot_data.csv")
        _write_table(written[-1], output.plot_columns, output.plot_rows.tolist())
    return written


def run_experiment(spec: ExperimentSpec, out_dir, jobs: int = 1, strict: bool = False,
                   log=sys.stderr) -> int:
    """Run a validated spec and write its result files; returns the exit status."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise PermissionError(f"{out_dir} is not writable")
    except OSError as exc:
        print(f"error: cannot write output directory {out_dir}: {exc}", file=log)
        return EXIT_RUNTIME
    try:
        output = execute(spec, jobs)
    except SpadSimError as exc:
        print(f"error: {spec.kind} failed: {exc}", file=log)
        return EXIT_RUNTIME
    try:
        write_outputs(output, out_dir)
    except OSError as exc:
        print(f"error: writing results failed: {exc}", file=log)
        return EXIT_RUNTIME
    for name, fit in output.fits.items():
        for flag in fit.flags:
            print(f"warning: fit {name}: {flag}", file=log)
    if strict and not output.converged:
        print("error: a fit did not converge (strict mode)", file=log)
        return EXIT_NONCONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spadsim",
                                description="Run a detector-characterization experiment from a YAML spec.")
    p.add_argument("spec", help="experiment spec file (YAML)")
    p.add_argument("--validate", action="store_true", help="check the spec and exit without running")
    p.add_argument("--strict", action="store_true", help="exit with status 3 if any fit fails to converge")
    p.add_argument("--seed-override", type=int, default=None, metavar="SEED",
                   help="replace the spec's seed")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel sweep points")
    p.add_argument("--out-dir", default=None, help="output directory (default: spec output.dir)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec, diags = load_spec(args.spec)
    except OSError as exc:
        print(f"error: cannot read {args.spec}: {exc.strerror}", file=sys.stderr)
        return EXIT_VALIDATION
    for d in diags:
        print(f"{args.spec}: {d}", file=sys.stderr)
    if diags:
        return EXIT_VALIDATION
    if args.validate:
        print(f"{args.spec}: ok")
        return EXIT_OK
    if args.seed_override is not None:
        if args.seed_override < 0:
            print("error: --seed-override must be >= 0", file=sys.stderr)
            return EXIT_VALIDATION
        spec = dataclasses.replace(spec, seed=args.seed_override)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = args.out_dir or spec.output_dir or f"{Path(args.spec).stem}_out"
    status = run_experiment(spec, out_dir, args.jobs, args.strict)
    if status == EXIT_OK:
        print(f"wrote results to {out_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
