"""Comparison harness: five modeling approaches on shared trajectories.

Each method produces one-step-ahead predictions over the same simulated
trajectory; reports collect per-channel max |error| and RMSE in km/h for
velocities and deg/s for yaw rate. Report files are deterministic given
(config, seed); per-method wall-clock timings stay on the in-memory report
and an optional sidecar, never in the deterministic files.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .adapt import AdapterConfig, adapt_run
from .koopman import KoopmanModel, one_step_predictions
from .scenarios import Scenario, make_scenario, run_scenario
from .vehicle import Trajectory, VehicleParams

MS_TO_KMH = 3.6
RAD_TO_DEG = 180.0 / np.pi
CHANNEL_NAMES = ("Vx", "Vy", "wr")
CHANNEL_UNITS = ("km/h", "km/h", "deg/s")
_UNIT_SCALE = np.array([MS_TO_KMH, MS_TO_KMH, RAD_TO_DEG])

REPORT_TABLE_HEADER = "method,channel,max,rmse"


@dataclass(frozen=True)
class ChannelMetrics:
    """Per-channel max |error| and RMSE; velocities in km/h, yaw rate in deg/s."""
    max_abs: tuple[float, float, float]
    rmse: tuple[float, float, float]

    def __post_init__(self):
        for mx, rm in zip(self.max_abs, self.rmse):
            if rm > mx + 1e-12:
                raise ValueError("RMSE cannot exceed the max error")


def metrics(predicted: np.ndarray, truth: np.ndarray) -> ChannelMetrics:
    """Error statistics between aligned (K, 3) predicted and true state series."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError("predicted/truth length mismatch")
    if predicted.shape[0] < 1:
        raise ValueError("need at least one sample")
    err = (predicted - truth) * _UNIT_SCALE
    return ChannelMetrics(
        max_abs=tuple(np.abs(err).max(axis=0)),
        rmse=tuple(np.sqrt(np.mean(err * err, axis=0))))


def error_series(predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-step signed errors in report units (km/h, km/h, deg/s)."""
    return (np.asarray(predicted) - np.asarray(truth)) * _UNIT_SCALE


# ---------------------------------------------------------------------------
# methods

METHOD_NAMES = ("PHYS-BASELINE", "DK", "ALDK", "ALDK-RLS", "ALDK-FFRLS",
                "ALDK-SWLS")


@dataclass(frozen=True)
class MethodSpec:
    """One comparison entry: a named approach plus what it needs to run."""
    name: str
    model: KoopmanModel | None = None
    adapter: AdapterConfig | None = None
    assumed_params: VehicleParams | None = None
    substeps: int = 1

    def __post_init__(self):
        if self.name.upper().startswith("PHYS"):
            if self.assumed_params is None:
                raise ValueError(f"{self.name}: physics baseline needs assumed params")
        elif self.model is None:
            raise ValueError(f"{self.name}: data-driven method needs a model")


def baseline_params(plant: VehicleParams = VehicleParams()) -> VehicleParams:
    """Default assumed params for the physics baseline: resistances unmodeled."""
    from dataclasses import replace
    return replace(plant, drag=0.0, roll=0.0)


def physics_baseline(params_assumed: VehicleParams,
                     trajectory: Trajectory,
                     substeps: int = 1) -> np.ndarray:
    """One-step-ahead predictions from the physical model under assumed params."""
    states = trajectory.states[:-1]
    inputs = trajectory.inputs[:-1]
    return _kernels.one_step_batch(
        np.ascontiguousarray(states), np.ascontiguousarray(inputs[:, 0]),
        np.ascontiguousarray(inputs[:, 1]), trajectory.dt, substeps,
        params_assumed.packed())


def run_method(spec: MethodSpec, trajectory: Trajectory) -> np.ndarray:
    """One-step-ahead predictions for steps 1..K-1 of the trajectory."""
    if spec.name.upper().startswith("PHYS"):
        return physics_baseline(spec.assumed_params, trajectory, spec.substeps)
    if spec.adapter is None or spec.adapter.mode == "frozen":
        return one_step_predictions(spec.model, trajectory.states[:-1],
                                    trajectory.inputs[:-1])
    return adapt_run(spec.model, trajectory, spec.adapter).predictions


# ---------------------------------------------------------------------------
# comparison reports

@dataclass
class MethodResult:
    name: str
    metrics: ChannelMetrics
    runtime_s: float
    trajectory_sha: str


@dataclass
class ComparisonReport:
    scenario_name: str
    scenario_fingerprint: str
    config_fingerprint: str
    results: list[MethodResult] = field(default_factory=list)
    errors_by_method: dict[str, np.ndarray] = field(default_factory=dict)


def _trajectory_sha(tr: Trajectory) -> str:
    h = hashlib.sha256()
    for arr in (tr.t, tr.states, tr.inputs, tr.accels):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def run_comparison(methods: list[MethodSpec], scenario: Scenario,
                   config_fingerprint: str = "") -> ComparisonReport:
    """Evaluate every method on one shared trajectory of the scenario."""
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique in a comparison")
    trajectory = run_scenario(scenario)
    sha = _trajectory_sha(trajectory)
    truth = trajectory.states[1:]
    report = ComparisonReport(scenario_name=scenario.name,
                              scenario_fingerprint=scenario.fingerprint(),
                              config_fingerprint=config_fingerprint)
    for spec in methods:
        t0 = time.perf_counter()
        preds = run_method(spec, trajectory)
        elapsed = time.perf_counter() - t0
        report.results.append(MethodResult(
            name=spec.name, metrics=metrics(preds, truth),
            runtime_s=elapsed, trajectory_sha=sha))
        report.errors_by_method[spec.name] = error_series(preds, truth)
    return report


def scenario_suite(base_duration: float = 120.0) -> list[Scenario]:
    """Canonical evaluation scenarios: nominal, mass/inertia perturbed,
    low-friction slalom, and an aggressive-cornering stand-in for extreme
    road geometry (the plant is planar, so geometry is emulated by inputs).
    """
    return [
        make_scenario("mixed", duration=base_duration),
        make_scenario("mixed", duration=base_duration, dm=160.0),
        make_scenario("mixed", duration=base_duration, dm=-170.0),
        make_scenario("mixed", duration=base_duration, dIz=142.0),
        make_scenario("mixed", duration=base_duration, dIz=-158.0),
        make_scenario("slalom"),
        make_scenario("aggressive"),
    ]


# ---------------------------------------------------------------------------
# report output

def format_report_table(report: ComparisonReport) -> str:
    """Aligned human-readable table, one row per method, Max/RMSE per channel."""
    lines = [f"Scenario: {report.scenario_name}  "
             f"[traj {report.results[0].trajectory_sha if report.results else '-'}]"]
    header = f"{'Estimation Error':<16s}"
    for name, unit in zip(CHANNEL_NAMES, CHANNEL_UNITS):
        header += f"  {name + ' (' + unit + ')':>18s}"
    lines.append(header)
    sub = f"{'':<16s}" + f"  {'Max/RMSE':>18s}" * 3
    lines.append(sub)
    for res in report.results:
        row = f"{res.name:<16s}"
        for mx, rm in zip(res.metrics.max_abs, res.metrics.rmse):
            row += f"  {f'{mx:.3f}/{rm:.3f}':>18s}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_report_files(report: ComparisonReport, table_path, machine_path,
                       series_path) -> None:
    """Write the aligned table, the machine-readable rows, and error series."""
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(format_report_table(report))
    with open(machine_path, "w", encoding="utf-8") as fh:
        fh.write(REPORT_TABLE_HEADER + "\n")
        for res in report.results:
            for ci, name in enumerate(CHANNEL_NAMES):
                fh.write("%s,%s,%.17g,%.17g\n"
                         % (res.name, name, res.metrics.max_abs[ci],
                            res.metrics.rmse[ci]))
    with open(series_path, "w", encoding="utf-8") as fh:
        fh.write("method,k,err_Vx_kmh,err_Vy_kmh,err_wr_degs\n")
        for res in report.results:
            err = report.errors_by_method[res.name]
            for k in range(err.shape[0]):
                fh.write("%s,%d,%.17g,%.17g,%.17g\n"
                         % (res.name, k + 1, err[k, 0], err[k, 1], err[k, 2]))


def write_timing_sidecar(report: ComparisonReport, path) -> None:
    """Non-deterministic wall-clock timings; excluded from determinism claims."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,runtime_s\n")
        for res in report.results:
            fh.write(f"{res.name},{res.runtime_s:.6f}\n")
