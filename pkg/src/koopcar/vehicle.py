"""Planar four-wheel vehicle simulator.

State is x = [Vx, Vy, wr] (longitudinal velocity, lateral velocity, yaw rate),
input is u = [T, delta_f] (total driving torque, front steering angle). The
model uses magic-formula lateral tires on static normal loads, an even torque
split across four wheels, and lumped rolling/aero resistance. Body-frame
sensor accelerations accompany every emitted snapshot.

All operations are pure; trajectories are deterministic functions of the
scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from ._kernels import GRAVITY, PV_SIZE

VALIDITY_FLOOR = 0.1  # m/s; slip angles degenerate at standstill
MAX_STEER = math.pi / 4

TRAJECTORY_HEADER = "t,Vx,Vy,wr,T,delta_f,ax,ay"


@dataclass(frozen=True)
class MagicFormulaParams:
    """Shape factors of the lateral-force curve."""
    b_stiff: float = 10.0
    c_shape: float = 1.9
    d_peak_scale: float = 1.0
    e_curv: float = 0.97

    def __post_init__(self):
        if not (self.b_stiff > 0 and self.c_shape > 0):
            raise ValueError("tire stiffness and shape factors must be positive")
        if not (0 < self.d_peak_scale <= 1.2):
            raise ValueError("d_peak_scale must be in (0, 1.2]")
        if not (self.e_curv < 1):
            raise ValueError("e_curv must be < 1")


@dataclass(frozen=True)
class VehicleParams:
    """Plant parameters; defaults follow a ~2 t four-wheel-driven passenger car."""
    m: float = 2070.0          # mass [kg]
    Iz: float = 3658.0         # yaw inertia [kg m^2]
    lf: float = 1.315          # c.g. to front axle [m]
    lr: float = 1.355          # c.g. to rear axle [m]
    wB: float = 1.715          # track width [m]
    rw: float = 0.325          # wheel radius [m]
    mu: float = 0.85           # road adhesion coefficient
    tire: MagicFormulaParams = field(default_factory=MagicFormulaParams)
    drag: float = 0.38         # CdA*rho/2 lump [N s^2/m^2]
    roll: float = 0.015        # rolling resistance coefficient
    max_torque: float = 4000.0

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lr", "wB", "rw"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.mu <= 1.2):
            raise ValueError("mu must be in (0, 1.2]")

    def packed(self) -> np.ndarray:
        """Flat float64 vector consumed by the kernels."""
        pv = np.empty(PV_SIZE)
        pv[:] = (self.m, self.Iz, self.lf, self.lr, self.wB, self.rw, self.mu,
                 self.tire.b_stiff, self.tire.c_shape, self.tire.d_peak_scale,
                 self.tire.e_curv, self.drag, self.roll)
        return pv

    def perturbed(self, dm: float = 0.0, dIz: float = 0.0) -> "VehicleParams":
        """Copy with mass/inertia deltas (robustness-test knobs)."""
        return replace(self, m=self.m + dm, Iz=self.Iz + dIz)


@dataclass(frozen=True)
class VehicleState:
    Vx: float
    Vy: float = 0.0
    wr: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.Vx, self.Vy, self.wr])


@dataclass(frozen=True)
class ControlInput:
    T: float
    delta_f: float = 0.0

    def __post_init__(self):
        if not (abs(self.delta_f) <= MAX_STEER):
            raise ValueError("steering angle out of range")


@dataclass(frozen=True)
class Snapshot:
    """One timestamped sample: state, held input, and body-frame accelerations."""
    t: float
    state: VehicleState
    input: ControlInput
    ax: float
    ay: float


class ModelValidityError(ValueError):
    """Raised when the state leaves the model's validity region (Vx at the floor)."""


def _check_state(vx, vy, wr):
    if not (math.isfinite(vx) and math.isfinite(vy) and math.isfinite(wr)):
        raise ValueError("non-finite vehicle state")
    if vx <= VALIDITY_FLOOR:
        raise ModelValidityError(
            f"Vx={vx:.4g} m/s at or below the {VALIDITY_FLOOR} m/s validity floor")


def tire_lateral_force(alpha: float, Fz: float, params: MagicFormulaParams,
                       mu: float) -> float:
    """Lateral force [N] at slip angle alpha [rad] and normal load Fz [N]."""
    if not math.isfinite(alpha):
        raise ValueError("non-finite slip angle")
    if Fz <= 0:
        raise ValueError("normal load must be positive")
    return _kernels.tire_lateral(alpha, Fz, params.b_stiff, params.c_shape,
                                 params.d_peak_scale, params.e_curv, mu)


def derivatives(state: VehicleState, control: ControlInput,
                params: VehicleParams) -> tuple[float, float, float]:
    """(dVx, dVy, dwr) of the planar model at the given state and held input."""
    _check_state(state.Vx, state.Vy, state.wr)
    return _kernels.planar_rhs(state.Vx, state.Vy, state.wr,
                               control.T, control.delta_f, params.packed())


def sensor_accels(state: VehicleState,
                  derivs: tuple[float, float, float]) -> tuple[float, float]:
    """Body-frame accelerations (ax, ay) seen by an IMU at the c.g.

    ax = dVx - Vy*wr and ay = dVy + Vx*wr, so [ax + Vy*wr, ay - Vx*wr]
    recovers the velocity derivatives exactly.
    """
    dvx, dvy, _ = derivs
    return dvx - state.Vy * state.wr, dvy + state.Vx * state.wr


def step_rk4(state: VehicleState, control: ControlInput, dt: float,
             params: VehicleParams, substeps: int = 1) -> VehicleState:
    """Advance one sample interval with classical RK4 under zero-order-hold input."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_state(state.Vx, state.Vy, state.wr)
    vx, vy, wr = _kernels.rk4_step(state.Vx, state.Vy, state.wr,
                                   control.T, control.delta_f, dt, substeps,
                                   params.packed())
    return VehicleState(vx, vy, wr)


def rk4_generic(f, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step of dx/dt = f(x) for an arbitrary vector field."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def equilibrium_torque(vx: float, params: VehicleParams) -> float:
    """Driving torque that balances rolling + aero resistance at speed vx."""
    return params.rw * (params.roll * params.m * GRAVITY + params.drag * vx * vx)


@dataclass
class Trajectory:
    """Columnar snapshot sequence: t, states (K,3), inputs (K,2), accels (K,2)."""
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    accels: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    def __getitem__(self, k: int) -> Snapshot:
        return Snapshot(
            t=float(self.t[k]),
            state=VehicleState(*self.states[k]),
            input=ControlInput(*self.inputs[k]),
            ax=float(self.accels[k, 0]),
            ay=float(self.accels[k, 1]),
        )

    def snapshots(self) -> list[Snapshot]:
        return [self[k] for k in range(len(self))]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self) > 1 else 0.0

    def to_csv(self, path) -> None:
        """Write the columnar text format (17 significant digits, exact round-trip)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(TRAJECTORY_HEADER + "\n")
            for k in range(len(self)):
                row = (self.t[k], self.states[k, 0], self.states[k, 1],
                       self.states[k, 2], self.inputs[k, 0], self.inputs[k, 1],
                       self.accels[k, 0], self.accels[k, 1])
                fh.write(",".join("%.17g" % v for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != TRAJECTORY_HEADER:
                raise ValueError(f"unexpected trajectory header: {header!r}")
            rows = []
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 8:
                    raise ValueError(f"row {lineno}: expected 8 columns, got {len(parts)}")
                try:
                    rows.append([float(p) for p in parts])
                except ValueError as exc:
                    raise ValueError(f"row {lineno}: {exc}") from None
        if not rows:
            raise ValueError("empty trajectory file")
        arr = np.array(rows)
        return cls(t=arr[:, 0], states=arr[:, 1:4], inputs=arr[:, 4:6],
                   accels=arr[:, 6:8])


def run_schedule(x0: VehicleState, torques: np.ndarray, steers: np.ndarray,
                 dt: float, params: VehicleParams, substeps: int = 1) -> Trajectory:
    """Simulate a zero-order-hold input schedule sampled at dt."""
    _check_state(x0.Vx, x0.Vy, x0.wr)
    n = torques.shape[0]
    if steers.shape[0] != n:
        raise ValueError("torque and steering schedules must have equal length")
    states, accels, fail = _kernels.simulate_path(
        x0.as_array(), np.ascontiguousarray(torques, dtype=np.float64),
        np.ascontiguousarray(steers, dtype=np.float64), dt, substeps,
        params.packed())
    if fail >= 0:
        raise ModelValidityError(
            f"Vx hit the validity floor at t={fail * dt:.3f} s (step {fail})")
    t = np.arange(n) * dt
    return Trajectory(t=t, states=states,
                      inputs=np.column_stack((torques, steers)), accels=accels)
