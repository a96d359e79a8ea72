"""Online adaptation of the lifted-space matrices [A B].

Streams lifted measurements and re-estimates the one-step linear map over a
sliding window of the most recent pairs (SWLS), with recursive least squares
(RLS), exponentially forgetting RLS (FFRLS), and a frozen baseline for
comparison. The default `batch_window` solver re-solves the windowed
least-squares problem from the stored window every step, anchored at the
trained estimate by a small fixed ridge:

    H = H0 + (T - H0 G) G^T (G G^T + eps I)^{-1}

With eps fixed at init this is exactly textbook RLS while the window is still
growing, and within O(eps) of the plain windowed solution once it slides. The
`recursive_correction` solver applies the literal recursive correction
H += (z_k - H g) g^T P with P recomputed from the window; it lacks a downdate
for the evicted column, so it only approximates the windowed solution (kept
for fidelity comparisons).

An adapter is strictly sequential and single-owner; run one per stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .koopman import KoopmanModel, lift, one_step_predictions
from .vehicle import Trajectory

MODES = ("SWLS", "RLS", "FFRLS", "frozen")
SOLVERS = ("batch_window", "recursive_correction")

FFRLS_P0_SCALE = 1e4
ESTIMATE_HISTORY_HEADER = "k,frob_dA,frob_dB,cond_gram"


@dataclass(frozen=True)
class AdapterConfig:
    mode: str = "SWLS"
    window: int = 100            # M, steps
    forgetting: float = 1.0      # lambda in (0, 1]
    eps_reg: float | None = None  # None -> 1e-8 * trace(seed Gram)/dim; 0 -> pinv fallback
    solver: str = "batch_window"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.window < 1:
            raise ValueError("window length must be >= 1")
        if not (0.0 < self.forgetting <= 1.0):
            raise ValueError("forgetting factor must be in (0, 1]")
        if self.eps_reg is not None and self.eps_reg < 0:
            raise ValueError("eps_reg must be non-negative")


class AdapterState:
    """Sliding-window estimator state; mutate only through `update`."""

    def __init__(self, h0: np.ndarray, z0: np.ndarray, u0: np.ndarray,
                 config: AdapterConfig):
        self.config = config
        self.zdim = z0.shape[0]
        self.udim = u0.shape[0]
        self.gdim = self.zdim + self.udim
        if h0.shape != (self.zdim, self.gdim):
            raise ValueError("[A B] estimate shape mismatch")
        self.h_est = h0.copy()
        self.h_init = h0.copy()
        self.z_prev = np.asarray(z0, dtype=np.float64).copy()
        self.u_seed = np.asarray(u0, dtype=np.float64).copy()
        self.k = 0
        self._regressors: list[np.ndarray] = []
        self._targets: list[np.ndarray] = []

        g0 = np.concatenate((self.z_prev, self.u_seed))
        seed_gram = np.outer(g0, g0)
        if config.eps_reg is None:
            self.eps = 1e-8 * float(np.trace(seed_gram)) / self.gdim
        else:
            self.eps = float(config.eps_reg)
        if config.mode in ("RLS", "FFRLS"):
            self.P = FFRLS_P0_SCALE * np.eye(self.gdim)
        elif self.eps > 0.0:
            p0 = np.linalg.inv(seed_gram + self.eps * np.eye(self.gdim))
            self.P = 0.5 * (p0 + p0.T)
        else:
            # rank-1 seed Gram is singular without ridge: pseudo-inverse fallback
            p0 = np.linalg.pinv(seed_gram)
            self.P = 0.5 * (p0 + p0.T)

    # --- exposed histories --------------------------------------------------
    @property
    def window_fill(self) -> int:
        """Completed pairs held, min(k, M)."""
        return len(self._regressors)

    @property
    def Psi(self) -> np.ndarray:
        """Lifted-state regressor columns of the completed window pairs."""
        if not self._regressors:
            return np.zeros((self.zdim, 0))
        return np.stack([g[:self.zdim] for g in self._regressors], axis=1)

    @property
    def Uhist(self) -> np.ndarray:
        if not self._regressors:
            return np.zeros((self.udim, 0))
        return np.stack([g[self.zdim:] for g in self._regressors], axis=1)

    @property
    def Ztargets(self) -> np.ndarray:
        if not self._targets:
            return np.zeros((self.zdim, 0))
        return np.stack(self._targets, axis=1)

    @property
    def A_k(self) -> np.ndarray:
        return self.h_est[:, :self.zdim]

    @property
    def B_k(self) -> np.ndarray:
        return self.h_est[:, self.zdim:]

    def window_gram(self) -> np.ndarray:
        g = np.concatenate((self.Psi, self.Uhist), axis=0)
        return g @ g.T

    def _push(self, g: np.ndarray, target: np.ndarray) -> None:
        self._regressors.append(g)
        self._targets.append(target)
        if len(self._regressors) > self.config.window:
            self._regressors.pop(0)
            self._targets.pop(0)


def init(A0: np.ndarray, B0: np.ndarray, z0: np.ndarray, u0: np.ndarray,
         config: AdapterConfig) -> AdapterState:
    """Seed the adapter with the trained matrices and the first (z0, u0) sample."""
    A0 = np.asarray(A0, dtype=np.float64)
    B0 = np.asarray(B0, dtype=np.float64)
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    u0 = np.asarray(u0, dtype=np.float64).ravel()
    if A0.shape[0] != A0.shape[1] or A0.shape[0] != z0.shape[0]:
        raise ValueError("A0 must be square and match the lifted dim")
    if B0.shape != (z0.shape[0], u0.shape[0]):
        raise ValueError("B0 must map inputs to the lifted dim")
    return AdapterState(np.hstack((A0, B0)), z0, u0, config)


def _solve_batch_window(state: AdapterState) -> None:
    g_mat = np.stack(state._regressors, axis=1)          # (gdim, w)
    t_mat = np.stack(state._targets, axis=1)             # (zdim, w)
    if state.eps > 0.0:
        resid = t_mat - state.h_init @ g_mat
        gram = g_mat @ g_mat.T + state.eps * np.eye(state.gdim)
        try:
            corr = np.linalg.solve(gram, (resid @ g_mat.T).T).T
        except np.linalg.LinAlgError:
            corr = (resid @ g_mat.T) @ np.linalg.pinv(gram)
        h_new = state.h_init + corr
    else:
        # pseudo-inverse path: plain min-norm windowed LS via SVD
        h_new = np.linalg.lstsq(g_mat.T, t_mat.T, rcond=None)[0].T
    if not np.all(np.isfinite(h_new)):
        gram = g_mat @ g_mat.T
        cond = float(np.linalg.cond(gram))
        raise np.linalg.LinAlgError(
            f"singular window Gram (cond~{cond:.3g}) with eps_reg={state.eps}")
    state.h_est = h_new


def _solve_recursive_correction(state: AdapterState, g: np.ndarray,
                          target: np.ndarray) -> None:
    gram = state.window_gram()
    if state.eps > 0.0:
        p_mat = np.linalg.inv(gram + state.eps * np.eye(state.gdim))
    else:
        p_mat = np.linalg.pinv(gram)
    p_mat = 0.5 * (p_mat + p_mat.T)
    residual = target - state.h_est @ g
    state.h_est = state.h_est + np.outer(residual, p_mat @ g)
    state.P = p_mat


def _rls_step(state: AdapterState, g: np.ndarray, target: np.ndarray,
              lam: float) -> None:
    pg = state.P @ g
    gain = pg / (lam + g @ pg)
    residual = target - state.h_est @ g
    state.h_est = state.h_est + np.outer(residual, gain)
    p_new = (state.P - np.outer(gain, pg)) / lam
    state.P = 0.5 * (p_new + p_new.T)


def update(state: AdapterState, z_k: np.ndarray,
           u_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold in the measurement z_k (driven by u_prev); returns (A_k, B_k).

    The completed pair (z_{k-1}, u_prev) -> z_k enters the window, evicting
    the oldest pair once the window holds M of them.
    """
    z_k = np.asarray(z_k, dtype=np.float64).ravel()
    u_prev = np.asarray(u_prev, dtype=np.float64).ravel()
    if z_k.shape[0] != state.zdim or u_prev.shape[0] != state.udim:
        raise ValueError("lifted/input dim mismatch")
    if not (np.all(np.isfinite(z_k)) and np.all(np.isfinite(u_prev))):
        raise ValueError("non-finite measurement")
    g = np.concatenate((state.z_prev, u_prev))
    mode = state.config.mode
    if mode in ("RLS", "FFRLS"):
        ffrls_update_raw(state, g, z_k)
    else:
        state._push(g, z_k)
        if mode == "SWLS":
            if state.config.solver == "batch_window":
                _solve_batch_window(state)
            else:
                _solve_recursive_correction(state, g, z_k)
    state.z_prev = z_k
    state.k += 1
    return state.A_k.copy(), state.B_k.copy()


def ffrls_update_raw(state: AdapterState, g: np.ndarray,
                     target: np.ndarray) -> None:
    lam = 1.0 if state.config.mode == "RLS" else state.config.forgetting
    if lam <= 0.0:
        raise ValueError("forgetting factor must be positive")
    state._push(g, target)  # window kept for diagnostics only
    _rls_step(state, g, target, lam)


def ffrls_update(state: AdapterState, z_k: np.ndarray,
                 u_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted recursive update (lambda=1 reduces to plain RLS)."""
    if state.config.mode not in ("RLS", "FFRLS"):
        raise ValueError("adapter was not configured for a recursive mode")
    return update(state, z_k, u_prev)


# ---------------------------------------------------------------------------
# streaming runs over trajectories

@dataclass
class AdaptRunResult:
    predictions: np.ndarray   # (K-1, n) physical one-step predictions for steps 1..K-1
    truth: np.ndarray         # (K-1, n) measured states at those steps
    drift_a: np.ndarray       # ||A_k - A_0||_F after each step
    drift_b: np.ndarray
    cond_gram: np.ndarray
    final_A: np.ndarray
    final_B: np.ndarray
    config: AdapterConfig


def _sym_cond(gram: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(0.5 * (gram + gram.T))
    top = float(ev[-1])
    bottom = float(ev[0])
    if bottom <= 0.0:
        return np.inf
    return top / bottom


def adapt_run(model: KoopmanModel, trajectory: Trajectory,
              config: AdapterConfig) -> AdaptRunResult:
    """Stream a trajectory through lift -> predict -> update.

    Each step k is predicted from the estimate that has only seen data through
    k-1, then the measurement at k updates the estimate. Frozen mode delegates
    to the vectorized one-step rollout, so it matches it bit for bit.
    """
    n_snap = len(trajectory)
    if n_snap < 2:
        raise ValueError("trajectory too short to adapt over")
    n = model.dims.n
    truth = trajectory.states[1:].copy()
    if config.mode == "frozen":
        preds = one_step_predictions(model, trajectory.states[:-1],
                                     trajectory.inputs[:-1])
        zeros = np.zeros(n_snap - 1)
        return AdaptRunResult(predictions=preds, truth=truth, drift_a=zeros,
                              drift_b=zeros.copy(),
                              cond_gram=np.full(n_snap - 1, np.nan),
                              final_A=model.A.copy(), final_B=model.B.copy(),
                              config=config)

    xn = model.normalize_states(trajectory.states)
    un = model.normalize_inputs(trajectory.inputs)
    z_all = lift(model, xn)
    state = init(model.A, model.B, z_all[0], un[0], config)
    a0 = state.A_k.copy()
    b0 = state.B_k.copy()

    preds_n = np.empty((n_snap - 1, n))
    drift_a = np.empty(n_snap - 1)
    drift_b = np.empty(n_snap - 1)
    cond = np.empty(n_snap - 1)
    for k in range(1, n_snap):
        g = np.concatenate((state.z_prev, un[k - 1]))
        z_hat = state.h_est @ g
        preds_n[k - 1] = z_hat[:n]
        update(state, z_all[k], un[k - 1])
        drift_a[k - 1] = np.linalg.norm(state.A_k - a0)
        drift_b[k - 1] = np.linalg.norm(state.B_k - b0)
        cond[k - 1] = _sym_cond(state.window_gram())
    preds = model.denormalize_states(preds_n)
    return AdaptRunResult(predictions=preds, truth=truth, drift_a=drift_a,
                          drift_b=drift_b, cond_gram=cond,
                          final_A=state.A_k.copy(), final_B=state.B_k.copy(),
                          config=config)


def write_estimate_history(path, result: AdaptRunResult) -> None:
    """Columnar diagnostics dump: k,frob_dA,frob_dB,cond_gram."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ESTIMATE_HISTORY_HEADER + "\n")
        for k in range(result.drift_a.shape[0]):
            fh.write("%d,%.17g,%.17g,%.17g\n"
                     % (k + 1, result.drift_a[k], result.drift_b[k],
                        result.cond_gram[k]))
