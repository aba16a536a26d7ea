"""Deterministic fluid limit of the scaled epidemic.

Compartment counts divided by the deterministic growth curve
n(t) = n * exp(growth * t) converge (as n grows) to the flow integrated
here: the classic SIR/SEIR-with-demography equations for a non-growing
population.  The module integrates them with fixed-step RK4, locates
equilibria, and measures how far scaled stochastic trajectories sit from
the deterministic path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from numba import njit

from .model import ModelParams
from .ssa import Trajectory
from .theory import endemic_equilibrium

_SIMPLEX_ATOL = 1e-9


class StepSizeError(RuntimeError):
    """Halving the step moved the terminal state by more than the bound."""


class GridMismatchError(ValueError):
    """Stochastic and deterministic sample grids do not line up."""


class EquilibriumKind(enum.Enum):
    DISEASE_FREE = "DiseaseFree"
    ENDEMIC = "Endemic"


@dataclass(frozen=True)
class ScaledState:
    """Proportions relative to the deterministic population curve."""

    s: float
    e: float
    i: float
    r: float

    def __post_init__(self):
        for name in ("s", "e", "i", "r"):
            if getattr(self, name) < 0:
                raise ValueError(f"proportion {name} must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.e, self.i, self.r], dtype=np.float64)

    @property
    def total(self) -> float:
        return self.s + self.e + self.i + self.r


def ode_rhs(params: ModelParams, state) -> np.ndarray:
    """Right-hand side of the scaled flow at ``state`` (ScaledState or 4-array)."""
    if isinstance(state, ScaledState):
        s, e, i, r = state.s, state.e, state.i, state.r
    else:
        s, e, i, r = (float(v) for v in state)
    lam = params.birth_rate
    gamma = params.contact_rate
    delta = params.recovery_rate
    if not params.is_seir:
        if e != 0.0:
            raise ValueError("SIR variant requires e == 0 in the scaled state")
        return np.array(
            [
                lam * (1.0 - s) - gamma * i * s,
                0.0,
                i * (gamma * s - (lam + delta)),
                delta * i - lam * r,
            ]
        )
    nu = params.latency_exit_rate
    return np.array(
        [
            lam * (1.0 - s) - gamma * i * s,
            gamma * i * s - (lam + nu) * e,
            nu * e - (lam + delta) * i,
            delta * i - lam * r,
        ]
    )


@njit(cache=True, nogil=True)
def _rhs_scalar(lam, gamma, delta, nu, seir, s, e, i, r):
    ds = lam * (1.0 - s) - gamma * i * s
    if seir:
        de = gamma * i * s - (lam + nu) * e
        di = nu * e - (lam + delta) * i
    else:
        de = 0.0
        di = i * (gamma * s - (lam + delta))
    dr = delta * i - lam * r
    return ds, de, di, dr


@njit(cache=True, nogil=True)
def _rk4_kernel(lam, gamma, delta, nu, seir, s, e, i, r, dt, n_steps, record_every, out):
    out[0, 0] = s
    out[0, 1] = e
    out[0, 2] = i
    out[0, 3] = r
    ridx = 1
    half = 0.5 * dt
    sixth = dt / 6.0
    for step in range(1, n_steps + 1):
        a1, b1, c1, d1 = _rhs_scalar(lam, gamma, delta, nu, seir, s, e, i, r)
        a2, b2, c2, d2 = _rhs_scalar(
            lam, gamma, delta, nu, seir, s + half * a1, e + half * b1, i + half * c1, r + half * d1
        )
        a3, b3, c3, d3 = _rhs_scalar(
            lam, gamma, delta, nu, seir, s + half * a2, e + half * b2, i + half * c2, r + half * d2
        )
        a4, b4, c4, d4 = _rhs_scalar(
            lam, gamma, delta, nu, seir, s + dt * a3, e + dt * b3, i + dt * c3, r + dt * d3
        )
        s += sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        e += sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        i += sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        r += sixth * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        if step % record_every == 0:
            out[ridx, 0] = s
            out[ridx, 1] = e
            out[ridx, 2] = i
            out[ridx, 3] = r
            ridx += 1
    return s, e, i, r, ridx


@dataclass(frozen=True, eq=False)
class OdeSolution:
    """RK4 solution sampled on ``times``; ``converged_to`` labels the
    equilibrium whose tolerance ball the solution entered and never left
    (for at least the trailing window), with the entry time."""

    times: np.ndarray
    states: np.ndarray
    converged_to: Optional[EquilibriumKind]
    converged_at: Optional[float]
    dt: float
    params: ModelParams

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _coerce_z0(params: ModelParams, z0) -> np.ndarray:
    if isinstance(z0, ScaledState):
        arr = z0.as_array()
    else:
        arr = np.asarray(z0, dtype=np.float64)
        if arr.shape == (3,) and not params.is_seir:
            arr = np.array([arr[0], 0.0, arr[1], arr[2]])
        if arr.shape != (4,):
            raise ValueError("initial proportions must be a ScaledState, 4-vector, or SIR 3-vector")
    if arr.min() < 0:
        raise ValueError("initial proportions must be nonnegative")
    if abs(arr.sum() - 1.0) > _SIMPLEX_ATOL:
        raise ValueError("initial proportions must sum to 1")
    if not params.is_seir and arr[1] != 0.0:
        raise ValueError("SIR variant requires e == 0 initially")
    return arr


def _detect_convergence(params, times, states, tol, window):
    candidates = [(EquilibriumKind.DISEASE_FREE, np.array([1.0, 0.0, 0.0, 0.0]))]
    endemic = endemic_equilibrium(params)
    if endemic is not None:
        candidates.append((EquilibriumKind.ENDEMIC, np.asarray(endemic)))
    best = (None, None)
    for kind, point in candidates:
        inside = np.max(np.abs(states - point), axis=1) <= tol
        if not inside[-1]:
            continue
        # earliest index from which the solution never leaves the ball
        outside = np.flatnonzero(~inside)
        k0 = 0 if outside.size == 0 else outside[-1] + 1
        if times[-1] - times[k0] >= window:
            best = (kind, float(times[k0]))
            break
    return best


def integrate(
    params: ModelParams,
    z0,
    t_max: float,
    dt: float = 1e-3,
    grid_step: Optional[float] = None,
    check_step: bool = True,
    convergence_tol: float = 1e-6,
    convergence_window: float = 5.0,
) -> OdeSolution:
    """Fixed-step RK4 solution of the scaled flow from ``z0``.

    The step is snapped so an integer number of steps lands exactly on
    t_max.  With ``check_step`` the integration is repeated at half the
    step; a terminal-state shift above 1e-8 raises StepSizeError (the
    requested dt is too coarse).  Recording happens every ``grid_step``
    (default 0.01 time units, at least every step).
    """
    if t_max <= 0 or dt <= 0:
        raise ValueError("t_max and dt must be positive")
    z = _coerce_z0(params, z0)
    n_steps = max(1, int(round(t_max / dt)))
    dt_eff = t_max / n_steps
    if grid_step is None:
        grid_step = 0.01
    record_every = max(1, int(round(grid_step / dt_eff)))
    n_records = n_steps // record_every + 1
    tail = n_steps % record_every != 0
    out = np.empty((n_records + (1 if tail else 0), 4), dtype=np.float64)
    lam = params.birth_rate
    gamma = params.contact_rate
    delta = params.recovery_rate
    nu = params.latency_exit_rate if params.is_seir else 0.0
    s, e, i, r, ridx = _rk4_kernel(
        lam, gamma, delta, nu, params.is_seir, z[0], z[1], z[2], z[3], dt_eff, n_steps,
        record_every, out,
    )
    if tail:
        out[ridx] = (s, e, i, r)
        ridx += 1
    states = out[:ridx]
    times = np.minimum(
        dt_eff * record_every * np.arange(ridx, dtype=np.float64), t_max
    )
    if tail:
        times[-1] = t_max
    if check_step:
        scratch = np.empty((1, 4), dtype=np.float64)
        s2, e2, i2, r2, _ = _rk4_kernel(
            lam, gamma, delta, nu, params.is_seir, z[0], z[1], z[2], z[3], dt_eff / 2.0,
            2 * n_steps, 2 * n_steps + 1, scratch,
        )
        shift = max(abs(s - s2), abs(e - e2), abs(i - i2), abs(r - r2))
        if shift > 1e-8:
            raise StepSizeError(
                f"halving dt moved the terminal state by {shift:.3e} (> 1e-8); decrease dt"
            )
    kind, hit = _detect_convergence(params, times, states, convergence_tol, convergence_window)
    return OdeSolution(
        times=times,
        states=states,
        converged_to=kind,
        converged_at=hit,
        dt=dt_eff,
        params=params,
    )


def proportions_to_counts(z0, n: int) -> np.ndarray:
    """Largest-remainder rounding of n*z0 to integers that sum to n."""
    arr = np.asarray(z0, dtype=np.float64)
    if arr.shape == (3,):
        arr = np.array([arr[0], 0.0, arr[1], arr[2]])
    if arr.shape != (4,):
        raise ValueError("proportions must be a 3- or 4-vector")
    if abs(arr.sum() - 1.0) > _SIMPLEX_ATOL:
        raise ValueError("proportions must sum to 1")
    raw = arr * n
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def scale_trajectory(params: ModelParams, traj: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    """Counts divided by n * exp(growth * t), with n the initial total."""
    n = int(traj.counts[0].sum())
    growth = params.population_growth_rate
    factors = n * np.exp(growth * traj.times)
    return traj.times, traj.counts / factors[:, None]


def scaled_deviation(times, scaled, sol: OdeSolution) -> float:
    """Max Euclidean distance between scaled points and the solution on the
    shared grid; each solution time must appear among ``times``."""
    times = np.asarray(times, dtype=np.float64)
    idx = np.searchsorted(times, sol.times)
    idx_clipped = np.clip(idx, 0, times.size - 1)
    left = np.clip(idx_clipped - 1, 0, times.size - 1)
    use_left = np.abs(times[left] - sol.times) < np.abs(times[idx_clipped] - sol.times)
    matched = np.where(use_left, left, idx_clipped)
    if np.max(np.abs(times[matched] - sol.times)) > 1e-9:
        raise GridMismatchError("trajectory samples do not cover the solution grid")
    diff = np.asarray(scaled)[matched] - sol.states
    return float(np.sqrt((diff * diff).sum(axis=1)).max())


def compare_scaled(params: ModelParams, traj: Trajectory, sol: OdeSolution) -> float:
    """Sup-norm deviation of the scaled stochastic path from the fluid limit."""
    times, scaled = scale_trajectory(params, traj)
    return scaled_deviation(times, scaled, sol)


def damped_oscillation_report(
    sol: OdeSolution, amplitude_floor: float = 1e-9
) -> List[Tuple[float, float]]:
    """Local maxima of the infectious proportion on the sample grid.

    Only meaningful for solutions that converged to the endemic point;
    peaks whose distance from the endemic level is below the floor are
    noise and dropped.  A monotone approach yields an empty report.
    """
    if sol.converged_to is not EquilibriumKind.ENDEMIC:
        raise ValueError("oscillation report requires a solution converged to the endemic point")
    endemic = endemic_equilibrium(sol.params)
    i_hat = endemic[2]
    i_path = sol.states[:, 2]
    peaks = []
    for k in range(1, len(i_path) - 1):
        if i_path[k] > i_path[k - 1] and i_path[k] > i_path[k + 1]:
            if abs(i_path[k] - i_hat) > amplitude_floor:
                peaks.append((float(sol.times[k]), float(i_path[k])))
    return peaks
