"""Ground-truth fed-batch reactor: kinetics, fixed-step RK4, episode simulation.

Reaction scheme: A + B -> C (rate k1) and B + B -> D (rate k2), with B fed
into the reactor at rate u. Volume is hard-capped at 1.0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# States dipping below zero by less than this after an RK4 step are clamped
# to zero; anything more negative is treated as an integration failure.
NEG_CLAMP_TOL = 1e-9

VOLUME_CAP = 1.0


class ReactorError(Exception):
    """Base class for reactor simulation failures."""


class DegenerateVolumeError(ReactorError):
    """Raised when the liquid volume is zero (concentrations undefined)."""


class IntegrationDivergedError(ReactorError):
    """Raised when an RK4 step produces non-finite or badly negative values."""


@dataclass(frozen=True)
class ReactorState:
    """Concentrations of A, B, C, D (mol/L) and liquid volume V (m^3)."""

    a: float
    b: float
    c: float
    d: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.v], dtype=float)

    @staticmethod
    def from_array(y: np.ndarray) -> "ReactorState":
        return ReactorState(float(y[0]), float(y[1]), float(y[2]), float(y[3]), float(y[4]))


@dataclass(frozen=True)
class KineticsParams:
    """Rate constants, feed concentration and time grid of the process."""

    k1: float = 0.5
    k2: float = 0.5
    b_feed: float = 0.2
    t_f: float = 120.0
    dt_control: float = 1.0
    n_substeps: int = 10

    def __post_init__(self) -> None:
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("rate constants must be positive")
        if self.b_feed <= 0:
            raise ValueError("b_feed must be positive")
        if self.t_f <= 0 or self.dt_control <= 0:
            raise ValueError("t_f and dt_control must be positive")
        n = self.t_f / self.dt_control
        if abs(n - round(n)) > 1e-9:
            raise ValueError("dt_control must divide t_f exactly")
        if self.n_substeps < 1:
            raise ValueError("n_substeps must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_f / self.dt_control))


DEFAULT_INITIAL_STATE = ReactorState(a=0.2, b=0.0, c=0.0, d=0.0, v=0.5)


@dataclass
class Trajectory:
    """One simulated episode: states at every control boundary plus the
    (cap-adjusted) feed rates actually applied."""

    states: list[ReactorState]
    controls: list[float]

    def __post_init__(self) -> None:
        if len(self.controls) != len(self.states) - 1:
            raise ValueError("need exactly one control per state transition")

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.states])

    @property
    def final(self) -> ReactorState:
        return self.states[-1]


def derivatives(state: ReactorState, u: float, params: KineticsParams) -> np.ndarray:
    """Time derivatives (dA, dB, dC, dD, dV) of the material balances.

    The production term of C is +k1*[A]*[B]; D is produced at 2*k2*[B]^2.
    """
    if state.v == 0:
        raise DegenerateVolumeError("volume is zero; dilution terms undefined")
    a, b, c, d, v = state.a, state.b, state.c, state.d, state.v
    r1 = params.k1 * a * b
    r2 = params.k2 * b * b
    da = -r1 - (a / v) * u
    db = -r1 - 2.0 * r2 + ((params.b_feed - b) / v) * u
    dc = +r1 - (c / v) * u
    dd = 2.0 * r2 - (d / v) * u
    dv = u
    return np.array([da, db, dc, dd, dv])


def _rhs(y: tuple, u: float, params: KineticsParams) -> tuple:
    # plain-float math: this sits in the innermost loop of agent training
    a, b, c, d, v = y
    r1 = params.k1 * a * b
    r2 = params.k2 * b * b
    return (
        -r1 - (a / v) * u,
        -r1 - 2.0 * r2 + ((params.b_feed - b) / v) * u,
        +r1 - (c / v) * u,
        2.0 * r2 - (d / v) * u,
        u,
    )


def integrate_step(state: ReactorState, u: float, params: KineticsParams) -> ReactorState:
    """Advance the state over one control interval with classical RK4."""
    if u < 0:
        raise ValueError("feed rate must be nonnegative")
    if state.v == 0:
        raise DegenerateVolumeError("volume is zero")
    h = params.dt_control / params.n_substeps
    y = (state.a, state.b, state.c, state.d, state.v)
    for _ in range(params.n_substeps):
        k1 = _rhs(y, u, params)
        k2 = _rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k1)), u, params)
        k3 = _rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k2)), u, params)
        k4 = _rhs(tuple(yi + h * ki for yi, ki in zip(y, k3)), u, params)
        y = tuple(
            yi + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            for yi, a1, a2, a3, a4 in zip(y, k1, k2, k3, k4)
        )
    if not all(math.isfinite(x) for x in y):
        raise IntegrationDivergedError(f"non-finite state after step: {y}")
    if any(x < -NEG_CLAMP_TOL for x in y[:4]):
        raise IntegrationDivergedError(f"state went negative beyond tolerance: {y}")
    clamped = tuple(max(x, 0.0) for x in y[:4]) + (y[4],)
    return ReactorState(*clamped)


def apply_volume_cap(state: ReactorState, u: float, params: KineticsParams) -> float:
    """Largest feed rate <= u that keeps the volume at or below the cap."""
    if u <= 0:
        return 0.0
    headroom = VOLUME_CAP - state.v
    if headroom <= 0:
        return 0.0
    return min(u, headroom / params.dt_control)


Controller = Callable[[int, list[ReactorState]], float]


def simulate(
    controls: Sequence[float] | Controller,
    params: KineticsParams,
    initial: ReactorState = DEFAULT_INITIAL_STATE,
) -> Trajectory:
    """Run one episode under a fixed control sequence or a controller callback.

    A callback receives (step index, states so far) and returns the requested
    feed rate; the volume cap is applied either way, and the applied (capped)
    rates are what the returned trajectory records.
    """
    n = params.n_steps
    if not callable(controls):
        if len(controls) != n:
            raise ValueError(f"expected {n} controls, got {len(controls)}")
    states = [initial]
    applied: list[float] = []
    for t in range(n):
        u_req = controls(t, states) if callable(controls) else float(controls[t])
        if u_req < 0:
            raise ValueError(f"negative feed rate at step {t}")
        u = apply_volume_cap(states[-1], u_req, params)
        try:
            states.append(integrate_step(states[-1], u, params))
        except ReactorError as exc:
            raise IntegrationDivergedError(f"integration failed at step {t}: {exc}") from exc
        applied.append(u)
    return Trajectory(states=states, controls=applied)


def simulate_batch(
    controls: np.ndarray,
    params: KineticsParams,
    initial: ReactorState = DEFAULT_INITIAL_STATE,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized episode simulation for a (n_episodes, n_steps) control array.

    Returns (states, applied) where states has shape (n_episodes, n_steps+1, 5)
    and applied the cap-adjusted feed rates. Elementwise identical to running
    `simulate` per row (same operation order per element).
    """
    controls = np.asarray(controls, dtype=float)
    n_ep, n = controls.shape
    if n != params.n_steps:
        raise ValueError(f"expected {params.n_steps} controls per episode, got {n}")
    if np.any(controls < 0):
        raise ValueError("negative feed rate in batch")
    y = np.tile(initial.as_array(), (n_ep, 1))
    out = np.empty((n_ep, n + 1, 5))
    out[:, 0] = y
    applied = np.empty((n_ep, n))
    h = params.dt_control / params.n_substeps

    def rhs(y: np.ndarray, u: np.ndarray) -> np.ndarray:
        a, b, c, d, v = y[:, 0], y[:, 1], y[:, 2], y[:, 3], y[:, 4]
        r1 = params.k1 * a * b
        r2 = params.k2 * b * b
        dy = np.empty_like(y)
        dy[:, 0] = -r1 - (a / v) * u
        dy[:, 1] = -r1 - 2.0 * r2 + ((params.b_feed - b) / v) * u
        dy[:, 2] = +r1 - (c / v) * u
        dy[:, 3] = 2.0 * r2 - (d / v) * u
        dy[:, 4] = u
        return dy

    for t in range(n):
        headroom = np.maximum(VOLUME_CAP - y[:, 4], 0.0)
        u = np.minimum(controls[:, t], headroom / params.dt_control)
        u = np.where(controls[:, t] <= 0, 0.0, u)
        applied[:, t] = u
        for _ in range(params.n_substeps):
            k1 = rhs(y, u)
            k2 = rhs(y + 0.5 * h * k1, u)
            k3 = rhs(y + 0.5 * h * k2, u)
            k4 = rhs(y + h * k3, u)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationDivergedError(f"non-finite state at step {t}")
        if np.any(y[:, :4] < -NEG_CLAMP_TOL):
            raise IntegrationDivergedError(f"negative state beyond tolerance at step {t}")
        y[:, :4] = np.maximum(y[:, :4], 0.0)
        out[:, t + 1] = y
    return out, applied


def trajectory_to_csv(traj: Trajectory, header_comment: str | None = None) -> str:
    """Serialize a trajectory: one row per control step, state at step end,
    10-significant-digit formatting."""
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append("t,u,A,B,C,D,V")
    for t, (u, s) in enumerate(zip(traj.controls, traj.states[1:]), start=1):
        fields = [f"{x:.10g}" for x in (u, s.a, s.b, s.c, s.d, s.v)]
        lines.append(f"{t}," + ",".join(fields))
    return "\n".join(lines) + "\n"
