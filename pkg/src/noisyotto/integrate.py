"""Adaptive Runge-Kutta propagation of the moment equations under a control profile.

This is the scoring oracle of the project: every candidate control, whether
closed-form, feedback-recorded or produced by the optimizer, is replayed
through :func:`integrate` and judged by :func:`score_control`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import (
    EngineConfig,
    MomentState,
    PhysicalState,
    efficiency_loss,
    parasitic_energy,
    rhs,
    to_physical,
)

__all__ = [
    "IntegrationOptions",
    "Trajectory",
    "ScoreResult",
    "StiffnessError",
    "DivergenceError",
    "integrate",
    "score_control",
]


class StiffnessError(RuntimeError):
    """The adaptive integrator could not meet its tolerance (step underflow)."""


class DivergenceError(RuntimeError):
    """The trajectory left the physically meaningful region or went non-finite."""


@dataclass(frozen=True)
class IntegrationOptions:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 0.5
    dense_output_samples: int = 600

    def __post_init__(self) -> None:
        if not (0.0 < self.rel_tol < 1.0 and 0.0 < self.abs_tol < 1.0):
            raise ValueError(f"tolerances must lie in (0, 1), got {self}")
        if not self.max_step > 0.0:
            raise ValueError(f"max_step must be positive, got {self.max_step}")
        if self.dense_output_samples < 2:
            raise ValueError("need at least 2 output samples")


@dataclass
class Trajectory:
    """Sampled solution of one stroke: times, moment states and control values."""

    config: EngineConfig
    times: np.ndarray
    states: np.ndarray  # shape (n, 3)
    controls: np.ndarray
    clamp_fraction: float = 0.0

    @property
    def x1(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def x2(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def x3(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def energies(self) -> np.ndarray:
        return 0.5 * (self.x2 + self.controls * self.x1)

    @property
    def lagrangian_means(self) -> np.ndarray:
        return 0.5 * (self.x2 - self.controls * self.x1)

    @property
    def correlations(self) -> np.ndarray:
        return np.sqrt(self.controls) * self.x3

    @property
    def casimirs(self) -> np.ndarray:
        return self.x1 * self.x2 - self.x3**2

    @property
    def final_state(self) -> MomentState:
        return MomentState(*self.states[-1])

    def final_physical(self, u: float | None = None) -> PhysicalState:
        """Physical view of the final state; defaults to the lower control bound."""
        if u is None:
            u = self.config.u_min
        return to_physical(self.final_state, u)

    def moments(self) -> np.ndarray:
        """(n, 3) array of E, L, C along the trajectory."""
        return np.column_stack([self.energies, self.lagrangian_means, self.correlations])

    def to_csv(self, path) -> None:
        data = np.column_stack(
            [
                self.times,
                self.states,
                self.controls,
                self.energies,
                self.lagrangian_means,
                self.correlations,
                self.casimirs,
            ]
        )
        np.savetxt(
            path, data, delimiter=",", header="t,x1,x2,x3,u,E,L,C,X", comments=""
        )


class ScoreResult(NamedTuple):
    delta: float
    parasitic: float
    final: PhysicalState
    trajectory: Trajectory


def _segment_edges(config: EngineConfig, control) -> np.ndarray:
    interior = [b for b in control.breakpoints() if 0.0 < b < config.duration]
    return np.unique(np.concatenate([[0.0, config.duration], interior]))


def integrate(
    config: EngineConfig,
    control,
    opts: IntegrationOptions = IntegrationOptions(),
    sample_times=None,
) -> Trajectory:
    """Propagate the stroke under ``control`` and return a sampled trajectory.

    The control is evaluated through its clamped call operator, so nodal
    interpolants that overshoot the admissible band are pushed back onto it.
    Piecewise-constant controls are integrated segment by segment so the
    adaptive stepper never straddles a jump.
    """
    if control.duration < config.duration * (1.0 - 1e-12):
        raise ValueError(
            f"control defined on [0, {control.duration}] cannot cover "
            f"duration {config.duration}"
        )
    noise = config.noise

    if sample_times is None:
        sample_times = np.linspace(0.0, config.duration, opts.dense_output_samples)
    else:
        sample_times = np.asarray(sample_times, dtype=float)
        if sample_times[0] != 0.0 or abs(sample_times[-1] - config.duration) > 1e-12:
            raise ValueError("sample times must span [0, duration]")

    edges = _segment_edges(config, control)
    times = np.unique(np.concatenate([sample_times, edges]))

    def fun(t, x):
        u = float(control(t))
        return rhs(x, u, noise)

    states = np.empty((len(times), 3))
    states[0] = (1.0, 1.0, 0.0)
    y = states[0].copy()
    for a, b in zip(edges[:-1], edges[1:]):
        # edges are members of `times`, so each segment's t_eval ends exactly at b
        mask = (times > a) & (times <= b)
        t_eval = times[mask]
        try:
            sol = solve_ivp(
                fun,
                (a, b),
                y,
                method="RK45",
                rtol=opts.rel_tol,
                atol=opts.abs_tol,
                max_step=opts.max_step,
                t_eval=t_eval,
            )
        except ValueError as exc:  # non-finite state fed to the vector field
            raise DivergenceError(str(exc)) from exc
        if not sol.success:
            raise StiffnessError(sol.message)
        if not np.all(np.isfinite(sol.y)):
            raise DivergenceError("integrator produced non-finite states")
        states[mask] = sol.y.T
        y = sol.y[:, -1]

    if np.min(states[:, 0]) <= 0.0 or np.min(states[:, 1]) <= 0.0:
        raise DivergenceError("positivity of x1, x2 violated along the trajectory")

    controls = np.asarray(control(times), dtype=float)
    raw = np.asarray(control.raw_value(times), dtype=float)
    outside = (raw < control.u_min - 1e-12) | (raw > control.u_max + 1e-12)
    clamp_fraction = float(np.count_nonzero(outside)) / len(times)

    return Trajectory(
        config=config,
        times=times,
        states=states,
        controls=controls,
        clamp_fraction=clamp_fraction,
    )


def score_control(
    config: EngineConfig,
    control,
    opts: IntegrationOptions = IntegrationOptions(),
) -> ScoreResult:
    """Replay a control and measure efficiency loss and parasitic energy.

    The stroke hands over to the cold isochore at the lower frequency bound,
    so the final physical state is always evaluated at u = freq_ratio**2.
    """
    traj = integrate(config, control, opts)
    final = traj.final_physical(config.u_min)
    delta = efficiency_loss(final.energy, config.freq_ratio)
    return ScoreResult(delta, parasitic_energy(final), final, traj)
