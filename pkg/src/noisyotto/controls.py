"""Control profiles for the expansion stroke.

Two families come in closed form: the inverse-linear frequency ramps that
close the stroke exactly after a quantized duration in the noiseless case,
and the slow feedback protocols that approach ideal efficiency by holding the
correlation moment at a small constant value.  Generic piecewise-constant and
sampled profiles cover solver output and file replay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import (
    INITIAL_STATE,
    NoiseParams,
    efficiency_loss,
    parasitic_energy,
    rhs,
    to_physical,
)

__all__ = [
    "ControlProfile",
    "ConstantProfile",
    "BangProfile",
    "SampledProfile",
    "ReferenceProfile",
    "FeedbackProtocol",
    "FeedbackRun",
    "ProtocolError",
    "ramp_rate",
    "ramp_duration",
    "reference_profile",
    "noiseless_feedback",
    "dephasing_feedback",
]

# slack for evaluating profiles at t slightly outside [0, T] due to rounding
_EDGE_TOL = 1e-9


class ProtocolError(RuntimeError):
    """A feedback protocol could not be realized (epsilon out of range, etc.)."""


class ControlProfile:
    """A control u(t) on [0, duration], clamped into [u_min, u_max] on evaluation.

    Subclasses implement ``raw_value``; calling the profile applies the clamp.
    Profiles are immutable and evaluation is pure -- clamp statistics are
    computed on demand by the caller via :meth:`clamp_fraction`.
    """

    duration: float
    u_min: float
    u_max: float

    def __init__(self, duration: float, u_min: float, u_max: float = 1.0) -> None:
        if not duration > 0.0:
            raise ValueError(f"duration must be positive, got {duration}")
        if not 0.0 < u_min < u_max:
            raise ValueError(f"need 0 < u_min < u_max, got [{u_min}, {u_max}]")
        self.duration = float(duration)
        self.u_min = float(u_min)
        self.u_max = float(u_max)

    def raw_value(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return np.clip(self.raw_value(t), self.u_min, self.u_max)

    def breakpoints(self) -> tuple[float, ...]:
        """Interior times where the control is not smooth (integrators split here)."""
        return ()

    def _check_domain(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < -_EDGE_TOL * max(1.0, self.duration)) or np.any(
            t > self.duration * (1.0 + _EDGE_TOL) + _EDGE_TOL
        ):
            raise ValueError(
                f"control evaluated outside [0, {self.duration}]: t={t!r}"
            )

    def clamp_fraction(self, n_samples: int = 512) -> float:
        """Fraction of a uniform sample grid where the raw value escapes the bounds."""
        t = np.linspace(0.0, self.duration, n_samples)
        raw = np.asarray(self.raw_value(t), dtype=float)
        outside = (raw < self.u_min - 1e-12) | (raw > self.u_max + 1e-12)
        return float(np.count_nonzero(outside)) / n_samples

    def samples(self, n_samples: int = 512):
        t = np.linspace(0.0, self.duration, n_samples)
        return t, np.asarray(self(t), dtype=float)

    def to_csv(self, path, n_samples: int = 512) -> None:
        t, u = self.samples(n_samples)
        data = np.column_stack([t, u])
        np.savetxt(path, data, delimiter=",", header="t,u", comments="")


class ConstantProfile(ControlProfile):
    """u(t) = value for the whole stroke."""

    def __init__(self, value: float, duration: float, u_min: float, u_max: float = 1.0):
        super().__init__(duration, u_min, u_max)
        self.value = float(value)

    def raw_value(self, t):
        self._check_domain(t)
        return np.full_like(np.asarray(t, dtype=float), self.value)


class BangProfile(ControlProfile):
    """Piecewise-constant control: edges[0]=0 < ... < edges[-1]=duration.

    values[i] applies on [edges[i], edges[i+1]); the last segment is closed.
    """

    def __init__(self, edges, values, u_min: float, u_max: float = 1.0):
        edges = np.asarray(edges, dtype=float)
        values = np.asarray(values, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing with at least 2 entries")
        if edges[0] != 0.0:
            raise ValueError("first edge must be t=0")
        if len(values) != len(edges) - 1:
            raise ValueError("need one value per segment")
        super().__init__(edges[-1], u_min, u_max)
        self.edges = edges
        self.values = values

    def raw_value(self, t):
        self._check_domain(t)
        idx = np.searchsorted(self.edges, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self.values[idx]

    def breakpoints(self):
        return tuple(self.edges[1:-1])


class SampledProfile(ControlProfile):
    """Linear interpolation through recorded (t, u) samples.

    Used to replay feedback recordings and controls loaded from CSV files.
    Known jump times can be declared so integrators split segments there.
    """

    def __init__(self, times, values, u_min: float, u_max: float = 1.0,
                 jump_times=()):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if times[0] != 0.0:
            raise ValueError("samples must start at t=0")
        super().__init__(times[-1], u_min, u_max)
        self.times = times
        self.values = values
        self.jump_times = tuple(float(t) for t in jump_times)

    def raw_value(self, t):
        self._check_domain(t)
        return np.interp(t, self.times, self.values)

    def breakpoints(self):
        return self.jump_times

    @classmethod
    def from_csv(cls, path, u_min: float, u_max: float = 1.0) -> "SampledProfile":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], u_min, u_max)


def ramp_rate(n: int, freq_ratio: float) -> float:
    """Decay-rate coefficient of the n-th closed-form reference ramp (always < 0)."""
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"ramp index must be a positive integer, got {n}")
    if not 0.0 < freq_ratio < 1.0:
        raise ValueError(f"freq_ratio must lie in (0, 1), got {freq_ratio}")
    log_ratio = math.log(1.0 / freq_ratio)
    return -2.0 * log_ratio / math.sqrt(4.0 * n**2 * math.pi**2 + log_ratio**2)


def ramp_duration(n: int, freq_ratio: float) -> float:
    """Stroke time after which the n-th reference ramp closes the ideal stroke."""
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"ramp index must be a positive integer, got {n}")
    if not 0.0 < freq_ratio < 1.0:
        raise ValueError(f"freq_ratio must lie in (0, 1), got {freq_ratio}")
    log_ratio = math.log(1.0 / freq_ratio)
    root = math.sqrt(4.0 * n**2 * math.pi**2 + log_ratio**2)
    return (1.0 / freq_ratio - 1.0) * root / (2.0 * log_ratio)


class ReferenceProfile(ControlProfile):
    """The inverse-linear frequency ramp: u(t) = 1 / (1 - rate * t)**2.

    Starts at u=1, decreases monotonically, and reaches freq_ratio**2 exactly
    at t = ramp_duration(n, freq_ratio).
    """

    def __init__(self, n: int, freq_ratio: float):
        self.n = int(n)
        self.freq_ratio = float(freq_ratio)
        self.rate = ramp_rate(n, freq_ratio)
        super().__init__(ramp_duration(n, freq_ratio), freq_ratio**2)

    def raw_value(self, t):
        self._check_domain(t)
        return 1.0 / (1.0 - self.rate * np.asarray(t, dtype=float)) ** 2


def reference_profile(n: int, freq_ratio: float) -> ReferenceProfile:
    return ReferenceProfile(n, freq_ratio)


@dataclass(frozen=True)
class FeedbackProtocol:
    """Parameters of the slow correlation-holding protocol.

    epsilon is the small positive plateau for x3; mode selects the noiseless
    feedback law u = x2/x1 or its dephasing-corrected variant
    u = x2/(x1 + 4*gamma_p*x3).
    """

    epsilon: float
    mode: str = "noiseless"
    gamma_p: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon <= 0.2:
            raise ValueError(f"epsilon must lie in (0, 0.2], got {self.epsilon}")
        if self.mode not in ("noiseless", "dephasing"):
            raise ValueError(f"unknown feedback mode {self.mode!r}")
        if self.mode == "dephasing" and not self.gamma_p > 0.0:
            raise ValueError("dephasing mode requires gamma_p > 0")
        if self.mode == "noiseless" and self.gamma_p != 0.0:
            raise ValueError("noiseless mode requires gamma_p = 0")


@dataclass
class FeedbackRun:
    """Closed-loop realization of a feedback protocol.

    The recorded control samples double as an open-loop profile for replay
    through the integrator; the protocol's total duration is an output.
    """

    protocol: FeedbackProtocol
    freq_ratio: float
    times: np.ndarray
    states: np.ndarray  # shape (n, 3)
    controls: np.ndarray
    switch_time: float

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def delta(self) -> float:
        """Efficiency loss of the transfer (the stroke ends at the lower bound)."""
        u_end = self.freq_ratio**2
        energy = 0.5 * (self.states[-1, 1] + u_end * self.states[-1, 0])
        return efficiency_loss(energy, self.freq_ratio)

    @property
    def parasitic(self) -> float:
        u_end = self.freq_ratio**2
        return parasitic_energy(to_physical(self.states[-1], u_end))

    def feedback_mask(self) -> np.ndarray:
        return self.times >= self.switch_time

    def invariant_values(self) -> np.ndarray:
        """The quantity held constant during the feedback segment.

        x1*x2 for the noiseless law; x1*x2 + 4*gamma_p*epsilon*x2 with dephasing.
        """
        x1, x2 = self.states[:, 0], self.states[:, 1]
        if self.protocol.mode == "dephasing":
            return x1 * x2 + 4.0 * self.protocol.gamma_p * self.protocol.epsilon * x2
        return x1 * x2

    def invariant_drift(self) -> float:
        """Max deviation of the invariant from its value at feedback start."""
        mask = self.feedback_mask()
        vals = self.invariant_values()[mask]
        return float(np.max(np.abs(vals - vals[0])))

    def profile(self) -> SampledProfile:
        return SampledProfile(
            self.times, self.controls, self.freq_ratio**2,
            jump_times=(self.switch_time,),
        )

    def to_csv(self, path) -> None:
        data = np.column_stack([self.times, self.states, self.controls])
        np.savetxt(path, data, delimiter=",", header="t,x1,x2,x3,u", comments="")


def _run_feedback(
    protocol: FeedbackProtocol,
    freq_ratio: float,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    n_samples: int = 3000,
) -> FeedbackRun:
    eps = protocol.epsilon
    u_lo = freq_ratio**2
    noise = NoiseParams(0.0, protocol.gamma_p)

    if protocol.mode == "dephasing":

        def u_of_state(x):
            return x[1] / (x[0] + 4.0 * protocol.gamma_p * x[2])

    else:

        def u_of_state(x):
            return x[1] / x[0]

    # stage 1: hold the lower bound until the correlation moment reaches epsilon
    def hit_epsilon(t, x):
        return x[2] - eps

    hit_epsilon.terminal = True
    hit_epsilon.direction = 1.0

    t_cap = 6.0 * eps / (1.0 - u_lo) + 1.0
    stage1 = solve_ivp(
        lambda t, x: rhs(x, u_lo, noise),
        (0.0, t_cap),
        np.asarray(INITIAL_STATE, dtype=float),
        method="RK45",
        rtol=rel_tol,
        atol=abs_tol,
        events=hit_epsilon,
        dense_output=True,
    )
    if not stage1.success or len(stage1.t_events[0]) == 0:
        raise ProtocolError(
            f"correlation moment never reached epsilon={eps} while holding the lower bound"
        )
    t_switch = float(stage1.t_events[0][0])
    x_switch = stage1.y_events[0][0]

    u_switch = u_of_state(x_switch)
    if u_switch > 1.0 + 1e-9:
        raise ProtocolError(
            f"feedback law starts above the upper bound (u={u_switch:.6f}); epsilon too large"
        )

    # stage 2: feedback keeps x3 frozen; stop when the law reaches the lower bound
    def hit_lower_bound(t, x):
        return u_of_state(x) - u_lo

    hit_lower_bound.terminal = True
    hit_lower_bound.direction = -1.0

    t_cap2 = t_switch + 4.0 * (1.0 / freq_ratio - 1.0) / (2.0 * eps) + 10.0
    stage2 = solve_ivp(
        lambda t, x: rhs(x, u_of_state(x), noise),
        (t_switch, t_cap2),
        x_switch,
        method="RK45",
        rtol=rel_tol,
        atol=abs_tol,
        events=hit_lower_bound,
        dense_output=True,
    )
    if not stage2.success or len(stage2.t_events[0]) == 0:
        raise ProtocolError("feedback law never reached the lower control bound")
    t_end = float(stage2.t_events[0][0])

    n1 = max(8, int(n_samples * t_switch / t_end))
    n2 = max(16, n_samples - n1)
    t1 = np.linspace(0.0, t_switch, n1, endpoint=False)
    # close the first stage just before the control jump so the recorded
    # samples represent the discontinuity instead of smearing it
    t1 = np.append(t1, t_switch - max(1e-9, 1e-12 * t_switch))
    t2 = np.linspace(t_switch, t_end, n2)
    x1s = stage1.sol(t1).T
    x2s = stage2.sol(t2).T
    times = np.concatenate([t1, t2])
    states = np.vstack([x1s, x2s])
    controls = np.concatenate(
        [np.full(len(t1), u_lo), np.array([u_of_state(x) for x in x2s])]
    )
    if np.any(controls > 1.0 + 1e-9):
        raise ProtocolError("feedback control exceeded the upper bound; epsilon too large")
    controls = np.clip(controls, u_lo, 1.0)

    return FeedbackRun(
        protocol=protocol,
        freq_ratio=freq_ratio,
        times=times,
        states=states,
        controls=controls,
        switch_time=t_switch,
    )


def noiseless_feedback(epsilon: float, freq_ratio: float, **kwargs) -> FeedbackRun:
    """Realize the noiseless slow protocol; duration comes out, not in."""
    return _run_feedback(FeedbackProtocol(epsilon, "noiseless"), freq_ratio, **kwargs)


def dephasing_feedback(
    epsilon: float, gamma_p: float, freq_ratio: float, **kwargs
) -> FeedbackRun:
    """Realize the dephasing-corrected slow protocol (requires gamma_a = 0)."""
    return _run_feedback(
        FeedbackProtocol(epsilon, "dephasing", gamma_p), freq_ratio, **kwargs
    )
