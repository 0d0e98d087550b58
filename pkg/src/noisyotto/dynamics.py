"""Closed moment dynamics of a noisy parametric oscillator during trap expansion.

Everything is dimensionless: frequencies are measured in units of the initial
(hot) trap frequency, time in its inverse, noise strengths likewise, and
energies in units of the initial mean energy.  The control is the squared
frequency ratio u(t), which starts at 1 and must end at freq_ratio**2.

The state (x1, x2, x3) packs the mean energy E, the mean Lagrangian L and the
position-momentum correlation C of the oscillator ensemble:

    x1 = (E - L) / (u * E_h),   x2 = (E + L) / E_h,   x3 = C / (sqrt(u) * E_h)

and obeys

    x1' = -2*gp*u*x1 + 2*gp*x2 + 2*x3
    x2' =  2*(ga+gp)*u**2*x1 - 2*gp*u*x2 - 2*u*x3
    x3' = -u*x1 + x2 - 4*gp*u*x3

with ga the trap-stiffness (amplitude) noise strength and gp the phase-damping
strength.  The product x1*x2 - x3**2 is conserved when ga = gp = 0 and is
nondecreasing otherwise; it serves as the entropy proxy of the stroke.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "NoiseParams",
    "EngineConfig",
    "MomentState",
    "PhysicalState",
    "INITIAL_STATE",
    "rhs",
    "rhs_partials",
    "to_physical",
    "from_physical",
    "casimir_companion",
    "casimir_growth_rate",
    "efficiency_loss",
    "parasitic_energy",
]


@dataclass(frozen=True)
class NoiseParams:
    """Dimensionless white-noise strengths of the two control-noise channels."""

    gamma_a: float = 0.0  # trap-stiffness (amplitude) noise
    gamma_p: float = 0.0  # phase damping

    def __post_init__(self) -> None:
        if not (self.gamma_a >= 0.0 and self.gamma_p >= 0.0):
            raise ValueError(f"noise strengths must be >= 0, got {self}")

    @property
    def is_noiseless(self) -> bool:
        return self.gamma_a == 0.0 and self.gamma_p == 0.0


@dataclass(frozen=True)
class EngineConfig:
    """A single expansion-stroke problem instance.

    freq_ratio is the cold/hot frequency ratio in (0, 1); duration is the
    stroke time in units of the inverse hot frequency.
    """

    freq_ratio: float
    duration: float
    noise: NoiseParams = field(default_factory=NoiseParams)

    def __post_init__(self) -> None:
        if not 0.0 < self.freq_ratio < 1.0:
            raise ValueError(f"freq_ratio must lie in (0, 1), got {self.freq_ratio}")
        if not self.duration > 0.0:
            raise ValueError(f"duration must be positive, got {self.duration}")

    @property
    def u_min(self) -> float:
        """Lower control bound: the squared frequency ratio."""
        return self.freq_ratio**2


class MomentState(NamedTuple):
    """Normalized moment-vector of the stroke; see the module docstring."""

    x1: float
    x2: float
    x3: float


class PhysicalState(NamedTuple):
    """Energy-based view of a moment state, all in units of the initial energy."""

    energy: float
    lagrangian_mean: float
    correlation: float
    control: float


#: Thermal start of every stroke: E = E_h, L = C = 0 at u = 1.
INITIAL_STATE = MomentState(1.0, 1.0, 0.0)


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite dynamics input: {values}")


def rhs(state, u: float, noise: NoiseParams) -> np.ndarray:
    """Time derivative of the moment vector at control value u.

    Accepts any length-3 sequence (MomentState, list, ndarray) and returns an
    ndarray so it can be fed straight to an ODE integrator.
    """
    x1, x2, x3 = state
    _check_finite(x1, x2, x3, u)
    ga, gp = noise.gamma_a, noise.gamma_p
    return np.array(
        [
            -2.0 * gp * u * x1 + 2.0 * gp * x2 + 2.0 * x3,
            2.0 * (ga + gp) * u**2 * x1 - 2.0 * gp * u * x2 - 2.0 * u * x3,
            -u * x1 + x2 - 4.0 * gp * u * x3,
        ]
    )


def rhs_partials(x1, x2, x3, u, noise: NoiseParams):
    """Partial derivatives of the vector field, broadcast over node arrays.

    Returns (A, b) where A[r][c] = d f_r / d x_c and b[r] = d f_r / d u,
    each entry shaped like u.  Used for analytic NLP Jacobians.
    """
    ga, gp = noise.gamma_a, noise.gamma_p
    u = np.asarray(u, dtype=float)
    one = np.ones_like(u)
    A = (
        (-2.0 * gp * u, 2.0 * gp * one, 2.0 * one),
        (2.0 * (ga + gp) * u**2, -2.0 * gp * u, -2.0 * u),
        (-u, one, -4.0 * gp * u),
    )
    b = (
        -2.0 * gp * x1 * one,
        4.0 * (ga + gp) * u * x1 - 2.0 * gp * x2 - 2.0 * x3,
        (-x1 - 4.0 * gp * x3) * one,
    )
    return A, b


def to_physical(state, u: float) -> PhysicalState:
    """Map a moment state at control u back to (E, L, C) in initial-energy units."""
    if not u > 0.0:
        raise ValueError(f"control must be positive, got u={u}")
    x1, x2, x3 = state
    return PhysicalState(
        energy=0.5 * (x2 + u * x1),
        lagrangian_mean=0.5 * (x2 - u * x1),
        correlation=math.sqrt(u) * x3,
        control=u,
    )


def from_physical(phys: PhysicalState) -> MomentState:
    """Inverse of :func:`to_physical`; exact algebraic round trip."""
    u = phys.control
    if not u > 0.0:
        raise ValueError(f"control must be positive, got u={u}")
    return MomentState(
        x1=(phys.energy - phys.lagrangian_mean) / u,
        x2=phys.energy + phys.lagrangian_mean,
        x3=phys.correlation / math.sqrt(u),
    )


def casimir_companion(state) -> float:
    """Entropy proxy x1*x2 - x3**2; equals 1 at the thermal start."""
    x1, x2, x3 = state
    return x1 * x2 - x3 * x3


def casimir_growth_rate(state, u: float, noise: NoiseParams) -> float:
    """Exact production rate of the Casimir companion along the dynamics.

    Differentiating x1*x2 - x3**2 against the vector field gives

        2*ga*(u*x1)**2 + 2*gp*(x2 - u*x1)**2 + 8*gp*u*x3**2

    which in physical variables is 2*[ga*(E-L)**2 + 4*gp*(L**2 + C**2)];
    nonnegative, and zero without noise.
    """
    phys = to_physical(state, u)
    e_minus_l = phys.energy - phys.lagrangian_mean
    return 2.0 * (
        noise.gamma_a * e_minus_l**2
        + 4.0 * noise.gamma_p * (phys.lagrangian_mean**2 + phys.correlation**2)
    )


def efficiency_loss(final_energy_ratio: float, freq_ratio: float) -> float:
    """Relative excess of the final energy over the ideal noiseless floor.

    Zero for a perfect transfer; positive whenever noise or lack of time
    leaves extra energy behind.
    """
    if not 0.0 < freq_ratio < 1.0:
        raise ValueError(f"freq_ratio must lie in (0, 1), got {freq_ratio}")
    if not final_energy_ratio > 0.0:
        raise ValueError(f"final energy ratio must be positive, got {final_energy_ratio}")
    return final_energy_ratio / freq_ratio - 1.0


def parasitic_energy(final: PhysicalState) -> float:
    """Residual energy stranded in the L and C modes at stroke end."""
    return math.hypot(final.lagrangian_mean, final.correlation)
