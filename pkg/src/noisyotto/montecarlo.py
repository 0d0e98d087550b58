"""Monte-Carlo verification of the moment equations.

A large ensemble of classical oscillators is driven by the same control with
white multiplicative noise on the stiffness (amplitude channel) and on the
whole Hamiltonian (phase channel).  The noisy equations of motion, read in
the Stratonovich sense and in mass-one units, are

    dq = p (dt + dW_p)
    dp = -u q (dt + dW_a + dW_p)

with independent Wiener increments of variance 2*gamma*dt per channel.  The
dynamics are linear in (q, p), so the ensemble averages of E, L and C obey
exactly the closed moment system integrated elsewhere in this package; the
comparison is the whole point of this module.

The integrator is the Stratonovich-consistent Heun predictor-corrector with a
fixed step.  Two deliberately wrong modes exist as negative controls: an
Euler scheme that realizes the Ito reading of the same equations (missing the
phase-channel drift correction) and a shared Wiener path for both channels
(breaking the independence assumption).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import EngineConfig
from .integrate import IntegrationOptions, Trajectory, integrate

__all__ = [
    "SdeOptions",
    "EnsembleMoments",
    "MomentComparison",
    "simulate_ensemble",
    "compare_moments",
    "write_comparison_csv",
]

_SCHEMES = ("heun", "euler-ito")


@dataclass(frozen=True)
class SdeOptions:
    ensemble_size: int = 100_000
    time_step: float = 1e-4
    seed: int = 0
    scheme: str = "heun"
    n_samples: int = 201
    chunk_size: int = 25_000
    shared_wiener: bool = False

    def __post_init__(self) -> None:
        if not self.time_step > 0.0:
            raise ValueError(f"time_step must be positive, got {self.time_step}")
        if self.ensemble_size < 100:
            raise ValueError("ensemble_size below 100 gives meaningless errors")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")
        if self.n_samples < 2:
            raise ValueError("need at least 2 sample times")


@dataclass
class EnsembleMoments:
    """Ensemble-averaged E, L, C with standard errors at the sample times."""

    times: np.ndarray
    means: np.ndarray  # (n, 3)
    standard_errors: np.ndarray  # (n, 3)
    ensemble_size: int
    diverged: int

    def to_csv(self, path) -> None:
        data = np.column_stack([self.times, self.means, self.standard_errors])
        np.savetxt(
            path,
            data,
            delimiter=",",
            header="t,E_mc,L_mc,C_mc,se_E,se_L,se_C",
            comments="",
        )


def _record(q, p, u, sums, sums_sq, idx):
    e = 0.5 * (p * p + u * (q * q))
    l = 0.5 * (p * p - u * (q * q))
    c = math.sqrt(u) * q * p
    for j, channel in enumerate((e, l, c)):
        sums[idx, j] += channel.sum()
        sums_sq[idx, j] += (channel * channel).sum()


def simulate_ensemble(
    config: EngineConfig, control, opts: SdeOptions = SdeOptions()
) -> EnsembleMoments:
    """Propagate the classical noisy ensemble and return averaged moments.

    The step count is chosen so the fixed step divides the duration exactly.
    Trajectories are advanced in chunks with independently spawned random
    streams, so the result is reproducible for a fixed seed and chunk size
    regardless of how the chunks are scheduled.
    """
    ga, gp = config.noise.gamma_a, config.noise.gamma_p
    n_steps = max(1, int(round(config.duration / opts.time_step)))
    dt = config.duration / n_steps
    t_grid = np.linspace(0.0, config.duration, n_steps + 1)
    u_grid = np.asarray(control(t_grid), dtype=float)

    sample_idx = np.unique(
        np.round(np.linspace(0, n_steps, opts.n_samples)).astype(int)
    )
    is_sample = np.full(n_steps + 1, -1, dtype=int)
    for j, k in enumerate(sample_idx):
        is_sample[k] = j
    n_rec = len(sample_idx)

    sums = np.zeros((n_rec, 3))
    sums_sq = np.zeros((n_rec, 3))
    alive = np.full(n_rec, opts.ensemble_size, dtype=np.int64)

    sd_a = math.sqrt(2.0 * ga * dt) if ga > 0.0 else 0.0
    sd_p = math.sqrt(2.0 * gp * dt) if gp > 0.0 else 0.0
    heun = opts.scheme == "heun"

    chunk_sizes = []
    remaining = opts.ensemble_size
    while remaining > 0:
        m = min(opts.chunk_size, remaining)
        chunk_sizes.append(m)
        remaining -= m
    streams = np.random.SeedSequence(opts.seed).spawn(len(chunk_sizes))

    diverged_total = 0
    for m, stream in zip(chunk_sizes, streams):
        rng = np.random.default_rng(stream)
        # equipartition start: <E> = 1, <L> = <C> = 0 at u(0)
        q = rng.standard_normal(m) / math.sqrt(u_grid[0])
        p = rng.standard_normal(m)
        dead = np.zeros(m, dtype=bool)
        if is_sample[0] >= 0:
            _record(q, p, u_grid[0], sums, sums_sq, is_sample[0])
        for k in range(n_steps):
            u0, u1 = u_grid[k], u_grid[k + 1]
            if opts.shared_wiener and ga > 0.0 and gp > 0.0:
                z = rng.standard_normal(m)
                dwa = sd_a * z
                dwp = sd_p * z
            else:
                dwa = sd_a * rng.standard_normal(m) if sd_a else 0.0
                dwp = sd_p * rng.standard_normal(m) if sd_p else 0.0
            tp = dt + dwp
            ta = dt + dwa + dwp
            dq0 = p * tp
            dp0 = -u0 * q * ta
            if heun:
                q_pred = q + dq0
                p_pred = p + dp0
                q = q + 0.5 * (dq0 + p_pred * tp)
                p = p + 0.5 * (dp0 - u1 * q_pred * ta)
            else:
                q = q + dq0
                p = p + dp0
            rec = is_sample[k + 1]
            if rec >= 0:
                bad = ~(np.isfinite(q) & np.isfinite(p))
                if np.any(bad | dead):
                    newly = bad & ~dead
                    if np.any(newly):
                        q[newly] = 0.0
                        p[newly] = 0.0
                        dead |= newly
                    alive[rec:] -= int(np.count_nonzero(newly))
                _record(q, p, u_grid[k + 1], sums, sums_sq, rec)
        diverged_total += int(np.count_nonzero(dead))

    if diverged_total > 1e-3 * opts.ensemble_size:
        raise RuntimeError(
            f"{diverged_total} of {opts.ensemble_size} trajectories diverged; "
            "the noise is too strong for this time step"
        )

    counts = alive.astype(float)[:, None]
    means = sums / counts
    variances = np.maximum(sums_sq / counts - means**2, 0.0)
    standard_errors = np.sqrt(variances / counts)
    return EnsembleMoments(
        times=t_grid[sample_idx],
        means=means,
        standard_errors=standard_errors,
        ensemble_size=opts.ensemble_size,
        diverged=diverged_total,
    )


@dataclass
class MomentComparison:
    """z-scores of the Monte-Carlo moments against a deterministic trajectory."""

    times: np.ndarray
    z_scores: np.ndarray  # (n, 3)
    max_z: float
    max_z_per_channel: np.ndarray  # (3,)
    fraction_above_3: float

    def to_dict(self) -> dict:
        return {
            "max_z": self.max_z,
            "max_z_E": float(self.max_z_per_channel[0]),
            "max_z_L": float(self.max_z_per_channel[1]),
            "max_z_C": float(self.max_z_per_channel[2]),
            "fraction_above_3": self.fraction_above_3,
            "n_points": int(self.z_scores.size),
        }


def compare_moments(mc: EnsembleMoments, ode: Trajectory) -> MomentComparison:
    """Per-time, per-channel z-scores |MC - ODE| / SE.

    The deterministic trajectory must be sampled on the Monte-Carlo grid.
    """
    if len(ode.times) != len(mc.times) or not np.allclose(
        ode.times, mc.times, rtol=0.0, atol=1e-9
    ):
        raise ValueError("sample grids of the ensemble and the trajectory differ")
    reference = ode.moments()
    se = np.where(mc.standard_errors > 0.0, mc.standard_errors, np.inf)
    z = np.abs(mc.means - reference) / se
    return MomentComparison(
        times=mc.times,
        z_scores=z,
        max_z=float(np.max(z)),
        max_z_per_channel=np.max(z, axis=0),
        fraction_above_3=float(np.mean(z > 3.0)),
    )


def ode_reference(
    config: EngineConfig,
    control,
    mc: EnsembleMoments,
    opts: IntegrationOptions = IntegrationOptions(),
) -> Trajectory:
    """Deterministic trajectory sampled exactly on the ensemble's time grid."""
    return integrate(config, control, opts, sample_times=mc.times)


def write_comparison_csv(path, mc: EnsembleMoments, ode: Trajectory) -> None:
    reference = ode.moments()
    data = np.column_stack([mc.times, mc.means, mc.standard_errors, reference])
    np.savetxt(
        path,
        data,
        delimiter=",",
        header="t,E_mc,L_mc,C_mc,se_E,se_L,se_C,E_ode,L_ode,C_ode",
        comments="",
    )
