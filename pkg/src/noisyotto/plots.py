"""Figure rendering for the command-line report paths.

Each CLI command that writes delimited output also renders a PNG next to it.
All figures go through the Agg backend so headless runs work.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def _new_axes(nrows=1, height=3.0):
    fig, axes = plt.subplots(nrows, 1, figsize=(6.4, height * nrows), squeeze=False)
    for ax in axes[:, 0]:
        ax.grid(alpha=0.3)
    return fig, axes[:, 0]


def save_control_figure(path, times, controls, u_min, title=None):
    fig, (ax,) = _new_axes()
    ax.plot(times, controls, color="tab:blue", lw=1.5)
    ax.axhline(1.0, color="gray", ls="--", lw=0.8)
    ax.axhline(u_min, color="gray", ls="--", lw=0.8)
    ax.set_xlabel("time (units of inverse initial frequency)")
    ax.set_ylabel("control u")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_trajectory_figure(path, traj, title=None):
    fig, (ax1, ax2) = _new_axes(2)
    ax1.plot(traj.times, traj.x1, label="x1")
    ax1.plot(traj.times, traj.x2, label="x2")
    ax1.plot(traj.times, traj.x3, label="x3")
    ax1.set_ylabel("moment variables")
    ax1.legend(loc="best", fontsize=8)
    if title:
        ax1.set_title(title)
    ax2.plot(traj.times, traj.energies, label="E")
    ax2.plot(traj.times, traj.lagrangian_means, label="L")
    ax2.plot(traj.times, traj.correlations, label="C")
    ax2.set_xlabel("time")
    ax2.set_ylabel("energies")
    ax2.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_sweep_figure(path, points, baseline=None, title=None):
    """Efficiency loss and parasitic energy vs duration, baseline overlaid."""
    fig, (ax1, ax2) = _new_axes(2)
    ok = [p for p in points if np.isfinite(p.delta)]
    bad = [p for p in points if not np.isfinite(p.delta)]
    if ok:
        ax1.plot([p.duration for p in ok], [p.delta for p in ok], "o-",
                 color="tab:blue", ms=3, label="optimized")
        ax2.plot([p.duration for p in ok], [p.parasitic for p in ok], "o-",
                 color="tab:blue", ms=3, label="optimized")
    for p in bad:
        ax1.axvline(p.duration, color="lightgray", lw=0.8)
    if baseline:
        ax1.plot([b["duration"] for b in baseline], [b["delta"] for b in baseline],
                 "o", mfc="none", color="tab:red", label="reference ramps")
        ax2.plot([b["duration"] for b in baseline], [b["parasitic"] for b in baseline],
                 "o", mfc="none", color="tab:red", label="reference ramps")
    ax1.set_ylabel("efficiency loss")
    ax1.legend(loc="best", fontsize=8)
    if title:
        ax1.set_title(title)
    ax2.set_xlabel("stroke duration")
    ax2.set_ylabel("parasitic energy")
    ax2.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_min_time_figure(path, history, min_time, title=None):
    fig, (ax,) = _new_axes()
    for duration, status, _ in history:
        feasible = status in ("optimal", "feasible-suboptimal")
        ax.plot(duration, 1.0 if feasible else 0.0, "o",
                color="tab:green" if feasible else "tab:red", ms=5)
    ax.axvline(min_time, color="tab:blue", ls="--", label=f"minimum {min_time:.3f}")
    ax.set_yticks([0, 1], ["infeasible", "feasible"])
    ax.set_xlabel("stroke duration")
    ax.legend(loc="center right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_feedback_figure(path, runs, title=None):
    fig, (ax1, ax2) = _new_axes(2)
    for run in runs:
        label = f"eps={run.protocol.epsilon:g}"
        ax1.plot(run.times, run.controls, lw=1.2, label=label)
        ax2.plot(run.times, run.states[:, 2], lw=1.2, label=label)
    ax1.set_ylabel("control u")
    ax1.legend(loc="best", fontsize=8)
    if title:
        ax1.set_title(title)
    ax2.set_xlabel("time")
    ax2.set_ylabel("correlation moment x3")
    ax2.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_sde_figure(path, mc, ode, title=None):
    """Monte-Carlo moments with 3-sigma bands against the deterministic curves."""
    labels = ("E", "L", "C")
    reference = ode.moments()
    fig, axes = _new_axes(3, height=2.2)
    for j, (ax, name) in enumerate(zip(axes, labels)):
        mean = mc.means[:, j]
        band = 3.0 * mc.standard_errors[:, j]
        ax.fill_between(mc.times, mean - band, mean + band,
                        color="tab:blue", alpha=0.25, label="MC +-3 s.e.")
        ax.plot(ode.times, reference[:, j], color="tab:red", lw=1.0, label="moment ODE")
        ax.set_ylabel(name)
        if j == 0:
            ax.legend(loc="best", fontsize=8)
            if title:
                ax.set_title(title)
    axes[-1].set_xlabel("time")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
