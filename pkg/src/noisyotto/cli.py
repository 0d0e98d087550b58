"""Command-line experiment runner.

Subcommands reproduce every figure-level result of the study: single
optimizations, duration sweeps against the closed-form baseline, the
minimum-feasible-time search, the slow feedback protocols, and Monte-Carlo
verification of the moment dynamics.  Each run writes plot-ready CSV files, a
JSON sidecar with metadata, rendered PNG figures, and a canonical
``config.resolved`` that reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 infeasible (or no feasibility
bracket), 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .controls import (
    ProtocolError,
    SampledProfile,
    dephasing_feedback,
    noiseless_feedback,
    ramp_duration,
    reference_profile,
)
from .dynamics import EngineConfig, NoiseParams
from .integrate import DivergenceError, IntegrationOptions, StiffnessError, score_control
from .montecarlo import (
    SdeOptions,
    compare_moments,
    ode_reference,
    simulate_ensemble,
    write_comparison_csv,
)
from .solver import (
    BracketError,
    SolveOptions,
    min_feasible_time,
    solve_at_duration,
    sweep_durations,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Effective configuration: defaults, then config file, then flag overrides."""

    ratio: float = 1.0 / 3.0
    gamma_a: float = 0.0
    gamma_p: float = 0.0
    T: float | None = None
    T_grid: str | None = None
    N: int = 69
    seed: int = 0
    out: str | None = None
    tol_constraint: float = 1e-8
    tol_optimality: float = 1e-8
    tol_rel: float = 1e-9
    tol_abs: float = 1e-11
    multistart: int = 8
    ensemble: int = 100_000
    dt: float = 1e-4
    sde_samples: int = 201
    scheme: str = "heun"
    shared_wiener: bool = False
    epsilon: str = "0.02"
    baseline_only: bool = False
    workers: int = 1
    figures: bool = True
    source: str = "ramp"
    ramp_index: int = 1
    control_file: str | None = None

    def validate(self) -> None:
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.gamma_a < 0.0 or self.gamma_p < 0.0:
            raise ConfigError("noise strengths must be nonnegative")
        if self.T is not None and self.T <= 0.0:
            raise ConfigError(f"duration must be positive, got {self.T}")
        if self.N < 4:
            raise ConfigError(f"collocation order must be >= 4, got {self.N}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in ("tol_constraint", "tol_optimality"):
            if not 0.0 < getattr(self, name) < 1e-2:
                raise ConfigError(f"{name} out of range (0, 1e-2)")
        for name in ("tol_rel", "tol_abs"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} out of range (0, 1)")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.ensemble < 100:
            raise ConfigError("ensemble must be at least 100")
        if self.scheme not in ("heun", "euler-ito"):
            raise ConfigError(f"unknown sde scheme {self.scheme!r}")
        if self.source not in ("ramp", "file", "feedback"):
            raise ConfigError(f"unknown control source {self.source!r}")
        if self.source == "file" and not self.control_file:
            raise ConfigError("source=file requires control_file")
        try:
            self.epsilon_list()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.T_grid is not None:
            self.grid_values()

    # -- derived pieces -------------------------------------------------

    def noise(self) -> NoiseParams:
        return NoiseParams(self.gamma_a, self.gamma_p)

    def integrator_options(self) -> IntegrationOptions:
        return IntegrationOptions(rel_tol=self.tol_rel, abs_tol=self.tol_abs)

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            constraint_tolerance=self.tol_constraint,
            optimality_tolerance=self.tol_optimality,
            multistart_count=self.multistart,
            seed=self.seed,
            integrator=self.integrator_options(),
        )

    def sde_options(self) -> SdeOptions:
        return SdeOptions(
            ensemble_size=self.ensemble,
            time_step=self.dt,
            seed=self.seed,
            scheme=self.scheme,
            n_samples=self.sde_samples,
            shared_wiener=self.shared_wiener,
        )

    def epsilon_list(self) -> list[float]:
        values = [float(tok) for tok in str(self.epsilon).split(",") if tok.strip()]
        if not values:
            raise ValueError("epsilon list is empty")
        for v in values:
            if not 0.0 < v <= 0.2:
                raise ValueError(f"epsilon {v} outside (0, 0.2]")
        return values

    def grid_values(self) -> np.ndarray:
        """Parse 'start:stop[:step]' into an inclusive ascending grid."""
        parts = str(self.T_grid).split(":")
        if len(parts) not in (2, 3):
            raise ConfigError(f"T-grid must be start:stop[:step], got {self.T_grid!r}")
        try:
            start, stop = float(parts[0]), float(parts[1])
            step = float(parts[2]) if len(parts) == 3 else (stop - start)
        except ValueError as exc:
            raise ConfigError(f"bad T-grid {self.T_grid!r}: {exc}") from exc
        if step <= 0.0 or stop < start or start <= 0.0:
            raise ConfigError(f"bad T-grid {self.T_grid!r}")
        values = np.arange(start, stop + 1e-9 * max(1.0, step), step)
        return values

    def resolved_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name}={value}")
        return "\n".join(sorted(lines)) + "\n"


_BOOL_KEYS = {"baseline_only", "figures", "shared_wiener"}
_INT_KEYS = {"N", "seed", "multistart", "ensemble", "workers", "ramp_index", "sde_samples"}
_FLOAT_KEYS = {
    "ratio", "gamma_a", "gamma_p", "T", "tol_constraint", "tol_optimality",
    "tol_rel", "tol_abs", "dt",
}
_STR_KEYS = {"T_grid", "out", "epsilon", "scheme", "source", "control_file"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config_file(path: str) -> dict:
    """Flat key=value file; '#' starts a comment.  Errors carry file:line."""
    values: dict = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        try:
            if key in _BOOL_KEYS:
                values[key] = _parse_bool(text)
            elif key in _INT_KEYS:
                values[key] = int(text)
            elif key in _FLOAT_KEYS:
                values[key] = float(text)
            elif key in _STR_KEYS:
                values[key] = text
            else:
                raise ValueError("unknown key")
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {key!r}: {exc}") from exc
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            setattr(cfg, f.name, flag_value)
    cfg.validate()
    return cfg


# ----------------------------------------------------------------------
# output helpers


def _prepare_out(cfg: RunConfig, command: str) -> str:
    out = cfg.out or os.path.join("runs", command)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.resolved"), "w") as fh:
        fh.write(cfg.resolved_text())
    return out


def _write_sidecar(out: str, command: str, cfg: RunConfig, extra: dict, wall: float):
    doc = {
        "command": command,
        "version": __version__,
        "wall_time_s": wall,
        "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)},
    }
    doc.update(extra)
    with open(os.path.join(out, "run.json"), "w") as fh:
        json.dump(doc, fh, indent=2, default=str)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and not np.isfinite(x):
        return "nan"
    return f"{x:.12g}" if isinstance(x, float) else str(x)


def _ramp_durations_in(ratio: float, lo: float, hi: float):
    out = []
    n = 1
    while True:
        t_n = ramp_duration(n, ratio)
        if t_n > hi + 1e-9:
            break
        if t_n >= lo - 1e-9:
            out.append((n, t_n))
        n += 1
    return out


def _resolve_control(cfg: RunConfig, duration: float | None):
    """Control source for replay commands: closed-form ramp, CSV file, feedback."""
    u_min = cfg.ratio**2
    if cfg.source == "file":
        profile = SampledProfile.from_csv(cfg.control_file, u_min)
        return profile, duration or profile.duration
    if cfg.source == "feedback":
        eps = cfg.epsilon_list()[0]
        if cfg.gamma_p > 0.0:
            run = dephasing_feedback(eps, cfg.gamma_p, cfg.ratio)
        else:
            run = noiseless_feedback(eps, cfg.ratio)
        profile = run.profile()
        return profile, profile.duration
    profile = reference_profile(cfg.ramp_index, cfg.ratio)
    return profile, duration or profile.duration


# ----------------------------------------------------------------------
# commands


def cmd_optimize(cfg: RunConfig) -> int:
    if cfg.T is None:
        raise ConfigError("optimize requires a duration (--T)")
    out = _prepare_out(cfg, "optimize")
    t0 = time.perf_counter()
    report = solve_at_duration(cfg.ratio, cfg.noise(), cfg.T, cfg.solve_options(), cfg.N)
    report.to_json(os.path.join(out, "solution.json"))

    code = EXIT_OK
    extra = {"status": str(report.status)}
    if report.status.is_feasible and report.profile is not None:
        times, controls = report.profile.samples(600)
        data = np.column_stack([times, controls, np.sqrt(controls)])
        np.savetxt(os.path.join(out, "control.csv"), data, delimiter=",",
                   header="t,u,omega", comments="")
        score = score_control(
            EngineConfig(cfg.ratio, cfg.T, cfg.noise()),
            report.profile,
            cfg.integrator_options(),
        )
        score.trajectory.to_csv(os.path.join(out, "trajectory.csv"))
        if cfg.figures:
            from . import plots

            plots.save_control_figure(
                os.path.join(out, "control.png"), times, controls, cfg.ratio**2,
                title=f"optimized control, T={cfg.T:g}",
            )
            plots.save_trajectory_figure(
                os.path.join(out, "trajectory.png"), score.trajectory,
                title=f"replayed stroke, delta={report.resim_delta:.3e}",
            )
        print(
            f"status={report.status} delta={report.resim_delta:.6g} "
            f"parasitic={report.resim_parasitic:.6g} violation={report.max_violation:.3g}"
        )
    else:
        print(f"status={report.status} violation={report.max_violation:.3g}")
        code = EXIT_INFEASIBLE
    _write_sidecar(out, "optimize", cfg, extra, time.perf_counter() - t0)
    return code


def _baseline_rows(cfg: RunConfig, durations):
    rows = []
    lo, hi = float(np.min(durations)), float(np.max(durations))
    for n, t_n in _ramp_durations_in(cfg.ratio, lo, hi):
        score = score_control(
            EngineConfig(cfg.ratio, t_n, cfg.noise()),
            reference_profile(n, cfg.ratio),
            cfg.integrator_options(),
        )
        rows.append(
            {"n": n, "duration": t_n, "delta": score.delta, "parasitic": score.parasitic}
        )
    return rows


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.T_grid is None:
        raise ConfigError("sweep requires a duration grid (--T-grid start:stop:step)")
    out = _prepare_out(cfg, "sweep")
    t0 = time.perf_counter()
    grid = cfg.grid_values()
    baseline = _baseline_rows(cfg, grid)
    baseline_by_t = {round(b["duration"], 9): b for b in baseline}

    points, reports = [], []
    if not cfg.baseline_only:
        # the closed-form durations inside the range join the grid so the
        # baseline comparison is head-to-head
        full_grid = np.unique(np.concatenate([grid, [b["duration"] for b in baseline]]))
        points, reports = sweep_durations(
            cfg.ratio, cfg.noise(), full_grid, cfg.solve_options(), cfg.N,
            workers=cfg.workers, return_reports=True,
        )
        points_dir = os.path.join(out, "points")
        os.makedirs(points_dir, exist_ok=True)
        for point, report in zip(points, reports):
            sub = os.path.join(points_dir, f"T_{point.duration:g}")
            os.makedirs(sub, exist_ok=True)
            report.to_json(os.path.join(sub, "solution.json"))

    header = "omega_h_T,delta_opt,delta_ref_if_applicable,parasitic_opt,status,wall_ms,parasitic_ref"
    lines = [header]
    if cfg.baseline_only:
        for b in baseline:
            lines.append(
                f"{_fmt(b['duration'])},,{_fmt(b['delta'])},,baseline,0,{_fmt(b['parasitic'])}"
            )
    else:
        for point in points:
            b = baseline_by_t.get(round(point.duration, 9))
            lines.append(
                ",".join(
                    [
                        _fmt(point.duration),
                        _fmt(point.delta),
                        _fmt(b["delta"]) if b else "",
                        _fmt(point.parasitic),
                        str(point.status),
                        _fmt(point.wall_time_s * 1e3),
                        _fmt(b["parasitic"]) if b else "",
                    ]
                )
            )
    with open(os.path.join(out, "sweep.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    if cfg.figures:
        from . import plots

        plots.save_sweep_figure(
            os.path.join(out, "sweep.png"), points, baseline,
            title=f"gamma_a={cfg.gamma_a:g}, gamma_p={cfg.gamma_p:g}",
        )
    n_feasible = sum(1 for p in points if p.status.is_feasible)
    print(f"sweep: {len(points)} points, {n_feasible} feasible; baseline rows: {len(baseline)}")
    _write_sidecar(out, "sweep", cfg, {"n_points": len(points)}, time.perf_counter() - t0)
    return EXIT_OK


def cmd_min_time(cfg: RunConfig) -> int:
    if cfg.T_grid is None:
        raise ConfigError("min-time requires a scan range (--T-grid lo:hi)")
    out = _prepare_out(cfg, "min-time")
    t0 = time.perf_counter()
    grid = cfg.grid_values()
    lo, hi = float(grid[0]), float(grid[-1])
    result = min_feasible_time(
        cfg.ratio, cfg.noise(), lo, hi, cfg.solve_options(), cfg.N
    )
    with open(os.path.join(out, "bracket_history.csv"), "w") as fh:
        fh.write("duration,status,max_violation\n")
        for duration, status, violation in result.history:
            fh.write(f"{_fmt(duration)},{status},{_fmt(violation)}\n")
    with open(os.path.join(out, "min_time.json"), "w") as fh:
        json.dump(
            {
                "min_time": result.min_time,
                "bracket": [result.bracket_low, result.bracket_high],
                "probes": len(result.history),
            },
            fh,
            indent=2,
        )
    if cfg.figures:
        from . import plots

        plots.save_min_time_figure(
            os.path.join(out, "bracket.png"), result.history, result.min_time,
            title=f"gamma_a={cfg.gamma_a:g}, gamma_p={cfg.gamma_p:g}",
        )
    print(f"min feasible time: {result.min_time:.4f} "
          f"(bracket {result.bracket_low:.4f} .. {result.bracket_high:.4f})")
    _write_sidecar(out, "min-time", cfg, {"min_time": result.min_time},
                   time.perf_counter() - t0)
    return EXIT_OK


def cmd_feedback(cfg: RunConfig) -> int:
    out = _prepare_out(cfg, "feedback")
    t0 = time.perf_counter()
    runs = []
    lines = ["epsilon,duration,switch_time,delta,parasitic,invariant_drift"]
    for eps in cfg.epsilon_list():
        if cfg.gamma_p > 0.0:
            run = dephasing_feedback(eps, cfg.gamma_p, cfg.ratio)
        else:
            run = noiseless_feedback(eps, cfg.ratio)
        runs.append(run)
        run.to_csv(os.path.join(out, f"feedback_eps_{eps:g}.csv"))
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    eps, run.duration, run.switch_time, run.delta,
                    run.parasitic, run.invariant_drift(),
                )
            )
        )
        print(
            f"eps={eps:g}: duration={run.duration:.3f} delta={run.delta:.6g} "
            f"invariant_drift={run.invariant_drift():.3g}"
        )
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if cfg.figures:
        from . import plots

        plots.save_feedback_figure(
            os.path.join(out, "feedback.png"), runs,
            title=f"gamma_p={cfg.gamma_p:g}",
        )
    _write_sidecar(out, "feedback", cfg, {"n_runs": len(runs)}, time.perf_counter() - t0)
    return EXIT_OK


def cmd_verify_sde(cfg: RunConfig) -> int:
    out = _prepare_out(cfg, "verify-sde")
    t0 = time.perf_counter()
    control, duration = _resolve_control(cfg, cfg.T)
    config = EngineConfig(cfg.ratio, duration, cfg.noise())
    mc = simulate_ensemble(config, control, cfg.sde_options())
    ode = ode_reference(config, control, mc, cfg.integrator_options())
    comparison = compare_moments(mc, ode)
    write_comparison_csv(os.path.join(out, "compare.csv"), mc, ode)
    with open(os.path.join(out, "zscores.json"), "w") as fh:
        json.dump(comparison.to_dict(), fh, indent=2)
    if cfg.figures:
        from . import plots

        plots.save_sde_figure(
            os.path.join(out, "sde.png"), mc, ode,
            title=f"{cfg.scheme}, {cfg.ensemble} trajectories",
        )
    print(
        f"max_z={comparison.max_z:.2f} fraction_above_3={comparison.fraction_above_3:.4f} "
        f"diverged={mc.diverged}"
    )
    _write_sidecar(out, "verify-sde", cfg, comparison.to_dict(), time.perf_counter() - t0)
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "min-time": cmd_min_time,
    "feedback": cmd_feedback,
    "verify-sde": cmd_verify_sde,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisyotto",
        description="Expansion-stroke optimization for a noisy quantum Otto engine",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--ratio", type=float, help="cold/hot frequency ratio in (0,1)")
        p.add_argument("--gamma-a", dest="gamma_a", type=float,
                       help="amplitude-noise strength")
        p.add_argument("--gamma-p", dest="gamma_p", type=float,
                       help="phase-damping strength")
        p.add_argument("--T", type=float, help="stroke duration")
        p.add_argument("--T-grid", dest="T_grid", help="duration grid start:stop[:step]")
        p.add_argument("--N", type=int, help="collocation order (default 69)")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--tol-constraint", dest="tol_constraint", type=float,
                       help="NLP equality tolerance")
        p.add_argument("--tol-optimality", dest="tol_optimality", type=float,
                       help="NLP stationarity tolerance")
        p.add_argument("--tol-rel", dest="tol_rel", type=float,
                       help="integrator relative tolerance")
        p.add_argument("--tol-abs", dest="tol_abs", type=float,
                       help="integrator absolute tolerance")
        p.add_argument("--multistart", type=int, help="number of solver starts")
        p.add_argument("--workers", type=int, help="parallel workers for sweeps")
        p.add_argument("--no-figures", dest="figures", action="store_const", const=False,
                       help="skip PNG rendering")

    p_opt = sub.add_parser("optimize", help="solve one stroke instance")
    add_common(p_opt)

    p_sweep = sub.add_parser("sweep", help="optimize over a duration grid")
    add_common(p_sweep)
    p_sweep.add_argument("--baseline-only", dest="baseline_only", action="store_const",
                         const=True, help="only score the closed-form ramps")

    p_min = sub.add_parser("min-time", help="bisect the minimum feasible duration")
    add_common(p_min)

    p_fb = sub.add_parser("feedback", help="run the slow feedback protocols")
    add_common(p_fb)
    p_fb.add_argument("--epsilon", help="comma-separated correlation plateaus")

    p_sde = sub.add_parser("verify-sde", help="Monte-Carlo check of the moment dynamics")
    add_common(p_sde)
    p_sde.add_argument("--ensemble", type=int, help="number of trajectories")
    p_sde.add_argument("--dt", type=float, help="fixed SDE time step")
    p_sde.add_argument("--sde-samples", dest="sde_samples", type=int,
                       help="number of recorded sample times")
    p_sde.add_argument("--scheme", choices=("heun", "euler-ito"),
                       help="heun (Stratonovich) or euler-ito negative control")
    p_sde.add_argument("--shared-wiener", dest="shared_wiener", action="store_const",
                       const=True, help="negative control: one path for both channels")
    p_sde.add_argument("--source", choices=("ramp", "file", "feedback"),
                       help="control to replay")
    p_sde.add_argument("--ramp-index", dest="ramp_index", type=int,
                       help="which closed-form ramp to replay")
    p_sde.add_argument("--control-file", dest="control_file",
                       help="CSV (t,u) control to replay")
    p_sde.add_argument("--epsilon", help="feedback plateau when source=feedback")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_run_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BracketError as exc:
        print(f"no feasibility bracket: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ProtocolError, StiffnessError, DivergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
