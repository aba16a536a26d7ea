"""Command-line surface: parse a run specification, execute, emit files.

Commands: theory, simulate, couple, ode, ensemble, compare.  Parameters
come from ``--config <json>`` and/or individual flags (flags win).  Every
invocation writes into exactly one output directory: ``summary.json``
(theory quantities, run status, seeds, tool version, resolved spec),
``runspec.json`` (reloadable via --config for bit-identical replay), and
the command's CSV outputs.  Exit codes: 0 success, 2 validation error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import __version__
from .ensemble import EnsembleConfig, run_ensemble
from .fluid import integrate, proportions_to_counts, compare_scaled
from .model import ModelParams, PopulationState, default_initial_state
from .ssa import SimConfig, simulate_coupled_sandwich, simulate_epidemic, uniform_grid
from .theory import theory_summary

OUT_ROOT_ENV = "EPIGROW_OUT"

COMMANDS = {
    "theory": "closed-form quantities for a parameter set",
    "simulate": "one exact stochastic trajectory",
    "couple": "one sandwich-coupled run (lower / epidemic / upper)",
    "ode": "integrate the deterministic fluid limit",
    "ensemble": "replicated runs with extinction statistics",
    "compare": "scaled stochastic trajectory vs fluid limit",
}

_DEFAULTS = {
    "seed": 0,
    "t_max": 10.0,
    "dt": 1e-3,
    "eps0": 0.05,
    "eps1": 0.01,
    "eps2": 0.01,
    "replicates": 100,
    "grid_step": 0.1,
    "parallelism": 1,
    "survival_threshold": None,
}

_PARAM_KEYS = ("lambda", "mu", "gamma", "delta", "nu", "n0")
_OPTION_KEYS = tuple(_DEFAULTS)


class CliError(ValueError):
    """Invalid configuration; maps to exit code 2."""


@dataclass(frozen=True)
class RunSpec:
    command: str
    params: ModelParams
    seed: int
    t_max: float
    dt: float
    eps0: float
    eps1: float
    eps2: float
    replicates: int
    grid_step: float
    parallelism: int
    survival_threshold: Optional[int]
    out_dir: Path

    def config_dict(self) -> dict:
        d = {
            "command": self.command,
            "lambda": self.params.birth_rate,
            "mu": self.params.death_rate,
            "gamma": self.params.contact_rate,
            "delta": self.params.recovery_rate,
            "n0": self.params.initial_population,
            "seed": self.seed,
            "t_max": self.t_max,
            "dt": self.dt,
            "eps0": self.eps0,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "replicates": self.replicates,
            "grid_step": self.grid_step,
            "parallelism": self.parallelism,
            "survival_threshold": self.survival_threshold,
        }
        if self.params.is_seir:
            d["nu"] = self.params.latency_exit_rate
        return d


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epigrow",
        description="Exact stochastic simulation and analysis of epidemics in growing populations",
    )
    parser.add_argument("--version", action="version", version=f"epigrow {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        sp = subparsers.add_parser(name, help=help_text)
        sp.add_argument("--config", type=Path, help="JSON config file; flags override its values")
        sp.add_argument("--lambda", dest="lambda_", type=float, help="per-capita birth rate")
        sp.add_argument("--mu", type=float, help="per-capita death rate")
        sp.add_argument("--gamma", type=float, help="infectious contact rate")
        sp.add_argument("--delta", type=float, help="recovery rate")
        sp.add_argument("--nu", type=float, help="latency exit rate (selects the SEIR variant)")
        sp.add_argument("--n0", type=int, help="initial population size")
        sp.add_argument("--seed", type=int, help="master RNG seed (default 0)")
        sp.add_argument("--t-max", dest="t_max", type=float, help="time horizon (default 10)")
        sp.add_argument("--dt", type=float, help="ODE step (default 1e-3)")
        sp.add_argument("--eps0", type=float, help="coupling breakdown fraction (default 0.05)")
        sp.add_argument("--eps1", type=float, help="initial infectious proportion (default 0.01)")
        sp.add_argument("--eps2", type=float, help="initial recovered proportion (default 0.01)")
        sp.add_argument("--replicates", type=int, help="ensemble size (default 100)")
        sp.add_argument("--grid-step", dest="grid_step", type=float, help="sampling step (default 0.1)")
        sp.add_argument("--parallelism", type=int, help="worker threads for ensembles (default 1)")
        sp.add_argument(
            "--survival-threshold",
            dest="survival_threshold",
            type=int,
            help="stop a replicate once e+i reaches this count (fate determined)",
        )
        sp.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ROOT_ENV}/<command>)")
    return parser


def _load_config_file(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    for key in doc:
        if key not in _PARAM_KEYS and key not in _OPTION_KEYS and key != "command":
            raise CliError(f"unknown config field {key!r}")
    return doc


def _require_number(merged: dict, key: str) -> float:
    if key not in merged or merged[key] is None:
        raise CliError(f"missing required parameter {key!r}")
    value = merged[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise CliError(f"parameter {key!r} must be a number, got {value!r}")
    return float(value)


def parse_config(args: argparse.Namespace) -> RunSpec:
    """Merge defaults, the optional config file, and CLI flags into a RunSpec."""
    merged = dict(_DEFAULTS)
    if args.config is not None:
        doc = _load_config_file(args.config)
        if "command" in doc and doc["command"] != args.command:
            raise CliError(
                f"config file was written for command {doc['command']!r}, invoked {args.command!r}"
            )
        merged.update({k: v for k, v in doc.items() if k != "command"})
    flag_values = {
        "lambda": args.lambda_,
        "mu": args.mu,
        "gamma": args.gamma,
        "delta": args.delta,
        "nu": args.nu,
        "n0": args.n0,
        "seed": args.seed,
        "t_max": args.t_max,
        "dt": args.dt,
        "eps0": args.eps0,
        "eps1": args.eps1,
        "eps2": args.eps2,
        "replicates": args.replicates,
        "grid_step": args.grid_step,
        "parallelism": args.parallelism,
        "survival_threshold": args.survival_threshold,
    }
    merged.update({k: v for k, v in flag_values.items() if v is not None})

    lam = _require_number(merged, "lambda")
    mu = _require_number(merged, "mu")
    gamma = _require_number(merged, "gamma")
    delta = _require_number(merged, "delta")
    n0 = merged.get("n0")
    if n0 is None:
        raise CliError("missing required parameter 'n0'")
    if not isinstance(n0, int) or isinstance(n0, bool) or n0 < 1:
        raise CliError(f"parameter 'n0' must be an integer >= 1, got {n0!r}")
    nu = merged.get("nu")
    if nu is not None:
        nu = float(nu)
    if lam <= mu:
        raise CliError(
            "lambda must exceed mu: the model assumes a growing (supercritical) population"
        )
    try:
        params = ModelParams(
            birth_rate=lam,
            death_rate=mu,
            contact_rate=gamma,
            recovery_rate=delta,
            latency_exit_rate=nu,
            initial_population=n0,
        )
    except ValueError as exc:
        raise CliError(str(exc))

    for key in ("t_max", "dt", "eps1", "eps2", "grid_step"):
        if not merged[key] > 0:
            raise CliError(f"option {key!r} must be positive, got {merged[key]!r}")
    if not 0.0 < merged["eps0"] < 1.0:
        raise CliError(f"option 'eps0' must lie in (0, 1), got {merged['eps0']!r}")
    if merged["eps1"] + merged["eps2"] >= 1.0:
        raise CliError("eps1 + eps2 must be below 1")
    if merged["replicates"] < 1:
        raise CliError("option 'replicates' must be >= 1")
    if merged["parallelism"] < 1:
        raise CliError("option 'parallelism' must be >= 1")
    if merged["seed"] < 0:
        raise CliError("option 'seed' must be >= 0")
    if merged["survival_threshold"] is not None and merged["survival_threshold"] < 1:
        raise CliError("option 'survival_threshold' must be >= 1")

    out = args.out
    if out is None:
        root = os.environ.get(OUT_ROOT_ENV)
        if not root:
            raise CliError(f"give --out or set ${OUT_ROOT_ENV} as the default output root")
        out = Path(root) / args.command
    return RunSpec(
        command=args.command,
        params=params,
        seed=int(merged["seed"]),
        t_max=float(merged["t_max"]),
        dt=float(merged["dt"]),
        eps0=float(merged["eps0"]),
        eps1=float(merged["eps1"]),
        eps2=float(merged["eps2"]),
        replicates=int(merged["replicates"]),
        grid_step=float(merged["grid_step"]),
        parallelism=int(merged["parallelism"]),
        survival_threshold=merged["survival_threshold"],
        out_dir=out,
    )


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trajectory_csv(path: Path, traj) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,S,E,I,R,N\n")
        for t, row in zip(traj.times, traj.counts):
            s, e, i, r = (int(v) for v in row)
            fh.write(f"{t:.9g},{s},{e},{i},{r},{s + e + i + r}\n")


def _write_coupled_csv(path: Path, coupled) -> None:
    bt = coupled.breakdown_time
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,I_lower,I,I_upper,S_over_N,breakdown_flag\n")
        for t, low, mid, up, frac in zip(
            coupled.times, coupled.i_lower, coupled.i_epidemic, coupled.i_upper, coupled.s_over_n
        ):
            flag = 1 if bt is not None and t >= bt else 0
            fh.write(f"{t:.9g},{int(low)},{int(mid)},{int(up)},{frac:.9g},{flag}\n")


def _write_ode_csv(path: Path, sol) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,s,e,i,r\n")
        for t, row in zip(sol.times, sol.states):
            fh.write(f"{t:.9g},{row[0]:.17g},{row[1]:.17g},{row[2]:.17g},{row[3]:.17g}\n")


def _write_replicates_csv(path: Path, stats) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("replicate,terminal,extinct,t_end,events\n")
        for o in stats.outcomes:
            fh.write(
                f"{o.index},{o.terminal.value},{int(o.extinct)},{o.t_end:.9g},{o.event_count}\n"
            )


def _make_grid(spec: RunSpec):
    return uniform_grid(spec.t_max, spec.grid_step)


def _sim_config(spec: RunSpec, initial=None, stop_on_extinction=True, grid=None) -> SimConfig:
    return SimConfig(
        params=spec.params,
        initial=initial if initial is not None else default_initial_state(spec.params),
        t_max=spec.t_max,
        seed=spec.seed,
        sample_grid=grid,
        infection_threshold=spec.survival_threshold,
        stop_on_epidemic_extinction=stop_on_extinction,
    )


def _scaled_initial(spec: RunSpec):
    z0 = [1.0 - spec.eps1 - spec.eps2, 0.0, spec.eps1, spec.eps2]
    return z0


def cmd_theory(spec: RunSpec) -> dict:
    return {"files": []}


def cmd_simulate(spec: RunSpec) -> dict:
    config = _sim_config(spec, grid=_make_grid(spec))
    traj = simulate_epidemic(config)
    _write_trajectory_csv(spec.out_dir / "trajectory.csv", traj)
    return {
        "files": ["trajectory.csv"],
        "terminal": traj.terminal.value,
        "event_count": traj.event_count,
        "final_time": traj.final_time,
        "final_state": [int(v) for v in traj.counts[-1]],
    }


def cmd_couple(spec: RunSpec) -> dict:
    if spec.params.is_seir:
        raise CliError("the couple command supports the SIR variant only")
    config = _sim_config(spec, grid=_make_grid(spec))
    coupled = simulate_coupled_sandwich(config, spec.eps0)
    _write_coupled_csv(spec.out_dir / "coupled.csv", coupled)
    return {
        "files": ["coupled.csv"],
        "terminal": coupled.terminal.value,
        "event_count": coupled.event_count,
        "breakdown_time": coupled.breakdown_time,
        "ordering_violations": coupled.ordering_violations,
        "lower_frozen_after_breakdown": coupled.breakdown_time is not None,
    }


def cmd_ode(spec: RunSpec) -> dict:
    sol = integrate(
        spec.params,
        _scaled_initial(spec),
        spec.t_max,
        dt=spec.dt,
        grid_step=spec.grid_step,
    )
    _write_ode_csv(spec.out_dir / "ode.csv", sol)
    return {
        "files": ["ode.csv"],
        "converged_to": sol.converged_to.value if sol.converged_to else None,
        "converged_at": sol.converged_at,
    }


def cmd_ensemble(spec: RunSpec) -> dict:
    config = EnsembleConfig(
        sim=_sim_config(spec),
        replicates=spec.replicates,
        extinction_horizon=spec.t_max,
        parallelism=spec.parallelism,
    )
    stats = run_ensemble(config)
    _write_replicates_csv(spec.out_dir / "replicates.csv", stats)
    return {
        "files": ["replicates.csv"],
        "replicates": stats.replicates,
        "n_extinct": stats.n_extinct,
        "n_survived": stats.n_survived,
        "extinction_freq": stats.extinction_freq,
        "extinction_ci": list(stats.extinction_ci),
    }


def cmd_compare(spec: RunSpec) -> dict:
    counts = proportions_to_counts(_scaled_initial(spec), spec.params.initial_population)
    initial = PopulationState(*(int(v) for v in counts))
    grid = _make_grid(spec)
    config = _sim_config(spec, initial=initial, stop_on_extinction=False, grid=grid)
    traj = simulate_epidemic(config)
    sol = integrate(
        spec.params,
        _scaled_initial(spec),
        spec.t_max,
        dt=spec.dt,
        grid_step=spec.grid_step,
    )
    deviation = compare_scaled(spec.params, traj, sol)
    _write_trajectory_csv(spec.out_dir / "trajectory.csv", traj)
    _write_ode_csv(spec.out_dir / "ode.csv", sol)
    return {
        "files": ["trajectory.csv", "ode.csv"],
        "terminal": traj.terminal.value,
        "sup_norm_deviation": deviation,
        "initial_counts": [int(v) for v in counts],
    }


_DISPATCH = {
    "theory": cmd_theory,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "ode": cmd_ode,
    "ensemble": cmd_ensemble,
    "compare": cmd_compare,
}


def run(spec: RunSpec) -> dict:
    out = spec.out_dir
    if out.exists() and not out.is_dir():
        raise OSError(f"output path exists and is not a directory: {out}")
    out.mkdir(parents=True, exist_ok=True)
    payload = _DISPATCH[spec.command](spec)
    summary = {
        "tool": "epigrow",
        "version": __version__,
        "command": spec.command,
        "seed": spec.seed,
        "runspec": spec.config_dict(),
        "theory": theory_summary(
            spec.params, eps0=spec.eps0, n=spec.params.initial_population
        ).to_dict(),
        "result": payload,
    }
    _write_json(out / "runspec.json", spec.config_dict())
    _write_json(out / "summary.json", summary)
    return summary


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = parse_config(args)
    except CliError as exc:
        print(f"epigrow: {exc}", file=sys.stderr)
        return 2
    try:
        run(spec)
    except (CliError, ValueError) as exc:
        print(f"epigrow: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/I-O failures
        print(f"epigrow: runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
