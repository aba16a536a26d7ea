"""Replicated Monte Carlo runs with deterministic aggregation.

Each replicate simulates on its own RNG substream derived from
(master seed, replicate index); reduction always happens in replicate
order, so results are identical for any parallelism level.  Replicates
are scheduled on a thread pool (the compiled kernels release the GIL).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binomtest, norm

from .ssa import (
    GrowthWindowError,
    SimConfig,
    Terminal,
    derive_seed,
    estimate_growth_rate,
    simulate_coupled_sandwich,
    simulate_epidemic,
)
from .theory import Scenario, classify_scenario, endemic_equilibrium


class InsufficientSurvivorsError(RuntimeError):
    """Fewer surviving replicates than the analysis needs."""


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Preferred over the Wald interval because extinction frequencies sit
    near 0 or 1 for many parameter sets.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    n = float(trials)
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    # the boundary endpoints are exact (0 successes pins the lower end,
    # all successes the upper); avoid returning 1 - ulp there
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return (lo, hi)


@dataclass(frozen=True, eq=False)
class EnsembleConfig:
    """Replicated-run specification.

    ``sim`` is the per-replicate template; its ``seed`` acts as the master
    seed.  A replicate counts as a minor outbreak (extinct) when its
    infected count hits zero by ``extinction_horizon``.  The optional
    windows switch on survivor analyses and need a sample grid covering
    them.  ``checkpoints`` records survivor (i, n) counts at the given
    times for trend tests.
    """

    sim: SimConfig
    replicates: int
    extinction_horizon: float
    endemic_window: Optional[Tuple[float, float]] = None
    growth_window: Optional[Tuple[float, float]] = None
    checkpoints: Optional[Tuple[float, ...]] = None
    parallelism: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0 < self.extinction_horizon <= self.sim.t_max:
            raise ValueError("extinction_horizon must lie in (0, t_max]")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not self.sim.stop_on_epidemic_extinction:
            raise ValueError("ensemble classification requires stop_on_epidemic_extinction")
        grid = self.sim.grid
        for name, window in (("endemic_window", self.endemic_window),
                             ("growth_window", self.growth_window)):
            if window is None:
                continue
            a, b = window
            if not 0 <= a < b <= self.sim.t_max:
                raise ValueError(f"{name} must satisfy 0 <= a < b <= t_max")
            if ((grid >= a) & (grid <= b)).sum() < 2:
                raise ValueError(f"{name} needs at least two sample-grid points inside it")
        if self.checkpoints is not None:
            for c in self.checkpoints:
                if not 0 < c <= self.sim.t_max:
                    raise ValueError("checkpoints must lie in (0, t_max]")
                if grid.size == 0 or grid[grid <= c * (1 + 1e-12)].size == 0:
                    raise ValueError("checkpoints need a sample grid reaching them")


@dataclass(frozen=True, eq=False)
class ReplicateOutcome:
    index: int
    terminal: Terminal
    t_end: float
    event_count: int
    extinct: bool
    growth_rate: Optional[float]
    endemic_avg: Optional[np.ndarray]
    checkpoint_counts: Optional[Tuple[Tuple[int, int], ...]]


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Aggregated replicate results; survivor analyses are None when the
    corresponding window was not configured or no survivor supported them."""

    replicates: int
    n_extinct: int
    n_survived: int
    extinction_freq: float
    extinction_ci: Tuple[float, float]
    terminals: Tuple[Terminal, ...]
    mean_growth_rate: Optional[float]
    growth_rate_se: Optional[float]
    growth_rates: Optional[np.ndarray]
    endemic_avg: Optional[np.ndarray]
    endemic_se: Optional[np.ndarray]
    n_endemic_survivors: int
    outcomes: Tuple[ReplicateOutcome, ...]


def _state_at(traj, t):
    # piecewise-constant sample: state after the last recorded time <= t
    idx = int(np.searchsorted(traj.times, t * (1 + 1e-12), side="right")) - 1
    idx = max(idx, 0)
    return traj.counts[idx]


def _run_replicate(config: EnsembleConfig, index: int) -> ReplicateOutcome:
    sim = replace(config.sim, seed=derive_seed(config.sim.seed, index))
    traj = simulate_epidemic(sim)
    extinct = (
        traj.terminal in (Terminal.EPIDEMIC_EXTINCT, Terminal.POPULATION_EXTINCT)
        and traj.final_time <= config.extinction_horizon
    )
    growth = None
    endemic = None
    checkpoints = None
    if not extinct:
        if config.growth_window is not None:
            try:
                growth = estimate_growth_rate(traj, config.growth_window, field="i")
            except GrowthWindowError:
                growth = None
        if config.endemic_window is not None:
            a, b = config.endemic_window
            mask = (traj.times >= a) & (traj.times <= b)
            if mask.sum() >= 2 and traj.counts[mask].sum(axis=1).min() > 0:
                counts = traj.counts[mask].astype(np.float64)
                totals = counts.sum(axis=1)
                endemic = (counts / totals[:, None]).mean(axis=0)
        if config.checkpoints is not None:
            checkpoints = tuple(
                (int(_state_at(traj, c)[2]), int(_state_at(traj, c).sum()))
                for c in config.checkpoints
            )
    return ReplicateOutcome(
        index=index,
        terminal=traj.terminal,
        t_end=traj.final_time,
        event_count=traj.event_count,
        extinct=extinct,
        growth_rate=growth,
        endemic_avg=endemic,
        checkpoint_counts=checkpoints,
    )


def run_ensemble(config: EnsembleConfig) -> EnsembleStats:
    """Execute all replicates and reduce in replicate order."""
    indices = range(config.replicates)
    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            outcomes = list(pool.map(lambda k: _run_replicate(config, k), indices))
    else:
        outcomes = [_run_replicate(config, k) for k in indices]
    outcomes.sort(key=lambda o: o.index)
    n_extinct = sum(o.extinct for o in outcomes)
    n = config.replicates
    freq = n_extinct / n
    ci = wilson_interval(n_extinct, n)
    growth_rates = np.array(
        [o.growth_rate for o in outcomes if o.growth_rate is not None], dtype=np.float64
    )
    mean_growth = se_growth = None
    if config.growth_window is not None and growth_rates.size:
        mean_growth = float(growth_rates.mean())
        se_growth = float(growth_rates.std(ddof=1) / math.sqrt(growth_rates.size)) if growth_rates.size > 1 else 0.0
    endemic_rows = [o.endemic_avg for o in outcomes if o.endemic_avg is not None]
    endemic_avg = endemic_se = None
    if config.endemic_window is not None and endemic_rows:
        stack = np.vstack(endemic_rows)
        endemic_avg = stack.mean(axis=0)
        endemic_se = (
            stack.std(axis=0, ddof=1) / math.sqrt(stack.shape[0])
            if stack.shape[0] > 1
            else np.zeros(4)
        )
    return EnsembleStats(
        replicates=n,
        n_extinct=n_extinct,
        n_survived=n - n_extinct,
        extinction_freq=freq,
        extinction_ci=ci,
        terminals=tuple(o.terminal for o in outcomes),
        mean_growth_rate=mean_growth,
        growth_rate_se=se_growth,
        growth_rates=growth_rates if config.growth_window is not None else None,
        endemic_avg=endemic_avg,
        endemic_se=endemic_se,
        n_endemic_survivors=len(endemic_rows),
        outcomes=tuple(outcomes),
    )


@dataclass(frozen=True, eq=False)
class EndemicLevelReport:
    equilibrium: np.ndarray
    observed: np.ndarray
    observed_se: np.ndarray
    max_rel_error: float
    n_survivors: int
    window: Tuple[float, float]


def endemic_level_check(config: EnsembleConfig, min_survivors: int = 30) -> EndemicLevelReport:
    """Survivor time-averaged compartment fractions against the endemic point.

    Averages S/N, E/N, I/N, R/N over the endemic window among surviving
    replicates and reports the worst relative error against the positive
    equilibrium components.  The comparison uses fractions of the realized
    population N(t), which on survival tracks the deterministic curve.
    """
    if config.endemic_window is None:
        raise ValueError("endemic_level_check needs an endemic_window")
    if classify_scenario(config.sim.params) is not Scenario.ENDEMIC_CAPABLE:
        raise ValueError("endemic level check requires the endemic-capable scenario")
    stats = run_ensemble(config)
    if stats.n_endemic_survivors < min_survivors:
        raise InsufficientSurvivorsError(
            f"only {stats.n_endemic_survivors} survivors with endemic-window data "
            f"(need {min_survivors})"
        )
    equilibrium = np.asarray(endemic_equilibrium(config.sim.params))
    observed = stats.endemic_avg
    positive = equilibrium > 0
    rel = np.abs(observed[positive] - equilibrium[positive]) / equilibrium[positive]
    return EndemicLevelReport(
        equilibrium=equilibrium,
        observed=observed,
        observed_se=stats.endemic_se,
        max_rel_error=float(rel.max()),
        n_survivors=stats.n_endemic_survivors,
        window=config.endemic_window,
    )


@dataclass(frozen=True, eq=False)
class DiscriminationReport:
    """Contrast between the subdominant-growth and endemic-capable regimes.

    For the subdominant set the infected fraction should fall between the
    half-horizon and horizon checkpoints; for the endemic-capable set the
    infected count should rise and the final fraction should sit near the
    endemic level.  P-values are one-sided sign tests across survivors.
    """

    decay_pvalue: float
    growth_pvalue: float
    subdominant_prevalence: Tuple[float, float]
    endemic_prevalence: Tuple[float, float]
    endemic_level: float
    prevalence_rel_error: float
    n_survivors_subdominant: int
    n_survivors_endemic: int


def _with_checkpoints(config: EnsembleConfig) -> EnsembleConfig:
    cps = (config.extinction_horizon / 2.0, config.extinction_horizon)
    return replace(config, checkpoints=cps)


def scenario_discrimination(
    config_a: EnsembleConfig,
    config_b: EnsembleConfig,
    min_survivors: int = 30,
) -> DiscriminationReport:
    """Check the qualitative trichotomy on two ensembles.

    ``config_a`` must be in the subdominant-growth regime (epidemic grows,
    population grows faster) and ``config_b`` in the endemic-capable one;
    anything else (including swapped arguments) is rejected.
    """
    if classify_scenario(config_a.sim.params) is not Scenario.SUBDOMINANT_GROWTH:
        raise ValueError("config_a must be in the subdominant-growth scenario")
    if classify_scenario(config_b.sim.params) is not Scenario.ENDEMIC_CAPABLE:
        raise ValueError("config_b must be in the endemic-capable scenario")
    stats_a = run_ensemble(_with_checkpoints(config_a))
    stats_b = run_ensemble(_with_checkpoints(config_b))

    def survivor_checkpoints(stats):
        return [o.checkpoint_counts for o in stats.outcomes if not o.extinct and o.checkpoint_counts]

    cps_a = survivor_checkpoints(stats_a)
    cps_b = survivor_checkpoints(stats_b)
    if len(cps_a) < min_survivors or len(cps_b) < min_survivors:
        raise InsufficientSurvivorsError(
            f"survivors: subdominant {len(cps_a)}, endemic {len(cps_b)} (need {min_survivors})"
        )
    prev_a = np.array([[i / n for i, n in pair] for pair in cps_a], dtype=np.float64)
    decayed = int((prev_a[:, 1] < prev_a[:, 0]).sum())
    decay_p = binomtest(decayed, prev_a.shape[0], 0.5, alternative="greater").pvalue
    counts_b = np.array([[i for i, _ in pair] for pair in cps_b], dtype=np.float64)
    grew = int((counts_b[:, 1] > counts_b[:, 0]).sum())
    growth_p = binomtest(grew, counts_b.shape[0], 0.5, alternative="greater").pvalue
    prev_b = np.array([[i / n for i, n in pair] for pair in cps_b], dtype=np.float64)
    i_hat = endemic_equilibrium(config_b.sim.params)[2]
    mean_prev_end = float(prev_b[:, 1].mean())
    return DiscriminationReport(
        decay_pvalue=float(decay_p),
        growth_pvalue=float(growth_p),
        subdominant_prevalence=(float(prev_a[:, 0].mean()), float(prev_a[:, 1].mean())),
        endemic_prevalence=(float(prev_b[:, 0].mean()), mean_prev_end),
        endemic_level=float(i_hat),
        prevalence_rel_error=abs(mean_prev_end - i_hat) / i_hat,
        n_survivors_subdominant=prev_a.shape[0],
        n_survivors_endemic=prev_b.shape[0],
    )


@dataclass(frozen=True, eq=False)
class CoupledEnsembleStats:
    """Aggregates over seeded sandwich runs: pathwise ordering violations
    and the marginal extinction bookkeeping for both bounding processes.
    Runs whose bound was still midsize when tracking ended (frozen by
    breakdown or at t_max) are counted as undetermined and treated as
    survivors by the frequency estimates."""

    replicates: int
    total_violations: int
    upper_extinct: int
    upper_undetermined: int
    lower_extinct: int
    lower_undetermined: int
    n_breakdowns: int
    upper_extinction_freq: float
    lower_extinction_freq: float
    upper_ci: Tuple[float, float]
    lower_ci: Tuple[float, float]


def run_coupled_ensemble(
    sim: SimConfig,
    eps0: float,
    replicates: int,
    upper_stop: int = 400,
    lower_stop: int = 150,
    parallelism: int = 1,
) -> CoupledEnsembleStats:
    """Seeded sandwich-coupling replicates with marginal extinction counts."""

    def one(index):
        cfg = replace(sim, seed=derive_seed(sim.seed, index))
        return simulate_coupled_sandwich(cfg, eps0, upper_stop=upper_stop, lower_stop=lower_stop)

    indices = range(replicates)
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            runs = list(pool.map(one, indices))
    else:
        runs = [one(k) for k in indices]
    violations = sum(run.ordering_violations for run in runs)
    upper_extinct = sum(run.final_upper == 0 for run in runs)
    upper_undet = sum(0 < run.final_upper < upper_stop for run in runs)
    lower_extinct = sum(run.final_lower == 0 for run in runs)
    lower_undet = sum(0 < run.final_lower < lower_stop for run in runs)
    breakdowns = sum(run.breakdown_time is not None for run in runs)
    return CoupledEnsembleStats(
        replicates=replicates,
        total_violations=violations,
        upper_extinct=upper_extinct,
        upper_undetermined=upper_undet,
        lower_extinct=lower_extinct,
        lower_undetermined=lower_undet,
        n_breakdowns=breakdowns,
        upper_extinction_freq=upper_extinct / replicates,
        lower_extinction_freq=lower_extinct / replicates,
        upper_ci=wilson_interval(upper_extinct, replicates),
        lower_ci=wilson_interval(lower_extinct, replicates),
    )
