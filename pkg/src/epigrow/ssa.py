"""Exact event-by-event simulation of the epidemic and population chains.

Wraps the compiled kernels with validated configs, reproducible RNG
streams (PCG64 seeded through ``SeedSequence``), and sampled-trajectory
containers.  A single run is inherently serial; any number of runs can
execute concurrently since nothing here shares mutable state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import _kernels
from .model import ModelParams, PopulationState

# Effectively uncapped at desk scale while still guarding runaway loops.
DEFAULT_MAX_EVENTS = 10**12


def rng_from_seed(seed: int) -> np.random.Generator:
    """The engine's documented PRNG: PCG64 keyed by a SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_seed(master_seed: int, index: int) -> int:
    """Stable per-replicate substream key for (master seed, replicate index)."""
    ss = np.random.SeedSequence((master_seed, index))
    return int(ss.generate_state(1, np.uint64)[0])


class Terminal(enum.Enum):
    REACHED_TMAX = "ReachedTmax"
    EPIDEMIC_EXTINCT = "EpidemicExtinct"
    POPULATION_EXTINCT = "PopulationExtinct"
    EVENT_CAP_HIT = "EventCapHit"
    INFECTION_THRESHOLD_HIT = "InfectionThresholdHit"


_CODE_TO_TERMINAL = {
    _kernels.TMAX: Terminal.REACHED_TMAX,
    _kernels.EPIDEMIC_EXTINCT: Terminal.EPIDEMIC_EXTINCT,
    _kernels.POPULATION_EXTINCT: Terminal.POPULATION_EXTINCT,
    _kernels.EVENT_CAP: Terminal.EVENT_CAP_HIT,
    _kernels.THRESHOLD: Terminal.INFECTION_THRESHOLD_HIT,
}


class GrowthWindowError(ValueError):
    """The requested fit window contains an extinct (zero) sample."""


@dataclass(frozen=True, eq=False)
class SimConfig:
    """One run of the stochastic engine.

    ``sample_grid`` holds strictly increasing recording times in
    (0, t_max]; the state between jumps is piecewise constant.
    ``infection_threshold`` optionally ends the run once e+i reaches the
    threshold (terminal INFECTION_THRESHOLD_HIT); ensemble estimators use
    it to stop runs whose fate is already determined.
    ``stop_on_epidemic_extinction=False`` keeps simulating the population
    after the epidemic dies, which fluid-limit comparisons need.
    """

    params: ModelParams
    initial: PopulationState
    t_max: float
    max_events: int = DEFAULT_MAX_EVENTS
    seed: int = 0
    sample_grid: Optional[np.ndarray] = None
    infection_threshold: Optional[int] = None
    stop_on_epidemic_extinction: bool = True

    def __post_init__(self):
        if not (self.t_max >= 0 and math.isfinite(self.t_max)):
            # t_max == 0 is allowed as a degenerate horizon (initial state only)
            raise ValueError("t_max must be nonnegative and finite")
        if self.max_events <= 0:
            raise ValueError("max_events must be positive")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.infection_threshold is not None and self.infection_threshold < 1:
            raise ValueError("infection_threshold must be >= 1")
        if not self.params.is_seir and self.initial.e != 0:
            raise ValueError("SIR variant requires an initial state with e == 0")
        if self.sample_grid is not None:
            grid = np.asarray(self.sample_grid, dtype=np.float64)
            if grid.ndim != 1:
                raise ValueError("sample_grid must be one-dimensional")
            if grid.size:
                if np.any(np.diff(grid) <= 0):
                    raise ValueError("sample_grid times must be strictly increasing")
                if grid[0] <= 0 or grid[-1] > self.t_max * (1 + 1e-12):
                    raise ValueError("sample_grid times must lie in (0, t_max]")
            object.__setattr__(self, "sample_grid", grid)

    @property
    def grid(self) -> np.ndarray:
        if self.sample_grid is None:
            return np.empty(0, dtype=np.float64)
        return self.sample_grid


def uniform_grid(t_max: float, step: float) -> np.ndarray:
    """Recording times step, 2*step, ... up to and including t_max."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    count = int(round(t_max / step))
    grid = step * np.arange(1, count + 1)
    return grid[grid <= t_max * (1 + 1e-12)]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled states of one run: row k of ``counts`` is (s, e, i, r) at
    ``times[k]``.  First row is the initial state at t=0; the last row is
    the state at termination."""

    times: np.ndarray
    counts: np.ndarray
    terminal: Terminal
    event_count: int
    config: SimConfig

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> PopulationState:
        s, e, i, r = (int(v) for v in self.counts[-1])
        return PopulationState(s, e, i, r)

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def samples(self):
        return [
            (float(t), PopulationState(*(int(v) for v in row)))
            for t, row in zip(self.times, self.counts)
        ]


def _assemble(counts0, grid, out_counts, filled, t_end, final_row):
    times = [0.0]
    rows = [counts0]
    if filled:
        times.extend(grid[:filled].tolist())
        rows.extend(out_counts[:filled])
    if t_end > times[-1]:
        times.append(t_end)
        rows.append(final_row)
    return np.asarray(times, dtype=np.float64), np.asarray(rows, dtype=np.int64)


def simulate_epidemic(config: SimConfig) -> Trajectory:
    """One statistically exact realization of the epidemic chain.

    Identical (seed, config) pairs give bit-identical trajectories; the
    stream layout is documented in the kernel module.
    """
    p = config.params
    init = config.initial
    grid = config.grid
    out_counts = np.empty((grid.size, 4), dtype=np.int64)
    rng = rng_from_seed(config.seed)
    code, t_end, s, e, i, r, events, filled = _kernels.epidemic_kernel(
        rng,
        p.birth_rate,
        p.death_rate,
        p.contact_rate,
        p.recovery_rate,
        p.latency_exit_rate if p.is_seir else 0.0,
        p.is_seir,
        init.s,
        init.e,
        init.i,
        init.r,
        config.t_max,
        config.max_events,
        config.infection_threshold or 0,
        config.stop_on_epidemic_extinction,
        grid,
        out_counts,
    )
    times, counts = _assemble(
        np.array(init.as_tuple(), dtype=np.int64), grid, out_counts, filled, t_end,
        np.array([s, e, i, r], dtype=np.int64),
    )
    return Trajectory(
        times=times,
        counts=counts,
        terminal=_CODE_TO_TERMINAL[code],
        event_count=int(events),
        config=config,
    )


@dataclass(frozen=True, eq=False)
class AgeSample:
    """Ages of the individuals alive at t_max, conditioned on population
    survival; ``retries`` counts discarded extinct attempts."""

    ages: np.ndarray
    retries: int
    t_max: float


def simulate_population_with_ages(config: SimConfig, max_retries: int = 1000) -> AgeSample:
    """Individual-level pure population run returning the ages at t_max.

    Requires the epidemic to be absent from the initial state (e = i = 0);
    attempts that end in population extinction are resampled on fresh
    substreams derived from (seed, attempt).
    """
    init = config.initial
    if init.e != 0 or init.i != 0:
        raise ValueError("age tracking runs the pure population process; start with e = i = 0")
    p = config.params
    n0 = init.n
    growth = max(p.population_growth_rate, 0.0)
    expected = n0 * math.exp(growth * config.t_max)
    cap = int(6 * expected + 12 * math.sqrt(expected) + n0 + 1000)
    birth_times = np.empty(cap, dtype=np.float64)
    for attempt in range(max_retries):
        rng = rng_from_seed(derive_seed(config.seed, attempt))
        code, alive, events, t_end = _kernels.ages_kernel(
            rng, p.birth_rate, p.death_rate, n0, config.t_max, config.max_events, birth_times
        )
        if code == _kernels.TMAX:
            ages = config.t_max - birth_times[:alive]
            return AgeSample(ages=ages.copy(), retries=attempt, t_max=config.t_max)
        if code == _kernels.EVENT_CAP:
            raise RuntimeError("event cap hit during age-tracked population run")
        if code == _kernels.BUFFER_FULL:
            raise RuntimeError(
                "population outgrew the age buffer (an extreme excursion); "
                "increase max_events headroom or lower t_max"
            )
    raise RuntimeError(f"population went extinct in {max_retries} consecutive attempts")


@dataclass(frozen=True, eq=False)
class CoupledTrajectory:
    """Sampled sandwich construction: lower bound, epidemic infectives,
    upper bound, and the susceptible fraction.  The lower bound is valid
    (and the marker set live) only before ``breakdown_time``."""

    times: np.ndarray
    i_lower: np.ndarray
    i_epidemic: np.ndarray
    i_upper: np.ndarray
    s_over_n: np.ndarray
    breakdown_time: Optional[float]
    eps0: float
    terminal: Terminal
    event_count: int
    ordering_violations: int
    config: SimConfig

    @property
    def final_lower(self) -> int:
        return int(self.i_lower[-1])

    @property
    def final_epidemic(self) -> int:
        return int(self.i_epidemic[-1])

    @property
    def final_upper(self) -> int:
        return int(self.i_upper[-1])


def simulate_coupled_sandwich(
    config: SimConfig,
    eps0: float,
    upper_stop: Optional[int] = None,
    lower_stop: Optional[int] = None,
) -> CoupledTrajectory:
    """One joint realization of (lower, epidemic, upper) on shared randomness.

    SIR only.  Marginally the upper process is a linear birth-death process
    with per-capita birth ``contact_rate`` and death ``recovery+death``;
    the lower one has its birth rate thinned by (1 - eps0); the epidemic is
    the exact chain.  Pathwise lower <= epidemic <= upper holds until the
    susceptible fraction first drops below 1 - eps0 (the breakdown time),
    after which the lower marker set is frozen at its value.  ``upper_stop``
    enables the fate-determination early stop used by extinction estimators.
    """
    if config.params.is_seir:
        raise ValueError("the sandwich coupling is defined for the SIR variant only")
    if not (0.0 < eps0 < 1.0):
        raise ValueError("eps0 must lie in (0, 1)")
    if config.initial.i < 1:
        raise ValueError("the coupled run needs at least one initial infective")
    p = config.params
    init = config.initial
    grid = config.grid
    out_low = np.empty(grid.size, dtype=np.int64)
    out_epi = np.empty(grid.size, dtype=np.int64)
    out_up = np.empty(grid.size, dtype=np.int64)
    out_sfrac = np.empty(grid.size, dtype=np.float64)
    rng = rng_from_seed(config.seed)
    (
        code,
        t_end,
        s,
        i,
        r,
        low,
        ghosts,
        events,
        filled,
        violations,
        broken,
        t_break,
    ) = _kernels.coupled_kernel(
        rng,
        p.birth_rate,
        p.death_rate,
        p.contact_rate,
        p.recovery_rate,
        init.s,
        init.i,
        init.r,
        eps0,
        config.t_max,
        config.max_events,
        upper_stop or 0,
        lower_stop or 0,
        grid,
        out_low,
        out_epi,
        out_up,
        out_sfrac,
    )
    n0 = init.n
    times = [0.0]
    lows = [init.i]
    epis = [init.i]
    ups = [init.i]
    fracs = [init.s / n0]
    if filled:
        times.extend(grid[:filled].tolist())
        lows.extend(out_low[:filled])
        epis.extend(out_epi[:filled])
        ups.extend(out_up[:filled])
        fracs.extend(out_sfrac[:filled])
    if t_end > times[-1]:
        times.append(t_end)
        lows.append(low)
        epis.append(i)
        ups.append(i + ghosts)
        n_end = s + i + r
        fracs.append(s / n_end if n_end > 0 else 0.0)
    return CoupledTrajectory(
        times=np.asarray(times, dtype=np.float64),
        i_lower=np.asarray(lows, dtype=np.int64),
        i_epidemic=np.asarray(epis, dtype=np.int64),
        i_upper=np.asarray(ups, dtype=np.int64),
        s_over_n=np.asarray(fracs, dtype=np.float64),
        breakdown_time=float(t_break) if broken else None,
        eps0=eps0,
        terminal=_CODE_TO_TERMINAL[code],
        event_count=int(events),
        ordering_violations=int(violations),
        config=config,
    )


@dataclass(frozen=True)
class BirthDeathResult:
    final_count: int
    time: float
    events: int
    hit_threshold: bool

    @property
    def extinct(self) -> bool:
        return self.final_count == 0


def simulate_linear_birth_death(
    birth_rate: float,
    death_rate: float,
    initial: int,
    t_max: float,
    seed: int,
    stop_threshold: Optional[int] = None,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> BirthDeathResult:
    """Bare linear birth-death run; handy oracle for the bounding processes."""
    if birth_rate <= 0 or death_rate <= 0:
        raise ValueError("rates must be positive")
    if initial < 1:
        raise ValueError("initial count must be >= 1")
    rng = rng_from_seed(seed)
    code, t_end, x, events = _kernels.birth_death_kernel(
        rng, birth_rate, death_rate, initial, t_max, max_events, stop_threshold or 0
    )
    return BirthDeathResult(
        final_count=int(x),
        time=float(t_end),
        events=int(events),
        hit_threshold=code == _kernels.THRESHOLD,
    )


_FIELD_COLUMNS = {"s": 0, "e": 1, "i": 2, "r": 3}


def estimate_growth_rate(traj: Trajectory, window: Tuple[float, float], field: str = "i") -> float:
    """Least-squares slope of log(count) against time over the window.

    ``field`` picks the compartment ("s", "e", "i", "r") or "n" for the
    population total.  Raises GrowthWindowError if any sample in the window
    is zero (the window contains extinction) or if fewer than two samples
    fall inside it.
    """
    t_a, t_b = window
    if not t_a < t_b:
        raise ValueError("window must satisfy t_a < t_b")
    mask = (traj.times >= t_a) & (traj.times <= t_b)
    if mask.sum() < 2:
        raise GrowthWindowError("window contains fewer than two samples")
    if field == "n":
        values = traj.totals[mask]
    else:
        try:
            values = traj.counts[mask, _FIELD_COLUMNS[field]]
        except KeyError:
            raise ValueError(f"unknown field {field!r}") from None
    if values.min() <= 0:
        raise GrowthWindowError("window contains extinction (zero count)")
    slope = np.polyfit(traj.times[mask], np.log(values.astype(np.float64)), 1)[0]
    return float(slope)
