import math

import numpy as np
import pytest
from scipy import stats

from epigrow import (
    Event,
    GrowthWindowError,
    ModelParams,
    PopulationState,
    SimConfig,
    Terminal,
    Trajectory,
    apply_event,
    default_initial_state,
    derive_seed,
    estimate_growth_rate,
    event_rates,
    rng_from_seed,
    simulate_coupled_sandwich,
    simulate_epidemic,
    simulate_linear_birth_death,
    simulate_population_with_ages,
    uniform_grid,
)


def reference_simulate(config: SimConfig):
    """Pure-Python mirror of the compiled engine, draw for draw.

    Consumes the same PCG64 stream (one standard exponential plus one
    uniform per event) and uses the model module's rate table and event
    application, so agreement with the kernel is bit-exact and
    cross-validates both layers.
    """
    p = config.params
    state = config.initial
    rng = rng_from_seed(config.seed)
    grid = config.grid
    gi = 0
    t = 0.0
    events = 0
    track = config.stop_on_epidemic_extinction and (state.e + state.i) > 0
    threshold = config.infection_threshold or 0
    times = [0.0]
    rows = [state.as_tuple()]
    while True:
        if state.n == 0:
            terminal = Terminal.POPULATION_EXTINCT
            break
        if track and state.e + state.i == 0:
            terminal = Terminal.EPIDEMIC_EXTINCT
            break
        if threshold and state.e + state.i >= threshold:
            terminal = Terminal.INFECTION_THRESHOLD_HIT
            break
        if events >= config.max_events:
            terminal = Terminal.EVENT_CAP_HIT
            break
        rates = event_rates(p, state)
        cumulative = []
        acc = 0.0
        for ev, rate in rates.items():
            acc = acc + rate
            cumulative.append((ev, acc))
        t_next = t + rng.standard_exponential() / acc
        while gi < grid.size and grid[gi] < t_next:
            times.append(float(grid[gi]))
            rows.append(state.as_tuple())
            gi += 1
        if t_next > config.t_max:
            while gi < grid.size:
                times.append(float(grid[gi]))
                rows.append(state.as_tuple())
                gi += 1
            t = config.t_max
            terminal = Terminal.REACHED_TMAX
            break
        t = t_next
        u = rng.random() * acc
        for ev, edge in cumulative:
            if u < edge:
                state = apply_event(state, ev, seir=p.is_seir)
                break
        events += 1
    if t > times[-1]:
        times.append(t)
        rows.append(state.as_tuple())
    return np.array(times), np.array(rows, dtype=np.int64), terminal, events


@pytest.mark.parametrize(
    "params,initial,threshold",
    [
        (ModelParams(1.0, 0.5, 3.0, 1.0), PopulationState(49, 0, 1, 0), None),
        (ModelParams(1.3, 0.6, 6.0, 1.0, latency_exit_rate=2.0), PopulationState(45, 2, 3, 0), None),
        (ModelParams(1.0, 0.5, 3.0, 1.0), PopulationState(60, 0, 2, 0), 25),
        (ModelParams(1.0, 0.9, 2.0, 1.5), PopulationState(30, 0, 0, 5), None),
    ],
)
def test_kernel_matches_reference_bit_for_bit(params, initial, threshold):
    for seed in (0, 1, 99):
        config = SimConfig(
            params=params,
            initial=initial,
            t_max=6.0,
            seed=seed,
            sample_grid=uniform_grid(6.0, 0.25),
            infection_threshold=threshold,
        )
        traj = simulate_epidemic(config)
        times, rows, terminal, events = reference_simulate(config)
        assert traj.terminal is terminal
        assert traj.event_count == events
        assert np.array_equal(traj.times, times)
        assert np.array_equal(traj.counts, rows)


class TestDeterminism:
    def test_same_seed_same_trajectory(self, sir_params):
        config = SimConfig(
            params=sir_params,
            initial=default_initial_state(sir_params),
            t_max=4.0,
            seed=123,
            sample_grid=uniform_grid(4.0, 0.1),
        )
        a = simulate_epidemic(config)
        b = simulate_epidemic(config)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.counts, b.counts)
        assert a.terminal is b.terminal

    def test_different_seed_differs(self, sir_params):
        base = dict(
            params=sir_params,
            initial=default_initial_state(sir_params),
            t_max=4.0,
            sample_grid=uniform_grid(4.0, 0.1),
        )
        a = simulate_epidemic(SimConfig(seed=1, **base))
        b = simulate_epidemic(SimConfig(seed=2, **base))
        assert not np.array_equal(a.counts, b.counts)

    def test_derived_seeds_are_stable(self):
        assert derive_seed(42, 7) == derive_seed(42, 7)
        assert derive_seed(42, 7) != derive_seed(42, 8)


class TestTrajectoryInvariants:
    def test_times_increase_and_first_sample_is_initial(self, sir_params):
        config = SimConfig(
            params=sir_params,
            initial=default_initial_state(sir_params),
            t_max=3.0,
            seed=5,
            sample_grid=uniform_grid(3.0, 0.2),
        )
        traj = simulate_epidemic(config)
        assert traj.times[0] == 0.0
        assert tuple(traj.counts[0]) == default_initial_state(sir_params).as_tuple()
        assert np.all(np.diff(traj.times) > 0)

    def test_no_susceptibles_forces_extinction(self):
        # a lone infective cannot infect anyone; it recovers or dies
        p = ModelParams(1.0, 1.0, 3.0, 1.0, initial_population=1)
        config = SimConfig(
            params=p, initial=PopulationState(0, 0, 1, 0), t_max=100.0, seed=11
        )
        traj = simulate_epidemic(config)
        assert traj.terminal in (Terminal.EPIDEMIC_EXTINCT, Terminal.POPULATION_EXTINCT)
        assert traj.final_state.i == 0

    def test_threshold_terminal(self, sir_params):
        config = SimConfig(
            params=sir_params,
            initial=PopulationState(9990, 0, 10, 0),
            t_max=50.0,
            seed=3,
            infection_threshold=40,
        )
        traj = simulate_epidemic(config)
        assert traj.terminal is Terminal.INFECTION_THRESHOLD_HIT
        assert traj.final_state.e + traj.final_state.i >= 40

    def test_epidemic_extinct_means_no_infected(self, subcritical_params):
        config = SimConfig(
            params=subcritical_params,
            initial=default_initial_state(subcritical_params),
            t_max=200.0,
            seed=8,
            max_events=10**8,
        )
        traj = simulate_epidemic(config)
        assert traj.terminal is Terminal.EPIDEMIC_EXTINCT
        assert traj.final_state.e + traj.final_state.i == 0

    def test_population_extinction_is_absorbing(self):
        p = ModelParams(0.1, 8.0, 1.0, 1.0, initial_population=3)
        config = SimConfig(params=p, initial=PopulationState(2, 0, 1, 0), t_max=500.0, seed=2)
        traj = simulate_epidemic(config)
        assert traj.terminal in (Terminal.POPULATION_EXTINCT, Terminal.EPIDEMIC_EXTINCT)
        if traj.terminal is Terminal.POPULATION_EXTINCT:
            assert traj.final_state.n == 0


class TestSubcriticalExtinction:
    @pytest.mark.slow
    def test_all_runs_die_out(self):
        # alpha = -0.3: extinction is almost sure for any n.  The population
        # grows at rate 0.5 regardless, so waiting for a late extinction has
        # unbounded expected cost; the event cap only guards runaway luck.
        p = ModelParams(1.0, 0.5, 1.2, 1.0, initial_population=100)
        for k in range(300):
            config = SimConfig(
                params=p,
                initial=default_initial_state(p),
                t_max=200.0,
                seed=derive_seed(314, k),
                max_events=2 * 10**9,
            )
            traj = simulate_epidemic(config)
            assert traj.terminal is Terminal.EPIDEMIC_EXTINCT
            assert traj.final_time < 200.0


class TestExactLaws:
    def test_mean_population_growth(self):
        # pure population: E[N(t)] = n * exp((lambda-mu) t); infection is
        # disabled by starting without infectives (the gamma*i*s/n rate is 0)
        p = ModelParams(1.0, 0.5, 3.0, 1.0, initial_population=100)
        init = PopulationState(100, 0, 0, 0)
        totals = np.empty(10_000)
        for k in range(totals.size):
            config = SimConfig(params=p, initial=init, t_max=2.0, seed=derive_seed(21, k))
            totals[k] = simulate_epidemic(config).counts[-1].sum()
        expected = 100 * math.exp(0.5 * 2.0)
        se = totals.std(ddof=1) / math.sqrt(totals.size)
        assert abs(totals.mean() - expected) < 3 * se

    def test_single_infective_removal_time_is_exponential(self):
        # an isolated infective leaves the I compartment at rate delta + mu;
        # birth and contact rates are made negligibly small to freeze the rest
        p = ModelParams(1e-12, 0.7, 1e-12, 1.3, initial_population=1)
        times = np.empty(10_000)
        for k in range(times.size):
            config = SimConfig(
                params=p, initial=PopulationState(0, 0, 1, 0), t_max=1e6, seed=derive_seed(5, k)
            )
            traj = simulate_epidemic(config)
            # death of the lone infective empties the whole population
            assert traj.terminal in (Terminal.EPIDEMIC_EXTINCT, Terminal.POPULATION_EXTINCT)
            times[k] = traj.final_time
        result = stats.kstest(times, "expon", args=(0.0, 1.0 / 2.0))
        assert result.pvalue > 0.01

    @staticmethod
    def _chisquare_vs_pmf(samples, pmf_values):
        """Chi-square goodness of fit on a discrete 0..K support; bins with
        low expectation are merged left to right."""
        kmax = pmf_values.size - 1
        observed = np.bincount(np.clip(samples, 0, kmax), minlength=kmax + 1).astype(float)
        expected = pmf_values * samples.size
        obs_m, exp_m = [], []
        acc_o = acc_e = 0.0
        for o, e in zip(observed, expected):
            acc_o += o
            acc_e += e
            if acc_e >= 5:
                obs_m.append(acc_o)
                exp_m.append(acc_e)
                acc_o = acc_e = 0.0
        obs_m[-1] += acc_o
        exp_m[-1] += acc_e
        exp_m = np.array(exp_m) * (np.sum(obs_m) / np.sum(exp_m))
        return stats.chisquare(obs_m, exp_m)

    def test_pure_birth_population_is_negative_binomial(self):
        # Yule process: N(t) - n0 ~ NegBin(n0, exp(-lambda t))
        lam, t, n0, runs = 1.0, 1.5, 5, 3000
        p = ModelParams(lam, 1e-12, 1.0, 1.0, initial_population=n0)
        init = PopulationState(n0, 0, 0, 0)
        finals = np.empty(runs, dtype=np.int64)
        for k in range(runs):
            config = SimConfig(params=p, initial=init, t_max=t, seed=derive_seed(33, k))
            finals[k] = simulate_epidemic(config).counts[-1].sum()
        dist = stats.nbinom(n0, math.exp(-lam * t))
        kmax = int(dist.ppf(0.9999)) + 1
        pmf = dist.pmf(np.arange(kmax + 1))
        pmf[-1] += dist.sf(kmax)
        result = self._chisquare_vs_pmf(finals - n0, pmf)
        assert result.pvalue > 0.001

    def test_pure_death_population_is_binomial(self):
        mu, t, n0, runs = 0.7, 1.0, 60, 3000
        p = ModelParams(1e-12, mu, 1.0, 1.0, initial_population=n0)
        init = PopulationState(n0, 0, 0, 0)
        finals = np.empty(runs, dtype=np.int64)
        for k in range(runs):
            config = SimConfig(params=p, initial=init, t_max=t, seed=derive_seed(37, k))
            finals[k] = simulate_epidemic(config).counts[-1].sum()
        dist = stats.binom(n0, math.exp(-mu * t))
        result = self._chisquare_vs_pmf(finals, dist.pmf(np.arange(n0 + 1)))
        assert result.pvalue > 0.001


class TestAges:
    def test_zero_horizon_gives_founder_ages(self):
        p = ModelParams(1.0, 0.5, 3.0, 1.0, initial_population=7)
        config = SimConfig(params=p, initial=PopulationState(7, 0, 0, 0), t_max=0.0, seed=1)
        sample = simulate_population_with_ages(config)
        assert sample.ages.size == 7
        assert np.all(sample.ages == 0.0)

    def test_requires_pure_population(self, sir_params):
        config = SimConfig(
            params=sir_params, initial=default_initial_state(sir_params), t_max=1.0, seed=1
        )
        with pytest.raises(ValueError, match="e = i = 0"):
            simulate_population_with_ages(config)

    def test_retries_reported_and_deterministic(self):
        p = ModelParams(1.0, 0.9, 1.0, 1.0, initial_population=1)
        config = SimConfig(params=p, initial=PopulationState(1, 0, 0, 0), t_max=4.0, seed=6)
        a = simulate_population_with_ages(config)
        b = simulate_population_with_ages(config)
        assert a.retries == b.retries
        assert np.array_equal(a.ages, b.ages)
        assert np.all((a.ages >= 0) & (a.ages <= 4.0))

    def test_age_distribution_approaches_exponential(self):
        # stationary age law is Exp(mean 1/lambda) regardless of mu
        p = ModelParams(1.0, 0.5, 1.0, 1.0, initial_population=150)
        pooled = []
        rng = np.random.default_rng(17)
        for k in range(40):
            config = SimConfig(
                params=p, initial=PopulationState(150, 0, 0, 0), t_max=12.0, seed=derive_seed(70, k)
            )
            ages = simulate_population_with_ages(config).ages
            take = min(300, ages.size)
            pooled.append(rng.choice(ages, size=take, replace=False))
        pooled = np.concatenate(pooled)
        result = stats.kstest(pooled, "expon", args=(0.0, 1.0))
        assert result.pvalue > 0.001

    def test_pure_birth_age_distribution(self):
        # the death rate does not enter the limit law; a (nearly) pure birth
        # process has the same Exp(1/lambda) age profile
        p = ModelParams(1.0, 1e-9, 1.0, 1.0, initial_population=150)
        pooled = []
        rng = np.random.default_rng(18)
        for k in range(40):
            config = SimConfig(
                params=p, initial=PopulationState(150, 0, 0, 0), t_max=10.0, seed=derive_seed(71, k)
            )
            ages = simulate_population_with_ages(config).ages
            take = min(300, ages.size)
            pooled.append(rng.choice(ages, size=take, replace=False))
        pooled = np.concatenate(pooled)
        result = stats.kstest(pooled, "expon", args=(0.0, 1.0))
        assert result.pvalue > 0.001


class TestCoupledSandwich:
    def test_ordering_holds_before_breakdown(self):
        p = ModelParams(1.0, 0.5, 3.0, 1.0, initial_population=2000)
        for k in range(100):
            config = SimConfig(
                params=p,
                initial=default_initial_state(p),
                t_max=8.0,
                seed=derive_seed(90, k),
                sample_grid=uniform_grid(8.0, 0.1),
            )
            run = simulate_coupled_sandwich(config, eps0=0.05)
            assert run.ordering_violations == 0
            cutoff = run.breakdown_time if run.breakdown_time is not None else np.inf
            pre = run.times <= cutoff
            assert np.all(run.i_lower[pre] <= run.i_epidemic[pre])
            assert np.all(run.i_epidemic <= run.i_upper)

    def test_rejects_seir(self, seir_params):
        config = SimConfig(
            params=seir_params, initial=default_initial_state(seir_params), t_max=1.0, seed=0
        )
        with pytest.raises(ValueError, match="SIR"):
            simulate_coupled_sandwich(config, eps0=0.05)

    def test_rejects_bad_eps0(self, sir_params):
        config = SimConfig(
            params=sir_params, initial=default_initial_state(sir_params), t_max=1.0, seed=0
        )
        with pytest.raises(ValueError, match="eps0"):
            simulate_coupled_sandwich(config, eps0=1.5)

    def test_upper_marginal_extinction_frequency(self):
        # the upper process alone is a linear birth-death process with birth
        # 3 and death 1.5 per capita, so it dies out with probability 0.5
        p = ModelParams(1.0, 0.5, 3.0, 1.0, initial_population=1000)
        extinct = 0
        n_runs = 600
        for k in range(n_runs):
            config = SimConfig(
                params=p, initial=default_initial_state(p), t_max=25.0, seed=derive_seed(91, k)
            )
            run = simulate_coupled_sandwich(config, eps0=0.05, upper_stop=300, lower_stop=100)
            extinct += run.final_upper == 0
        from epigrow import wilson_interval

        lo, hi = wilson_interval(extinct, n_runs)
        assert lo <= 0.5 <= hi


class TestLinearBirthDeath:
    def test_supercritical_extinction_probability(self):
        extinct = 0
        runs = 2000
        for k in range(runs):
            result = simulate_linear_birth_death(
                3.0, 1.5, 1, t_max=60.0, seed=derive_seed(92, k), stop_threshold=250
            )
            extinct += result.extinct
        from epigrow import wilson_interval

        lo, hi = wilson_interval(extinct, runs)
        assert lo <= 0.5 <= hi

    def test_subcritical_always_dies(self):
        for k in range(50):
            result = simulate_linear_birth_death(0.5, 1.5, 3, t_max=1e6, seed=derive_seed(93, k))
            assert result.extinct


class TestGrowthRateFit:
    def _synthetic(self, rate, window, step=0.1):
        times = np.arange(0.0, 8.0 + step / 2, step)
        i = np.floor(np.exp(rate * times)).astype(np.int64)
        counts = np.zeros((times.size, 4), dtype=np.int64)
        counts[:, 2] = i
        counts[:, 0] = 10**6
        p = ModelParams(1.0, 0.5, 3.0, 1.0, initial_population=10**6)
        config = SimConfig(params=p, initial=PopulationState(10**6, 0, 1, 0), t_max=8.0, seed=0)
        return Trajectory(
            times=times, counts=counts, terminal=Terminal.REACHED_TMAX, event_count=0,
            config=config,
        )

    def test_recovers_exponent(self):
        traj = self._synthetic(1.5, (2.0, 6.0))
        assert estimate_growth_rate(traj, (2.0, 6.0)) == pytest.approx(1.5, abs=0.01)

    def test_population_field(self):
        times = np.arange(0.0, 8.05, 0.1)
        counts = np.zeros((times.size, 4), dtype=np.int64)
        counts[:, 0] = np.floor(1000 * np.exp(0.5 * times)).astype(np.int64)
        p = ModelParams(1.0, 0.5, 3.0, 1.0, initial_population=1000)
        config = SimConfig(params=p, initial=PopulationState(1000, 0, 0, 0), t_max=8.0, seed=0)
        traj = Trajectory(
            times=times, counts=counts, terminal=Terminal.REACHED_TMAX, event_count=0,
            config=config,
        )
        assert estimate_growth_rate(traj, (0.0, 8.0), field="n") == pytest.approx(0.5, abs=0.01)

    def test_window_with_extinction_errors(self):
        traj = self._synthetic(1.5, (2.0, 6.0))
        counts = traj.counts.copy()
        counts[30, 2] = 0
        broken = Trajectory(
            times=traj.times, counts=counts, terminal=traj.terminal, event_count=0,
            config=traj.config,
        )
        with pytest.raises(GrowthWindowError):
            estimate_growth_rate(broken, (2.0, 6.0))

    def test_bad_window_rejected(self):
        traj = self._synthetic(1.5, (2.0, 6.0))
        with pytest.raises(ValueError):
            estimate_growth_rate(traj, (6.0, 2.0))
