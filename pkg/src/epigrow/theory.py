"""Closed-form epidemic quantities and their independent numerical oracles.

Covers reproduction numbers, Malthusian growth rates (closed form and the
root of the analytically integrated renewal equation), minor-outbreak
probabilities (closed form and offspring-pgf fixed point), endemic
equilibria of the fluid limit, scenario classification, and the coupling
diagnostics used by the simulation harness.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Tuple

from scipy.optimize import brentq

from .model import ModelParams

# Relative tolerance for deciding the two scenario boundaries (growth rate
# exactly zero / exactly the population growth rate).  Relative to the sum
# of all rates so classification is invariant under rescaling time units.
BOUNDARY_RTOL = 1e-12


class Scenario(enum.Enum):
    ALWAYS_EXTINCT = "AlwaysExtinct"
    SUBDOMINANT_GROWTH = "SubdominantGrowth"
    ENDEMIC_CAPABLE = "EndemicCapable"
    BOUNDARY_CRITICAL = "BoundaryCritical"
    BOUNDARY_EQUAL_GROWTH = "BoundaryEqualGrowth"


def _rate_scale(params: ModelParams) -> float:
    scale = (
        params.birth_rate
        + params.death_rate
        + params.contact_rate
        + params.recovery_rate
    )
    if params.is_seir:
        scale += params.latency_exit_rate
    return scale


def basic_reproduction_number(params: ModelParams) -> float:
    """Expected infectious contacts of one infected individual.

    SIR: contacts at ``contact_rate`` over a mean infectious period of
    1/(recovery+death).  SEIR additionally requires surviving the latent
    stage, probability nu/(nu+mu).
    """
    r0 = params.contact_rate / (params.recovery_rate + params.death_rate)
    if params.is_seir:
        nu = params.latency_exit_rate
        r0 *= nu / (nu + params.death_rate)
    return r0


def malthusian_closed_form(params: ModelParams) -> float:
    """Exponential growth rate of the infected count while susceptibles dominate.

    SIR: contact_rate - (recovery + death).  SEIR: the positive root of
    (a + mu + delta)(a + mu + nu) = gamma * nu, written in a cancellation-free
    form (the latent stage delays contacts, so the rate is pulled below the
    SIR value).
    """
    gamma = params.contact_rate
    delta = params.recovery_rate
    mu = params.death_rate
    if not params.is_seir:
        return gamma - (delta + mu)
    nu = params.latency_exit_rate
    return -(mu + (delta + nu) / 2.0) + math.sqrt((delta - nu) ** 2 / 4.0 + gamma * nu)


def _renewal_transform(params: ModelParams, alpha: float) -> float:
    """Laplace transform at ``alpha`` of the expected infectious-contact rate."""
    gamma = params.contact_rate
    delta = params.recovery_rate
    mu = params.death_rate
    if params.is_seir:
        nu = params.latency_exit_rate
        return gamma * nu / ((alpha + mu + delta) * (alpha + mu + nu))
    return gamma / (alpha + mu + delta)


def malthusian_euler_lotka(params: ModelParams, tol: float = 1e-10) -> float:
    """Growth rate as the root of the renewal (Euler-Lotka) equation.

    Brackets the root above the transform's singularity and solves
    ``transform(alpha) = 1`` by Brent's method.  Independent check of
    ``malthusian_closed_form``; agrees with it to within ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mu = params.death_rate
    stages = [params.recovery_rate]
    if params.is_seir:
        stages.append(params.latency_exit_rate)
    floor = -(mu + min(stages))

    def objective(alpha):
        return _renewal_transform(params, alpha) - 1.0

    offset = max(1e-9, 1e-9 * abs(floor))
    lo = floor + offset
    for _ in range(60):
        if objective(lo) > 0.0:
            break
        offset /= 8.0
        lo = floor + offset
    else:
        raise ValueError("no bracket above the transform singularity; invalid parameters")

    hi = max(1.0, abs(floor))
    for _ in range(200):
        if objective(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise ValueError("failed to bracket the renewal-equation root; invalid parameters")

    return brentq(objective, lo, hi, xtol=0.5 * tol)


def minor_outbreak_probability(params: ModelParams) -> float:
    """Limiting probability that the epidemic dies out without taking off.

    SIR: (recovery+death)/contact_rate.  SEIR adds the chance of dying
    during latency, mu/(nu+mu).  Clamped to 1; equals 1 exactly when the
    reproduction number is at most 1.
    """
    p = (params.recovery_rate + params.death_rate) / params.contact_rate
    if params.is_seir:
        nu = params.latency_exit_rate
        p += params.death_rate / (nu + params.death_rate)
    if basic_reproduction_number(params) <= 1.0:
        return 1.0
    return min(1.0, p)


_PGF_MAX_ITER = 50_000_000


def extinction_prob_pgf_oracle(params: ModelParams, tol: float = 1e-10) -> float:
    """Smallest fixed point in [0, 1] of the offspring pgf, by iteration from 0.

    The offspring distribution is geometric (contacts at ``contact_rate``
    racing an Exp(recovery+death) clock); the SEIR variant mixes in a point
    mass at zero offspring for death during latency.  Iteration from 0
    increases monotonically to the smallest fixed point; termination uses
    the geometric-tail bound step*r/(1-r) so the returned value is within
    ``tol`` of the fixed point even close to criticality.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    gamma = params.contact_rate
    dm = params.recovery_rate + params.death_rate
    seir = params.is_seir
    if seir:
        nu = params.latency_exit_rate
        atom = params.death_rate / (nu + params.death_rate)
        live = 1.0 - atom
    else:
        atom = 0.0
        live = 1.0
    s = 0.0
    prev_step = math.inf
    for _ in range(_PGF_MAX_ITER):
        nxt = atom + live * dm / (dm + gamma * (1.0 - s))
        step = nxt - s
        s = nxt
        if step <= 0.0:
            break
        ratio = step / prev_step
        prev_step = step
        if ratio < 1.0 and 4.0 * step * ratio / (1.0 - ratio) < tol:
            # the geometric-tail estimate says we are close; certify it.
            # Iterates approach the smallest fixed point q from below and the
            # pgf is increasing, so g(c) <= c proves q <= c.
            cand = s + 0.5 * tol
            if cand >= 1.0:
                break
            if atom + live * dm / (dm + gamma * (1.0 - cand)) <= cand:
                break
    else:
        raise RuntimeError("pgf fixed-point iteration did not converge (critical offspring mean?)")
    return min(s, 1.0)


def classify_scenario(params: ModelParams) -> Scenario:
    """Long-run qualitative outcome from the growth-rate comparison.

    Requires a growing population.  Boundaries (growth rate equal to zero
    or to the population growth rate) get their own labels, decided with
    relative tolerance BOUNDARY_RTOL.
    """
    if not params.is_supercritical:
        raise ValueError(
            "scenario classification assumes a growing population (birth_rate > death_rate)"
        )
    alpha = malthusian_closed_form(params)
    growth = params.population_growth_rate
    tol = BOUNDARY_RTOL * _rate_scale(params)
    if abs(alpha) <= tol:
        return Scenario.BOUNDARY_CRITICAL
    if abs(alpha - growth) <= tol:
        return Scenario.BOUNDARY_EQUAL_GROWTH
    if alpha < 0.0:
        return Scenario.ALWAYS_EXTINCT
    if alpha < growth:
        return Scenario.SUBDOMINANT_GROWTH
    return Scenario.ENDEMIC_CAPABLE


def _equilibrium_exists(params: ModelParams) -> bool:
    alpha = malthusian_closed_form(params)
    growth = params.population_growth_rate
    return alpha - growth > BOUNDARY_RTOL * _rate_scale(params)


def endemic_equilibrium(params: ModelParams) -> Optional[Tuple[float, float, float, float]]:
    """Positive fixed point (s, e, i, r) of the fluid-limit flow, if any.

    Present exactly when the epidemic growth rate exceeds the population
    growth rate; components are strictly positive and sum to 1.
    """
    if not _equilibrium_exists(params):
        return None
    lam = params.birth_rate
    gamma = params.contact_rate
    delta = params.recovery_rate
    if not params.is_seir:
        excess = 1.0 / (lam + delta) - 1.0 / gamma
        return ((lam + delta) / gamma, 0.0, lam * excess, delta * excess)
    nu = params.latency_exit_rate
    b = nu / ((lam + nu) * (lam + delta))
    excess = b - 1.0 / gamma
    return (
        1.0 / (gamma * b),
        (lam * (lam + delta) / nu) * excess,
        lam * excess,
        delta * excess,
    )


@dataclass(frozen=True)
class BreakdownDiagnostics:
    """Predicted first time the susceptible fraction dips below 1 - eps0,
    and the infected count then, for an epidemic started in a population
    of size n."""

    time: float
    infected_estimate: float
    exponent: float


def breakdown_diagnostics(params: ModelParams, eps0: float, n: int) -> BreakdownDiagnostics:
    """Saturation-time estimates for an epidemic outgrowing its population.

    The infected count grows like exp(alpha*t) until it reaches a fraction
    eps0 of the population n*exp(growth*t); equating the two gives the
    time, and substituting back the size.  Requires the endemic-capable
    regime (alpha > growth; for SIR exactly contact > recovery + birth)
    and eps0 * n > 1.
    """
    if not (0.0 < eps0 < 1.0):
        raise ValueError("eps0 must lie in (0, 1)")
    alpha = malthusian_closed_form(params)
    growth = params.population_growth_rate
    gap = alpha - growth
    if gap <= BOUNDARY_RTOL * _rate_scale(params):
        raise ValueError(
            "breakdown time is only defined when the epidemic outgrows the population "
            "(for SIR: contact_rate > recovery_rate + birth_rate)"
        )
    if eps0 * n <= 1.0:
        raise ValueError("eps0 * n must exceed 1")
    t = math.log(eps0 * n) / gap
    exponent = alpha / gap
    return BreakdownDiagnostics(time=t, infected_estimate=(eps0 * n) ** exponent, exponent=exponent)


def perfect_coupling_condition(params: ModelParams) -> bool:
    """Heuristic hint (not a theorem): the epidemic and its dominating
    branching process can agree forever when alpha**2 < population growth."""
    alpha = malthusian_closed_form(params)
    return alpha * alpha < params.population_growth_rate


@dataclass(frozen=True)
class TheorySummary:
    """All closed-form quantities for one parameter set."""

    r0: float
    alpha: float
    pop_growth: float
    minor_outbreak_prob: float
    scenario: Scenario
    endemic: Optional[Tuple[float, float, float, float]]
    perfect_coupling_hint: bool
    breakdown: Optional[BreakdownDiagnostics]

    def to_dict(self) -> dict:
        d = {
            "r0": self.r0,
            "alpha": self.alpha,
            "pop_growth": self.pop_growth,
            "minor_outbreak_prob": self.minor_outbreak_prob,
            "scenario": self.scenario.value,
            "endemic": list(self.endemic) if self.endemic is not None else None,
            "perfect_coupling_hint": self.perfect_coupling_hint,
        }
        if self.breakdown is not None:
            d["breakdown"] = {
                "time": self.breakdown.time,
                "infected_estimate": self.breakdown.infected_estimate,
                "exponent": self.breakdown.exponent,
            }
        else:
            d["breakdown"] = None
        return d


def theory_summary(
    params: ModelParams,
    eps0: Optional[float] = None,
    n: Optional[int] = None,
) -> TheorySummary:
    """Bundle every closed-form quantity; breakdown diagnostics are included
    when eps0 is given, the regime supports them, and eps0*n > 1."""
    scenario = classify_scenario(params)
    endemic = endemic_equilibrium(params)
    breakdown = None
    if eps0 is not None and scenario is Scenario.ENDEMIC_CAPABLE:
        size = n if n is not None else params.initial_population
        if eps0 * size > 1.0:
            breakdown = breakdown_diagnostics(params, eps0, size)
    return TheorySummary(
        r0=basic_reproduction_number(params),
        alpha=malthusian_closed_form(params),
        pop_growth=params.population_growth_rate,
        minor_outbreak_prob=minor_outbreak_probability(params),
        scenario=scenario,
        endemic=endemic,
        perfect_coupling_hint=perfect_coupling_condition(params),
        breakdown=breakdown,
    )
