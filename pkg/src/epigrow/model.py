"""Compartment model core: parameters, integer state, event table and rates.

The population is a linear birth-death process (per-capita birth rate
``birth_rate``, death rate ``death_rate``); on top of it runs a uniformly
mixing SIR or SEIR epidemic.  The SEIR variant is selected by giving a
latency-exit rate; otherwise the exposed compartment is unused and pinned
to zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, Optional


class InvalidStateError(ValueError):
    """A compartment count went (or would go) negative."""


@dataclass(frozen=True)
class ModelParams:
    """Rate parameters plus the nominal initial population size.

    All rates are per capita and per unit time and must be strictly
    positive.  ``latency_exit_rate=None`` selects the SIR variant.
    """

    birth_rate: float
    death_rate: float
    contact_rate: float
    recovery_rate: float
    latency_exit_rate: Optional[float] = None
    initial_population: int = 1

    def __post_init__(self):
        rates = {
            "birth_rate": self.birth_rate,
            "death_rate": self.death_rate,
            "contact_rate": self.contact_rate,
            "recovery_rate": self.recovery_rate,
        }
        if self.latency_exit_rate is not None:
            rates["latency_exit_rate"] = self.latency_exit_rate
        for name, value in rates.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a finite positive rate, got {value!r}")
        if not (isinstance(self.initial_population, int) and self.initial_population >= 1):
            raise ValueError(
                f"initial_population must be an integer >= 1, got {self.initial_population!r}"
            )

    @property
    def is_seir(self) -> bool:
        return self.latency_exit_rate is not None

    @property
    def population_growth_rate(self) -> float:
        return self.birth_rate - self.death_rate

    @property
    def is_supercritical(self) -> bool:
        """Whether the population itself grows (birth rate exceeds death rate)."""
        return self.birth_rate > self.death_rate


@dataclass(frozen=True)
class PopulationState:
    """Integer compartment counts.  ``e`` must stay 0 in the SIR variant."""

    s: int
    e: int
    i: int
    r: int

    def __post_init__(self):
        for name in ("s", "e", "i", "r"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value >= 0):
                raise InvalidStateError(f"count {name} must be a nonnegative integer, got {value!r}")

    @property
    def n(self) -> int:
        return self.s + self.e + self.i + self.r

    def as_tuple(self):
        return (self.s, self.e, self.i, self.r)


class Event(enum.Enum):
    """Jump types of the chain."""

    BIRTH = "Birth"
    DEATH_S = "DeathS"
    DEATH_E = "DeathE"
    DEATH_I = "DeathI"
    DEATH_R = "DeathR"
    INFECTION = "Infection"
    BECOME_INFECTIOUS = "BecomeInfectious"
    RECOVERY = "Recovery"


# Signed (s, e, i, r) change per event.  Births always produce susceptibles
# (no vertical transmission); infection moves one individual from s into e.
EVENT_DELTAS: Dict[Event, tuple] = {
    Event.BIRTH: (1, 0, 0, 0),
    Event.DEATH_S: (-1, 0, 0, 0),
    Event.DEATH_E: (0, -1, 0, 0),
    Event.DEATH_I: (0, 0, -1, 0),
    Event.DEATH_R: (0, 0, 0, -1),
    Event.INFECTION: (-1, 1, 0, 0),
    Event.BECOME_INFECTIOUS: (0, -1, 1, 0),
    Event.RECOVERY: (0, 0, -1, 1),
}

# SIR-variant infection skips the exposed stage entirely.
_SIR_INFECTION_DELTA = (-1, 0, 1, 0)


def event_delta(event: Event, *, seir: bool) -> tuple:
    """State-change vector of ``event`` in (s, e, i, r) coordinates."""
    if not seir:
        if event in SEIR_ONLY_EVENTS:
            raise InvalidStateError(f"{event.value} is illegal in the SIR variant")
        if event is Event.INFECTION:
            return _SIR_INFECTION_DELTA
    return EVENT_DELTAS[event]

SEIR_ONLY_EVENTS = frozenset({Event.DEATH_E, Event.BECOME_INFECTIOUS})

# Canonical event order, also used by the simulation kernels when picking
# the next jump; fixed so that seeded runs are reproducible.
EVENT_ORDER = (
    Event.BIRTH,
    Event.DEATH_S,
    Event.DEATH_E,
    Event.DEATH_I,
    Event.DEATH_R,
    Event.INFECTION,
    Event.BECOME_INFECTIOUS,
    Event.RECOVERY,
)


def _check_variant(params: ModelParams, state: PopulationState) -> None:
    if not params.is_seir and state.e != 0:
        raise InvalidStateError("SIR variant requires e == 0, got e = %d" % state.e)


def event_rates(params: ModelParams, state: PopulationState) -> Dict[Event, float]:
    """Jump rates out of ``state``.

    An empty population (n == 0) is absorbing: every rate is 0, including
    the infection rate whose s/n factor would otherwise be 0/0.
    """
    _check_variant(params, state)
    n = state.n
    if n == 0:
        zero = {event: 0.0 for event in EVENT_ORDER if params.is_seir or event not in SEIR_ONLY_EVENTS}
        return zero
    rates = {
        Event.BIRTH: params.birth_rate * n,
        Event.DEATH_S: params.death_rate * state.s,
        Event.DEATH_I: params.death_rate * state.i,
        Event.DEATH_R: params.death_rate * state.r,
        Event.INFECTION: params.contact_rate * state.i * state.s / n,
        Event.RECOVERY: params.recovery_rate * state.i,
    }
    if params.is_seir:
        rates[Event.DEATH_E] = params.death_rate * state.e
        rates[Event.BECOME_INFECTIOUS] = params.latency_exit_rate * state.e
    return {event: rates[event] for event in EVENT_ORDER if event in rates}


def total_rate(params: ModelParams, state: PopulationState) -> float:
    return sum(event_rates(params, state).values())


def apply_event(state: PopulationState, event: Event, *, seir: bool = False) -> PopulationState:
    """Apply one jump and return the new state.

    ``seir`` selects the variant: SIR infections go straight to infectious,
    SEIR infections enter the exposed stage first.  Raises
    InvalidStateError on events that are illegal for the variant or would
    drive a count negative (either signals a harness bug: events must be
    drawn with the correct rates).
    """
    delta = event_delta(event, seir=seir)
    new = (
        state.s + delta[0],
        state.e + delta[1],
        state.i + delta[2],
        state.r + delta[3],
    )
    if min(new) < 0:
        raise InvalidStateError(
            f"event {event.value} would drive a count negative from {state.as_tuple()}"
        )
    return PopulationState(*new)


def default_initial_state(params: ModelParams) -> PopulationState:
    """One freshly infected individual in an otherwise susceptible population.

    A new infection enters the infectious stage directly in the SIR variant
    but starts latent in the SEIR variant, which is what the SEIR
    minor-outbreak probability (with its die-during-latency term) assumes.
    """
    n = params.initial_population
    if n < 1:
        raise ValueError("initial population must be at least 1")
    if params.is_seir:
        return PopulationState(s=n - 1, e=1, i=0, r=0)
    return PopulationState(s=n - 1, e=0, i=1, r=0)
