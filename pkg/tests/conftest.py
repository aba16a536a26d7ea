import numpy as np
import pytest

from epigrow import ModelParams


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria")


@pytest.fixture
def sir_params():
    """Canonical endemic-capable SIR set used throughout the examples."""
    return ModelParams(
        birth_rate=1.0,
        death_rate=0.5,
        contact_rate=3.0,
        recovery_rate=1.0,
        initial_population=10_000,
    )


@pytest.fixture
def seir_params():
    """Canonical endemic-capable SEIR set (same growth rate as the SIR one)."""
    return ModelParams(
        birth_rate=1.0,
        death_rate=0.5,
        contact_rate=6.0,
        recovery_rate=1.0,
        latency_exit_rate=2.0,
        initial_population=10_000,
    )


@pytest.fixture
def subdominant_params():
    """Epidemic grows (alpha=0.3) but slower than the population (0.5)."""
    return ModelParams(
        birth_rate=1.0,
        death_rate=0.5,
        contact_rate=1.8,
        recovery_rate=1.0,
        initial_population=10_000,
    )


@pytest.fixture
def subcritical_params():
    """Epidemic dies out almost surely (alpha=-0.3)."""
    return ModelParams(
        birth_rate=1.0,
        death_rate=0.5,
        contact_rate=1.2,
        recovery_rate=1.0,
        initial_population=1_000,
    )


def random_params(rng: np.random.Generator, seir: bool, n0: int = 100) -> ModelParams:
    """Rates log-uniform in [0.05, 20] with a growing population enforced."""
    lo, hi = np.log(0.05), np.log(20.0)
    while True:
        lam, mu, gamma, delta, nu = np.exp(rng.uniform(lo, hi, size=5))
        if lam > mu:
            return ModelParams(
                birth_rate=float(lam),
                death_rate=float(mu),
                contact_rate=float(gamma),
                recovery_rate=float(delta),
                latency_exit_rate=float(nu) if seir else None,
                initial_population=n0,
            )
