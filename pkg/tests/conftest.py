import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shapebound.field import ClampPolicy, ProbabilityImage, from_probabilities

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_probabilities(rng, h, w, kind="uniform"):
    """Probability grids of several textures: uniform noise, binary, blobs, saturated."""
    if kind == "uniform":
        return rng.random((h, w))
    if kind == "binary":
        return np.where(rng.random((h, w)) < 0.5, 0.98, 0.02)
    if kind == "saturated":
        return rng.choice([0.0, 0.3, 0.5, 1.0], size=(h, w))
    p = np.full((h, w), 0.1)
    y0, x0 = rng.integers(0, max(1, h // 2)), rng.integers(0, max(1, w // 2))
    p[y0 : y0 + h // 2, x0 : x0 + w // 2] = 0.9
    return np.clip(p + rng.normal(0, 0.1, (h, w)), 0, 1)


def random_field(rng, h, w, kind="uniform", policy=None):
    return from_probabilities(ProbabilityImage(random_probabilities(rng, h, w, kind)), policy or ClampPolicy())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def field_from_ticks(ticks, policy=None, z_ticks=0):
    """A field built straight from integer ticks (exact values, chosen z-term)."""
    from shapebound.field import TICKS_PER_DELTA_MAX, BernoulliField

    policy = policy or ClampPolicy()
    t = np.asarray(ticks, dtype=np.int64)
    return BernoulliField(
        delta=t * (policy.delta_max / TICKS_PER_DELTA_MAX),
        z_term=policy.from_ticks(z_ticks),
        policy=policy,
        ticks=t,
        z_ticks=int(z_ticks),
    )


def field_from_values(values, policy=None, z_term=0.0):
    """Field whose log-odds are ``values`` (in units of delta_max fractions on the tick grid)."""
    policy = policy or ClampPolicy()
    v = np.asarray(values, dtype=np.float64)
    return field_from_ticks(policy.to_ticks(v), policy, policy.to_ticks(np.array(z_term)).item())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
