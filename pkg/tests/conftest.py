import numpy as np
import pytest
from hypothesis import settings

from swedge.datagen import GenParams, canonical_curve, generate
from swedge.design import StudyDesign

settings.register_profile("swedge", max_examples=40, deadline=None)
settings.load_profile("swedge")

BASE = StudyDesign(num_sequences=6, clusters_per_sequence=4, cluster_size=20)


@pytest.fixture(scope="session")
def base_design():
    return BASE


@pytest.fixture(scope="session")
def base_data():
    """One dataset in the reference configuration with the convex curve."""
    return generate(BASE, canonical_curve("d"), GenParams(), seed=11)


@pytest.fixture(scope="session")
def small_data():
    """A small dataset for dense individual-level oracles."""
    design = StudyDesign(3, 2, 3)
    curve = canonical_curve("a", 3)
    return generate(design, curve, GenParams(delta=0.8, sigma=1.0, tau=0.7), seed=4)


def noiseless(design, curve, delta=0.5, mu=1.0):
    return generate(design, curve, GenParams(mu=mu, delta=delta, sigma=1e-12, tau=0.0), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
