import numpy as np
import pytest
from hypothesis import given, strategies as st

from swedge.design import StudyDesign, derive_phi, exposure_time, treatment_indicator
from swedge.exceptions import DomainError


def test_geometry():
    d = StudyDesign(6, 4, 20, extra_periods=2)
    assert d.num_periods == 9
    assert d.num_clusters == 24
    assert d.max_exposure == 8
    assert not d.is_standard


@pytest.mark.parametrize("q,j,s", [(2, 2, 0), (2, 5, 3), (4, 5, 1)])
def test_exposure_time_examples(q, j, s):
    assert exposure_time(StudyDesign(4), q, j) == s


@pytest.mark.parametrize("q,j,x", [(3, 3, 0), (3, 4, 1)])
def test_treatment_indicator_examples(q, j, x):
    assert treatment_indicator(StudyDesign(4), q, j) == x


def test_treated_row_sums():
    d = StudyDesign(5, extra_periods=1)
    assert np.array_equal(d.treatment_matrix().sum(axis=1), d.num_periods - np.arange(1, 6))


@pytest.mark.parametrize("q,j", [(0, 1), (5, 1), (1, 0), (1, 6)])
def test_out_of_range(q, j):
    with pytest.raises(DomainError):
        exposure_time(StudyDesign(4), q, j)


@pytest.mark.parametrize("kw", [dict(num_sequences=1), dict(num_sequences=3, cluster_size=0),
                                dict(num_sequences=3, extra_periods=-1),
                                dict(num_sequences=3, clusters_per_sequence=0)])
def test_invalid_designs(kw):
    with pytest.raises(DomainError):
        StudyDesign(**kw)


@given(Q=st.integers(2, 10), extra=st.integers(0, 3))
def test_indicator_matches_exposure(Q, extra):
    d = StudyDesign(Q, extra_periods=extra)
    E, X = d.exposure_matrix(), d.treatment_matrix()
    assert np.array_equal(X == 1, E >= 1)
    assert np.all(np.diff(X, axis=1) >= 0)


@given(Q=st.integers(2, 10))
def test_standard_exposure_multiset(Q):
    E = StudyDesign(Q).exposure_matrix()
    for q in range(1, Q + 1):
        assert sorted(E[q - 1][E[q - 1] > 0]) == list(range(1, Q + 2 - q))
    assert np.sum(E == Q) == 1


@pytest.mark.parametrize("n,expected", [(10, 0.34), (50, 0.72)])
def test_phi_paper_icc_examples(n, expected):
    assert abs(derive_phi(0.05, 0.95, n) - expected) <= 0.005


def test_phi_reference_config():
    assert abs(derive_phi(0.25, 4.0, 20) - 0.556) <= 0.005


@pytest.mark.parametrize("args", [(0.1, 0.0, 5), (0.1, -1.0, 5), (0.1, 1.0, 0), (-0.1, 1.0, 2)])
def test_phi_domain(args):
    with pytest.raises(DomainError):
        derive_phi(*args)


@given(tau2=st.floats(0.01, 5), sigma2=st.floats(0.01, 5), n=st.integers(1, 200))
def test_phi_monotone(tau2, sigma2, n):
    assert derive_phi(tau2, sigma2, n + 1) > derive_phi(tau2, sigma2, n)
    assert derive_phi(tau2 * 1.1, sigma2, n) > derive_phi(tau2, sigma2, n)
