import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csprop.states import (
    SpinLabel,
    TruncationError,
    fock_vector,
    log_factorial,
    normalization_lambda,
    overlap_canonical,
    overlap_spin,
    qp_to_label,
    required_nmax,
    spin_vector,
    two_j,
)

small = st.floats(-2, 2, allow_nan=False)
labels = st.builds(complex, small, small)


def test_canonical_overlap_identity():
    assert overlap_canonical(0, 0) == 1


@given(labels)
def test_canonical_self_overlap_is_one(z):
    assert abs(overlap_canonical(z, z) - 1) < 1e-14


@given(labels, labels)
def test_canonical_overlap_matches_fock_sum(z1, z2):
    n = max(required_nmax(z1), required_nmax(z2)) + 5
    v1, _ = fock_vector(z1, n)
    v2, _ = fock_vector(z2, n)
    assert abs(np.vdot(v1, v2) - overlap_canonical(z1, z2)) < 1e-10


@given(labels, labels)
def test_canonical_overlap_modulus(z1, z2):
    assert abs(abs(overlap_canonical(z1, z2)) - math.exp(-abs(z1 - z2) ** 2 / 2)) < 1e-12


@pytest.mark.parametrize("j", [0.5, 1, 2.5, 5])
def test_spin_overlap_matches_vectors(j):
    rng = np.random.default_rng(1)
    for _ in range(5):
        s1, s2 = rng.normal(size=2) + 1j * rng.normal(size=2)
        ref = np.vdot(spin_vector(s1, j), spin_vector(s2, j))
        assert abs(ref - overlap_spin(s1, s2, j)) < 1e-13


@given(labels, st.sampled_from([0.5, 1.0, 3.0]))
def test_spin_vector_normalised(s, j):
    assert abs(np.linalg.norm(spin_vector(s, j)) - 1) < 1e-13


def test_spin_half_overlap_closed_form():
    s1, s2 = 0.3 + 0.1j, -0.5j
    expect = (1 + s1.conjugate() * s2) / math.sqrt((1 + abs(s1) ** 2) * (1 + abs(s2) ** 2))
    assert abs(overlap_spin(s1, s2, 0.5) - expect) < 1e-15


def test_fock_components():
    z = 0.7 - 0.4j
    vec, tail = fock_vector(z, 40)
    for n in (0, 1, 5, 12):
        ref = math.exp(-abs(z) ** 2 / 2) * z ** n / math.sqrt(math.factorial(n))
        assert abs(vec[n] - ref) < 1e-15
    assert tail < 1e-12


def test_fock_truncation_error_reports_requirement():
    with pytest.raises(TruncationError) as info:
        fock_vector(3.0, 5)
    assert info.value.n_required > 5
    fock_vector(3.0, info.value.n_required)


def test_log_factorial_large():
    assert abs(log_factorial(200) - math.lgamma(201)) < 1e-9


def test_two_j():
    assert two_j(2.5) == 5
    with pytest.raises(ValueError):
        two_j(0.3)
    with pytest.raises(ValueError):
        SpinLabel(complex("inf"), 1)


def test_normalization_lambda():
    lam = normalization_lambda(1, 1j, 0.5, 0, 1)
    assert abs(lam - (1.0 + math.log(1.25))) < 1e-15


def test_qp_to_label():
    assert abs(qp_to_label(1.0, 2.0, 0.5, 2.0) - complex(2, 1) / math.sqrt(2)) < 1e-15
    with pytest.raises(ValueError):
        qp_to_label(1.0, 2.0, 0.5, 1.0)
