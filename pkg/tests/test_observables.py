import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bhdimer.hilbert import basis_state, coherent_amplitudes, make_truncation, product_state, swap_permutation
from bhdimer.observables import (
    averaged_g2,
    entropy_from_amplitudes,
    factorisation_ratio,
    g2_from_moments,
    g2_moment,
    photon_numbers,
    reduced_density,
    sample_observables,
    sum_diff,
    time_average,
    von_neumann_entropy,
)

TR = make_truncation(4, 4)


def _ket(*terms):
    psi = sum(c * basis_state(TR, n1, n2) for c, (n1, n2) in terms)
    return psi / np.linalg.norm(psi)


def _random_state(seed, tr=TR):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=tr.dim) + 1j * rng.normal(size=tr.dim)
    return psi / np.linalg.norm(psi)


def test_photon_numbers_examples():
    assert photon_numbers(basis_state(TR, 2, 1), TR) == (2.0, 1.0)
    n1, n2 = photon_numbers(_ket((1, (0, 0)), (1, (1, 1))), TR)
    assert n1 == pytest.approx(0.5) and n2 == pytest.approx(0.5)
    assert photon_numbers(basis_state(TR, 0, 0), TR) == (0.0, 0.0)


def test_factorisation_ratio_examples():
    assert factorisation_ratio(basis_state(TR, 1, 1), TR) == 1.0
    assert factorisation_ratio(_ket((1, (1, 0)), (1, (0, 1))), TR) == 0.0
    assert math.isnan(factorisation_ratio(basis_state(TR, 0, 3), TR))


def test_factorisation_ratio_coherent_product():
    tr = make_truncation(30, 30)
    psi = product_state(tr, coherent_amplitudes(1.2 + 0.5j, 30), coherent_amplitudes(-0.7j, 30))
    assert factorisation_ratio(psi, tr) == pytest.approx(1.0, abs=1e-12)


def test_g2_moment_examples():
    tr = make_truncation(4, 4)
    m = g2_moment(basis_state(tr, 2, 0), tr, 1)
    assert m == 2.0
    assert g2_from_moments(m, 2.0) == 0.5
    assert g2_moment(basis_state(tr, 1, 0), tr, 1) == 0.0
    assert g2_from_moments(0.0, 1.0) == 0.0


def test_g2_coherent_is_one():
    tr = make_truncation(40, 2)
    psi = product_state(tr, coherent_amplitudes(1.5, 40), np.array([1, 0, 0], dtype=complex))
    n1, _ = photon_numbers(psi, tr)
    assert g2_from_moments(g2_moment(psi, tr, 1), n1) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("n", range(1, 9))
def test_g2_fock_states(n):
    tr = make_truncation(8, 1)
    m = g2_moment(basis_state(tr, n, 0), tr, 1)
    assert g2_from_moments(m, float(n)) == (n - 1) / n


@given(st.integers(1, 6), st.integers(1, 6))
def test_O_of_number_eigenstates(n1, n2):
    tr = make_truncation(6, 6)
    assert factorisation_ratio(basis_state(tr, n1, n2), tr) == 1.0


def test_reduced_density_examples():
    rho = reduced_density(basis_state(TR, 1, 0), TR, 1)
    expect = np.zeros((5, 5))
    expect[1, 1] = 1
    assert np.array_equal(rho, expect)
    rho = reduced_density(_ket((1, (0, 1)), (1, (1, 0))), TR, 1)
    expect = np.zeros((5, 5))
    expect[0, 0] = expect[1, 1] = 0.5
    np.testing.assert_allclose(rho, expect, atol=1e-15)


def test_reduced_density_of_product_state():
    rng = np.random.default_rng(3)
    c1 = rng.normal(size=5) + 1j * rng.normal(size=5)
    c2 = rng.normal(size=5) + 1j * rng.normal(size=5)
    c1 /= np.linalg.norm(c1)
    c2 /= np.linalg.norm(c2)
    rho = reduced_density(product_state(TR, c1, c2), TR, 1)
    np.testing.assert_allclose(rho, np.outer(c1, c1.conj()), atol=1e-15)
    assert von_neumann_entropy(rho) < 1e-10


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_reduced_density_invariants(seed, mode):
    rho = reduced_density(_random_state(seed), TR, mode)
    assert np.abs(rho - rho.conj().T).max() < 1e-10
    assert abs(np.trace(rho) - 1) < 1e-8
    assert np.linalg.eigvalsh(rho).min() > -1e-10


def test_entropy_examples():
    assert von_neumann_entropy(np.diag([1.0, 0.0])) == 0.0
    assert von_neumann_entropy(np.diag([0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-15)
    assert von_neumann_entropy(np.diag([0.9, 0.1])) == pytest.approx(0.325082973391448, abs=1e-14)


def test_entropy_ignores_tiny_negative_eigenvalues():
    assert von_neumann_entropy(np.diag([1.0, -1e-14, 1e-13])) == 0.0


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_entropy_same_for_either_mode(seed):
    psi = _random_state(seed, make_truncation(4, 6))
    tr = make_truncation(4, 6)
    e1 = von_neumann_entropy(reduced_density(psi, tr, 1))
    e2 = von_neumann_entropy(reduced_density(psi, tr, 2))
    assert abs(e1 - e2) < 1e-10
    assert abs(entropy_from_amplitudes(psi.reshape(tr.shape)) - e1) < 1e-10
    assert e1 <= math.log(5) + 1e-12


def test_sum_diff_examples():
    assert sum_diff(2, 1) == (3, 1)
    assert sum_diff(1.5, 1.5) == (3.0, 0.0)
    s, d = sum_diff(1, 2)
    assert (s, d) == (3, -1)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_swap_covariance(seed):
    psi = _random_state(seed)
    sw = psi[swap_permutation(TR)]
    a, b = sample_observables(psi, TR), sample_observables(sw, TR)
    assert (a.n1, a.n2) == (b.n2, b.n1)
    assert (a.g2m1, a.g2m2) == (b.g2m2, b.g2m1)
    s_a, d_a = sum_diff(a.n1, a.n2)
    s_b, d_b = sum_diff(b.n1, b.n2)
    assert s_a == s_b and d_a == -d_b
    assert a.O == b.O
    assert abs(a.entropy - b.entropy) < 1e-12


def test_time_average_examples():
    t = np.arange(100.0)
    assert time_average(t, np.full(100, 2.5)) == (2.5, 99)
    alt = np.where(np.arange(100) % 2 == 0, 1.0, -1.0)
    mean, n = time_average(np.arange(1, 101.0), alt)
    assert mean == 0.0 and n == 100
    tt = np.linspace(0, 10, 1001)
    mean, _ = time_average(tt, tt, discard=-1)
    assert mean == pytest.approx(5.0, abs=1e-12)


def test_time_average_errors_and_nan():
    with pytest.raises(ValueError):
        time_average([0.0, 1.0], [1.0, 1.0], discard=5.0)
    mean, n = time_average([1.0, 2.0, 3.0], [1.0, math.nan, 3.0])
    assert (mean, n) == (2.0, 2)


def test_averaged_g2_is_ratio_of_averages():
    t = np.arange(1, 5.0)
    moments = np.array([0.0, 2.0, 0.0, 2.0])
    pops = np.array([1.0, 2.0, 1.0, 2.0])
    g2, excluded = averaged_g2(t, moments, pops)
    assert g2 == pytest.approx(1.0 / 1.5**2)
    assert excluded == 0
    g2, excluded = averaged_g2(t, moments, np.array([0.0, 2.0, 1.0, 2.0]))
    assert excluded == 1
