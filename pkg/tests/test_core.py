import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qfc.core import (
    SX,
    SY,
    SZ,
    LindbladChannel,
    TargetState,
    check_density,
    eigendecompose,
    from_eigenbasis,
    gauge_fix,
    make_traceless,
    modified_gram_schmidt,
    random_density_matrix,
    random_hermitian,
    random_unitary,
    target_coefficients,
    target_probability,
    target_probability_spectral,
    to_eigenbasis,
)
from qfc.errors import DegenerateSpectrum, DimensionMismatch, InvalidState


def test_diagonal_state_decomposes_to_identity_basis():
    s = eigendecompose(np.diag([0.7, 0.3]))
    np.testing.assert_allclose(s.lambdas, [0.7, 0.3], atol=1e-15)
    np.testing.assert_allclose(s.basis, np.eye(2), atol=1e-15)


def test_sigma_x_mixture():
    s = eigendecompose(0.5 * (np.eye(2) + SX), gap_tol=1e-6)
    np.testing.assert_allclose(s.lambdas, [1.0, 0.0], atol=1e-15)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(s.basis[:, 0], [r, r], atol=1e-15)
    # second column is (1, -1)/sqrt(2) up to phase; gauge fixing makes the pivot positive
    np.testing.assert_allclose(np.abs(s.basis[:, 1]), [r, r], atol=1e-15)
    assert abs(np.vdot(s.basis[:, 1], [r, -r])) == pytest.approx(1.0, abs=1e-15)


def test_random_reconstruction(rng):
    rho = random_density_matrix(3, rng)
    s = eigendecompose(rho, gap_tol=0.0)
    assert np.linalg.norm(s.reconstruct() - rho) <= 1e-12
    assert np.all(np.diff(s.lambdas) <= 0)


def test_degenerate_spectrum_raises():
    with pytest.raises(DegenerateSpectrum) as e:
        eigendecompose(np.eye(2) / 2, gap_tol=1e-6)
    assert e.value.gap == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("bad", [np.diag([1.2, -0.2]), np.array([[0.5, 0.1], [0.2, 0.5]]),
                                 np.diag([0.6, 0.6])])
def test_check_density_rejects(bad):
    with pytest.raises(InvalidState):
        check_density(bad)


def test_to_eigenbasis_identity_and_self(rng):
    rho = random_density_matrix(3, rng, min_gap=0.05)
    s = eigendecompose(rho)
    np.testing.assert_allclose(to_eigenbasis(np.eye(3), s), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(to_eigenbasis(rho, s), np.diag(s.lambdas), atol=1e-14)


def test_eigenbasis_round_trip(rng):
    s = eigendecompose(random_density_matrix(4, rng, min_gap=0.02))
    a = random_hermitian(4, rng)
    np.testing.assert_allclose(from_eigenbasis(to_eigenbasis(a, s), s), a, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        to_eigenbasis(np.eye(3), np.eye(2))


@given(st.integers(2, 5), st.integers(0, 2**31))
def test_similarity_preserves_spectrum(n, seed):
    r = np.random.default_rng(seed)
    a = random_hermitian(n, r)
    u = random_unitary(n, r)
    np.testing.assert_allclose(np.linalg.eigvalsh(to_eigenbasis(a, u)), np.linalg.eigvalsh(a),
                               atol=1e-10)


def test_target_probability_examples():
    psi = np.array([1, 0], dtype=complex)
    assert target_probability(np.outer(psi, psi.conj()), psi) == pytest.approx(1.0)
    assert target_probability(np.diag([0.0, 1.0]), psi) == pytest.approx(0.0)
    assert target_probability(np.diag([0.9, 0.1]), psi) == pytest.approx(0.9, abs=1e-15)


def test_target_probability_spectral_agrees(rng):
    rho = random_density_matrix(4, rng, min_gap=0.01)
    psi = TargetState(np.array([1, 1j, 0, 1]) / np.sqrt(3))
    s = eigendecompose(rho)
    z = target_coefficients(psi.vector, s)
    assert target_probability_spectral(s.lambdas, z) == pytest.approx(
        target_probability(rho, psi.vector), abs=1e-13)
    assert np.sum(np.abs(z) ** 2) == pytest.approx(1.0, abs=1e-13)


def test_target_state_requires_unit_norm():
    with pytest.raises(InvalidState):
        TargetState(np.array([1.0, 1.0]))


def test_make_traceless_examples():
    np.testing.assert_allclose(make_traceless(SZ), SZ)
    np.testing.assert_allclose(make_traceless(np.eye(3)), np.zeros((3, 3)))
    np.testing.assert_allclose(make_traceless(np.diag([2.0, 0.0])), np.diag([1.0, -1.0]))


def test_gauge_fix_makes_pivot_real_positive(rng):
    u = random_unitary(3, rng)
    g = gauge_fix(u * np.exp(1j * rng.uniform(0, 2 * np.pi, 3)))
    idx = np.argmax(np.abs(g), axis=0)
    piv = g[idx, range(3)]
    np.testing.assert_allclose(piv.imag, 0, atol=1e-15)
    assert np.all(piv.real > 0)
    np.testing.assert_allclose(g, gauge_fix(u), atol=1e-14)


def test_modified_gram_schmidt(rng):
    a = random_unitary(4, rng) + 1e-3 * rng.normal(size=(4, 4))
    q, r = modified_gram_schmidt(a)
    np.testing.assert_allclose(q.conj().T @ q, np.eye(4), atol=1e-13)
    np.testing.assert_allclose(q @ r, a, atol=1e-13)
    assert np.allclose(np.tril(r, -1), 0)


def test_channel_rate_must_be_nonnegative():
    with pytest.raises(ValueError):
        LindbladChannel(SY, -1.0)
