"""Eigenvalue/eigenvector flow against direct diagonalization.

The oracle is ``eigh(rho + drho)`` with ``drho`` from :mod:`qfc.sme`; the
frozen arrays at the end only guard against silent regressions.
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qfc import eigenflow as ef
from qfc import sme
from qfc.core import (
    LOWER,
    SX,
    SY,
    LindbladChannel,
    eigendecompose,
    gauge_fix,
    random_density_matrix,
    random_hermitian,
    to_eigenbasis,
)
from qfc.errors import DegenerateSpectrum, PositivityLoss
from qfc.rng import increments
from qfc.validation import joint_trajectory, single_step_mismatch, unitarity_defects


def instance(n, seed, gap=0.05):
    r = np.random.default_rng(seed)
    rho = random_density_matrix(n, r, min_gap=gap)
    s = eigendecompose(rho)
    X = random_hermitian(n, r)
    L = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
    return rho, s, X, L / np.linalg.norm(L, 2)


# ---------------------------------------------------------------- eigenvalues


def test_dlambda_vanishes_for_identity():
    d = ef.measurement_dlambda([0.5, 0.3, 0.2], np.eye(3), 1.0, 1e-3, 0.02)
    np.testing.assert_allclose(d, 0, atol=1e-17)


def test_dlambda_qubit_sigma_x():
    l0, l1, k, dt = 0.8, 0.2, 1.5, 1e-3
    d = ef.measurement_dlambda([l0, l1], SX, k, dt, 0.03)
    expected = 8 * k * dt * l0 * l1 / (l0 - l1)
    assert d[0] == pytest.approx(expected, rel=1e-14)
    assert d[1] == pytest.approx(-expected, rel=1e-14)


@given(st.integers(2, 5), st.integers(0, 2**31), st.floats(-0.1, 0.1))
def test_dlambda_trace_free(n, seed, dW):
    _, s, X, L = instance(n, seed, gap=0.01)
    Xe = to_eigenbasis(X, s)
    assert abs(ef.measurement_dlambda(s.lambdas, Xe, 1.0, 1e-3, dW).sum()) <= 1e-12
    dl, _ = ef.lindblad_rates(s.lambdas, to_eigenbasis(L, s), 0.7)
    assert abs(dl.sum()) <= 1e-12


def test_degenerate_spectrum_raises():
    with pytest.raises(DegenerateSpectrum):
        ef.measurement_dlambda([0.5, 0.5 - 1e-9], SX, 1.0, 1e-3, 0.0, gap_tol=1e-6)
    with pytest.raises(DegenerateSpectrum):
        ef.measurement_dc([0.5, 0.5 - 1e-9], SX, 1.0, 1e-3, 0.0, gap_tol=1e-6)


def test_lindblad_identity_is_inert():
    dl, c = ef.lindblad_rates([0.6, 0.3, 0.1], np.eye(3), 2.0)
    np.testing.assert_allclose(dl, 0, atol=1e-16)
    np.testing.assert_allclose(c, 0, atol=1e-16)


def test_lindblad_decay_transfers_population():
    G, l0, l1 = 0.3, 0.7, 0.3
    dl, c = ef.lindblad_rates([l0, l1], LOWER, G)
    np.testing.assert_allclose(dl, [-2 * G * l0, 2 * G * l0], atol=1e-16)
    np.testing.assert_allclose(np.diagonal(c), 0)


def test_lindblad_rates_match_finite_difference():
    _, s, _, L = instance(3, 4)
    dt = 1e-6
    ch = LindbladChannel(L, 0.5)
    rho = s.reconstruct()
    new = eigendecompose(rho + sme.lindblad_increment(rho, [ch], dt), gap_tol=0.0)
    dl, c = ef.lindblad_rates(s.lambdas, to_eigenbasis(L, s), 0.5)
    np.testing.assert_allclose((new.lambdas - s.lambdas) / dt, dl, atol=1e-4)
    pred = gauge_fix(s.basis @ (np.eye(3) + c * dt))
    np.testing.assert_allclose(pred, new.basis, atol=1e-9)


# ---------------------------------------------------------------- mixing


def test_dc_vanishes_for_commuting_X():
    inc = ef.measurement_dc([0.6, 0.3, 0.1], np.diag([1.0, -2.0, 0.5]), 1.0, 1e-3, 0.03)
    np.testing.assert_allclose(inc.dc, 0, atol=1e-17)


def test_dc_qubit_noise_part():
    l0, l1, k = 0.7, 0.3, 2.0
    inc = ef.measurement_dc([l0, l1], SX, k, 1e-6, 1e-3)
    assert inc.noise[0, 1] == pytest.approx(np.sqrt(2 * k) * (l0 + l1) / (l1 - l0))
    assert inc.noise[0, 1] == pytest.approx(-np.conj(inc.noise[1, 0]))


@given(st.integers(2, 5), st.integers(0, 2**31))
def test_antihermitian_parts(n, seed):
    _, s, X, L = instance(n, seed, gap=0.01)
    inc = ef.measurement_dc(s.lambdas, to_eigenbasis(X, s), 1.0, 1e-4, 0.01)
    np.testing.assert_allclose(inc.noise, -inc.noise.conj().T, atol=1e-10)
    _, c = ef.lindblad_rates(s.lambdas, to_eigenbasis(L, s), 0.4)
    np.testing.assert_allclose(c, -c.conj().T, atol=1e-10)
    H = random_hermitian(n, np.random.default_rng(seed + 1))
    hc = ef.hamiltonian_dc(H)
    np.testing.assert_allclose(hc, -hc.conj().T, atol=1e-15)


def test_unitarity_defect_scales_as_dt_three_halves():
    consts = []
    for dt in (1e-4, 1e-5, 1e-6):
        d = unitarity_defects(1000, dt, seed=3)
        consts.append(d.max() / dt**1.5)
    assert max(consts) / min(consts) < 1.5


def test_hamiltonian_dc_examples():
    np.testing.assert_allclose(ef.hamiltonian_dc(np.zeros((3, 3))), 0)
    hc = ef.hamiltonian_dc(np.diag([1.0, -0.5]))
    np.testing.assert_allclose(hc.real, 0)
    np.testing.assert_allclose(hc - np.diag(np.diagonal(hc)), 0)


def test_update_z_examples():
    z = np.array([1.0, 0.0], dtype=complex)
    np.testing.assert_allclose(ef.update_z(z, np.zeros((2, 2))), z)
    dc = np.zeros((2, 2), dtype=complex)
    dc[0, 1] = 0.01 + 0.02j
    np.testing.assert_allclose(ef.update_z(z, dc), [1.0, 0.01 - 0.02j])


def test_update_operator_elements_identity_and_zero(rng):
    A = random_hermitian(3, rng)
    np.testing.assert_allclose(ef.update_operator_elements(A, np.zeros((3, 3))), A)
    _, s, X, _ = instance(3, 9)
    dt = 1e-6
    inc = ef.measurement_dc(s.lambdas, to_eigenbasis(X, s), 1.0, dt, np.sqrt(dt))
    out = ef.update_operator_elements(np.eye(3), inc, ito=True)
    assert np.max(np.abs(out - np.eye(3))) <= 1e3 * dt**1.5


def test_operator_elements_follow_oracle_basis():
    _, s, X, _ = instance(2, 12)
    A = random_hermitian(2, np.random.default_rng(5))
    rho = s.reconstruct()
    errs = []
    for dt in (1e-4, 2.5e-5):
        dW = np.sqrt(dt)
        inc = ef.measurement_dc(s.lambdas, to_eigenbasis(X, s), 1.0, dt, dW)
        new = eigendecompose(rho + sme.measurement_increment(rho, X, 1.0, dt, dW), gap_tol=0.0)
        # align the flowed basis phases with the oracle's before comparing elements
        flowed = s.basis @ (np.eye(2) + inc.dc)
        ph = np.sum(new.basis.conj() * flowed, axis=0)
        oracle = to_eigenbasis(A, new.basis * (ph / np.abs(ph)))
        errs.append(np.max(np.abs(ef.update_operator_elements(to_eigenbasis(A, s), inc) - oracle)))
    assert errs[1] < errs[0] / 2 ** 1.3


# ---------------------------------------------------------------- oracle equivalence


@pytest.mark.parametrize("n", [2, 3, 4])
def test_single_step_matches_diagonalization(n):
    rho, s, X, L = instance(n, 21)
    chs = [LindbladChannel(L, 0.3)]
    H = random_hermitian(n, np.random.default_rng(22))
    e = [single_step_mismatch(rho, X, 1.0, dt, np.sqrt(dt), chs, H) for dt in (1e-4, 2.5e-5)]
    assert e[0][0] < 1e-5
    assert e[1][0] < e[0][0] / 2 ** 1.3
    assert e[1][1] < e[0][1]


def test_hamiltonian_changes_no_eigenvalue():
    _, s, _, _ = instance(3, 30)
    st0 = ef.EigenflowState(s.lambdas, s.basis, np.zeros(3, complex), {})
    H = random_hermitian(3, np.random.default_rng(31))
    st1 = st0
    for _ in range(1000):
        st1 = ef.step(st1, 0.0, {}, to_eigenbasis(H, st1.basis), 1e-3, 0.0)
    assert np.array_equal(st1.lambdas, st0.lambdas)


def test_zero_dynamics_fixed_point():
    _, s, _, _ = instance(3, 40)
    st0 = ef.EigenflowState(s.lambdas, s.basis, np.array([1, 0, 0], complex), {"X": np.eye(3)})
    st1 = ef.step(st0, 0.0, {}, None, 1e-3, 0.3)
    np.testing.assert_array_equal(st1.lambdas, st0.lambdas)
    np.testing.assert_array_equal(st1.basis, st0.basis)
    np.testing.assert_array_equal(st1.z, st0.z)


def test_joint_qubit_trajectory():
    rho0 = np.array([[0.7, 0.1 + 0.05j], [0.1 - 0.05j, 0.3]])
    psi = np.array([1, 0], dtype=complex)
    dt = 1e-5
    dW = increments(5, 0, 1000, dt, "two-point")
    run = joint_trajectory(rho0, psi, SX, 1.0, [], dt, dW)
    assert run.max_lambda_dev <= 1e-5
    assert run.max_P_dev <= 1e-4


def test_long_run_invariants():
    rho0 = np.diag([0.6, 0.3, 0.1]).astype(complex)
    X = np.array([[0.1, 0.4, 0.2j], [0.4, -0.3, 0.3], [-0.2j, 0.3, 0.2]])
    L = np.zeros((3, 3))
    L[1, 0] = 1.0
    st0 = ef.EigenflowState.from_density(rho0, np.ones(3) / np.sqrt(3), {"X": X, "L": L},
                                         gap_tol=0.0)
    dt = 1e-4
    dW = increments(8, 0, 10_050, dt)
    st1 = st0
    for i in range(10_000):
        st1 = ef.step(st1, 0.5, {"L": 0.05}, None, dt, dW[i], gap_tol=1e-6)
    # step 10000 is a re-orthonormalization step
    assert abs(st1.lambdas.sum() - 1) <= 1e-8
    assert np.max(np.abs(st1.basis.conj().T @ st1.basis - np.eye(3))) <= 1e-7
    assert abs(np.sum(np.abs(st1.z) ** 2) - 1) <= 1e-7
    np.testing.assert_allclose(st1.op_elements["X"], st1.basis.conj().T @ X @ st1.basis, atol=1e-10)
    # in between, the realized dW^2 - dt leaves an O(dt) defect per step
    for i in range(10_000, 10_050):
        st1 = ef.step(st1, 0.5, {"L": 0.05}, None, dt, dW[i], gap_tol=1e-6)
    assert np.max(np.abs(st1.basis.conj().T @ st1.basis - np.eye(3))) <= 1e-2


def test_clamp_policy():
    assert ef._clamp(np.array([1.0, -5e-10]), 0)[1] == 1e-12
    with pytest.raises(PositivityLoss):
        ef._clamp(np.array([1.0, -1e-6]), 0)


def test_density_round_trip():
    rho = np.array([[0.7, 0.1 + 0.05j], [0.1 - 0.05j, 0.3]])
    st0 = ef.EigenflowState.from_density(rho, np.array([1, 0]))
    np.testing.assert_allclose(st0.density(), rho, atol=1e-14)
    assert st0.target_probability() == pytest.approx(0.7, abs=1e-14)


def test_with_operator_tracks_new_operator():
    rho = np.array([[0.7, 0.1 + 0.05j], [0.1 - 0.05j, 0.3]])
    st0 = ef.with_operator(ef.EigenflowState.from_density(rho, [1, 0]), "Y", SY)
    np.testing.assert_allclose(st0.op_elements["Y"], st0.basis.conj().T @ SY @ st0.basis)


# ---------------------------------------------------------------- frozen regression values


LAM = np.array([0.6, 0.3, 0.1])
X3 = np.array([[0.2, 0.5, 0.1j], [0.5, -0.1, 0.3], [-0.1j, 0.3, 0.4]])


def test_frozen_measurement_values():
    inc = ef.measurement_dc(LAM, X3, 1.0, 1.0, 0.0)
    np.testing.assert_allclose(np.diagonal(inc.drift).real, [-2.2696, -2.61, -0.3796], atol=1e-12)
    assert inc.drift[0, 1] == pytest.approx(2.07 - 0.21j, abs=1e-12)
    assert inc.drift[1, 2] == pytest.approx(-1.002 + 0.43j, abs=1e-12)
    assert inc.noise[0, 1] == pytest.approx(-2.1213203435596424, abs=1e-14)
    dl = ef.measurement_dlambda(LAM, X3, 1.0, 1e-3, 0.01)
    np.testing.assert_allclose(dl, [0.0023975393923934, -0.00304361471607487, 0.00064607532368147],
                               atol=1e-16)


def test_frozen_lindblad_values():
    L = np.array([[0, 0.2, 0], [1, 0, 0], [0, 0.5j, 0.1]])
    dl, c = ef.lindblad_rates(LAM, L, 0.3)
    np.testing.assert_allclose(dl, [-0.3528, 0.3078, 0.045], atol=1e-14)
    assert c[0, 2] == pytest.approx(0.036j, abs=1e-14)
    assert c[1, 2] == pytest.approx(-0.03j, abs=1e-14)
