"""Exact equations of motion for the spectrum and eigenbasis of rho.

The state is the eigenvalue vector, the accumulated eigenbasis ``U``, the
target coefficients ``z = U^dag psi`` and the matrix elements of every
tracked operator in the current eigenbasis. One step produces an eigenvalue
increment and a mixing increment ``dc`` with

    |n(t+dt)> = sum_j (delta_nj + dc_jn) |j(t)>,

from which the basis, ``z`` and the operator elements are co-rotated.

Sign and index conventions were fixed against direct diagonalization of
``rho + drho`` (see ``tests/test_eigenflow.py``):

* the Lindblad mixing rate carries ``sum_k lambda_k L_jk conj(L_nk)``,
* the Hamiltonian mixing rate is ``-i H_jn``,
* operator elements co-rotate as ``(I + dc)^dag A (I + dc)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .core import (
    DEFAULT_GAP_TOL,
    check_gaps,
    dagger,
    eigendecompose,
    modified_gram_schmidt,
    normalized,
    to_eigenbasis,
)
from .errors import PositivityLoss


def _gap_matrices(lambdas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``g[j, n] = 1/(lambda_n - lambda_j)`` (zero on the diagonal) and ``S[j, n] = lambda_j + lambda_n``."""
    lam = np.asarray(lambdas, dtype=float)
    diff = lam[None, :] - lam[:, None]
    n = lam.size
    off = ~np.eye(n, dtype=bool)
    g = np.zeros((n, n))
    g[off] = 1.0 / diff[off]
    return g, lam[:, None] + lam[None, :]


@dataclass(frozen=True)
class MixingIncrement:
    """One-step mixing coefficients split into drift and noise parts.

    ``dc = drift * dt + noise * dW``. Keeping the parts separate lets the
    Ito rule ``dW^2 = dt`` be applied exactly in the quadratic terms.
    """

    drift: np.ndarray
    noise: np.ndarray
    dt: float
    dW: float = 0.0

    @property
    def dc(self) -> np.ndarray:
        return self.drift * self.dt + self.noise * self.dW

    def __add__(self, other: "MixingIncrement") -> "MixingIncrement":
        if other.dt != self.dt or other.dW != self.dW:
            raise ValueError("cannot add increments for different (dt, dW)")
        return MixingIncrement(self.drift + other.drift, self.noise + other.noise, self.dt, self.dW)

    @classmethod
    def zero(cls, n: int, dt: float, dW: float = 0.0) -> "MixingIncrement":
        z = np.zeros((n, n), dtype=complex)
        return cls(z, z.copy(), dt, dW)

    def unitarity_defect(self) -> np.ndarray:
        """``(I + dc)(I + dc)^dag - I`` with ``dW^2`` replaced by ``dt``."""
        a, b, dt, dW = self.drift, self.noise, self.dt, self.dW
        return ((a + dagger(a) + b @ dagger(b)) * dt
                + (a @ dagger(b) + b @ dagger(a)) * dt * dW
                + a @ dagger(a) * dt * dt)


def measurement_dlambda(lambdas, X_el, k: float, dt: float, dW: float,
                        gap_tol: float = DEFAULT_GAP_TOL) -> np.ndarray:
    """Eigenvalue increments due to measuring ``X`` at strength ``k``.

    ``dlambda_n = 8k dt lambda_n sum_{l != n} lambda_l |X_nl|^2 / (lambda_n - lambda_l)
    + sqrt(8k) dW (X_nn - <X>) lambda_n``.
    """
    lam = np.asarray(lambdas, dtype=float)
    check_gaps(lam, gap_tol)
    X = np.asarray(X_el, dtype=complex)
    g, _ = _gap_matrices(lam)
    x2 = np.abs(X) ** 2
    diag = np.diagonal(X).real
    ex = float(lam @ diag)
    det = 8 * k * lam * np.einsum("l,ln,nl->n", lam, g, x2)
    return det * dt + np.sqrt(8 * k) * dW * (diag - ex) * lam


def measurement_dc(lambdas, X_el, k: float, dt: float, dW: float,
                   gap_tol: float = DEFAULT_GAP_TOL) -> MixingIncrement:
    """Mixing increment due to measurement, from second-order perturbation theory."""
    lam = np.asarray(lambdas, dtype=float)
    check_gaps(lam, gap_tol)
    X = np.asarray(X_el, dtype=complex)
    n = lam.size
    g, S = _gap_matrices(lam)
    diag = np.diagonal(X)
    ex = float(lam @ diag.real)
    off = ~np.eye(n, dtype=bool)

    # first-order-like part, j != n
    a = 4 * k * X * ((0.25 - lam[None, :] * S * g**2) * diag[None, :] + S * g * ex)

    # second-order sum over intermediate l != n; index order (j, l, n)
    coef = ((lam[:, None, None] + lam[None, None, :] - 2 * lam[None, :, None]) * g[:, None, :]
            - 2 * S[:, :, None] * S[None, :, :] * g[None, :, :] * g[:, None, :])
    coef = coef * off[None, :, :]
    a = a - k * np.einsum("jln,jl,ln->jn", coef, X, X)
    a = np.where(off, a, 0)

    a_diag = -k * np.sum((S * g) ** 2 * np.abs(X) ** 2, axis=0)
    a = a + np.diag(a_diag)
    b = np.sqrt(2 * k) * S * g * X
    return MixingIncrement(a, b, dt, dW)


def lindblad_rates(lambdas, L_el, rate: float,
                   gap_tol: float = DEFAULT_GAP_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic eigenvalue and mixing rates from one Lindblad channel.

    Returns ``(dlambda/dt, dc/dt)``; the mixing rate has zero diagonal and is
    antihermitian.
    """
    lam = np.asarray(lambdas, dtype=float)
    check_gaps(lam, gap_tol)
    L = np.asarray(L_el, dtype=complex)
    D = dagger(L) @ L
    dl = -2 * rate * (lam * np.diagonal(D).real - np.abs(L) ** 2 @ lam)
    g, S = _gap_matrices(lam)
    feed = (L * lam[None, :]) @ dagger(L)
    c = -rate * (S * D - 2 * feed) * g
    return dl, c


def hamiltonian_dc(H_el) -> np.ndarray:
    """Mixing rate ``-i H_jn`` generated by a Hamiltonian; eigenvalues are unaffected."""
    return -1j * np.asarray(H_el, dtype=complex)


def update_z(z, dc) -> np.ndarray:
    """``z'_n = z_n + sum_j conj(dc_jn) z_j``."""
    dc = dc.dc if isinstance(dc, MixingIncrement) else np.asarray(dc)
    z = np.asarray(z, dtype=complex)
    return z + dagger(dc) @ z


def update_operator_elements(A_el, dc, ito: bool = False) -> np.ndarray:
    """Co-rotate operator elements into the new basis: ``(I + dc)^dag A (I + dc)``.

    With ``ito=True`` (requires a :class:`MixingIncrement`) the quadratic
    term uses ``dt`` in place of the realized ``dW^2``.
    """
    A = np.asarray(A_el, dtype=complex)
    if ito:
        if not isinstance(dc, MixingIncrement):
            raise TypeError("the Ito form needs a MixingIncrement")
        m = dc.dc
        quad = dagger(dc.noise) @ A @ dc.noise * dc.dt
        lin_drift = dagger(dc.drift) @ A @ dc.noise + dagger(dc.noise) @ A @ dc.drift
        quad = quad + lin_drift * dc.dt * dc.dW + dagger(dc.drift) @ A @ dc.drift * dc.dt**2
        return A + dagger(m) @ A + A @ m + quad
    m = dc.dc if isinstance(dc, MixingIncrement) else np.asarray(dc)
    eye = np.eye(A.shape[-1])
    return dagger(eye + m) @ A @ (eye + m)


@dataclass(frozen=True)
class EigenflowState:
    """Spectrum, accumulated basis, target coefficients and tracked operator elements."""

    lambdas: np.ndarray
    basis: np.ndarray
    z: np.ndarray
    op_elements: Mapping[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    @classmethod
    def from_density(cls, rho, psi, operators: Mapping[str, np.ndarray] | None = None,
                     gap_tol: float = DEFAULT_GAP_TOL) -> "EigenflowState":
        s = eigendecompose(rho, gap_tol)
        psi = normalized(psi)
        ops = {name: to_eigenbasis(op, s) for name, op in (operators or {}).items()}
        return cls(s.lambdas.copy(), s.basis.copy(), dagger(s.basis) @ psi, ops)

    @property
    def dim(self) -> int:
        return self.lambdas.size

    def density(self) -> np.ndarray:
        u = self.basis
        return (u * self.lambdas) @ dagger(u)

    def target_probability(self) -> float:
        return float(np.sum(np.abs(self.z) ** 2 * self.lambdas))


def _clamp(lam: np.ndarray, step: int | None) -> np.ndarray:
    lo = lam.min()
    if lo < 1e-12:
        if lo < -1e-9:
            raise PositivityLoss(f"eigenvalue {lo:.3e} below -1e-9", step=step, eigenvalue=float(lo))
        lam = np.maximum(lam, 1e-12)
    if lam.max() > 1.0:
        if lam.max() > 1.0 + 1e-9:
            raise PositivityLoss(f"eigenvalue {lam.max():.12f} above 1", step=step,
                                 eigenvalue=float(lam.max()))
        lam = np.minimum(lam, 1.0)
    return lam


def mixing_increment(state: EigenflowState, k: float, channel_rates: Mapping[str, float],
                     H_el, dt: float, dW: float,
                     gap_tol: float = DEFAULT_GAP_TOL) -> tuple[np.ndarray, MixingIncrement]:
    """Total eigenvalue increment and mixing increment for one step."""
    lam = state.lambdas
    n = lam.size
    dlam = np.zeros(n)
    inc = MixingIncrement.zero(n, dt, dW)
    if k > 0:
        X = state.op_elements["X"]
        dlam += measurement_dlambda(lam, X, k, dt, dW, gap_tol)
        inc = inc + measurement_dc(lam, X, k, dt, dW, gap_tol)
    drift = inc.drift
    for name, rate in channel_rates.items():
        if rate == 0:
            continue
        dl, c = lindblad_rates(lam, state.op_elements[name], rate, gap_tol)
        dlam += dl * dt
        drift = drift + c
    if H_el is not None:
        drift = drift + hamiltonian_dc(H_el)
    return dlam, MixingIncrement(drift, inc.noise, dt, dW)


def step(state: EigenflowState, k: float, channel_rates: Mapping[str, float], H_el,
         dt: float, dW: float, *, gap_tol: float = DEFAULT_GAP_TOL,
         reortho_every: int = 100) -> EigenflowState:
    """Advance the eigenflow state by one step.

    ``X`` elements are read from ``state.op_elements["X"]`` and each channel's
    elements from the entry of the same name. ``H_el`` is the Hamiltonian in
    the current eigenbasis; ``None`` falls back to a tracked ``"H"`` entry.
    Eigenvalues are never re-sorted.

    Raises
    ------
    DegenerateSpectrum
        If two eigenvalues come closer than ``gap_tol``.
    """
    s = state.steps
    check_gaps(state.lambdas, gap_tol, step=s)
    if H_el is None:
        H_el = state.op_elements.get("H")
    dlam, inc = mixing_increment(state, k, channel_rates, H_el, dt, dW, gap_tol)
    lam = _clamp(state.lambdas + dlam, s)
    dc = inc.dc
    eye = np.eye(lam.size)
    basis = state.basis @ (eye + dc)
    z = update_z(state.z, dc)
    ops = {name: update_operator_elements(a, dc) for name, a in state.op_elements.items()}
    steps = s + 1
    if reortho_every and steps % reortho_every == 0:
        basis, z, ops = reorthonormalize(basis, z, ops)
    return EigenflowState(lam, basis, z, ops, steps)


def reorthonormalize(basis, z, ops):
    """Modified Gram-Schmidt on the basis, carrying ``z`` and the elements along.

    With ``U = Q R``: ``z -> R^{-dag} z`` and ``A -> R^{-dag} A R^{-1}``.
    """
    q, r = modified_gram_schmidt(basis)
    rinv = np.linalg.inv(r)
    z = dagger(rinv) @ z
    ops = {name: dagger(rinv) @ a @ rinv for name, a in ops.items()}
    return q, z, ops


def with_operator(state: EigenflowState, name: str, lab_operator) -> EigenflowState:
    """Return a copy that also tracks ``lab_operator`` (given in the lab frame)."""
    ops = dict(state.op_elements)
    ops[name] = to_eigenbasis(lab_operator, state.basis)
    return replace(state, op_elements=ops)
