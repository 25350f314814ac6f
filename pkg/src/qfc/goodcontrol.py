"""First-order dynamics near the target state (the good-control regime).

The large eigenvalue is ``lambda_0 = 1 - Delta`` and the target coefficient
``z_0`` is pinned to 1; the small eigenvalues ``lambda_n`` and coefficients
``z_n`` (``n >= 1``) are carried to first order. ``Delta`` is never stored:
it is the sum of the small eigenvalues.

The target coefficients follow the definition ``z_n = <n|psi>`` used
everywhere else in the package. The drive, self-damping and coupling terms
below were obtained by expanding the exact eigenflow increments and keeping
first-order terms; ``tests/test_goodcontrol.py`` checks the O(eps^2)
residual against :mod:`qfc.eigenflow`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import eigenflow as ef
from .core import DEFAULT_GAP_TOL, check_gaps, dagger, eigendecompose, normalized, to_eigenbasis
from .errors import PositivityLoss, RegimeBreakdown

DELTA_MAX = 0.1
Z_MAX = 0.3


def _small_gaps(lam_s: np.ndarray, gap_tol: float):
    """Gap matrices of the small eigenvalues.

    Pairs that are both exactly zero (e.g. at the target itself) are exempt
    from the degeneracy check and get no mixing: rotations inside the null
    space of ``rho`` change neither ``rho`` nor the target probability.
    """
    lam_s = np.asarray(lam_s, dtype=float)
    live = lam_s[lam_s != 0]
    if live.size > 1:
        check_gaps(live, gap_tol)
    if live.size < lam_s.size and live.size and np.min(np.abs(live)) < gap_tol:
        check_gaps(np.append(live, 0.0), gap_tol)
    with np.errstate(divide="ignore"):
        g, S = ef._gap_matrices(lam_s)
    both_zero = (lam_s[:, None] == 0) & (lam_s[None, :] == 0)
    return np.where(both_zero, 0.0, g), S


@dataclass(frozen=True)
class GoodControlState:
    """Small eigenvalues, small target coefficients and tracked operator elements.

    ``op_elements`` hold full ``N x N`` matrices in the drifting eigenbasis;
    index 0 is the near-target eigenvector.
    """

    lambdas_small: np.ndarray
    z: np.ndarray
    op_elements: Mapping[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    @property
    def Delta(self) -> float:
        return float(np.sum(self.lambdas_small))

    @property
    def dim(self) -> int:
        return self.lambdas_small.size + 1

    @property
    def lambdas(self) -> np.ndarray:
        return np.concatenate([[1.0 - self.Delta], self.lambdas_small])

    def probability(self) -> float:
        """Target probability to first order, ``1 - Delta``."""
        return 1.0 - self.Delta

    def in_regime(self, Delta_max: float = DELTA_MAX, z_max: float = Z_MAX) -> bool:
        zm = float(np.max(np.abs(self.z), initial=0.0))
        return self.Delta <= Delta_max and zm <= z_max

    @classmethod
    def from_density(cls, rho, psi, operators: Mapping[str, np.ndarray] | None = None,
                     gap_tol: float = DEFAULT_GAP_TOL) -> "GoodControlState":
        """Build the state from a density matrix, rephasing so that ``z_0`` is real."""
        s = eigendecompose(rho, gap_tol)
        z = dagger(s.basis) @ normalized(psi)
        if abs(z[0]) == 0:
            raise RegimeBreakdown("target is orthogonal to the dominant eigenvector")
        z = z * (np.conj(z[0]) / abs(z[0]))
        ops = {name: to_eigenbasis(op, s) for name, op in (operators or {}).items()}
        return cls(s.lambdas[1:].copy(), z[1:].copy(), ops)

    @classmethod
    def at_target(cls, dim: int, operators_el: Mapping[str, np.ndarray] | None = None
                  ) -> "GoodControlState":
        return cls(np.zeros(dim - 1), np.zeros(dim - 1, dtype=complex),
                   dict(operators_el or {}))


def gc_measurement_dlambda(state: GoodControlState, X_el, k: float, dt: float, dW: float,
                           gap_tol: float = DEFAULT_GAP_TOL) -> np.ndarray:
    """Measurement increments of the small eigenvalues.

    ``dlambda_n = -lambda_n {8k dt [|X_0n|^2 - sum_{j>=1, j!=n} lambda_j |X_jn|^2 / (lambda_n - lambda_j)]
    + sqrt(8k) dW (X_00 - X_nn)}``. Every increment is proportional to its
    own ``lambda_n``.
    """
    lam = np.asarray(state.lambdas_small, dtype=float)
    X = np.asarray(X_el, dtype=complex)
    g, _ = _small_gaps(lam, gap_tol)
    xs = np.abs(X[1:, 1:]) ** 2
    pull = np.einsum("j,jn,jn->n", lam, g, xs)
    diag = np.diagonal(X).real
    return -lam * (8 * k * dt * (np.abs(X[0, 1:]) ** 2 - pull)
                   + np.sqrt(8 * k) * dW * (diag[0] - diag[1:]))


def gc_dDelta(dlambdas) -> float:
    return float(np.sum(dlambdas))


def gc_measurement_dz(state: GoodControlState, X_el, k: float, dt: float, dW: float,
                      gap_tol: float = DEFAULT_GAP_TOL) -> np.ndarray:
    """Measurement increments of the small target coefficients.

    Affine in ``z``: a drive independent of ``z``, a real self-damping and a
    coupling ``sum_{j != n} conj(F_jn) z_j``.
    """
    lam = np.asarray(state.lambdas_small, dtype=float)
    z = np.asarray(state.z, dtype=complex)
    X = np.asarray(X_el, dtype=complex)
    m = lam.size
    g, S = _small_gaps(lam, gap_tol)
    r = S * g                               # (lambda_a + lambda_n)/(lambda_n - lambda_a), zero on diagonal
    off = ~np.eye(m, dtype=bool)
    x0 = X[0, 1:]                           # X_0n
    xd = np.diagonal(X)[1:]                 # X_nn
    x00 = X[0, 0]
    xs = X[1:, 1:]

    # drive
    mix = 1 + 2 * lam[None, :] - 2 * lam[:, None] - 2 * r - 2 * S * r   # index (a, n)
    src = k * dt * (x0 * (xd - x00) + 4 * lam * x0 * (x00 - xd)
                    - 4 * x0 * np.sum(lam * (xd - x00))
                    + np.einsum("a,an,an->n", x0, xs, np.where(off, mix, 0)))
    src = src - np.sqrt(2 * k) * dW * (1 + 2 * lam) * x0

    # self-damping
    self_rate = np.abs(x0) ** 2 + np.sum(r**2 * np.abs(xs) ** 2, axis=0)

    # coupling F[j, n], j != n
    lj = lam[:, None]
    ln = lam[None, :]
    B = ((lam[:, None, None] + lam[None, None, :] - 2 * lam[None, :, None]) * g[:, None, :]
         - 2 * S[:, :, None] * S[None, :, :] * g[None, :, :] * g[:, None, :])
    B = B * off[None, :, :]
    F = (k * dt * xs * xd[None, :] * (1 - 4 * ln * S * g**2)
         + 4 * k * dt * x00 * xs * r
         - k * dt * X[1:, 0][:, None] * x0[None, :] * (3 * lj + 5 * ln) * g
         - k * dt * np.einsum("jan,ja,an->jn", B, xs, xs)
         + np.sqrt(2 * k) * dW * r * xs)
    F = np.where(off, F, 0)
    return np.conj(src) - k * dt * self_rate * z + np.conj(F).T @ z


def gc_environment_rates(state: GoodControlState, L_el, rate: float,
                         gap_tol: float = DEFAULT_GAP_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Lindblad rates ``(dlambda_small/dt, dz/dt)`` for one channel.

    The eigenvalue rate has the constant injection ``2 rate |L_n0|^2``. The
    coupling between small coefficients keeps the exact mixing rate because
    its ``lambda_0 / (lambda_n - lambda_j)`` part is not small.
    """
    lam = np.asarray(state.lambdas_small, dtype=float)
    z = np.asarray(state.z, dtype=complex)
    L = np.asarray(L_el, dtype=complex)
    D = dagger(L) @ L
    ln0 = L[1:, 0]
    a0 = np.abs(ln0) ** 2
    dl = 2 * rate * (a0 - lam * np.diagonal(D).real[1:]
                     - np.sum(lam[None, :] * (a0[:, None] - np.abs(L[1:, 1:]) ** 2), axis=1))
    cl = np.conj(L[0, 0]) * ln0
    dz = rate * (D[1:, 0] - 2 * cl + 2 * lam * D[1:, 0] - 2 * lam * cl
                 - 2 * L[1:, 1:] @ (lam * np.conj(L[0, 1:])))
    if lam.size > 1 and np.any(z != 0):
        _small_gaps(lam, gap_tol)
        _, c = ef.lindblad_rates(np.concatenate([[1.0 - lam.sum()], lam]), L, rate, gap_tol)
        dz = dz + np.conj(c[1:, 1:]).T @ z
    return dl, dz


def gc_hamiltonian_rates(H_el, z) -> np.ndarray:
    """``dz_n/dt = i H_n0 + i sum_{j>=1} H_nj z_j - i H_00 z_n``.

    The last term keeps ``z_0`` real (it removes the phase the Hamiltonian
    would give the near-target eigenvector).
    """
    H = np.asarray(H_el, dtype=complex)
    z = np.asarray(z, dtype=complex)
    return 1j * H[1:, 0] + 1j * (H[1:, 1:] @ z) - 1j * H[0, 0] * z


def gc_increments(state: GoodControlState, k: float, channel_rates: Mapping[str, float],
                  H_el, dt: float, dW: float,
                  gap_tol: float = DEFAULT_GAP_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Total ``(dlambda_small, dz)`` for one step."""
    m = state.lambdas_small.size
    dl = np.zeros(m)
    dz = np.zeros(m, dtype=complex)
    if k > 0:
        X = state.op_elements["X"]
        dl += gc_measurement_dlambda(state, X, k, dt, dW, gap_tol)
        dz += gc_measurement_dz(state, X, k, dt, dW, gap_tol)
    for name, rate in channel_rates.items():
        if rate == 0:
            continue
        a, b = gc_environment_rates(state, state.op_elements[name], rate, gap_tol)
        dl += a * dt
        dz += b * dt
    if H_el is not None:
        dz += gc_hamiltonian_rates(H_el, state.z) * dt
    return dl, dz


def gc_step(state: GoodControlState, k: float, channel_rates: Mapping[str, float], H_el,
            dt: float, dW: float, *, gap_tol: float = DEFAULT_GAP_TOL,
            Delta_max: float = DELTA_MAX, z_max: float = Z_MAX) -> GoodControlState:
    """Advance by one step and re-check the regime.

    Tracked operator elements co-rotate with the full eigenflow mixing
    increment evaluated at ``lambda = (1 - Delta, lambda_small)``; at this
    order the basis rotation is not small (``dc_0n`` is of order one), so
    nothing is gained by truncating it.

    Raises
    ------
    RegimeBreakdown
        If ``Delta > Delta_max`` or ``max |z_n| > z_max`` after the step.
    """
    if H_el is None:
        H_el = state.op_elements.get("H")
    dl, dz = gc_increments(state, k, channel_rates, H_el, dt, dW, gap_tol)
    lam = state.lambdas_small + dl
    s = state.steps
    if lam.size and lam.min() < 0:
        if lam.min() < -1e-10:
            raise PositivityLoss(f"small eigenvalue {lam.min():.3e} below -1e-10", step=s,
                                 eigenvalue=float(lam.min()))
        lam = np.maximum(lam, 0.0)
    ops = dict(state.op_elements)
    if ops:
        full = ef.EigenflowState(state.lambdas, np.eye(state.dim), np.zeros(state.dim), ops)
        _, inc = ef.mixing_increment(full, k, channel_rates, H_el, dt, dW, gap_tol)
        dc = inc.dc
        ops = {name: ef.update_operator_elements(a, dc) for name, a in ops.items()}
    new = GoodControlState(lam, state.z + dz, ops, s + 1)
    if not new.in_regime(Delta_max, z_max):
        raise RegimeBreakdown(
            f"left the good-control regime: Delta={new.Delta:.4g}, "
            f"max|z|={np.max(np.abs(new.z), initial=0.0):.4g}", step=s + 1)
    return new
