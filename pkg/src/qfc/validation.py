"""Cross-checks of the eigenflow against direct diagonalization.

The single-step study takes a random nondegenerate ``rho``, forms
``rho + drho`` with the SME increment, diagonalizes it, and compares with one
eigenflow step driven by the same ``dW``. Increments are two-point
(``dW = +-sqrt(dt)``) so that ``dW^2 = dt`` holds exactly and the leftover
mismatch is the truncation error of the perturbative step; with Gaussian
increments the ``dW^2 - dt`` fluctuation adds an O(dt) term to every single
step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import eigenflow as ef
from . import sme
from .core import (
    LindbladChannel,
    gauge_fix,
    random_density_matrix,
    random_hermitian,
    to_eigenbasis,
)


def fit_order(dts, errs) -> float:
    """Least-squares slope of ``log(err)`` against ``log(dt)``."""
    x = np.log(np.asarray(dts, dtype=float))
    y = np.log(np.asarray(errs, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class StepStudy:
    """Worst-case single-step mismatch per step size for one dimension."""

    dim: int
    dts: tuple
    eig_err: list = field(default_factory=list)
    vec_err: list = field(default_factory=list)

    @property
    def eig_order(self) -> float:
        return fit_order(self.dts, self.eig_err)

    @property
    def pairwise_orders(self) -> list[float]:
        e, d = self.eig_err, self.dts
        return [float(np.log(e[i] / e[i + 1]) / np.log(d[i] / d[i + 1])) for i in range(len(e) - 1)]

    @property
    def vec_monotone(self) -> bool:
        return all(b < a for a, b in zip(self.vec_err, self.vec_err[1:]))


def _eig_desc(rho):
    w, v = np.linalg.eigh(rho)
    return w[::-1], v[:, ::-1]


def single_step_mismatch(rho, X, k: float, dt: float, dW: float,
                         chs: list[LindbladChannel] = (), H=None) -> tuple[float, float]:
    """Eigenvalue and gauge-fixed eigenvector mismatch for one step."""
    drho = np.zeros_like(rho)
    if k > 0:
        drho = drho + sme.measurement_increment(rho, X, k, dt, dW)
    if chs:
        drho = drho + sme.lindblad_increment(rho, chs, dt)
    if H is not None:
        drho = drho + sme.hamiltonian_increment(rho, H, dt)
    lam, U = _eig_desc(rho)
    ops = {"X": to_eigenbasis(X, U)}
    rates = {}
    for i, c in enumerate(chs):
        ops[f"L{i}"] = to_eigenbasis(c.operator, U)
        rates[f"L{i}"] = c.rate
    state = ef.EigenflowState(lam, U, np.zeros(lam.size, dtype=complex), ops)
    H_el = None if H is None else to_eigenbasis(H, U)
    dlam, inc = ef.mixing_increment(state, k, rates, H_el, dt, dW, gap_tol=0.0)
    lo, Uo = _eig_desc(rho + drho)
    new_u = U @ (np.eye(lam.size) + inc.dc)
    return (float(np.max(np.abs(lam + dlam - lo))),
            float(np.max(np.abs(gauge_fix(new_u) - gauge_fix(Uo)))))


def single_step_suite(dims=(2, 3, 4), n_instances: int = 100, dts=(1e-4, 5e-5, 2.5e-5),
                      min_gap: float = 0.05, k: float = 1.0, seed: int = 0,
                      with_channel: bool = False, X=None, channels=None) -> list[StepStudy]:
    """Run the single-step comparison for each dimension.

    Each instance draws ``rho`` (minimum gap ``min_gap``), a Hermitian ``X``
    with unit spectral norm (unless ``X`` is given), optionally a random
    Lindblad operator (or the fixed ``channels``), and a sign for ``dW``; the
    same instance is reused at every step size.
    """
    out = []
    for n in dims:
        rng = np.random.default_rng([seed, n])
        instances = []
        for _ in range(n_instances):
            rho = random_density_matrix(n, rng, min_gap=min_gap)
            x = random_hermitian(n, rng) if X is None else np.asarray(X, dtype=complex)
            chs = list(channels or [])
            if with_channel:
                L = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
                chs = [LindbladChannel(L / np.linalg.norm(L, 2), 0.5)]
            sign = 1.0 if rng.random() < 0.5 else -1.0
            instances.append((rho, x, chs, sign))
        study = StepStudy(n, tuple(dts))
        for dt in dts:
            errs = [single_step_mismatch(rho, x, k, dt, s * np.sqrt(dt), chs)
                    for rho, x, chs, s in instances]
            study.eig_err.append(max(e[0] for e in errs))
            study.vec_err.append(max(e[1] for e in errs))
        out.append(study)
    return out


@dataclass
class JointRun:
    """Deviations between propagators driven by one shared increment stream."""

    max_lambda_dev: float
    max_P_dev: float
    noise_checksum: str


def joint_trajectory(rho0, psi, X, k: float, chs, dt: float, dW: np.ndarray,
                     gap_tol: float = 1e-6, H=None) -> JointRun:
    """Integrate the SME and the eigenflow side by side on the same ``dW``."""
    from .rng import checksum

    ops = {"X": X}
    rates = {}
    for i, c in enumerate(chs):
        ops[f"L{i}"] = c.operator
        rates[f"L{i}"] = c.rate
    if H is not None:
        ops["H"] = H
    state = ef.EigenflowState.from_density(rho0, psi, ops, gap_tol=gap_tol)
    rho = np.array(rho0, dtype=complex)
    inputs = sme.SmeInputs(X=X, k=k, channels=tuple(chs), H=H)
    dl = dp = 0.0
    for s in range(dW.size):
        state = ef.step(state, k, rates, None, dt, dW[s], gap_tol=gap_tol)
        rho = sme.step(rho, inputs, dt, dW[s], unitary="euler", step_index=s)
        lam = np.linalg.eigvalsh(rho)[::-1]
        dl = max(dl, float(np.max(np.abs(state.lambdas - lam))))
        P = float(np.real(np.vdot(psi, rho @ psi)))
        dp = max(dp, abs(state.target_probability() - P))
    return JointRun(dl, dp, checksum(dW))


def unitarity_defects(n_instances: int, dt: float, seed: int = 0, dims=(2, 3, 4)) -> np.ndarray:
    """Norms of ``(I + dc)(I + dc)^dag - I`` (Ito rule applied) over random instances."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_instances):
        n = dims[i % len(dims)]
        rho = random_density_matrix(n, rng, min_gap=0.05)
        lam, U = _eig_desc(rho)
        X = to_eigenbasis(random_hermitian(n, rng), U)
        dW = rng.standard_normal() * np.sqrt(dt)
        inc = ef.measurement_dc(lam, X, 1.0, dt, dW, gap_tol=0.0)
        out.append(np.linalg.norm(inc.unitarity_defect(), 2))
    return np.asarray(out)


__all__ = [
    "JointRun",
    "StepStudy",
    "fit_order",
    "joint_trajectory",
    "single_step_mismatch",
    "single_step_suite",
    "unitarity_defects",
]
