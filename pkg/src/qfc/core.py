"""Dense complex Hermitian linear algebra and the shared domain types.

All matrices are plain ``numpy`` arrays of dtype ``complex128``. Functions
that only multiply matrices broadcast over leading batch dimensions, so the
same code serves a single trajectory and a stacked ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrum, DimensionMismatch, InvalidState

DEFAULT_GAP_TOL = 1e-6

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# maps basis state 0 to basis state 1; with the target in slot 0 this is decay out of the target
LOWER = np.array([[0, 0], [1, 0]], dtype=complex)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def trace(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-2, axis2=-1)


def is_hermitian(a: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def as_matrix(a, dim: int | None = None) -> np.ndarray:
    """Coerce ``a`` to a square complex matrix, optionally checking its size."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise DimensionMismatch(f"expected {dim}x{dim}, got {m.shape[0]}x{m.shape[0]}")
    return m


def check_density(rho: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate the density-matrix invariants and return ``rho`` as complex."""
    rho = as_matrix(rho)
    if not is_hermitian(rho, 1e-12 * max(1.0, np.max(np.abs(rho)))):
        raise InvalidState("density matrix is not Hermitian")
    tr = trace(rho).real
    if abs(tr - 1.0) > tol:
        raise InvalidState(f"density matrix trace is {tr!r}, expected 1")
    wmin = np.linalg.eigvalsh(rho)[0]
    if wmin < -tol:
        raise InvalidState(f"density matrix has negative eigenvalue {wmin!r}")
    return rho


def pure_state(psi) -> np.ndarray:
    psi = normalized(psi)
    return np.outer(psi, psi.conj())


def normalized(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=complex).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0:
        raise InvalidState("zero vector cannot be normalized")
    return v / n


def make_traceless(x: np.ndarray) -> np.ndarray:
    """Shift ``x`` by a multiple of the identity so that its trace vanishes.

    The measurement dynamics are unchanged by ``X -> X + a I``.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    shift = trace(x) / n
    return x - shift[..., None, None] * np.eye(n)


def gauge_fix(basis: np.ndarray) -> np.ndarray:
    """Rephase every column so its largest-modulus entry is real and positive.

    Ties go to the lowest row index (``argmax`` returns the first maximum).
    """
    b = np.array(basis, dtype=complex, copy=True)
    idx = np.argmax(np.abs(b), axis=-2)
    pivot = np.take_along_axis(b, idx[..., None, :], axis=-2)
    mag = np.abs(pivot)
    phase = np.where(mag > 0, mag / np.where(mag > 0, pivot, 1), 1)
    return b * phase


@dataclass(frozen=True)
class SpectralState:
    """Eigenvalues in descending order and the matching eigenvector columns."""

    lambdas: np.ndarray
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.lambdas.shape[-1]

    def reconstruct(self) -> np.ndarray:
        u = self.basis
        return (u * self.lambdas[..., None, :]) @ dagger(u)

    def min_gap(self) -> float:
        return min_gap(self.lambdas)


def min_gap(lambdas: np.ndarray) -> float:
    lam = np.sort(np.asarray(lambdas, dtype=float))
    if lam.size < 2:
        return np.inf
    return float(np.min(np.diff(lam)))


def check_gaps(lambdas: np.ndarray, gap_tol: float, step: int | None = None) -> None:
    g = min_gap(lambdas)
    if g < gap_tol:
        raise DegenerateSpectrum(
            f"eigenvalue gap {g:.3e} below tolerance {gap_tol:.1e}", step=step, gap=g
        )


def eigendecompose(rho, gap_tol: float = DEFAULT_GAP_TOL) -> SpectralState:
    """Diagonalize a density matrix.

    Eigenvalues come out in descending order, so index 0 is the large
    eigenvalue of a well-controlled state. Each eigenvector is gauge fixed
    with :func:`gauge_fix`.

    Raises
    ------
    DegenerateSpectrum
        If two adjacent eigenvalues are closer than ``gap_tol``.
    """
    rho = check_density(rho)
    w, v = np.linalg.eigh(rho)
    w = w[::-1].copy()
    v = v[:, ::-1]
    check_gaps(w, gap_tol)
    return SpectralState(lambdas=w, basis=gauge_fix(v))


def _basis_of(s) -> np.ndarray:
    return s.basis if isinstance(s, SpectralState) else np.asarray(s, dtype=complex)


def to_eigenbasis(a, s) -> np.ndarray:
    """Matrix elements ``<j|A|k>`` in the eigenbasis held by ``s``."""
    u = _basis_of(s)
    a = np.asarray(a, dtype=complex)
    if a.shape[-1] != u.shape[-1] or a.shape[-2] != u.shape[-2]:
        raise DimensionMismatch(f"operator shape {a.shape} does not match basis {u.shape}")
    return dagger(u) @ a @ u


def from_eigenbasis(a_el, s) -> np.ndarray:
    u = _basis_of(s)
    return u @ np.asarray(a_el, dtype=complex) @ dagger(u)


def target_coefficients(psi, s) -> np.ndarray:
    """Coefficients ``z_n = <n|psi>`` of the target in the eigenbasis."""
    u = _basis_of(s)
    return np.einsum("...ij,...i->...j", u.conj(), np.asarray(psi, dtype=complex))


def target_probability(rho, psi) -> float | np.ndarray:
    """Probability ``<psi|rho|psi>`` of finding the system in the target state."""
    psi = np.asarray(psi, dtype=complex)
    return np.einsum("...i,...ij,...j->...", psi.conj(), rho, psi).real


def target_probability_spectral(lambdas, z) -> float | np.ndarray:
    """Same quantity from the spectral picture, ``sum_n |z_n|^2 lambda_n``."""
    return np.sum(np.abs(z) ** 2 * lambdas, axis=-1)


@dataclass(frozen=True)
class TargetState:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex).reshape(-1)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise InvalidState("target vector must have unit norm")
        object.__setattr__(self, "vector", v)

    @classmethod
    def basis_state(cls, dim: int, index: int = 0) -> "TargetState":
        v = np.zeros(dim, dtype=complex)
        v[index] = 1.0
        return cls(v)

    def coefficients(self, s) -> np.ndarray:
        return target_coefficients(self.vector, s)


@dataclass(frozen=True)
class LindbladChannel:
    """Noise operator ``L`` acting at ``rate`` (units of 1/time).

    The generator convention is ``-rate (L^dag L rho + rho L^dag L - 2 L rho L^dag)``,
    so a decay channel empties its source level at twice ``rate``.
    """

    operator: np.ndarray
    rate: float
    name: str = field(default="L", compare=False)

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValueError(f"channel rate must be nonnegative, got {self.rate!r}")
        object.__setattr__(self, "operator", as_matrix(self.operator))
        object.__setattr__(self, "rate", float(self.rate))


def random_density_matrix(dim: int, rng: np.random.Generator, min_gap: float | None = None,
                          max_tries: int = 10_000) -> np.ndarray:
    """Draw ``G G^dag / Tr(G G^dag)`` with complex Gaussian ``G``.

    With ``min_gap`` set, redraw until every eigenvalue gap is at least that.
    """
    for _ in range(max_tries):
        g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        rho = g @ dagger(g)
        rho /= trace(rho).real
        rho = hermitize(rho)
        if min_gap is None or np.min(np.diff(np.linalg.eigvalsh(rho))) >= min_gap:
            return rho
    raise RuntimeError(f"no {dim}x{dim} density matrix with gap >= {min_gap} found")


def random_hermitian(dim: int, rng: np.random.Generator, norm: float | None = 1.0) -> np.ndarray:
    """Random Hermitian matrix, scaled to the given spectral norm."""
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    a = hermitize(a)
    if norm is not None:
        a *= norm / np.linalg.norm(a, 2)
    return a


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(a)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def modified_gram_schmidt(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormalize the columns of ``u``; returns ``(Q, R)`` with ``u = Q R``."""
    u = np.array(u, dtype=complex, copy=True)
    n = u.shape[1]
    r = np.zeros((n, n), dtype=complex)
    for j in range(n):
        v = u[:, j]
        for i in range(j):
            r[i, j] = np.vdot(u[:, i], v)
            v = v - r[i, j] * u[:, i]
        r[j, j] = np.linalg.norm(v)
        u[:, j] = v / r[j, j]
    return u, r
