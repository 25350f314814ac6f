"""Single-qubit feedback protocol.

The qubit is measured along an axis that is unbiased with respect to the
current eigenbasis of ``rho`` (``X = sigma_x`` in that basis), is subject to
decay at rate ``Gamma`` and dephasing at rate ``gamma``, and is steered
toward the target by the linear feedback ``H = u Re[z_1] sigma_y``.

Three simulation pictures share one ensemble driver:

``"good-control"``
    the reduced closed pair for ``(lambda_1, z_1)`` that yields the
    steady-state formulas;
``"first-order"``
    the first-order good-control equations with the noise operators
    rotated into the eigenbasis;
``"full-sme"``
    the full stochastic master equation with the measurement axis and the
    feedback recomputed every step from the true ``rho``.

Target coefficients follow ``z_n = <n|psi>`` with ``z_0`` real.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import sme
from .core import LOWER, SX, SY, SZ, LindbladChannel, dagger, eigendecompose, pure_state
from .errors import (
    AllRatesZero,
    PositivityLoss,
    RegimeBreakdown,
    ValidationError,
    ZeroDamping,
)
from .goodcontrol import DELTA_MAX, Z_MAX
from .rng import block_chunks
from .stats import EnsembleStats, Moments, SteadySummary, merge_all

MODES = ("good-control", "first-order", "full-sme")
OBSERVABLES = ("lambda1", "one_minus_P", "re_z1", "im_z1")
DT_BOUND = 0.05
PAULIS = np.stack([SX, SY, SZ])


@dataclass(frozen=True)
class QubitParams:
    """Rates are in units of 1/time; ``u`` is the feedback strength."""

    k: float
    Gamma: float
    gamma: float
    u: float
    dt: float = 1e-4
    horizon: float = 10.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self, dt_bound: float = DT_BOUND) -> None:
        for name in ("k", "Gamma", "gamma", "u"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"must be a nonnegative rate, got {v!r}", field=name)
        if not self.dt > 0:
            raise ValidationError(f"must be positive, got {self.dt!r}", field="dt")
        if not self.horizon > 0:
            raise ValidationError(f"must be positive, got {self.horizon!r}", field="horizon")
        fastest = max(self.k, self.Gamma, self.gamma, self.u)
        if self.dt * fastest > dt_bound:
            raise ValidationError(
                f"dt * max(k, Gamma, gamma, u) = {self.dt * fastest:.3g} exceeds {dt_bound}",
                field="dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class SteadyStatePrediction:
    lambda1_ss: float
    P_ss: float
    V_ss: float
    regime_ok: tuple[bool, bool]


# ---------------------------------------------------------------- closed forms


def steady_lambda1(k: float, Gamma: float, gamma: float) -> float:
    """Steady small eigenvalue ``(Gamma + gamma) / (4k + Gamma + 2 gamma)``."""
    if k == 0 and Gamma == 0 and gamma == 0:
        raise AllRatesZero("steady state undefined when k = Gamma = gamma = 0")
    return (Gamma + gamma) / (4 * k + Gamma + 2 * gamma)


def steady_P(k: float, Gamma: float, gamma: float) -> float:
    """Steady target probability ``1 / (1 + (Gamma + gamma)/(4k + gamma))``."""
    if k == 0 and Gamma == 0 and gamma == 0:
        raise AllRatesZero("steady state undefined when k = Gamma = gamma = 0")
    base = 4 * k + gamma
    if base == 0:
        return 0.0
    return 1.0 / (1.0 + (Gamma + gamma) / base)


def ou_stats(k: float, gamma: float, u: float) -> tuple[float, float]:
    """Stationary mean and variance of ``Re z_1``: ``(0, k / (k + gamma + u))``."""
    damping = k + gamma + u
    if damping == 0:
        raise ZeroDamping("k + gamma + u must be positive")
    return 0.0, k / damping


def regime_check(k: float, Gamma: float, gamma: float, u: float,
                 ratio_min: float = 10.0) -> tuple[bool, bool]:
    """``(k >= r (Gamma + gamma), u >= r^2 k)``; the second squares ``sqrt(u) >> sqrt(k)``."""
    if not ratio_min > 1:
        raise ValueError("ratio_min must exceed 1")
    return bool(k >= ratio_min * (Gamma + gamma)), bool(u >= ratio_min**2 * k)


def predict(params: QubitParams, ratio_min: float = 10.0) -> SteadyStatePrediction:
    p = params
    return SteadyStatePrediction(
        lambda1_ss=steady_lambda1(p.k, p.Gamma, p.gamma),
        P_ss=steady_P(p.k, p.Gamma, p.gamma),
        V_ss=ou_stats(p.k, p.gamma, p.u)[1],
        regime_ok=regime_check(p.k, p.Gamma, p.gamma, p.u, ratio_min),
    )


# ---------------------------------------------------------------- operators


def channels(Gamma: float, gamma: float) -> list[LindbladChannel]:
    """Decay (target slot 0 to slot 1) and sigma_x dephasing, in the target basis."""
    return [LindbladChannel(LOWER, Gamma, "decay"), LindbladChannel(SX, gamma, "dephasing")]


def unbiased_X(basis=None) -> np.ndarray:
    """``sigma_x`` in the eigenbasis; with ``basis`` given, the lab-frame ``U sigma_x U^dag``."""
    if basis is None:
        return SX.copy()
    u = np.asarray(basis, dtype=complex)
    return u @ SX @ dagger(u)


def feedback_hamiltonian(z1, u: float) -> np.ndarray:
    """Eigenbasis elements of ``u Re[z_1] sigma_y`` (broadcast over ``z1``)."""
    re = np.real(np.asarray(z1))
    return u * re[..., None, None] * SY


def eigenbasis_of_target(z1) -> np.ndarray:
    """Unitary whose columns are the eigenvectors, to first order, given ``z_1``.

    Columns are expressed in the target basis; ``z_0`` is taken real.
    """
    z1 = np.asarray(z1, dtype=complex)
    z0 = np.sqrt(np.maximum(1 - np.abs(z1) ** 2, 0.0))
    u = np.empty(z1.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = z0
    u[..., 0, 1] = np.conj(z1)
    u[..., 1, 0] = -z1
    u[..., 1, 1] = z0
    return u


def rotate_noise_elements(tildeL, z1) -> np.ndarray:
    """First-order eigenbasis elements of a noise operator given in the target basis.

    Equal to ``U^dag L U`` for :func:`eigenbasis_of_target` up to
    ``O(|z_1|^2)``; broadcasts over ``z1``.
    """
    L = np.asarray(tildeL, dtype=complex)
    z = np.asarray(z1, dtype=complex)
    zc = np.conj(z)
    diff = L[0, 0] - L[1, 1]
    out = np.empty(z.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = L[0, 0] - z * L[0, 1] - zc * L[1, 0]
    out[..., 0, 1] = L[0, 1] + zc * diff
    out[..., 1, 0] = L[1, 0] + z * diff
    out[..., 1, 1] = L[1, 1] + zc * L[1, 0] + z * L[0, 1]
    return out


# ---------------------------------------------------------------- derivatives


def _gc2(lam1, z1, X, k, noise, H, dt, dW):
    """First-order increments for N = 2, batched over leading axes.

    ``X`` and ``H`` are eigenbasis elements ``(..., 2, 2)``; ``noise`` is a
    list of ``(L elements, rate)``.
    """
    lam1 = np.asarray(lam1, dtype=float)
    z1 = np.asarray(z1, dtype=complex)
    dl = np.zeros(np.broadcast(lam1, z1).shape)
    dz = np.zeros(dl.shape, dtype=complex)
    if k > 0:
        x01 = X[..., 0, 1]
        xd = X[..., 0, 0].real - X[..., 1, 1].real
        dl = dl - lam1 * (8 * k * dt * np.abs(x01) ** 2 + np.sqrt(8 * k) * dW * xd)
        src = k * dt * (-x01 * xd + 8 * lam1 * x01 * xd) - np.sqrt(2 * k) * dW * (1 + 2 * lam1) * x01
        dz = dz + np.conj(src) - k * dt * np.abs(x01) ** 2 * z1
    for L, rate in noise:
        if rate == 0:
            continue
        l00, l01, l10, l11 = L[..., 0, 0], L[..., 0, 1], L[..., 1, 0], L[..., 1, 1]
        d10 = np.conj(l01) * l00 + np.conj(l11) * l10
        d11 = np.abs(l01) ** 2 + np.abs(l11) ** 2
        a10 = np.abs(l10) ** 2
        dl = dl + 2 * rate * dt * (a10 - lam1 * d11 - lam1 * (a10 - np.abs(l11) ** 2))
        cl = np.conj(l00) * l10
        dz = dz + rate * dt * (d10 - 2 * cl + 2 * lam1 * d10 - 2 * lam1 * cl
                               - 2 * lam1 * np.conj(l01) * l11)
    if H is not None:
        dz = dz + 1j * dt * (H[..., 1, 0] + (H[..., 1, 1] - H[..., 0, 0]) * z1)
    return dl, dz


def qubit_gc_derivs(lambda1, z1, params: QubitParams, dt: float, dW, H_el=None,
                    z_max: float | None = None):
    """First-order increments ``(dlambda_1, dz_1)`` with rotated noise elements.

    The measured observable is the unbiased ``sigma_x`` of the eigenbasis;
    ``H_el`` defaults to :func:`feedback_hamiltonian`.

    Raises
    ------
    RegimeBreakdown
        If ``z_max`` is given and some ``|z_1|`` exceeds it.
    """
    z1 = np.asarray(z1, dtype=complex)
    if z_max is not None and np.max(np.abs(z1), initial=0.0) > z_max:
        raise RegimeBreakdown(f"|z1| exceeds {z_max}")
    noise = [(rotate_noise_elements(ch.operator, z1), ch.rate)
             for ch in channels(params.Gamma, params.gamma)]
    if H_el is None:
        H_el = feedback_hamiltonian(z1, params.u)
    X = np.broadcast_to(SX, z1.shape + (2, 2))
    return _gc2(lambda1, z1, X, params.k, noise, H_el, dt, dW)


def reduced_derivs(lambda1, z1, params: QubitParams, dt: float, dW, H_el=None):
    """Increments of the reduced closed pair.

    ``dlambda_1 = [2(Gamma + gamma) - 2(4k + Gamma + 2 gamma) lambda_1] dt`` and
    ``dz_1 = -(k + gamma) z_1 dt + i (H_11 z_1 + H_10) dt - sqrt(2k) dW``.
    With the default linear feedback ``Re z_1`` is an Ornstein-Uhlenbeck
    process with damping ``k + gamma + u``.
    """
    p = params
    lam1 = np.asarray(lambda1, dtype=float)
    z1 = np.asarray(z1, dtype=complex)
    if H_el is None:
        H_el = feedback_hamiltonian(z1, p.u)
    dl = (2 * (p.Gamma + p.gamma) - 2 * (4 * p.k + p.Gamma + 2 * p.gamma) * lam1) * dt
    dz = (-(p.k + p.gamma) * z1 + 1j * (H_el[..., 1, 1] * z1 + H_el[..., 1, 0])) * dt \
        - np.sqrt(2 * p.k) * np.asarray(dW)
    return dl, dz


# ---------------------------------------------------------------- Bloch form of the SME


def bloch_vector(rho) -> np.ndarray:
    return np.einsum("aij,...ji->...a", PAULIS, np.asarray(rho, dtype=complex)).real


def density_from_bloch(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 0.5 * (np.eye(2) + np.einsum("...a,aij->...ij", r, PAULIS))


def lindblad_affine(chs) -> tuple[np.ndarray, np.ndarray]:
    """Affine generator ``dr/dt = M r + c`` of the Lindblad terms in Bloch form.

    Obtained by applying :func:`qfc.sme.lindblad_increment` to ``I/2`` and
    ``sigma_j/2``.
    """
    c = bloch_vector(sme.lindblad_increment(0.5 * np.eye(2), chs, 1.0))
    M = np.stack([bloch_vector(sme.lindblad_increment(0.5 * PAULIS[j], chs, 1.0))
                  for j in range(3)], axis=-1)
    return M, c


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _cross(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _norm(a):
    return np.sqrt(_dot(a, a))


def _rotate(r, axis, angle):
    """Rodrigues rotation of ``r`` about unit ``axis`` by ``angle`` (batched)."""
    cos = np.cos(angle)[..., None]
    sin = np.sin(angle)[..., None]
    ad = _dot(axis, r)[..., None]
    return r * cos + _cross(axis, r) * sin + axis * ad * (1 - cos)


def bloch_sme_step(r, n, k: float, dt: float, dW, M, c, h=None) -> np.ndarray:
    """One :func:`qfc.sme.step` for a qubit, in Bloch coordinates.

    Measures ``X = n . sigma`` (unit ``n``), applies the Lindblad generator
    ``(M, c)`` and then the exact rotation generated by ``H = h . sigma``.
    """
    dW = np.asarray(dW, dtype=float)[..., None]
    nr = _dot(n, r)[..., None]
    new = (r - 4 * k * dt * (r - n * nr) + 2 * np.sqrt(2 * k) * dW * (n - nr * r)
           + dt * (r @ M.T + c))
    if h is not None:
        hn = _norm(h)
        safe = np.where(hn > 0, hn, 1.0)[..., None]
        new = np.where(hn[..., None] > 0, _rotate(new, h / safe, 2 * hn * dt), new)
    return new


def _unit(v):
    return v / _norm(v)[..., None]


def transport_axis(e1, r_old_hat, r_new_hat) -> np.ndarray:
    """Carry the measurement axis along the minimal rotation ``r_old -> r_new``.

    This is the Bloch-sphere form of choosing eigenvector phases with
    ``<n_old|n_new>`` real and positive.
    """
    s = r_old_hat + r_new_hat
    e = e1 - s * (_dot(e1, r_new_hat) / (1 + _dot(r_old_hat, r_new_hat)))[..., None]
    e = e - r_new_hat * _dot(e, r_new_hat)[..., None]
    return _unit(e)


# ---------------------------------------------------------------- batched engines


class _Engine:
    """Batched single-step propagator; subclasses hold the state arrays."""

    def __init__(self, params: QubitParams, size: int):
        self.p = params
        self.size = size

    def observables(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def step(self, dW: np.ndarray) -> np.ndarray:
        """Advance all trajectories; return a boolean mask of new failures."""
        raise NotImplementedError

    def out_of_regime(self, Delta_max: float, z_max: float) -> np.ndarray:
        raise NotImplementedError

    def keep(self, mask: np.ndarray) -> None:
        raise NotImplementedError


def _one_minus_P(lam1, z1):
    a = np.abs(z1) ** 2
    return lam1 + a * (1 - 2 * lam1)


class _ReducedEngine(_Engine):
    def __init__(self, params, size, lambda1_0=0.0, z1_0=0.0):
        super().__init__(params, size)
        self.lam = np.full(size, float(lambda1_0))
        self.z = np.full(size, complex(z1_0))

    def derivs(self, dW):
        return reduced_derivs(self.lam, self.z, self.p, self.p.dt, dW)

    def step(self, dW):
        dl, dz = self.derivs(dW)
        self.lam = self.lam + dl
        self.z = self.z + dz
        return ~np.isfinite(self.lam)

    def out_of_regime(self, Delta_max, z_max):
        return (self.lam > Delta_max) | (np.abs(self.z) > z_max)

    def observables(self):
        return {"lambda1": self.lam, "one_minus_P": _one_minus_P(self.lam, self.z),
                "re_z1": self.z.real, "im_z1": self.z.imag}

    def keep(self, mask):
        self.lam = self.lam[mask]
        self.z = self.z[mask]


class _FirstOrderEngine(_ReducedEngine):
    def derivs(self, dW):
        return qubit_gc_derivs(self.lam, self.z, self.p, self.p.dt, dW)

    def step(self, dW):
        bad = super().step(dW)
        neg = self.lam < 0
        bad |= self.lam < -1e-10
        self.lam = np.where(neg & ~bad, 0.0, self.lam)
        return bad


def _frame_from_basis(v):
    """Bloch axes ``e_a`` with ``V sigma_a V^dag = e_a . sigma``."""
    return 0.5 * np.stack([bloch_vector(v @ P @ dagger(v)) for P in PAULIS], axis=-2)


class _BlochEngine(_Engine):
    """Full SME in Bloch coordinates with a parallel-transported measurement axis."""

    def __init__(self, params, size, rho0=None, psi=(1.0, 0.0)):
        super().__init__(params, size)
        psi = np.asarray(psi, dtype=complex)
        rho0 = pure_state(psi) if rho0 is None else np.asarray(rho0, dtype=complex)
        s = eigendecompose(rho0, gap_tol=0.0)
        e = _frame_from_basis(s.basis)
        self.r = np.tile(bloch_vector(rho0), (size, 1))
        self.e1 = np.tile(e[0], (size, 1))
        self.rhat = np.tile(e[2], (size, 1))
        self.t = bloch_vector(pure_state(psi))
        self.M, self.c = lindblad_affine(channels(params.Gamma, params.gamma))
        self._update_z()

    def _update_z(self):
        e2 = _cross(self.rhat, self.e1)
        z0 = np.sqrt(np.maximum(0.5 * (1 + self.rhat @ self.t), 1e-300))
        self.z = (self.e1 @ self.t + 1j * (e2 @ self.t)) / (2 * z0)
        self.e2 = e2

    def step(self, dW):
        p = self.p
        h = (p.u * self.z.real)[:, None] * self.e2
        r = bloch_sme_step(self.r, self.e1, p.k, p.dt, dW, self.M, self.c, h)
        norm = _norm(r)
        bad = (1 - norm) / 2 < -100 * p.dt
        rhat = r / np.where(norm > 0, norm, 1.0)[:, None]
        self.e1 = transport_axis(self.e1, self.rhat, rhat)
        self.r, self.rhat = r, rhat
        self._update_z()
        return bad | ~np.isfinite(norm)

    def lambda1(self):
        return 0.5 * (1 - _norm(self.r))

    def out_of_regime(self, Delta_max, z_max):
        return (self.lambda1() > Delta_max) | (np.abs(self.z) > z_max)

    def observables(self):
        return {"lambda1": self.lambda1(), "one_minus_P": 0.5 * (1 - self.r @ self.t),
                "re_z1": self.z.real, "im_z1": self.z.imag}

    def keep(self, mask):
        for name in ("r", "e1", "e2", "rhat", "z"):
            setattr(self, name, getattr(self, name)[mask])


class _MatrixEngine(_Engine):
    """Full SME on density matrices via :func:`qfc.sme.step` (slower reference path)."""

    def __init__(self, params, size, rho0=None, psi=(1.0, 0.0)):
        super().__init__(params, size)
        self.psi = np.asarray(psi, dtype=complex)
        rho0 = pure_state(self.psi) if rho0 is None else np.asarray(rho0, dtype=complex)
        s = eigendecompose(rho0, gap_tol=0.0)
        self.rho = np.tile(rho0, (size, 1, 1))
        self.V = np.tile(s.basis, (size, 1, 1))
        self.lam = np.tile(s.lambdas, (size, 1))
        self.chs = channels(params.Gamma, params.gamma)
        self._update_z()

    def _update_z(self):
        z = np.einsum("bij,i->bj", self.V.conj(), self.psi)
        self.z = z[:, 1] * np.conj(z[:, 0]) / np.abs(z[:, 0])

    def step(self, dW):
        p = self.p
        X = self.V @ SX @ dagger(self.V)
        H = (p.u * self.z.real)[:, None, None] * (self.V @ SY @ dagger(self.V))
        rho = sme.step(self.rho, sme.SmeInputs(X=X, k=p.k, channels=self.chs, H=H), p.dt, dW,
                       check=False)
        w, v = np.linalg.eigh(rho)
        w, v = w[:, ::-1], v[:, :, ::-1]
        ph = np.einsum("bij,bij->bj", self.V.conj(), v)
        v = v * (np.abs(ph) / ph)[:, None, :]
        self.rho, self.V, self.lam = rho, v, w
        self._update_z()
        return w[:, -1] < -100 * p.dt

    def out_of_regime(self, Delta_max, z_max):
        return (self.lam[:, 1] > Delta_max) | (np.abs(self.z) > z_max)

    def observables(self):
        P = np.einsum("i,bij,j->b", self.psi.conj(), self.rho, self.psi).real
        return {"lambda1": self.lam[:, 1], "one_minus_P": 1 - P,
                "re_z1": self.z.real, "im_z1": self.z.imag}

    def keep(self, mask):
        for name in ("rho", "V", "lam", "z"):
            setattr(self, name, getattr(self, name)[mask])


def make_engine(params: QubitParams, mode: str, size: int, engine: str = "bloch",
                init: dict | None = None) -> _Engine:
    init = dict(init or {})
    if mode == "good-control":
        return _ReducedEngine(params, size, **init)
    if mode == "first-order":
        return _FirstOrderEngine(params, size, **init)
    if mode == "full-sme":
        if engine == "bloch":
            return _BlochEngine(params, size, **init)
        if engine == "matrix":
            return _MatrixEngine(params, size, **init)
        raise ValueError(f"unknown engine {engine!r}")
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


# ---------------------------------------------------------------- ensemble driver


@dataclass(frozen=True)
class SimSettings:
    """Numerical options of :func:`simulate` beyond the physical parameters."""

    burn_in: float = 0.2
    record_every: int = 10
    block_size: int = 250
    engine: str = "bloch"
    noise: str = "gaussian"
    on_breakdown: str = "raise"
    Delta_max: float = DELTA_MAX
    z_max: float = Z_MAX
    init: dict = field(default_factory=dict)


@dataclass
class _BlockResult:
    series: dict
    window: dict
    failures: list


def _run_block(params: QubitParams, mode: str, indices: list[int], s: SimSettings,
               exclude: frozenset = frozenset()) -> tuple[_BlockResult | None, list]:
    """Integrate one block. Returns ``(result, failures)``; result is None if any failed."""
    idx = np.array([i for i in indices if i not in exclude], dtype=int)
    n_steps = params.n_steps
    n_rec = n_steps // s.record_every + 1
    t_burn = s.burn_in * params.horizon
    eng = make_engine(params, mode, idx.size, s.engine, s.init)
    series = {o: (np.zeros(n_rec), np.zeros(n_rec)) for o in OBSERVABLES}
    wsum = {o: np.zeros(idx.size) for o in OBSERVABLES}
    n_win = 0
    failures = []
    check_regime = s.on_breakdown != "ignore" and mode != "full-sme"

    def record(i, step):
        nonlocal n_win
        obs = eng.observables()
        for o in OBSERVABLES:
            m = Moments.from_samples(obs[o])
            series[o][0][i] = m.mean
            series[o][1][i] = m.m2
        if step * params.dt >= t_burn - 1e-12:
            for o in OBSERVABLES:
                wsum[o] += obs[o]
            n_win += 1

    if idx.size == 0:
        empty = {o: Moments() for o in OBSERVABLES}
        return _BlockResult(empty, dict(empty), []), []
    record(0, 0)
    step = 0
    dead = np.zeros(idx.size, dtype=bool)
    for chunk in block_chunks(params.seed, idx.tolist(), n_steps, params.dt, s.noise):
        for col in range(chunk.shape[1]):
            with np.errstate(all="ignore"):
                bad = eng.step(chunk[:, col])
            step += 1
            kind = np.where(bad, "PositivityLoss", "")
            if check_regime:
                out = eng.out_of_regime(s.Delta_max, s.z_max) & ~bad
                kind = np.where(out, "RegimeBreakdown", kind)
                bad = bad | out
            bad &= ~dead
            if bad.any():
                for b in np.flatnonzero(bad):
                    failures.append({"trajectory": int(idx[b]), "step": step, "kind": str(kind[b])})
                if s.on_breakdown == "raise":
                    f = failures[0]
                    msg = f"trajectory {f['trajectory']}: {f['kind']}"
                    if f["kind"] == "RegimeBreakdown":
                        raise RegimeBreakdown(msg, step=f["step"])
                    raise PositivityLoss(msg, step=f["step"])
                dead |= bad
            if step % s.record_every == 0 and not failures:
                record(step // s.record_every, step)
    if failures:
        return None, failures
    window = {o: Moments.from_samples(wsum[o] / max(n_win, 1)) for o in OBSERVABLES}
    counts = idx.size
    series = {o: Moments(counts, series[o][0], series[o][1]) for o in OBSERVABLES}
    return _BlockResult(series, window, []), []


def _block_task(args):
    """Run a block; if any trajectory fails, rerun once without the failed ones.

    Trajectories are independent given their streams, so the rerun
    reproduces the survivors exactly and cannot fail.
    """
    params, mode, indices, settings = args
    res, failures = _run_block(params, mode, indices, settings)
    if res is None:
        res, again = _run_block(params, mode, indices, settings,
                                frozenset(f["trajectory"] for f in failures))
        assert res is not None and not again
    res.failures = failures
    return res


def simulate(params: QubitParams, mode: str = "good-control", n_traj: int = 100,
             settings: SimSettings | None = None, jobs: int = 1) -> EnsembleStats:
    """Run an ensemble and return time series plus steady-state summaries.

    Trajectories are split into fixed blocks whose moments are merged in
    block order, so the result does not depend on ``jobs``.

    ``settings.on_breakdown`` is ``"raise"`` (first failure aborts),
    ``"record"`` (failed trajectories are listed and excluded from the
    statistics) or ``"ignore"`` (no regime check; positivity failures are
    still recorded).
    """
    s = settings or SimSettings()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if n_traj < 1:
        raise ValidationError("must be at least 1", field="n_traj")
    if s.on_breakdown not in ("raise", "record", "ignore"):
        raise ValueError(f"unknown breakdown policy {s.on_breakdown!r}")
    blocks = [list(range(a, min(a + s.block_size, n_traj))) for a in range(0, n_traj, s.block_size)]
    tasks = [(params, mode, b, s) for b in blocks]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_block_task, tasks))
    else:
        results = [_block_task(t) for t in tasks]

    n_rec = params.n_steps // s.record_every + 1
    times = np.arange(n_rec) * s.record_every * params.dt
    mean, var, steady = {}, {}, {}
    t_burn = s.burn_in * params.horizon
    win = times >= t_burn - 1e-12
    n_ok = 0
    for o in OBSERVABLES:
        m = merge_all(r.series[o] for r in results)
        w = merge_all(r.window[o] for r in results)
        n_ok = m.count
        if m.count:
            mean[o] = np.asarray(m.mean, dtype=float)
            var[o] = np.asarray(m.variance, dtype=float)
        else:
            mean[o] = np.full(n_rec, np.nan)
            var[o] = np.full(n_rec, np.nan)
        steady[o] = SteadySummary(
            mean=float(w.mean) if w.count else float("nan"),
            stderr=float(w.stderr) if w.count else float("nan"),
            variance=float(np.mean(var[o][win])),
            n_traj=w.count,
            window=(float(t_burn), float(params.horizon)),
        )
    failures = [f for r in results for f in r.failures]
    meta = {
        "mode": mode,
        "engine": s.engine if mode == "full-sme" else None,
        "params": asdict(params),
        "settings": {k: v for k, v in asdict(s).items() if k != "init"},
        "n_requested": n_traj,
        "n_failed": len(failures),
    }
    return EnsembleStats(times=times, mean=mean, variance=var, n_traj=n_ok, steady=steady,
                         metadata=meta, failures=failures)
