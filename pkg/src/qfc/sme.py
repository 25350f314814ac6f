"""Reference integrator for the stochastic master equation.

Evolves the full density matrix under continuous measurement of ``X`` at
strength ``k``, Lindblad noise and a (possibly feedback-dependent)
Hamiltonian. Everything else in the package is checked against this.

The increments broadcast over leading batch axes: ``rho`` may be ``(N, N)``
or ``(B, N, N)`` with ``dW`` a scalar or a length-``B`` vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    LindbladChannel,
    dagger,
    eigendecompose,
    hermitize,
    target_probability,
    trace,
)
from .errors import PositivityLoss


@dataclass(frozen=True)
class SmeInputs:
    """Dynamics for one step: measured observable, strength, noise and Hamiltonian."""

    X: np.ndarray | None = None
    k: float = 0.0
    channels: Sequence[LindbladChannel] = ()
    H: np.ndarray | None = None

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError("measurement strength k must be nonnegative")


def _bcast(x, ndim):
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape + (1,) * (ndim - x.ndim)) if x.ndim else x


def expectation(rho: np.ndarray, a: np.ndarray) -> np.ndarray:
    return trace(a @ rho).real


def measurement_increment(rho, X, k: float, dt: float, dW) -> np.ndarray:
    """``-k[X,[X,rho]] dt + sqrt(2k) (X rho + rho X - 2<X> rho) dW``.

    ``<X>`` is taken at the start of the step.
    """
    rho = np.asarray(rho, dtype=complex)
    X = np.asarray(X, dtype=complex)
    xr = X @ rho
    rx = rho @ X
    double_comm = X @ xr - 2 * xr @ X + rx @ X
    ex = trace(xr).real
    innov = xr + rx - 2 * ex[..., None, None] * rho
    return -k * dt * double_comm + np.sqrt(2 * k) * _bcast(dW, rho.ndim) * innov


def lindblad_increment(rho, channels: Sequence[LindbladChannel], dt: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    out = np.zeros_like(rho)
    for ch in channels:
        if ch.rate == 0:
            continue
        L = ch.operator
        LdL = dagger(L) @ L
        out -= ch.rate * dt * (LdL @ rho + rho @ LdL - 2 * L @ rho @ dagger(L))
    return out


def hamiltonian_increment(rho, H, dt: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    H = np.asarray(H, dtype=complex)
    return -1j * dt * (H @ rho - rho @ H)


def hamiltonian_propagator(H, dt: float) -> np.ndarray:
    """``exp(-i H dt)`` for Hermitian ``H`` (batched)."""
    w, v = np.linalg.eigh(np.asarray(H, dtype=complex))
    return (v * np.exp(-1j * dt * w)[..., None, :]) @ dagger(v)


def step(rho, inputs: SmeInputs, dt: float, dW, *, unitary: str = "exact",
         check: bool = True, step_index: int | None = None) -> np.ndarray:
    """Advance ``rho`` by one Euler-Maruyama step.

    Measurement and Lindblad terms are explicit Euler-Maruyama. The
    Hamiltonian is applied as the exact unitary ``exp(-iH dt)`` after them
    (``unitary="exact"``) or as the explicit increment ``-i[H, rho] dt``
    (``unitary="euler"``). The result is re-Hermitized and trace
    renormalized.

    Raises
    ------
    PositivityLoss
        If an eigenvalue falls below ``-100 dt``; the step is too large for
        the measurement strength.
    """
    rho = np.asarray(rho, dtype=complex)
    d = np.zeros_like(rho)
    if inputs.X is not None and inputs.k > 0:
        d += measurement_increment(rho, inputs.X, inputs.k, dt, dW)
    if inputs.channels:
        d += lindblad_increment(rho, inputs.channels, dt)
    new = rho + d
    if inputs.H is not None:
        if unitary == "exact":
            u = hamiltonian_propagator(inputs.H, dt)
            new = u @ new @ dagger(u)
        elif unitary == "euler":
            new = new + hamiltonian_increment(rho, inputs.H, dt)
        else:
            raise ValueError(f"unknown unitary scheme {unitary!r}")
    new = hermitize(new)
    new = new / trace(new).real[..., None, None]
    if check:
        wmin = np.min(np.linalg.eigvalsh(new)[..., 0])
        if wmin < -100 * dt:
            raise PositivityLoss(f"eigenvalue {wmin:.3e} below -100 dt", step=step_index,
                                 eigenvalue=float(wmin))
    return new


@dataclass
class SmeTrajectory:
    """Sampled output of :func:`integrate`."""

    times: np.ndarray
    eigenvalues: np.ndarray
    probability: np.ndarray | None = None
    states: np.ndarray | None = None
    final: np.ndarray | None = field(default=None, repr=False)


def integrate(rho0, inputs: SmeInputs | Callable[[int], SmeInputs], dt: float, n_steps: int,
              noise: np.ndarray, feedback: Callable[[np.ndarray, int], np.ndarray] | None = None,
              psi=None, sample_every: int = 1, keep_states: bool = False,
              unitary: str = "exact", check: bool = True) -> SmeTrajectory:
    """Integrate one trajectory.

    Parameters
    ----------
    inputs
        Fixed :class:`SmeInputs` or a schedule ``step -> SmeInputs``.
    noise
        Wiener increments, one per step (consumed verbatim).
    feedback
        Optional ``(rho, step) -> H`` giving the Hamiltonian for the next
        step; overrides ``inputs.H``.
    psi
        Target state; when given, ``<psi|rho|psi>`` is recorded.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape[0] < n_steps:
        raise ValueError(f"noise stream has {noise.shape[0]} increments, need {n_steps}")
    rho = np.array(rho0, dtype=complex)
    n_samples = n_steps // sample_every + 1
    times = np.empty(n_samples)
    eigs = np.empty((n_samples, rho.shape[-1]))
    probs = np.empty(n_samples) if psi is not None else None
    states = np.empty((n_samples,) + rho.shape, dtype=complex) if keep_states else None

    def record(i, s):
        times[i] = s * dt
        eigs[i] = np.linalg.eigvalsh(rho)[::-1]
        if probs is not None:
            probs[i] = target_probability(rho, psi)
        if states is not None:
            states[i] = rho

    record(0, 0)
    for s in range(n_steps):
        inp = inputs(s) if callable(inputs) else inputs
        if feedback is not None:
            inp = SmeInputs(X=inp.X, k=inp.k, channels=inp.channels, H=feedback(rho, s))
        try:
            rho = step(rho, inp, dt, noise[s], unitary=unitary, check=check, step_index=s)
        except PositivityLoss:
            raise
        if (s + 1) % sample_every == 0:
            record((s + 1) // sample_every, s + 1)
    return SmeTrajectory(times=times, eigenvalues=eigs, probability=probs, states=states,
                         final=rho)


def spectral_summary(rho, gap_tol: float = 0.0):
    """Eigendecomposition of a single state, skipping the degeneracy check by default."""
    return eigendecompose(rho, gap_tol=gap_tol)
