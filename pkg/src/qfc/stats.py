"""Streaming moments and ensemble summaries.

Moments are merged with the pairwise update of Chan, Golub and LeVeque, so
blocks of trajectories can be reduced independently and then combined in a
fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Moments:
    """Count, mean and sum of squared deviations, elementwise over an array shape."""

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0

    @classmethod
    def from_samples(cls, x, axis: int = 0) -> "Moments":
        x = np.asarray(x, dtype=float)
        n = x.shape[axis]
        if n == 0:
            return cls()
        mean = np.mean(x, axis=axis)
        m2 = np.sum((x - np.expand_dims(mean, axis)) ** 2, axis=axis)
        return cls(n, mean, m2)

    def merge(self, other: "Moments") -> "Moments":
        if other.count == 0:
            return Moments(self.count, self.mean, self.m2)
        if self.count == 0:
            return Moments(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = np.asarray(other.mean) - np.asarray(self.mean)
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return Moments(n, mean, m2)

    @property
    def variance(self):
        """Unbiased sample variance (zero for a single sample)."""
        if self.count < 2:
            return np.zeros_like(np.asarray(self.mean, dtype=float))
        return np.asarray(self.m2) / (self.count - 1)

    @property
    def stderr(self):
        if self.count == 0:
            return np.zeros_like(np.asarray(self.mean, dtype=float))
        return np.sqrt(self.variance / self.count)


def merge_all(parts) -> Moments:
    out = Moments()
    for p in parts:
        out = out.merge(p)
    return out


@dataclass
class SteadySummary:
    """Windowed steady-state statistics of one observable.

    ``mean`` and ``stderr`` come from per-trajectory time averages over the
    window (so ``stderr`` reflects trajectory-to-trajectory spread);
    ``variance`` is the ensemble variance averaged over the window's grid
    points.
    """

    mean: float
    stderr: float
    variance: float
    n_traj: int
    window: tuple[float, float]


@dataclass
class EnsembleStats:
    """Ensemble time series and steady-state summaries for several observables."""

    times: np.ndarray
    mean: dict[str, np.ndarray]
    variance: dict[str, np.ndarray]
    n_traj: int
    steady: dict[str, SteadySummary] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    @property
    def observables(self) -> list[str]:
        return list(self.mean)

    def stderr(self, name: str) -> np.ndarray:
        return np.sqrt(self.variance[name] / max(self.n_traj, 1))


def z_score(value: float, stderr: float, reference: float) -> float:
    """``(value - reference) / stderr``.

    A zero ``stderr`` means every trajectory agreed (a deterministic
    observable); the score is then 0 if ``value`` matches ``reference`` to a
    relative 1e-6 and infinite otherwise.
    """
    diff = value - reference
    if stderr == 0:
        if abs(diff) <= 1e-6 * max(1e-300, abs(reference)):
            return 0.0
        return float(np.copysign(np.inf, diff))
    return float(diff / stderr)
