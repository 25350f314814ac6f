"""Ensemble execution, cross-propagator validation and parameter sweeps.

Everything here is driven by a :class:`~qfc.config.SimConfig`. Trajectories
are grouped into fixed blocks, each block is reduced to moments, and blocks
are merged in order, so a run is reproducible from ``(config, seed)`` for
any worker count.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from . import eigenflow as ef
from . import goodcontrol as gc
from . import qubit, sme, validation
from .config import SimConfig
from .core import (
    SX,
    SY,
    SZ,
    LindbladChannel,
    check_density,
    dagger,
    eigendecompose,
    normalized,
    pure_state,
    random_density_matrix,
    random_hermitian,
)
from .errors import DegenerateSpectrum, PositivityLoss, QFCError, RegimeBreakdown, TrajectoryFailure, ValidationError
from .rng import increments
from .stats import EnsembleStats, Moments, SteadySummary, merge_all, z_score

log = logging.getLogger("qfc")

# ---------------------------------------------------------------- operator descriptions


def _entry(x) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ValidationError(f"complex entries are [re, im] pairs, got {x!r}")
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, str):
        return complex(x.replace(" ", ""))
    return complex(x)


def parse_matrix(source, dim: int, rng: np.random.Generator | None = None, field: str = "") -> np.ndarray:
    """Turn an operator description into a ``dim x dim`` complex matrix.

    Accepted: a preset name (``sigma_x``, ``sigma_y``, ``sigma_z``, ``decay``,
    ``dephasing``, ``identity``, ``random``), ``{diag = [...]}`` or a nested
    list whose entries are numbers, ``[re, im]`` pairs or strings like
    ``"1+2j"``.
    """
    if isinstance(source, str):
        if source in ("sigma_x", "sigma_y", "sigma_z") and dim != 2:
            raise ValidationError(f"'{source}' needs dim = 2", field=field)
        named = {"sigma_x": SX, "sigma_y": SY, "sigma_z": SZ}
        if source in named:
            return named[source].copy()
        if source == "identity":
            return np.eye(dim, dtype=complex)
        if source == "decay":
            m = np.zeros((dim, dim), dtype=complex)
            m[1, 0] = 1.0
            return m
        if source == "dephasing":
            m = np.zeros((dim, dim), dtype=complex)
            m[0, 1] = m[1, 0] = 1.0
            return m
        if source == "random":
            if rng is None:
                raise ValidationError("'random' needs a generator", field=field)
            return random_hermitian(dim, rng)
        raise ValidationError(f"unknown operator preset '{source}'", field=field)
    if isinstance(source, dict):
        if set(source) != {"diag"}:
            raise ValidationError("operator tables take only 'diag'", field=field)
        d = [_entry(x) for x in source["diag"]]
        if len(d) != dim:
            raise ValidationError(f"diag needs {dim} entries", field=field)
        return np.diag(d)
    m = np.array([[_entry(x) for x in row] for row in source], dtype=complex)
    if m.shape != (dim, dim):
        raise ValidationError(f"expected a {dim}x{dim} matrix, got {m.shape}", field=field)
    return m


@dataclass(frozen=True)
class System:
    """Physical content of a config, resolved to matrices."""

    dim: int
    rho0: np.ndarray
    psi: np.ndarray
    X: np.ndarray
    k: float
    channels: tuple[LindbladChannel, ...]
    law: str
    u: float
    H: np.ndarray | None

    @property
    def rates(self) -> dict[str, float]:
        return {f"L{i}": c.rate for i, c in enumerate(self.channels)}

    def operators(self) -> dict[str, np.ndarray]:
        ops = {"X": self.X}
        ops.update({f"L{i}": c.operator for i, c in enumerate(self.channels)})
        if self.law == "constant":
            ops["H"] = self.H
        return ops


def build_system(cfg: SimConfig) -> System:
    n = cfg.system.dim
    rng = np.random.default_rng([cfg.numerics.seed, 7919])
    t = cfg.system.target
    if isinstance(t, int) and not isinstance(t, bool):
        if not 0 <= t < n:
            raise ValidationError("basis index out of range", field="system.target")
        psi = np.zeros(n, dtype=complex)
        psi[t] = 1
    else:
        psi = np.array([_entry(x) for x in t], dtype=complex)
        if psi.size != n:
            raise ValidationError(f"needs {n} entries", field="system.target")
        psi = normalized(psi)
    init = cfg.system.initial
    if init == "target":
        rho0 = pure_state(psi)
    elif init == "maximally_mixed":
        rho0 = np.eye(n, dtype=complex) / n
    elif init == "random":
        rho0 = random_density_matrix(n, rng, min_gap=0.05)
    elif isinstance(init, dict) and set(init) == {"diag"}:
        rho0 = parse_matrix(init, n, field="system.initial")
    elif isinstance(init, dict) and set(init) == {"matrix"}:
        rho0 = parse_matrix(init["matrix"], n, field="system.initial")
    else:
        raise ValidationError(f"unknown initial state {init!r}", field="system.initial")
    try:
        rho0 = check_density(rho0)
    except QFCError as exc:
        raise ValidationError(str(exc), field="system.initial") from exc
    X = parse_matrix(cfg.measurement.X, n, rng, "measurement.X")
    if np.max(np.abs(X - dagger(X))) > 1e-12:
        raise ValidationError("must be Hermitian", field="measurement.X")
    chs = tuple(LindbladChannel(parse_matrix(c.operator, n, rng, f"channels[{i}].operator"), c.rate,
                                c.name or str(c.operator))
                for i, c in enumerate(cfg.channels))
    f = cfg.feedback
    H = parse_matrix(f.H, n, rng, "feedback.H") if f.law == "constant" else None
    return System(n, rho0, psi, X, cfg.measurement.k, chs, f.law, f.u, H)


def linear_feedback_elements(z_small, u: float) -> np.ndarray:
    """Eigenbasis elements of ``u sum_n Re[z_n] (i|n><0| - i|0><n|)``.

    For a qubit this is ``u Re[z_1] sigma_y``.
    """
    z = np.asarray(z_small)
    n = z.size + 1
    H = np.zeros((n, n), dtype=complex)
    H[1:, 0] = 1j * u * z.real
    H[0, 1:] = -1j * u * z.real
    return H


# ---------------------------------------------------------------- single trajectories


def _observable_names(n: int) -> list[str]:
    return ["P", "Delta"] + [f"lambda{i}" for i in range(n)]


def _obs_row(lambdas, P) -> list[float]:
    return [P, 1.0 - lambdas[0]] + list(lambdas)


def trajectory_sme(system: System, dt: float, dW: np.ndarray, record_every: int) -> np.ndarray:
    """Oracle trajectory; rows are ``[P, Delta, lambda_0..]`` on the record grid."""
    s = system
    rho = s.rho0.copy()
    rows = []
    V = np.linalg.eigh(rho)[1][:, ::-1] if s.law == "linear" else None

    def rec():
        lam = np.linalg.eigvalsh(rho)[::-1]
        rows.append(_obs_row(lam, float(np.real(np.vdot(s.psi, rho @ s.psi)))))

    rec()
    inputs = sme.SmeInputs(X=s.X, k=s.k, channels=s.channels, H=s.H)
    for step in range(dW.size):
        if s.law == "linear":
            z = dagger(V) @ s.psi
            zs = z[1:] * np.conj(z[0]) / abs(z[0])
            inputs = replace(inputs, H=V @ linear_feedback_elements(zs, s.u) @ dagger(V))
        rho = sme.step(rho, inputs, dt, dW[step], step_index=step)
        if s.law == "linear":
            w, v = np.linalg.eigh(rho)
            v = v[:, ::-1]
            ph = np.sum(V.conj() * v, axis=0)
            V = v * (np.abs(ph) / np.where(ph == 0, 1, ph))
        if (step + 1) % record_every == 0:
            rec()
    return np.asarray(rows)


def trajectory_eigenflow(system: System, dt: float, dW: np.ndarray, record_every: int,
                         gap_tol: float, reortho_every: int = 100) -> np.ndarray:
    s = system
    st = ef.EigenflowState.from_density(s.rho0, s.psi, s.operators(), gap_tol=gap_tol)
    rows = [_obs_row(st.lambdas, st.target_probability())]
    for step in range(dW.size):
        H_el = None
        if s.law == "linear":
            z = st.z
            H_el = linear_feedback_elements(z[1:] * np.conj(z[0]) / abs(z[0]), s.u)
        st = ef.step(st, s.k, s.rates, H_el, dt, dW[step], gap_tol=gap_tol,
                     reortho_every=reortho_every)
        if (step + 1) % record_every == 0:
            rows.append(_obs_row(st.lambdas, st.target_probability()))
    return np.asarray(rows)


def _gc_probability(state: gc.GoodControlState) -> float:
    a = np.abs(state.z) ** 2
    return float((1 - state.Delta) * (1 - a.sum()) + np.sum(a * state.lambdas_small))


def trajectory_goodcontrol(system: System, dt: float, dW: np.ndarray, record_every: int,
                           gap_tol: float, Delta_max: float, z_max: float) -> np.ndarray:
    s = system
    st = gc.GoodControlState.from_density(s.rho0, s.psi, s.operators(), gap_tol=0.0)
    rows = [_obs_row(st.lambdas, _gc_probability(st))]
    for step in range(dW.size):
        H_el = linear_feedback_elements(st.z, s.u) if s.law == "linear" else None
        st = gc.gc_step(st, s.k, s.rates, H_el, dt, dW[step], gap_tol=gap_tol,
                        Delta_max=Delta_max, z_max=z_max)
        if (step + 1) % record_every == 0:
            rows.append(_obs_row(st.lambdas, _gc_probability(st)))
    return np.asarray(rows)


def run_trajectory(cfg: SimConfig, system: System, index: int) -> np.ndarray:
    """One trajectory of a generic mode, driven by the stream of ``index``."""
    n = cfg.numerics
    n_steps = int(round(n.horizon / n.dt))
    dW = increments(n.seed, index, n_steps, n.dt, n.noise)
    if cfg.mode == "sme":
        return trajectory_sme(system, n.dt, dW, n.record_every)
    if cfg.mode == "eigenflow":
        return trajectory_eigenflow(system, n.dt, dW, n.record_every, n.gap_tol, n.reortho_every)
    if cfg.mode == "goodcontrol":
        return trajectory_goodcontrol(system, n.dt, dW, n.record_every, n.gap_tol,
                                      n.Delta_max, n.z_max)
    raise ValueError(f"mode {cfg.mode!r} has no single-trajectory runner")


@dataclass
class _Block:
    series: Moments | None
    window: Moments | None
    failures: list


def _generic_block(args) -> _Block:
    cfg, indices = args
    system = build_system(cfg)
    rows, failures = [], []
    for i in indices:
        try:
            rows.append(run_trajectory(cfg, system, i))
        except (PositivityLoss, DegenerateSpectrum, RegimeBreakdown) as exc:
            failures.append({"trajectory": i, "step": getattr(exc, "step", None),
                             "kind": type(exc).__name__})
    log.info("trajectories %d-%d done (%d failed)", indices[0], indices[-1], len(failures))
    if not rows:
        return _Block(None, None, failures)
    arr = np.stack(rows)                                    # (B, T, n_obs)
    n = cfg.numerics
    times = np.arange(arr.shape[1]) * n.record_every * n.dt
    win = times >= n.burn_in_fraction * n.horizon - 1e-12
    return _Block(Moments.from_samples(arr), Moments.from_samples(arr[:, win].mean(axis=1)), failures)


def _blocks(n_traj: int, size: int) -> list[list[int]]:
    return [list(range(a, min(a + size, n_traj))) for a in range(0, n_traj, size)]


def _map(fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _metadata(cfg: SimConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.numerics.seed, "mode": cfg.mode,
            "versions": {"qfc": __version__, "numpy": np.__version__}}


def _check_budget(cfg: SimConfig, failures: list) -> None:
    n = cfg.numerics.n_traj
    if len(failures) > cfg.numerics.failure_budget * n:
        kinds = sorted({f["kind"] for f in failures})
        raise TrajectoryFailure(
            f"{len(failures)} of {n} trajectories failed ({', '.join(kinds)}); "
            f"budget is {cfg.numerics.failure_budget:.0%}")


def qubit_params(cfg: SimConfig, **overrides) -> qubit.QubitParams:
    n = cfg.numerics
    u = cfg.feedback.u if cfg.feedback.law == "linear" else 0.0
    values = dict(k=cfg.measurement.k, Gamma=cfg.rate("decay"), gamma=cfg.rate("dephasing"), u=u,
                  dt=n.dt, horizon=n.horizon, seed=n.seed)
    values.update(overrides)
    p = qubit.QubitParams(**values)
    p.validate(n.dt_bound)
    return p


def qubit_settings(cfg: SimConfig, on_breakdown: str = "record") -> qubit.SimSettings:
    n = cfg.numerics
    return qubit.SimSettings(burn_in=n.burn_in_fraction, record_every=n.record_every,
                             block_size=n.block_size, engine=n.engine, noise=n.noise,
                             on_breakdown=on_breakdown, Delta_max=n.Delta_max, z_max=n.z_max)


def run(cfg: SimConfig, jobs: int = 1) -> EnsembleStats:
    """Run the ensemble described by ``cfg`` (modes sme, eigenflow, goodcontrol, qubit).

    Raises
    ------
    TrajectoryFailure
        If more than the failure budget (default 1%) of trajectories fail.
    """
    n = cfg.numerics
    if cfg.mode == "qubit":
        stats = qubit.simulate(qubit_params(cfg), n.qubit_mode, n.n_traj, qubit_settings(cfg), jobs)
        _check_budget(cfg, stats.failures)
        stats.metadata.update(_metadata(cfg))
        return stats
    if cfg.mode not in ("sme", "eigenflow", "goodcontrol"):
        raise ValueError(f"run() does not handle mode {cfg.mode!r}")
    system = build_system(cfg)
    names = _observable_names(system.dim)
    results = _map(_generic_block, [(cfg, b) for b in _blocks(n.n_traj, n.block_size)], jobs)
    failures = [f for r in results for f in r.failures]
    _check_budget(cfg, failures)
    series = merge_all(r.series for r in results if r.series is not None)
    window = merge_all(r.window for r in results if r.window is not None)
    n_steps = int(round(n.horizon / n.dt))
    times = np.arange(n_steps // n.record_every + 1) * n.record_every * n.dt
    win = times >= n.burn_in_fraction * n.horizon - 1e-12
    var = np.asarray(series.variance)
    mean = {name: np.asarray(series.mean)[:, j] for j, name in enumerate(names)}
    variance = {name: var[:, j] for j, name in enumerate(names)}
    steady = {name: SteadySummary(float(np.asarray(window.mean)[j]), float(np.asarray(window.stderr)[j]),
                                  float(np.mean(var[win, j])), window.count,
                                  (n.burn_in_fraction * n.horizon, n.horizon))
              for j, name in enumerate(names)}
    meta = _metadata(cfg)
    meta["n_requested"] = n.n_traj
    meta["n_failed"] = len(failures)
    return EnsembleStats(times, mean, variance, series.count, steady, meta, failures)


# ---------------------------------------------------------------- validate


@dataclass
class Report:
    """Rows of ``{check, value, threshold, passed}`` plus an overall verdict."""

    rows: list[dict]

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)


def validate(cfg: SimConfig) -> Report:
    """Single-step convergence study plus shared-noise trajectory comparisons."""
    v = cfg.validate
    system = build_system(cfg)
    rows: list[dict] = []
    X = None if cfg.measurement.X == "random" else system.X
    chs = list(system.channels)
    for st in validation.single_step_suite(dims=(system.dim,), n_instances=v.n_instances,
                                           dts=v.dts, min_gap=v.min_gap, k=max(system.k, 1e-300),
                                           seed=cfg.numerics.seed, X=X, channels=chs):
        trivial = max(st.eig_err) == 0.0
        order = float("inf") if trivial else st.eig_order
        rows.append({"check": f"eigenvalue order N={st.dim}", "value": order,
                     "threshold": v.min_order, "passed": trivial or order >= v.min_order})
        rows.append({"check": f"eigenvector mismatch monotone N={st.dim}",
                     "value": float(st.vec_err[-1]), "threshold": float(st.vec_err[0]),
                     "passed": trivial or max(st.vec_err) == 0.0 or st.vec_monotone})
        for dt, e in zip(st.dts, st.eig_err):
            rows.append({"check": f"eigenvalue mismatch dt={dt:g}", "value": float(e),
                         "threshold": float("nan"), "passed": True})
    try:
        eigendecompose(system.rho0, cfg.numerics.gap_tol)
    except DegenerateSpectrum:
        rows.append({"check": "joint trajectory", "value": float("nan"), "threshold": float("nan"),
                     "passed": True, "note": "initial state degenerate; skipped"})
        return Report(rows)
    worst_l = worst_p = 0.0
    sums = set()
    n_joint = min(cfg.numerics.n_traj, 20)
    for i in range(n_joint):
        dW = increments(cfg.numerics.seed, i, v.trajectory_steps, v.trajectory_dt, "two-point")
        jr = validation.joint_trajectory(system.rho0, system.psi, system.X, system.k, chs,
                                         v.trajectory_dt, dW, cfg.numerics.gap_tol, H=system.H)
        worst_l = max(worst_l, jr.max_lambda_dev)
        worst_p = max(worst_p, jr.max_P_dev)
        sums.add(jr.noise_checksum)
    rows.append({"check": "joint trajectory max |lambda| deviation", "value": worst_l,
                 "threshold": v.trajectory_tol, "passed": worst_l <= v.trajectory_tol})
    rows.append({"check": "joint trajectory max |P| deviation", "value": worst_p,
                 "threshold": float("nan"), "passed": True})
    rows.append({"check": "distinct noise streams", "value": float(len(sums)),
                 "threshold": float(n_joint), "passed": len(sums) == n_joint})
    st = gc.GoodControlState.from_density(system.rho0, system.psi, gap_tol=0.0)
    if st.in_regime(cfg.numerics.Delta_max, cfg.numerics.z_max):
        dev = _gc_vs_eigenflow(cfg, system)
        rows.append({"check": "good-control vs eigenflow max |P| deviation", "value": dev,
                     "threshold": float("nan"), "passed": True})
    return Report(rows)


def _gc_vs_eigenflow(cfg: SimConfig, system: System) -> float:
    v = cfg.validate
    dW = increments(cfg.numerics.seed, 0, v.trajectory_steps, v.trajectory_dt, "two-point")
    try:
        a = trajectory_goodcontrol(system, v.trajectory_dt, dW, 1, cfg.numerics.gap_tol,
                                   cfg.numerics.Delta_max, cfg.numerics.z_max)
        b = trajectory_eigenflow(system, v.trajectory_dt, dW, 1, cfg.numerics.gap_tol)
    except (RegimeBreakdown, DegenerateSpectrum):
        return float("nan")
    return float(np.max(np.abs(a[:, 0] - b[:, 0])))


# ---------------------------------------------------------------- sweep


def _prediction(observable: str, p: qubit.QubitParams) -> float:
    if observable == "lambda1":
        return qubit.steady_lambda1(p.k, p.Gamma, p.gamma)
    if observable == "one_minus_P":
        return 1.0 - qubit.steady_P(p.k, p.Gamma, p.gamma)
    return qubit.ou_stats(p.k, p.gamma, p.u)[1]


def sweep(cfg: SimConfig, jobs: int = 1) -> Report:
    """One row per grid point: simulated steady value, prediction, z-score, relative error."""
    s = cfg.sweep
    names = list(s.axes)
    grid = list(itertools.product(*(s.axes[a] for a in names))) if names else [()]
    rows = []
    for point in grid:
        over = dict(zip(names, (float(x) for x in point)))
        p = qubit_params(cfg, **over)
        stats = qubit.simulate(p, cfg.numerics.qubit_mode, cfg.numerics.n_traj,
                               qubit_settings(cfg), jobs)
        _check_budget(cfg, stats.failures)
        pred = _prediction(s.observable, p)
        if s.observable == "var_re_z1":
            value, err = stats.steady["re_z1"].variance, float("nan")
            z = float("nan")
            rel = abs(value - pred) / pred if pred else float("inf")
            ok = rel <= s.max_rel
        else:
            ss = stats.steady[s.observable]
            value, err = ss.mean, ss.stderr
            z = z_score(value, err, pred)
            rel = abs(value - pred) / pred if pred else float("inf")
            ok = abs(z) <= s.max_z
        rows.append({"k": p.k, "Gamma": p.Gamma, "gamma": p.gamma, "u": p.u,
                     "observable": s.observable, "mean": float(value), "stderr": float(err),
                     "predicted": float(pred), "z": z, "rel_error": float(rel), "passed": ok})
        log.info("sweep point %s: %s = %.6g (pred %.6g)", over, s.observable, value, pred)
    return Report(rows)
