"""Serialization of ensemble statistics and result tables.

Floats are written with 17 significant digits so that a JSON round trip is
exact. Every file ends with a newline.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .stats import EnsembleStats, SteadySummary

CSV_COLUMNS = ("time", "observable", "mean", "variance", "stderr")


def _num(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _json(obj) -> str:
    """JSON text with 17-significant-digit floats."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, complex):
        return _json([obj.real, obj.imag])
    return json.dumps(str(obj))


def stats_to_dict(stats: EnsembleStats) -> dict:
    return {
        "times": stats.times,
        "n_traj": stats.n_traj,
        "observables": {
            name: {"mean": stats.mean[name], "variance": stats.variance[name],
                   "stderr": stats.stderr(name)}
            for name in stats.observables
        },
        "steady": {name: {"mean": s.mean, "stderr": s.stderr, "variance": s.variance,
                          "n_traj": s.n_traj, "window": list(s.window)}
                   for name, s in stats.steady.items()},
        "metadata": stats.metadata,
        "failures": stats.failures,
    }


def stats_from_dict(d: dict) -> EnsembleStats:
    obs = d["observables"]
    steady = {name: SteadySummary(s["mean"], s["stderr"], s["variance"], s["n_traj"],
                                  tuple(s["window"]))
              for name, s in d.get("steady", {}).items()}
    return EnsembleStats(
        times=np.asarray(d["times"], dtype=float),
        mean={k: np.asarray(v["mean"], dtype=float) for k, v in obs.items()},
        variance={k: np.asarray(v["variance"], dtype=float) for k, v in obs.items()},
        n_traj=int(d["n_traj"]),
        steady=steady,
        metadata=d.get("metadata", {}),
        failures=d.get("failures", []),
    )


def emit(stats: EnsembleStats, fmt: str = "csv") -> str:
    """Serialize ``stats`` as CSV (one row per grid point and observable) or JSON."""
    if fmt == "json":
        return _json(stats_to_dict(stats)) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for name in stats.observables:
        se = stats.stderr(name)
        for i, t in enumerate(stats.times):
            w.writerow([_num(t), name, _num(stats.mean[name][i]),
                        _num(stats.variance[name][i]), _num(se[i])])
    return buf.getvalue()


def read_json(text: str) -> EnsembleStats:
    return stats_from_dict(json.loads(text))


def emit_table(rows: list[dict], fmt: str = "csv") -> str:
    """Serialize a list of flat records (sweep or validation tables)."""
    if fmt == "json":
        return _json(rows) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = _io.StringIO()
    cols: list[str] = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_num(r[c]) if isinstance(r.get(c), (float, np.floating)) else r.get(c, "")
                    for c in cols])
    return buf.getvalue()


def plot_series(stats: EnsembleStats) -> dict[str, str]:
    """Two-column ``time mean`` text per observable."""
    out = {}
    for name in stats.observables:
        lines = [f"# time mean_{name}"]
        lines += [f"{_num(t)} {_num(m)}" for t, m in zip(stats.times, stats.mean[name])]
        out[name] = "\n".join(lines) + "\n"
    return out


def write(text: str, path: str | Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class IoError(OSError):
    """Raised when results cannot be written."""
