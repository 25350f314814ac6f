"""TOML run configuration with strict key checking.

Every table has a fixed set of keys; anything else is a :class:`ParseError`
naming the key and its line. Numeric bounds are checked after parsing and
reported as :class:`ValidationError`.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import ParseError, ValidationError

MODES = ("sme", "eigenflow", "goodcontrol", "qubit", "validate", "sweep")
FORMATS = ("csv", "json")
QUBIT_MODES = ("good-control", "first-order", "full-sme")


@dataclass(frozen=True)
class SystemSpec:
    dim: int = 2
    initial: Any = "target"
    target: Any = 0


@dataclass(frozen=True)
class MeasurementSpec:
    X: Any = "sigma_x"
    k: float = 1.0


@dataclass(frozen=True)
class ChannelSpec:
    operator: Any
    rate: float
    name: str = ""


@dataclass(frozen=True)
class FeedbackSpec:
    law: str = "none"
    u: float = 0.0
    H: Any = None


@dataclass(frozen=True)
class NumericsSpec:
    dt: float = 1e-4
    horizon: float = 1.0
    n_traj: int = 1
    seed: int = 0
    burn_in_fraction: float = 0.2
    gap_tol: float = 1e-6
    Delta_max: float = 0.1
    z_max: float = 0.3
    record_every: int = 10
    block_size: int = 250
    noise: str = "gaussian"
    dt_bound: float = 0.05
    qubit_mode: str = "full-sme"
    engine: str = "bloch"
    reortho_every: int = 100
    failure_budget: float = 0.01


@dataclass(frozen=True)
class OutputSpec:
    format: str = "csv"
    path: str | None = None
    plot_data: bool = False


@dataclass(frozen=True)
class ValidateSpec:
    dts: tuple = (1e-4, 5e-5, 2.5e-5)
    n_instances: int = 100
    min_gap: float = 0.05
    min_order: float = 1.3
    trajectory_steps: int = 1000
    trajectory_dt: float = 1e-5
    trajectory_tol: float = 1e-5


@dataclass(frozen=True)
class SweepSpec:
    axes: dict = field(default_factory=dict)
    observable: str = "lambda1"
    max_z: float = 3.0
    max_rel: float = 0.05


@dataclass(frozen=True)
class SimConfig:
    mode: str = "qubit"
    system: SystemSpec = SystemSpec()
    measurement: MeasurementSpec = MeasurementSpec()
    channels: tuple[ChannelSpec, ...] = ()
    feedback: FeedbackSpec = FeedbackSpec()
    numerics: NumericsSpec = NumericsSpec()
    output: OutputSpec = OutputSpec()
    validate: ValidateSpec = ValidateSpec()
    sweep: SweepSpec = SweepSpec()

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def rate(self, name: str) -> float:
        """Total rate of channels whose operator is the named preset."""
        return sum(c.rate for c in self.channels if c.operator == name)


_SECTIONS = {
    "system": SystemSpec,
    "measurement": MeasurementSpec,
    "feedback": FeedbackSpec,
    "numerics": NumericsSpec,
    "output": OutputSpec,
    "validate": ValidateSpec,
    "sweep": SweepSpec,
}


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=", re.M)
    m = pat.search(text)
    if m is None:
        m = re.search(rf"\b{re.escape(key)}\b", text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _build(cls, data: dict, text: str, where: str):
    if not isinstance(data, dict):
        raise ParseError(f"expected a table", field=where)
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            raise ParseError(f"unknown key '{key}'", line=_line_of(text, key),
                             field=f"{where}.{key}" if where else key)
    kwargs = dict(data)
    if "dts" in kwargs:
        kwargs["dts"] = tuple(kwargs["dts"])
    return cls(**kwargs)


def parse_config(source: str | Path, overrides: dict[str, Any] | None = None) -> SimConfig:
    """Parse and validate a configuration.

    ``source`` is a path or the TOML text itself. ``overrides`` maps dotted
    keys (``"numerics.seed"``) to values applied before validation.

    Raises
    ------
    ParseError
        Malformed TOML or an unknown key.
    ValidationError
        A value outside its allowed range.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and "=" not in source):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ParseError(f"cannot read config: {exc}") from exc
    else:
        text = str(source)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"malformed config: {exc}", line=int(m.group(1)) if m else None) from exc
    for key, value in (overrides or {}).items():
        set_dotted(raw, key, value)
    return from_dict(raw, text)


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ParseError("cannot override inside a non-table", field=key)
    cur[parts[-1]] = value


def from_dict(raw: dict, text: str = "") -> SimConfig:
    allowed = set(_SECTIONS) | {"mode", "channels"}
    for key in raw:
        if key not in allowed:
            raise ParseError(f"unknown key '{key}'", line=_line_of(text, key), field=key)
    kwargs: dict[str, Any] = {}
    if "mode" in raw:
        kwargs["mode"] = raw["mode"]
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build(cls, raw[name], text, name)
    chans = raw.get("channels", [])
    if not isinstance(chans, list):
        raise ParseError("channels must be an array of tables", field="channels")
    built = []
    for i, c in enumerate(chans):
        if not isinstance(c, dict) or "operator" not in c or "rate" not in c:
            raise ParseError("each channel needs 'operator' and 'rate'", field=f"channels[{i}]")
        built.append(_build(ChannelSpec, c, text, f"channels[{i}]"))
    kwargs["channels"] = tuple(built)
    cfg = SimConfig(**kwargs)
    validate_config(cfg)
    return cfg


def _positive(value, name):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ValidationError(f"must be a positive number, got {value!r}", field=name)


def _nonneg(value, name):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value >= 0:
        raise ValidationError(f"must be a nonnegative number, got {value!r}", field=name)


def _int_at_least(value, lo, name):
    if not isinstance(value, int) or isinstance(value, bool) or value < lo:
        raise ValidationError(f"must be an integer >= {lo}, got {value!r}", field=name)


def validate_config(cfg: SimConfig) -> None:
    """Check every bound; raises :class:`ValidationError` naming the field."""
    if cfg.mode not in MODES:
        raise ValidationError(f"must be one of {MODES}, got {cfg.mode!r}", field="mode")
    n = cfg.numerics
    _int_at_least(cfg.system.dim, 2, "system.dim")
    _nonneg(cfg.measurement.k, "measurement.k")
    _positive(n.dt, "numerics.dt")
    _positive(n.horizon, "numerics.horizon")
    _int_at_least(n.n_traj, 1, "numerics.n_traj")
    _int_at_least(n.seed, 0, "numerics.seed")
    _int_at_least(n.record_every, 1, "numerics.record_every")
    _int_at_least(n.block_size, 1, "numerics.block_size")
    _int_at_least(n.reortho_every, 0, "numerics.reortho_every")
    _positive(n.gap_tol, "numerics.gap_tol")
    _positive(n.Delta_max, "numerics.Delta_max")
    _positive(n.z_max, "numerics.z_max")
    _positive(n.dt_bound, "numerics.dt_bound")
    if not 0 <= n.burn_in_fraction < 1:
        raise ValidationError("must lie in [0, 1)", field="numerics.burn_in_fraction")
    if not 0 <= n.failure_budget < 1:
        raise ValidationError("must lie in [0, 1)", field="numerics.failure_budget")
    if n.noise not in ("gaussian", "two-point"):
        raise ValidationError("must be 'gaussian' or 'two-point'", field="numerics.noise")
    if n.qubit_mode not in QUBIT_MODES:
        raise ValidationError(f"must be one of {QUBIT_MODES}", field="numerics.qubit_mode")
    if n.engine not in ("bloch", "matrix"):
        raise ValidationError("must be 'bloch' or 'matrix'", field="numerics.engine")
    for i, c in enumerate(cfg.channels):
        _nonneg(c.rate, f"channels[{i}].rate")
    f = cfg.feedback
    if f.law not in ("none", "linear", "constant"):
        raise ValidationError("must be 'none', 'linear' or 'constant'", field="feedback.law")
    _nonneg(f.u, "feedback.u")
    if f.law == "constant" and f.H is None:
        raise ValidationError("a constant law needs H", field="feedback.H")
    if cfg.output.format not in FORMATS:
        raise ValidationError(f"must be one of {FORMATS}", field="output.format")
    fastest = max([cfg.measurement.k, f.u if f.law == "linear" else 0.0]
                  + [c.rate for c in cfg.channels])
    if n.dt * fastest > n.dt_bound:
        raise ValidationError(
            f"dt * max(k, rates, u) = {n.dt * fastest:.3g} exceeds {n.dt_bound}", field="numerics.dt")
    v = cfg.validate
    if len(v.dts) < 2 or any(not (isinstance(d, (int, float)) and d > 0) for d in v.dts):
        raise ValidationError("needs at least two positive step sizes", field="validate.dts")
    _int_at_least(v.n_instances, 1, "validate.n_instances")
    _int_at_least(v.trajectory_steps, 1, "validate.trajectory_steps")
    _positive(v.trajectory_dt, "validate.trajectory_dt")
    _positive(v.trajectory_tol, "validate.trajectory_tol")
    s = cfg.sweep
    if not isinstance(s.axes, dict) or len(s.axes) > 2:
        raise ValidationError("at most two axes", field="sweep.axes")
    for name, values in s.axes.items():
        if name not in ("k", "Gamma", "gamma", "u"):
            raise ValidationError(f"cannot sweep '{name}'", field="sweep.axes")
        if not isinstance(values, list) or not values:
            raise ValidationError("axis needs a nonempty list of values", field=f"sweep.axes.{name}")
    if s.observable not in ("lambda1", "one_minus_P", "var_re_z1"):
        raise ValidationError("must be lambda1, one_minus_P or var_re_z1", field="sweep.observable")
    if cfg.mode in ("qubit", "sweep"):
        if cfg.system.dim != 2:
            raise ValidationError("qubit runs need dim = 2", field="system.dim")
        for i, c in enumerate(cfg.channels):
            if c.operator not in ("decay", "dephasing"):
                raise ValidationError("qubit runs accept only 'decay' and 'dephasing'",
                                      field=f"channels[{i}].operator")


def with_mode(cfg: SimConfig, mode: str) -> SimConfig:
    out = replace(cfg, mode=mode)
    validate_config(out)
    return out
