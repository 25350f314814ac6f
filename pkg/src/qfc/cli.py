"""Command-line entry point ``qfc``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
3 tolerance failure in ``validate`` or ``sweep``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from . import io as qio
from .config import MODES, SimConfig, set_dotted, from_dict, parse_config, tomllib, validate_config
from .errors import ConfigError, QFCError

log = logging.getLogger("qfc")


def _value(text: str):
    """Interpret an override value as TOML (numbers, bools, arrays), else a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qfc", description="Continuous-measurement feedback simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    for mode in MODES:
        s = sub.add_parser(mode, help=f"run in {mode} mode")
        s.add_argument("--config", type=Path, help="TOML configuration file")
        s.add_argument("--seed", type=int, help="override numerics.seed")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.add_argument("--out", type=Path, help="output file (default: stdout)")
        s.add_argument("--format", choices=("csv", "json"), help="output format")
        s.add_argument("--plot-data", action="store_true",
                       help="also write one two-column series per observable")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key, e.g. numerics.n_traj=200")
        s.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    return p


def load(args) -> SimConfig:
    overrides = {"mode": args.command}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = _value(val.strip())
    if args.seed is not None:
        overrides["numerics.seed"] = args.seed
    if args.format is not None:
        overrides["output.format"] = args.format
    if args.out is not None:
        overrides["output.path"] = str(args.out)
    if args.plot_data:
        overrides["output.plot_data"] = True
    if args.config is not None:
        return parse_config(args.config, overrides)
    raw: dict = {}
    for key, val in overrides.items():
        set_dotted(raw, key, val)
    return from_dict(raw)


def _plot_files(stats, out: str | None) -> None:
    base = Path(out) if out else Path("qfc")
    for name, text in qio.plot_series(stats).items():
        qio.write(text, base.with_name(f"{base.stem}_{name}.dat"))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load(args)
        validate_config(cfg)
    except ConfigError as exc:
        print(f"qfc: configuration error: {exc}", file=sys.stderr)
        return 2
    fmt, out = cfg.output.format, cfg.output.path
    try:
        if cfg.mode in ("validate", "sweep"):
            report = harness.validate(cfg) if cfg.mode == "validate" else harness.sweep(cfg, args.jobs)
            qio.write(qio.emit_table(report.rows, fmt), out)
            if not report.passed:
                print(f"qfc: {cfg.mode}: tolerance exceeded", file=sys.stderr)
                return 3
            return 0
        stats = harness.run(cfg, args.jobs)
        qio.write(qio.emit(stats, fmt), out)
        if cfg.output.plot_data:
            _plot_files(stats, out)
        return 0
    except ConfigError as exc:
        print(f"qfc: configuration error: {exc}", file=sys.stderr)
        return 2
    except (QFCError, OSError) as exc:
        print(f"qfc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
