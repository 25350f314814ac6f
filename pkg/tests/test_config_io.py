import json
from pathlib import Path

import numpy as np
import pytest

from qfc import io as qio
from qfc.config import SimConfig, parse_config, set_dotted, with_mode
from qfc.errors import ParseError, ValidationError
from qfc.stats import EnsembleStats, SteadySummary

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
mode = "qubit"
[measurement]
k = 1.0
[[channels]]
operator = "decay"
rate = 0.05
[[channels]]
operator = "dephasing"
rate = 0.05
[feedback]
law = "linear"
u = 400.0
[numerics]
dt = 1e-4
horizon = 10.0
n_traj = 1000
seed = 42
"""


def test_minimal_qubit_config():
    cfg = parse_config(MINIMAL)
    assert isinstance(cfg, SimConfig)
    assert cfg.rate("decay") == 0.05 and cfg.rate("dephasing") == 0.05
    assert (cfg.feedback.u, cfg.numerics.n_traj, cfg.numerics.seed) == (400.0, 1000, 42)


def test_dt_bound():
    with pytest.raises(ValidationError) as exc:
        parse_config(MINIMAL, {"numerics.dt": 0.1})
    assert exc.value.field == "numerics.dt"


def test_unknown_key_is_named():
    text = MINIMAL.replace("k = 1.0", "strenght = 1.0")
    with pytest.raises(ParseError) as exc:
        parse_config(text)
    assert "strenght" in str(exc.value)
    assert exc.value.line == 4


def test_unknown_section_and_malformed():
    with pytest.raises(ParseError):
        parse_config(MINIMAL + "\n[plot]\ncolor = 1\n")
    with pytest.raises(ParseError) as exc:
        parse_config(MINIMAL + "\nbroken = = 3\n")
    assert exc.value.line is not None


@pytest.mark.parametrize("key,value", [
    ("system.dim", 1), ("numerics.n_traj", 0), ("measurement.k", -1.0),
    ("numerics.noise", "pink"), ("feedback.law", "bang-bang"), ("output.format", "xml"),
    ("numerics.burn_in_fraction", 1.0), ("sweep.axes", {"k": [1], "u": [1], "gamma": [1]}),
])
def test_bounds(key, value):
    with pytest.raises(ValidationError):
        parse_config(MINIMAL, {key: value})


def test_qubit_mode_channel_restriction():
    text = MINIMAL.replace('operator = "decay"', 'operator = "sigma_z"')
    with pytest.raises(ValidationError):
        parse_config(text)
    assert with_mode(parse_config(text, {"mode": "sme", "numerics.dt": 1e-4}), "sme").mode == "sme"


def test_overrides_and_digest():
    a = parse_config(MINIMAL)
    b = parse_config(MINIMAL, {"numerics.seed": 7})
    assert b.numerics.seed == 7 and a.digest() != b.digest()
    assert a.digest() == parse_config(MINIMAL).digest()
    d = {}
    set_dotted(d, "a.b.c", 1)
    assert d == {"a": {"b": {"c": 1}}}


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    assert isinstance(parse_config(path), SimConfig)


def test_missing_file():
    with pytest.raises(ParseError):
        parse_config(Path("/nonexistent/qfc.toml"))


# ---------------------------------------------------------------- emit


def _stats(n_times=4, names=("a", "b")):
    r = np.random.default_rng(0)
    t = np.linspace(0, 1, n_times)
    return EnsembleStats(
        times=t,
        mean={n: r.normal(size=n_times) / 3 for n in names},
        variance={n: r.random(n_times) / 7 for n in names},
        n_traj=17,
        steady={n: SteadySummary(0.1 / 3, 0.2 / 7, 1e-5 / 3, 17, (0.2, 1.0)) for n in names},
        metadata={"seed": 4, "config_hash": "abc"},
        failures=[{"trajectory": 3, "step": 10, "kind": "PositivityLoss"}],
    )


def test_csv_layout():
    s = _stats()
    text = qio.emit(s, "csv")
    lines = text.splitlines()
    assert lines[0] == "time,observable,mean,variance,stderr"
    assert len(lines) - 1 == 4 * 2
    assert text.endswith("\n")
    first = lines[1].split(",")
    assert float(first[2]) == s.mean["a"][0]
    assert float(first[4]) == s.stderr("a")[0]


def test_empty_series_is_header_only():
    s = EnsembleStats(np.zeros(0), {}, {}, 0)
    assert qio.emit(s, "csv") == "time,observable,mean,variance,stderr\n"


def test_json_round_trip_is_exact():
    s = _stats()
    text = qio.emit(s, "json")
    assert text.endswith("\n")
    back = qio.read_json(text)
    assert np.array_equal(back.times, s.times)
    for n in s.observables:
        assert np.array_equal(back.mean[n], s.mean[n])
        assert np.array_equal(back.variance[n], s.variance[n])
    assert back.steady == s.steady
    assert back.metadata == s.metadata and back.failures == s.failures
    assert json.loads(text)["observables"]["a"]["stderr"] == list(s.stderr("a"))


def test_seventeen_digits():
    s = _stats(1, ("a",))
    s.mean["a"][0] = 1 / 3
    assert "0.33333333333333331" in qio.emit(s, "csv")


def test_table_and_plot_series():
    rows = [{"k": 1.0, "passed": True}, {"k": 2.0, "passed": False, "note": "x"}]
    text = qio.emit_table(rows)
    assert text.splitlines()[0] == "k,passed,note"
    assert text.endswith("\n")
    assert json.loads(qio.emit_table(rows, "json"))[1]["note"] == "x"
    series = qio.plot_series(_stats(3, ("a",)))
    assert series["a"].startswith("# time mean_a\n") and series["a"].count("\n") == 4
    with pytest.raises(ValueError):
        qio.emit(_stats(), "xml")


def test_write_errors(tmp_path):
    qio.write("x\n", tmp_path / "ok.txt")
    assert (tmp_path / "ok.txt").read_text() == "x\n"
    with pytest.raises(qio.IoError):
        qio.write("x\n", tmp_path / "missing" / "f.txt")
