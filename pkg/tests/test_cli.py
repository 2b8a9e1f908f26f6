import csv
import json

import pytest

from thermolab.cli import main
from thermolab.config import ConfigError, default_config_text, parse_config


def _write_cfg(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _edit(text, section, key, value):
    out, cur = [], None
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("["):
            cur = s[1:-1]
        elif cur == section and s.split("=")[0].strip() == key:
            line = f"{key} = {value}"
        out.append(line)
    return "\n".join(out) + "\n"


def test_validate_default_passes(tmp_path):
    assert main(["validate", "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest_validate.json").read_text())
    assert man["passed"] and set(man["suites"]) == {"geometry", "structures", "flow"}
    assert man["config_hash"] == parse_config(default_config_text()).hash()


def test_corrupted_generators_fail(tmp_path):
    cfg = _write_cfg(tmp_path, _edit(default_config_text(), "surface", "generator_jitter", "0.001"))
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    man = json.loads((tmp_path / "o" / "manifest_validate.json").read_text())
    assert not man["suites"]["geometry"]["passed"]


def test_negative_tolerance_is_config_error(tmp_path, capsys):
    text = _edit(default_config_text(), "integrator", "rtol", "-1e-10")
    cfg = _write_cfg(tmp_path, text)
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    line = next(i for i, s in enumerate(text.splitlines(), 1) if s.startswith("rtol"))
    assert f"line {line}" in err and "rtol" in err


@pytest.mark.parametrize("section,key,value", [
    ("field", "truncation", "six"),
    ("orbits", "lambda_grid", "0.01, 0.02"),
    ("montecarlo", "samples", "0"),
])
def test_bad_values_exit_2(tmp_path, section, key, value):
    cfg = _write_cfg(tmp_path, _edit(default_config_text(), section, key, value))
    assert main(["bound", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_unknown_key_and_missing_seed():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[run]\nseed = 1\nbogus = 2\n")
    with pytest.raises(ConfigError, match="seed"):
        parse_config("[integrator]\nrtol = 1e-10\n")
    with pytest.raises(ConfigError, match="section header"):
        parse_config("seed = 1\n")


def test_hash_stable_under_reordering():
    text = default_config_text()
    blocks = text.strip().split("\n\n")
    shuffled = "\n\n".join(reversed([
        b.splitlines()[0] + "\n" + "\n".join(reversed(b.splitlines()[1:])) for b in blocks
    ])) + "\n"
    assert parse_config(shuffled).hash() == parse_config(text).hash()
    assert parse_config(text).with_overrides(output_dir="elsewhere").hash() == parse_config(text).hash()
    assert parse_config(text, seed=7).hash() != parse_config(text).hash()


def test_seed_flag_overrides_config(tmp_path):
    cfg = _write_cfg(tmp_path, _edit(default_config_text(), "montecarlo", "samples", "2000"))
    main(["bound", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "11"])
    rep = json.loads((tmp_path / "a" / "bound.json").read_text())
    assert rep["seed"] == 11 and rep["n"] == 2000


def test_zero_field_bound_exits_3(tmp_path):
    text = _edit(default_config_text(), "field", "amplitudes", "0.0, 0.0, 0.0")
    text = _edit(text, "montecarlo", "samples", "2000")
    cfg = _write_cfg(tmp_path, text)
    assert main(["bound", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    doc = json.loads((tmp_path / "o" / "bound.json").read_text())
    assert doc["error"] == "degenerate_field" and doc["A"] == 0.0


def test_bound_default_field(tmp_path):
    cfg = _write_cfg(tmp_path, _edit(default_config_text(), "montecarlo", "samples", "20000"))
    assert main(["bound", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "bound.json").read_text())
    assert rep["A"] > 0 and rep["B"] > 0 and rep["bound"] < 0
    assert rep["x_star"] == pytest.approx(rep["A"] / rep["B"])


@pytest.fixture(scope="module")
def orbit_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("orbits")
    cfg = base / "l1.ini"
    cfg.write_text(_edit(default_config_text(), "orbits", "max_word_length", "1"), encoding="utf-8")
    codes = [main(["orbits", "--config", str(cfg), "--out", str(base / d)]) for d in ("a", "b")]
    return base, codes


def test_orbits_l1_rows(orbit_runs):
    base, codes = orbit_runs
    assert codes == [0, 0]
    with open(base / "a" / "orbits.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    orbits = [r for r in rows if r["status"] == "ok"]
    assert len(orbits) == 4 and rows[-1]["word"] == "summary"
    for r in orbits:
        assert float(r["T"]) == pytest.approx(3.05714, abs=1e-5)
        assert abs(float(r["dT"])) < 1e-4 * float(r["T"])
        assert float(r["min_margin"]) >= -1e-8


def test_orbits_rerun_byte_identical(orbit_runs):
    base, _ = orbit_runs
    assert (base / "a" / "orbits.csv").read_bytes() == (base / "b" / "orbits.csv").read_bytes()


def test_config_command_roundtrips(capsys):
    assert main(["config", "--seed", "5"]) == 0
    assert parse_config(capsys.readouterr().out).seed == 5
