"""Experiment configuration (flat INI) and run manifests."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .flow import IntegratorConfig
from .structures import DEFAULT_AMPLITUDES, DEFAULT_CENTERS, DEFAULT_WIDTHS, FieldFamily


class ConfigError(ValueError):
    """Bad configuration; carries the offending section, key and line when known."""

    def __init__(self, message: str, section: str | None = None, key: str | None = None, line: int | None = None):
        self.section, self.key, self.line = section, key, line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if section:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    surface: str = "bolza"
    generator_jitter: float = 0.0
    centers: tuple[complex, ...] = DEFAULT_CENTERS
    amplitudes: tuple[float, ...] = DEFAULT_AMPLITUDES
    widths: tuple[float, ...] = DEFAULT_WIDTHS
    truncation: int = 6
    lambda_grid: tuple[float, ...] = (-0.02, -0.01, -0.005, 0.005, 0.01, 0.02)
    max_word_length: int = 3
    rtol: float = 1e-10
    atol: float = 1e-12
    quadrature_per_segment: int = 64
    fourier_nodes: int = 256
    mc_samples: int = 100_000
    entropy_word_length: int = 8
    entropy_grid: tuple[float, ...] = (0.0,)
    output_dir: str = "runs"

    def field(self) -> FieldFamily:
        return FieldFamily(self.centers, self.amplitudes, self.widths, self.truncation)

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(rtol=self.rtol, atol=self.atol)

    def canonical(self) -> dict:
        """Everything that affects results, in a key-order independent form."""
        d = asdict(self)
        d.pop("output_dir")
        d["centers"] = [[c.real, c.imag] for c in self.centers]
        return d

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "ExperimentConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if output_dir is not None:
            out = replace(out, output_dir=str(output_dir))
        return out


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _complexes(s):
    return tuple(complex(x.strip().replace(" ", "")) for x in s.split(",") if x.strip())


# section -> key -> (dataclass field, parser)
_SCHEMA = {
    "surface": {"name": ("surface", str), "generator_jitter": ("generator_jitter", float)},
    "field": {
        "centers": ("centers", _complexes),
        "amplitudes": ("amplitudes", _floats),
        "widths": ("widths", _floats),
        "truncation": ("truncation", int),
    },
    "orbits": {"lambda_grid": ("lambda_grid", _floats), "max_word_length": ("max_word_length", int)},
    "integrator": {"rtol": ("rtol", float), "atol": ("atol", float)},
    "quadrature": {"per_segment": ("quadrature_per_segment", int), "fourier_nodes": ("fourier_nodes", int)},
    "montecarlo": {"samples": ("mc_samples", int)},
    "entropy": {"word_length": ("entropy_word_length", int), "lambda_grid": ("entropy_grid", _floats)},
    "run": {"seed": ("seed", int), "output_dir": ("output_dir", str)},
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if cur == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return i
    return None


def _symmetric(grid) -> bool:
    return sorted(grid) == sorted(-x for x in grid)


def validate(cfg: ExperimentConfig, text: str = "") -> ExperimentConfig:
    def bad(msg, section, key):
        raise ConfigError(msg, section, key, _line_of(text, section, key))

    if cfg.surface != "bolza":
        bad(f"unsupported surface {cfg.surface!r} (only 'bolza')", "surface", "name")
    for key, sec, name in (("rtol", "integrator", "rtol"), ("atol", "integrator", "atol")):
        v = getattr(cfg, key)
        if not (v > 0 and math.isfinite(v)):
            bad(f"tolerance must be positive, got {v}", sec, name)
    for key, sec, name in (
        ("quadrature_per_segment", "quadrature", "per_segment"),
        ("fourier_nodes", "quadrature", "fourier_nodes"),
        ("mc_samples", "montecarlo", "samples"),
        ("max_word_length", "orbits", "max_word_length"),
        ("entropy_word_length", "entropy", "word_length"),
    ):
        if getattr(cfg, key) < 1:
            bad("must be a positive integer", sec, name)
    if cfg.truncation < 0:
        bad("must be >= 0", "field", "truncation")
    if not (len(cfg.centers) == len(cfg.amplitudes) == len(cfg.widths)):
        bad("centers, amplitudes and widths differ in length", "field", "centers")
    if any(abs(c) >= 1 for c in cfg.centers):
        bad("centres must lie in the unit disk", "field", "centers")
    if any(w <= 0 for w in cfg.widths):
        bad("widths must be positive", "field", "widths")
    if not _symmetric(cfg.lambda_grid) or 0.0 in cfg.lambda_grid or not cfg.lambda_grid:
        bad("grid must be nonempty, symmetric about 0 and exclude 0", "orbits", "lambda_grid")
    if not _symmetric(cfg.entropy_grid) or not cfg.entropy_grid:
        bad("grid must be nonempty and symmetric about 0", "entropy", "lambda_grid")
    if not 0 <= cfg.seed < 2**64:
        bad("seed must be an unsigned 64-bit integer", "run", "seed")
    return cfg


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    """Parse INI text; ``seed`` overrides ``[run] seed``, and one of the two is required."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("missing section header", line=e.lineno) from None
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError(f"cannot parse: {e.errors[0][1].strip() if e.errors else e}", line=line) from None
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0], line=getattr(e, "lineno", None)) from None
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError("unknown section", section, None, _line_of(text, section, None))
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError("unknown key", section, key, _line_of(text, section, key))
            name, conv = _SCHEMA[section][key]
            try:
                values[name] = conv(raw)
            except ValueError as e:
                raise ConfigError(f"bad value {raw!r} ({e})", section, key, _line_of(text, section, key)) from None
    if seed is not None:
        values["seed"] = int(seed)
    if "seed" not in values:
        raise ConfigError("a seed is required (no clock-based default)", "run", "seed")
    return validate(ExperimentConfig(**values), text)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_config(text, seed)


def default_config_text(seed: int = 20240607) -> str:
    c = ExperimentConfig(seed=seed)
    j = lambda xs: ", ".join(repr(x) for x in xs)
    cs = ", ".join(f"{z.real!r}{z.imag:+}j" for z in c.centers)
    return f"""[surface]
name = bolza
generator_jitter = 0.0

[field]
centers = {cs}
amplitudes = {j(c.amplitudes)}
widths = {j(c.widths)}
truncation = {c.truncation}

[orbits]
lambda_grid = {j(c.lambda_grid)}
max_word_length = {c.max_word_length}

[integrator]
rtol = {c.rtol!r}
atol = {c.atol!r}

[quadrature]
per_segment = {c.quadrature_per_segment}
fourier_nodes = {c.fourier_nodes}

[montecarlo]
samples = {c.mc_samples}

[entropy]
word_length = {c.entropy_word_length}
lambda_grid = {j(c.entropy_grid)}

[run]
seed = {c.seed}
output_dir = {c.output_dir}
"""


@dataclass
class SuiteResult:
    passed: bool
    metrics: dict
    seconds: float


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str = __version__
    suites: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites.values())

    def to_json(self) -> str:
        d = {"command": self.command, "config_hash": self.config_hash, "version": self.version, "passed": self.passed,
             "suites": {k: asdict(v) for k, v in self.suites.items()}}
        return json.dumps(d, indent=2, sort_keys=True, default=_jsonable)

    def write(self, out_dir) -> Path:
        p = Path(out_dir) / f"manifest_{self.command}.json"
        p.write_text(self.to_json() + "\n", encoding="utf-8")
        return p


def _jsonable(x):
    if hasattr(x, "item"):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serialisable: {type(x).__name__}")
