"""Experiment configuration: INI files, named presets, seeding and hashing.

A configuration file has one section per pipeline stage::

    [experiment]
    system = lorenz
    seed = 7
    n_runs = 8

    [network]
    n_nodes = 16

    [simulate]
    n_steps = 25000
    washout = 2000

    [regression]
    n_refit = 30

Keys left out take their defaults.  ``[system]`` overrides model constants
(``alpha = 17.2``).  ``[grid]`` sweeps one key over a list of values, e.g.
``simulate.noise_xi = 0, 0.01, 0.02``; every value is run ``n_runs`` times.
"""
import configparser
import dataclasses
import hashlib
import json
import re
import typing
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynsys import SYSTEMS
from .errors import ConfigError
from .metrics import MetricsConfig
from .mlp import TrainConfig
from .netgen import NetworkGenSpec
from .regression import RegressionConfig

__all__ = [
    "SimulateSpec", "PreprocessSpec", "ExperimentConfig", "PRESETS", "SCHEMA_VERSION",
    "load_config", "parse_config", "preset_config", "config_hash", "run_seeds",
    "grid_points", "to_ini",
]

SCHEMA_VERSION = 1


@dataclass
class SimulateSpec:
    """``n_steps`` samples are kept after discarding ``washout`` more."""

    dt: float = 0.02
    n_steps: int = 25000
    washout: int = 2000
    noise_xi: float = 0.0
    oversample: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("must be > 0", "simulate.dt")
        if self.n_steps < 2:
            raise ConfigError("must be >= 2", "simulate.n_steps")
        if self.washout < 0:
            raise ConfigError("must be >= 0", "simulate.washout")
        if self.noise_xi < 0:
            raise ConfigError("must be >= 0", "simulate.noise_xi")
        if self.oversample < 1:
            raise ConfigError("must be >= 1", "simulate.oversample")


@dataclass
class PreprocessSpec:
    # spline smoothing is applied when lambda is set (None: raw data)
    spline_lambda: Optional[float] = None

    def __post_init__(self):
        if self.spline_lambda is not None and self.spline_lambda < 0:
            raise ConfigError("must be >= 0", "preprocess.spline_lambda")


@dataclass
class ExperimentConfig:
    system: str = "lorenz"
    system_params: dict = field(default_factory=dict)
    seed: int = 0
    n_runs: int = 1
    save_checkpoints: bool = False
    name: str = "experiment"
    network: NetworkGenSpec = field(default_factory=lambda: NetworkGenSpec(16))
    simulate: SimulateSpec = field(default_factory=SimulateSpec)
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    grid: dict = field(default_factory=dict)  # {"section.key": [values]}

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}", "experiment.system")
        unknown = set(self.system_params) - set(SYSTEMS[self.system].defaults)
        if unknown:
            raise ConfigError(f"unknown parameters {sorted(unknown)}", "system")
        if self.n_runs < 1:
            raise ConfigError("must be >= 1", "experiment.n_runs")

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_hash(cfg):
    """Short SHA-256 of the canonical JSON form of a configuration."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# parsing --------------------------------------------------------------------

_SECTIONS = {
    "network": NetworkGenSpec,
    "simulate": SimulateSpec,
    "preprocess": PreprocessSpec,
    "train": TrainConfig,
    "regression": RegressionConfig,
    "metrics": MetricsConfig,
}
_EXPERIMENT_KEYS = {"system": str, "seed": int, "n_runs": int,
                    "save_checkpoints": bool, "name": str}


def _convert(text, tp, where):
    """Parse ``text`` as type ``tp`` (bool, int, float, str or Optional of those)."""
    text = text.strip()
    args = typing.get_args(tp)
    if typing.get_origin(tp) is typing.Union and type(None) in args:
        if text.lower() in ("", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {tp.__name__}", where) from None


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _line_of(text, section, key):
    """1-based line of ``key`` inside ``[section]`` of an INI text, or None."""
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return n
    return None


def _located(exc, text, source):
    """Attach ``source:line`` to a ConfigError whose field is ``section.key``."""
    where = exc.field or ""
    line = None
    if "." in where:
        sec, key = where.split(".", 1)
        line = _line_of(text, sec, key)
    prefix = f"{source}:{line}: " if line else f"{source}: "
    err = ConfigError(prefix + str(exc.args[0]), None)
    err.field = exc.field
    err.line = line
    return err


def parse_config(text, base=None, source="<config>"):
    """Build an :class:`ExperimentConfig` from INI text, starting from ``base``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    base = base or ExperimentConfig()
    try:
        return _build(parser, base)
    except ConfigError as exc:
        raise _located(exc, text, source) from None


def _build(parser, base):
    top = {}
    for key, raw in (parser["experiment"].items() if parser.has_section("experiment") else []):
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError("unknown key", f"experiment.{key}")
        top[key] = _convert(raw, _EXPERIMENT_KEYS[key], f"experiment.{key}")
    stages = {}
    for sec, cls in _SECTIONS.items():
        current = getattr(base, sec)
        types = _field_types(cls)
        changes = {}
        if parser.has_section(sec):
            for key, raw in parser[sec].items():
                if key not in types:
                    raise ConfigError("unknown key", f"{sec}.{key}")
                changes[key] = _convert(raw, types[key], f"{sec}.{key}")
        stages[sec] = _rebuild(current, changes, sec)
    params = dict(base.system_params)
    if parser.has_section("system"):
        for key, raw in parser["system"].items():
            params[key] = _convert(raw, float, f"system.{key}")
    grid = dict(base.grid)
    if parser.has_section("grid"):
        for key, raw in parser["grid"].items():
            sec, _, name = key.partition(".")
            if sec not in _SECTIONS or name not in _field_types(_SECTIONS[sec]):
                raise ConfigError("grid keys must name a stage field", f"grid.{key}")
            tp = _field_types(_SECTIONS[sec])[name]
            grid[key] = [_convert(v, tp, f"grid.{key}") for v in raw.split(",") if v.strip()]
    unknown = set(parser.sections()) - set(_SECTIONS) - {"experiment", "system", "grid"}
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]")
    return ExperimentConfig(
        system=top.get("system", base.system), system_params=params,
        seed=top.get("seed", base.seed), n_runs=top.get("n_runs", base.n_runs),
        save_checkpoints=top.get("save_checkpoints", base.save_checkpoints),
        name=top.get("name", base.name), grid=grid, **stages)


def _rebuild(obj, changes, sec):
    try:
        return dataclasses.replace(obj, **changes)
    except ConfigError as exc:
        # re-qualify bare field names raised by the stage dataclasses
        f = exc.field or ""
        raise ConfigError(exc.args[0].split(": ", 1)[-1],
                          f if "." in f else f"{sec}.{f}") from None


def load_config(path, base=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, base, source=str(path))


def to_ini(cfg):
    """Render a configuration as INI text that :func:`parse_config` reads back."""
    d = cfg.to_dict()
    lines = [f"# netinfer config, schema version {SCHEMA_VERSION}", "[experiment]"]
    for key in _EXPERIMENT_KEYS:
        lines.append(f"{key} = {d[key]}")
    for sec in _SECTIONS:
        lines += ["", f"[{sec}]"]
        for key, val in d[sec].items():
            lines.append(f"{key} = {'none' if val is None else _fmt(val)}")
    if d["system_params"]:
        lines += ["", "[system]"] + [f"{k} = {_fmt(v)}" for k, v in d["system_params"].items()]
    if d["grid"]:
        lines += ["", "[grid]"] + [f"{k} = {', '.join(_fmt(v) for v in vals)}"
                                  for k, vals in d["grid"].items()]
    return "\n".join(lines) + "\n"


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


# presets --------------------------------------------------------------------

def _lorenz16():
    return ExperimentConfig(name="lorenz16", system="lorenz", n_runs=8,
                            network=NetworkGenSpec(16),
                            regression=RegressionConfig(n_refit=30))


def _chua16():
    return ExperimentConfig(name="chua16", system="chua", n_runs=8,
                            network=NetworkGenSpec(16),
                            regression=RegressionConfig(n_refit=30))


def _lorenz64():
    return ExperimentConfig(name="lorenz64", system="lorenz", n_runs=8,
                            network=NetworkGenSpec(64),
                            regression=RegressionConfig(n_refit=80))


def _negasym():
    return ExperimentConfig(name="lorenz16-negasym", system="lorenz", n_runs=8,
                            network=NetworkGenSpec(16, symmetric=False, negative_prob=0.25),
                            regression=RegressionConfig(n_refit=80, symmetric=False))


def _noise():
    # only the end points are fixed; interior levels are spaced to resolve the knee
    return ExperimentConfig(name="lorenz16-noise", system="lorenz", n_runs=8,
                            network=NetworkGenSpec(16),
                            preprocess=PreprocessSpec(spline_lambda=10.0),
                            regression=RegressionConfig(n_refit=40),
                            metrics=MetricsConfig(threshold=0.04),
                            grid={"simulate.noise_xi": [0.0, 0.01, 0.02, 0.04, 0.07, 0.1]})


def _hetero():
    return ExperimentConfig(name="chua16-hetero", system="chua", n_runs=8,
                            network=NetworkGenSpec(16),
                            regression=RegressionConfig(n_refit=40),
                            metrics=MetricsConfig(threshold=0.004),
                            grid={"network.hetero_xi_alpha":
                                  [float(v) for v in np.linspace(0, 0.3, 7)]})


def _fhn():
    return ExperimentConfig(name="fhn", system="fhn", n_runs=8,
                            network=NetworkGenSpec(16),
                            regression=RegressionConfig(n_refit=80))


def _desk():
    return ExperimentConfig(name="lorenz4-fast", system="lorenz", n_runs=1,
                            network=NetworkGenSpec(4, require_connected=True),
                            simulate=SimulateSpec(n_steps=5000),
                            regression=RegressionConfig(n_refit=10),
                            metrics=MetricsConfig(n_starts=8))


def _smoke():
    return ExperimentConfig(name="smoke", system="lorenz", n_runs=1,
                            network=NetworkGenSpec(3, edge_prob=1.0),
                            simulate=SimulateSpec(n_steps=400, washout=200),
                            train=TrainConfig(epochs=2),
                            regression=RegressionConfig(n_refit=2, n_backprop_steps=5,
                                                        batch_starts=4),
                            metrics=MetricsConfig(tau_max=50, n_starts=4, n_control=2))


PRESETS = {
    "lorenz16": _lorenz16, "chua16": _chua16, "lorenz64": _lorenz64,
    "lorenz16-negasym": _negasym, "lorenz16-noise": _noise, "chua16-hetero": _hetero,
    "fhn": _fhn, "lorenz4-fast": _desk, "smoke": _smoke,
}


def preset_config(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset")
    return PRESETS[name]()


# seeding and grids ------------------------------------------------------------

STAGES = ("network", "initial", "noise", "inference", "metrics")


def run_seeds(master_seed, run_index):
    """Independent generators for every stage of one run.

    Streams depend only on the master seed and the run index, never on the
    worker that executes the run.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(run_index,))
    children = ss.spawn(len(STAGES))
    return {name: np.random.default_rng(child) for name, child in zip(STAGES, children)}


def grid_points(cfg):
    """Expand a configuration into ``(label, config, run_index)`` triples.

    Run indices are global across the grid so every run gets its own streams.
    """
    out = []
    if not cfg.grid:
        return [(f"run{r:02d}", cfg, r) for r in range(cfg.n_runs)]
    if len(cfg.grid) != 1:
        raise ConfigError("only one grid axis is supported", "grid")
    (key, values), = cfg.grid.items()
    sec, name = key.split(".", 1)
    k = 0
    for v in values:
        stage = dataclasses.replace(getattr(cfg, sec), **{name: v})
        point = dataclasses.replace(cfg, grid={}, **{sec: stage})
        for r in range(cfg.n_runs):
            out.append((f"{name}={v:g}/run{r:02d}", point, k))
            k += 1
    return out
