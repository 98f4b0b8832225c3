"""YAML run configuration: schema, defaults, validation and the paper preset.

Schema (every section and key optional except ``seed``)::

    seed: 7
    output: {dir: runs/demo, verbosity: 1}
    levels:
      field: 16500                 # G
      electronic_zeeman_slope: 1.6 # MHz/G
      species:                     # replaces the default Nb/7Li/6Li list
        - {name: 93Nb, slope_excited: 1.15, nuclear_spin: 4.5, weight: 0.3}
    comb:                          # kind: spec (parametric) or pumping
      kind: spec
      delta: 20.8333               # MHz
      finesse: 2
      bandwidth: 6                 # GHz
      peak_od: 2.0
      background_od: 1.2857
      tooth_shape: square
      taper: 1.227
    source: {rep_rate: 80, mean_pairs: 0.05, ...}
    timing: {pump_ms: 300, wait_ms: 30, store_ms: 200, cycles: 1}
    decay: {fast_lifetime: 600}    # or null
    experiment: {relax: true, repump: true, storage_time: 48, ...}
    holeburn: {field: 19000, pump_strength: 1.0, ...}
    figures: ["2a", "4"]

Unknown keys are rejected with the offending key and line number.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .afc_memory import CombSpec
from .errors import AfcSimError, ConfigError
from .experiment import FIGURES, ExperimentConfig, PumpingRecipe, TimingSequence, paper_config
from .photon_statistics import SourceConfig
from .spectral_dynamics import HoleDecayModel, LevelStructure, SpinSpecies

PRESETS = ("paper",)


@dataclass(frozen=True)
class HoleburnSettings:
    field: float = 19_000.0         # G
    pump_strength: float = 1.0
    pump_width: float = 3.0         # MHz
    span: float = 100.0             # MHz
    step: float = 0.05              # MHz
    od: float = 1.0
    branching: float = 1.0
    spin_broadening: float = 50.0   # MHz
    decay_field: float = 800.0      # G, field of the simulated decay scan


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    holeburn: HoleburnSettings = field(default_factory=HoleburnSettings)
    out_dir: str | None = None
    figures: tuple[str, ...] = FIGURES
    verbosity: int = 1
    seed: int | None = None


def _names(cls):
    return {f.name for f in fields(cls)}


class _Located:
    """Line numbers (1-based) of every mapping key, addressed by path tuple."""

    def __init__(self, text: str):
        self.lines: dict[tuple, int] = {}
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", line=line) from None
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                self._walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self.lines[path + (i,)] = v.start_mark.line + 1
                self._walk(v, path + (i,))

    def line(self, path):
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None


def _section(data, path, allowed, loc: _Located):
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{'.'.join(map(str, path))}' must be a mapping",
                          key=".".join(map(str, path)), line=loc.line(path))
    for key in data:
        if key not in allowed:
            dotted = ".".join(map(str, path + (key,)))
            raise ConfigError(f"unknown key '{dotted}'", key=dotted, line=loc.line(path + (key,)))
    return dict(data)


def _build(cls, kwargs, path, loc):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (AfcSimError, TypeError, ValueError) as exc:
        dotted = ".".join(map(str, path))
        raise ConfigError(f"invalid '{dotted}': {exc}", key=dotted, line=loc.line(path)) from None


_EXPERIMENT_KEYS = {"relax", "repump", "storage_time", "spectrum_fwhm", "echo_pulse_fwhm",
                    "bin_width", "max_offset", "peak_window"}
_TOP_KEYS = {"seed", "preset", "output", "levels", "comb", "source", "timing", "decay",
             "experiment", "holeburn", "figures"}


def parse_config(path=None, text: str | None = None, preset: str | None = None) -> RunConfig:
    """Load and validate a YAML config (from ``path`` or ``text``).

    ``preset`` (or a top-level ``preset:`` key) picks the base values that
    the file then overrides; without one the documented defaults apply.
    """
    if text is None:
        if path is None:
            text = ""
        else:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}", key=str(p))
            text = p.read_text()
    loc = _Located(text)
    data = yaml.safe_load(text) if text.strip() else {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping", line=1)
    data = _section(data, (), _TOP_KEYS, loc)

    preset = data.pop("preset", None) if preset is None else preset
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}'", key="preset", line=loc.line(("preset",)))
    base = paper_config() if preset == "paper" else ExperimentConfig()
    data.pop("preset", None)

    seed = data.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a non-negative integer", key="seed", line=loc.line(("seed",)))

    levels = base.levels
    if "levels" in data:
        sec = _section(data["levels"], ("levels",), {"field", "electronic_zeeman_slope", "species"}, loc)
        if "species" in sec:
            sp_list = []
            for i, item in enumerate(sec["species"] or []):
                spec = _section(item, ("levels", "species", i), _names(SpinSpecies), loc)
                sp_list.append(_build(SpinSpecies, spec, ("levels", "species", i), loc))
            sec["species"] = tuple(sp_list)
        levels = _build(LevelStructure, {**_as_kwargs(levels), **sec}, ("levels",), loc)

    comb = base.comb
    if "comb" in data:
        sec = _section(data["comb"], ("comb",), {"kind"} | _names(CombSpec) | _names(PumpingRecipe), loc)
        kind = sec.pop("kind", "spec")
        if kind == "spec":
            bad = set(sec) - _names(CombSpec)
            start = _as_kwargs(comb) if isinstance(comb, CombSpec) else {}
            cls = CombSpec
        elif kind == "pumping":
            bad = set(sec) - _names(PumpingRecipe)
            start = _as_kwargs(comb) if isinstance(comb, PumpingRecipe) else {}
            cls = PumpingRecipe
        else:
            raise ConfigError(f"comb.kind must be 'spec' or 'pumping', not {kind!r}",
                              key="comb.kind", line=loc.line(("comb", "kind")))
        if bad:
            key = sorted(bad)[0]
            raise ConfigError(f"unknown key 'comb.{key}' for kind {kind}", key=f"comb.{key}",
                              line=loc.line(("comb", key)))
        comb = _build(cls, {**start, **sec}, ("comb",), loc)

    source = base.source
    if "source" in data:
        sec = _section(data["source"], ("source",), _names(SourceConfig), loc)
        source = _build(SourceConfig, {**_as_kwargs(source), **sec}, ("source",), loc)

    timing = base.timing
    if "timing" in data:
        sec = _section(data["timing"], ("timing",), _names(TimingSequence), loc)
        timing = _build(TimingSequence, {**_as_kwargs(timing), **sec}, ("timing",), loc)

    decay = base.decay
    if "decay" in data:
        if data["decay"] is None:
            decay = None
        else:
            sec = _section(data["decay"], ("decay",), _names(HoleDecayModel), loc)
            decay = _build(HoleDecayModel, sec, ("decay",), loc)

    exp_kw = {}
    if "experiment" in data:
        exp_kw = _section(data["experiment"], ("experiment",), _EXPERIMENT_KEYS, loc)
    try:
        experiment = replace(base, levels=levels, comb=comb, source=source, timing=timing,
                             decay=decay, seed=seed or 0, **exp_kw)
        experiment.check()
    except ConfigError as exc:
        raise ConfigError(str(exc), key=exc.key, line=loc.line(("experiment", exc.key or ""))) from None
    except (AfcSimError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'experiment': {exc}", key="experiment",
                          line=loc.line(("experiment",))) from None

    holeburn = HoleburnSettings()
    if "holeburn" in data:
        sec = _section(data["holeburn"], ("holeburn",), _names(HoleburnSettings), loc)
        holeburn = _build(HoleburnSettings, sec, ("holeburn",), loc)

    out_dir, verbosity = None, 1
    if "output" in data:
        sec = _section(data["output"], ("output",), {"dir", "verbosity"}, loc)
        out_dir = sec.get("dir")
        verbosity = int(sec.get("verbosity", 1))

    figures = FIGURES
    if "figures" in data:
        figs = data["figures"]
        if not isinstance(figs, list):
            raise ConfigError("figures must be a list", key="figures", line=loc.line(("figures",)))
        figs = tuple(str(f) for f in figs)
        for i, f in enumerate(figs):
            if f not in FIGURES:
                raise ConfigError(f"unknown figure '{f}'", key="figures", line=loc.line(("figures", i)))
        figures = figs

    return RunConfig(experiment, holeburn, out_dir, figures, verbosity, seed)


def _as_kwargs(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}
