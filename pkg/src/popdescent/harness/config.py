"""Experiment configuration.

Files are ``key = value`` lines grouped under ``[section]`` headers (parsed
with :mod:`configparser`). Lists are comma separated. Unknown sections or keys
are rejected so that a typo cannot silently fall back to a default::

    [experiment]
    mode = benchmark
    seeds = 0, 1, 2, 3, 4
    methods = popdescent, population_fixed, random_search

    [popdescent]
    population_size = 5
    elite = 3
    iterations = 50
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError

MODES = ("benchmark", "convergence", "ablation", "sensitivity", "sample-dist")
METHODS = ("popdescent", "population_fixed", "grid_search", "random_search", "schedule_search")
ABLATION_VARIANTS = ("randomization", "no_randomization", "cv_selection", "train_selection")
SOURCES = ("auto", "fmnist", "two_moons", "blobs")
FORMATS = ("csv", "markdown", "svg")


@dataclass
class ExperimentSection:
    mode: str = "benchmark"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    out_dir: str = "results"


@dataclass
class DataSection:
    source: str = "auto"
    data_dir: str = ""
    seed: int = 0
    n_samples: int = 12500
    noise: float = 0.25
    fractions: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    train_cap: int = 10000
    cv_size: int = 5000
    test_cap: int = 0


@dataclass
class ModelSection:
    # empty means 128 hidden units for image data, 32 for synthetic data
    hidden: list[int] = field(default_factory=list)
    # none | hidden | all | comma separated weight-matrix indices
    regularize: str = "hidden"


@dataclass
class PopDescentSection:
    population_size: int = 5
    elite: int = 3
    iterations: int = 50
    batches_per_iteration: int = 128
    epochs_per_iteration: int = 1
    batch_size: int = 64
    cv_batch_size: int = 64
    learning_rate: float = 0.001
    regularization_rate: float = 0.001
    optimizer: str = "adam"
    # default: every member starts at learning_rate / regularization_rate
    # random: log-normal draws from the mutation section's initializers
    init: str = "default"


@dataclass
class MutationSection:
    beta1: float = 0.01
    beta2: float = 15.0
    base: float = 2.0


@dataclass
class GridSection:
    learning_rates: list[float] = field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    regularization_rates: list[float] = field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    # per-model budget = iterations x popdescent.batches_per_iteration
    iterations: int = 50


@dataclass
class RandomSearchSection:
    trials: int = 25
    probe_epochs: int = 2
    max_epochs: int = 20
    patience: int = 2
    lr_low: float = 1e-4
    lr_high: float = 1e-2
    reg_low: float = 1e-5
    reg_high: float = 1e-1
    # 0 means: the PopDescent budget of the same experiment
    step_budget: int = 0


@dataclass
class ScheduleSearchSection:
    trials: int = 25
    probe_epochs: int = 2
    max_epochs: int = 20
    patience: int = 0
    decay_rate_low: float = 0.8
    decay_rate_high: float = 0.99
    decay_steps_low: int = 1000
    decay_steps_high: int = 10000
    end_lr_low: float = 1e-5
    end_lr_high: float = 1e-2
    power_low: float = 0.1
    power_high: float = 2.0
    step_budget: int = 0


@dataclass
class AblationSection:
    population_size: int = 10
    elite: int = 5
    iterations: int = 35
    variants: list[str] = field(default_factory=lambda: list(ABLATION_VARIANTS))
    # model used by the unregularized variants; empty = model.hidden
    hidden: list[int] = field(default_factory=list)


@dataclass
class SensitivitySection:
    parameter: str = "learning_rate"
    values: list[float] = field(default_factory=lambda: [0.01, 0.05, 0.001])
    methods: list[str] = field(default_factory=lambda: ["popdescent", "population_fixed"])
    population_size: int = 10
    elite: int = 5
    iterations: int = 30


@dataclass
class ReportSection:
    formats: list[str] = field(default_factory=lambda: list(FORMATS))
    ema: float = 0.1


@dataclass
class SampleDistSection:
    draws: int = 1_000_000
    init_draws: int = 100_000


SECTIONS = {
    "experiment": ExperimentSection,
    "data": DataSection,
    "model": ModelSection,
    "popdescent": PopDescentSection,
    "mutation": MutationSection,
    "grid": GridSection,
    "random_search": RandomSearchSection,
    "schedule_search": ScheduleSearchSection,
    "ablation": AblationSection,
    "sensitivity": SensitivitySection,
    "report": ReportSection,
    "sample_dist": SampleDistSection,
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    popdescent: PopDescentSection = field(default_factory=PopDescentSection)
    mutation: MutationSection = field(default_factory=MutationSection)
    grid: GridSection = field(default_factory=GridSection)
    random_search: RandomSearchSection = field(default_factory=RandomSearchSection)
    schedule_search: ScheduleSearchSection = field(default_factory=ScheduleSearchSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    sensitivity: SensitivitySection = field(default_factory=SensitivitySection)
    report: ReportSection = field(default_factory=ReportSection)
    sample_dist: SampleDistSection = field(default_factory=SampleDistSection)

    def validate(self) -> ExperimentConfig:
        ex = self.experiment
        if ex.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {ex.mode!r}")
        if not ex.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(ex.seeds)) != len(ex.seeds):
            raise ConfigError(f"seeds must be distinct, got {ex.seeds}")
        if any(s < 0 for s in ex.seeds):
            raise ConfigError("seeds must be non-negative")
        bad = [m for m in ex.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if ex.mode in ("benchmark", "convergence") and not ex.methods:
            raise ConfigError("method list is empty")
        if self.data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}")
        for name, size, elite in (
            ("popdescent", self.popdescent.population_size, self.popdescent.elite),
            ("ablation", self.ablation.population_size, self.ablation.elite),
            ("sensitivity", self.sensitivity.population_size, self.sensitivity.elite),
        ):
            if not 1 <= elite < size:
                raise ConfigError(f"{name}: need population_size > elite >= 1, got {size} and {elite}")
        pd = self.popdescent
        if pd.init not in ("default", "random"):
            raise ConfigError("popdescent.init must be 'default' or 'random'")
        if pd.learning_rate <= 0 or pd.regularization_rate <= 0:
            raise ConfigError("default learning and regularization rates must be positive")
        for name in ("iterations", "batches_per_iteration", "epochs_per_iteration", "batch_size", "cv_batch_size"):
            if getattr(pd, name) < 1:
                raise ConfigError(f"popdescent.{name} must be >= 1")
        bad = [v for v in self.ablation.variants if v not in ABLATION_VARIANTS]
        if bad:
            raise ConfigError(f"unknown ablation variants {bad}")
        if self.sensitivity.parameter not in ("learning_rate", "iterations"):
            raise ConfigError("sensitivity.parameter must be learning_rate or iterations")
        bad = [m for m in self.sensitivity.methods if m not in ("popdescent", "population_fixed")]
        if bad:
            raise ConfigError(f"sensitivity supports popdescent and population_fixed only, got {bad}")
        bad = [f for f in self.report.formats if f not in FORMATS]
        if bad:
            raise ConfigError(f"unknown report formats {bad}")
        if not 0 < self.report.ema <= 1:
            raise ConfigError("report.ema must lie in (0, 1]")
        if len(self.data.fractions) != 3 or sum(self.data.fractions) > 1 + 1e-12:
            raise ConfigError("data.fractions needs three values summing to at most 1")
        return self


def _parse_value(type_name: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if type_name.startswith("list["):
            inner = type_name[5:-1]
            body = raw.strip("[]").strip()
            if not body:
                return []
            return [_parse_value(inner, item, where) for item in body.split(",")]
        if type_name == "int":
            return int(raw.replace("_", ""))
        if type_name == "float":
            return float(raw)
        if type_name == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type_name}") from None


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        for key, raw in parser.items(section):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(target, key, _parse_value(types[key], raw, f"[{section}] {key}"))
    return cfg


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read ``path`` (or start from defaults) and apply ``section__key=value`` overrides."""
    cfg = parse_config(Path(path).read_text()) if path else ExperimentConfig()
    for dotted, value in overrides.items():
        section, _, key = dotted.partition("__")
        target = getattr(cfg, section, None)
        if target is None or not hasattr(target, key):
            raise ConfigError(f"unknown override {dotted!r}")
        setattr(target, key, value)
    return cfg.validate()


def _format_value(value) -> str:
    if isinstance(value, list):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for f in dataclasses.fields(getattr(cfg, section)):
            lines.append(f"{f.name} = {_format_value(getattr(getattr(cfg, section), f.name))}")
        lines.append("")
    return "\n".join(lines)
