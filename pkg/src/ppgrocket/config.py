"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Lists are comma-separated;
``none`` clears an optional integer. Pulse-shape keys carry a class prefix,
e.g. ``hypertension.dicrotic_ratio = 0.5``. ``config_version`` must be 1
when present. Unknown keys are errors.
"""

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .classifiers import DEFAULT_LAMBDAS
from .exceptions import ConfigError
from .pipelines import PipelineSettings, split_method
from .rocket import DEFAULT_MAX_DILATIONS, DEFAULT_N_FEATURES
from .signal_model import HYPERTENSION_SHAPE, NORMAL_SHAPE, PulseShape, SynthParams, synth_params_for

CONFIG_VERSION = 1
DEFAULT_FRACTIONS = (0.0625, 0.125, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class RunConfig:
    config_version: int = CONFIG_VERSION
    seed: int = 0
    method: str = "rocket+forest"
    out_dir: str = "run"
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    input_path: str = ""
    model_dir: str = ""
    data_format: str = "csv"
    # corpus
    n_subjects: int = 200
    positive_fraction: float = 0.2
    windows_per_subject: int = 5
    noise_sd: float = SynthParams.noise_sd
    wander_amplitude: float = SynthParams.wander_amplitude
    wander_frequency: float = SynthParams.wander_frequency
    shape_jitter: float = SynthParams.shape_jitter
    dc_level: float = SynthParams.dc_level
    duration: float = 7.0
    fs: float = 125.0
    normal: PulseShape = NORMAL_SHAPE
    hypertension: PulseShape = HYPERTENSION_SHAPE
    split_fractions: tuple = (0.6, 0.2, 0.2)
    stratify: bool = True
    # models
    target_features: int = DEFAULT_N_FEATURES
    max_dilations_per_kernel: int = DEFAULT_MAX_DILATIONS
    lambda_grid: tuple = DEFAULT_LAMBDAS
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_leaf: int = 1
    mtry: Optional[int] = None
    n_jobs: Optional[int] = None
    # ablation
    methods: tuple = ("rocket+forest", "rocket+ridge")
    fractions: tuple = DEFAULT_FRACTIONS
    ablation_seeds: tuple = (0, 1, 2)

    def path(self, name, default):
        value = getattr(self, name)
        return Path(value) if value else Path(self.out_dir) / default

    def synth_params(self):
        return synth_params_for(
            self.n_subjects, self.positive_fraction,
            windows_per_subject=self.windows_per_subject,
            normal=self.normal, hypertension=self.hypertension,
            noise_sd=self.noise_sd, wander_amplitude=self.wander_amplitude,
            wander_frequency=self.wander_frequency, shape_jitter=self.shape_jitter,
            dc_level=self.dc_level, duration=self.duration, fs=self.fs, seed=self.seed,
        )

    def pipeline_settings(self):
        return PipelineSettings(
            self.target_features, self.max_dilations_per_kernel, tuple(self.lambda_grid),
            self.n_trees, self.max_depth, self.min_leaf, self.mtry, self.n_jobs,
        )

    def validate(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version {self.config_version}")
        split_method(self.method)
        for m in self.methods:
            split_method(m)
        for f in self.fractions:
            if not 0 < f <= 1:
                raise ConfigError(f"ablation fraction {f} outside (0, 1]")
        if self.data_format not in ("csv", "binary"):
            raise ConfigError(f"data_format must be csv or binary, got {self.data_format!r}")
        return self


_TUPLE_TYPES = {
    "split_fractions": float, "lambda_grid": float, "fractions": float,
    "ablation_seeds": int, "methods": str,
}
_OPTIONAL_INT = {"max_depth", "mtry", "n_jobs"}


def _bool(text):
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name, text, current):
    if name in _TUPLE_TYPES:
        kind = _TUPLE_TYPES[name]
        return tuple(kind(v.strip()) for v in text.split(",") if v.strip())
    if name in _OPTIONAL_INT:
        return None if text.lower() in ("none", "auto", "") else int(text)
    if isinstance(current, bool):
        return _bool(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text


def parse_config(text, base=None):
    """Parse config ``text`` into a RunConfig layered over ``base``."""
    cfg = base or RunConfig()
    names = {f.name for f in fields(RunConfig)}
    shape_names = {f.name for f in fields(PulseShape)}
    updates = {}
    shapes = {"normal": {}, "hypertension": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if "." in key:
                cls, attr = key.split(".", 1)
                if cls not in shapes or attr not in shape_names:
                    raise ConfigError(f"config line {lineno}: unknown key {key!r}")
                shapes[cls][attr] = float(value)
            elif key in names:
                updates[key] = _convert(key, value, getattr(cfg, key))
            else:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config line {lineno}: bad value for {key!r}: {exc}") from None
    for cls, attrs in shapes.items():
        if attrs:
            updates[cls] = replace(getattr(cfg, cls), **attrs)
    return replace(cfg, **updates)


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def dump_config(cfg):
    """Serialise ``cfg`` back to the key-value format (round-trips through parse)."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, PulseShape):
            for g in fields(PulseShape):
                lines.append(f"{f.name}.{g.name} = {getattr(value, g.name)!r}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = " + ",".join(str(v) for v in value))
        elif value is None:
            lines.append(f"{f.name} = none")
        elif isinstance(value, bool):
            lines.append(f"{f.name} = {'true' if value else 'false'}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
