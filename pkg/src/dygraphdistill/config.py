"""Experiment configuration: a flat key-value file with a strict schema.

Files contain `key = value` lines; `#` starts a comment. Unknown keys are
rejected so typos fail loudly instead of silently using a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .losses import DISTILL_MODES


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class ExperimentConfig:
    """Everything one reproducible run needs.

    Dataset is either a path to a temporal edge list / saved graph
    manifest, or the literal string `synthetic` (the dynamic block-model
    generator, controlled by the synth_* keys). The teacher window
    defaults to m (it spans the whole offline prefix); optional
    teacher/student epoch overrides fall back to `epochs`.
    """

    dataset: str = "synthetic"
    bucket_width: int | None = None
    bucket_count: int | None = None
    m: int = 5

    synth_n: int = 200
    synth_communities: int = 2
    synth_p_in: float = 0.1
    synth_p_out: float = 0.01
    synth_T: int = 8
    synth_churn: float = 0.1

    teacher_dim: int = 256
    teacher_window: int | None = None
    teacher_heads: int = 16
    teacher_temporal_heads: int | None = None
    student_dim: int = 64
    student_window: int = 2
    student_heads: int = 2
    student_temporal_heads: int | None = None

    gamma: float = 0.4
    tau: float = 1.0
    w_neg: float = 1.0
    neg_per_pos: int = 1
    candidate_set_size: int = 32
    distill_mode: str = "kl-similarity"

    lr: float = 1e-3
    epochs: int = 200
    teacher_epochs: int | None = None
    student_epochs: int | None = None
    anchors_per_batch: int = 0
    dropout: float = 0.0

    walk_len: int = 40
    walks_per_node: int = 10
    context: int = 10
    neg_power: float = 0.75

    seed: int = 0
    eval_seeds: int = 5
    precision: str = "float64"
    figures: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.distill_mode not in DISTILL_MODES:
            raise ConfigError(f"distill_mode must be one of {DISTILL_MODES}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError("gamma must lie in [0, 1]")
        if self.precision not in ("float64", "float32"):
            raise ConfigError("precision must be float64 or float32")
        if self.dataset != "synthetic" and self.synth_T < 2:
            raise ConfigError("synth_T must be >= 2")

    @property
    def effective_teacher_window(self) -> int:
        return self.m if self.teacher_window is None else self.teacher_window

    @property
    def effective_teacher_epochs(self) -> int:
        return self.epochs if self.teacher_epochs is None else self.teacher_epochs

    @property
    def effective_student_epochs(self) -> int:
        return self.epochs if self.student_epochs is None else self.student_epochs

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_OPTIONAL_INT = {"bucket_width", "bucket_count", "teacher_window", "teacher_temporal_heads",
                 "student_temporal_heads", "teacher_epochs", "student_epochs"}


def _convert(name: str, text: str, kind):
    text = text.strip()
    if name in _OPTIONAL_INT:
        return None if text.lower() == "none" else int(text)
    if kind is bool:
        return _bool(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse `key = value` lines into an ExperimentConfig; unknown keys fail."""
    schema = {}
    for f in fields(ExperimentConfig):
        kind = f.type
        if kind in ("int", "int | None"):
            kind = int
        elif kind == "float":
            kind = float
        elif kind == "bool":
            kind = bool
        else:
            kind = str
        schema[f.name] = kind
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, value, schema[key])
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    if overrides:
        for key, value in overrides.items():
            if key not in schema:
                raise ConfigError(f"unknown override {key!r}")
            values[key] = value
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), overrides=overrides)
