"""Run configuration: flat key=value text with # comments.

Unknown keys, duplicate keys, bad types, and out-of-range values are
rejected with the offending line number. Relative paths are resolved
against the config file's directory by ``load_config``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from vild.classifier import TAU_DEFAULT
from vild.errors import ConfigError
from vild.postprocess import (
    CLASS_AGNOSTIC_NMS_THRESHOLD,
    ENSEMBLE_LAMBDA,
    MAX_DETECTIONS,
    MAX_PROPOSALS,
    PER_CLASS_NMS_THRESHOLD,
)
from vild.training import DISTILL_NORMS, DISTILL_WEIGHT_DEFAULT, OBJECTIVES

INFERENCE_VOCABULARIES = ("base", "novel", "joint")

_PATH_KEYS = {
    "vocab": "vocab",
    "text_embeddings": "text_embeddings",
    "prompt_embeddings": "prompt_embeddings",
    "train_data": "train_data",
    "eval_data": "eval_data",
    "gt": "gt",
    "out_dir": "out_dir",
    "head": "head",
    "dets": "dets",
    "report": "report",
}


@dataclass
class RunConfig:
    # input and output paths; None means "not configured"
    vocab: str | None = None
    text_embeddings: str | None = None
    prompt_embeddings: str | None = None
    train_data: str | None = None
    eval_data: str | None = None
    gt: str | None = None
    out_dir: str | None = None
    head: str | None = None
    dets: str | None = None
    report: str | None = None
    # hyperparameters
    tau: float = TAU_DEFAULT
    distill_weight: float = DISTILL_WEIGHT_DEFAULT  # key: w
    ensemble_lambda: float = ENSEMBLE_LAMBDA  # key: lambda
    distill_norm: str = "l1"
    learning_rate: float = 0.5
    iterations: int = 2000
    seed: int = 0
    nms_per_class: float = PER_CLASS_NMS_THRESHOLD
    nms_class_agnostic: float = CLASS_AGNOSTIC_NMS_THRESHOLD
    max_detections: int = MAX_DETECTIONS
    max_proposals: int = MAX_PROPOSALS
    # mode flags
    objective: str = "vild"
    inference_vocabulary: str = "joint"
    objectness_rescore: bool = False
    ensemble: bool = False

    def resolved(self, base: Path) -> "RunConfig":
        """Copy with relative paths joined onto ``base``."""
        updates = {}
        for field in _PATH_KEYS.values():
            value = getattr(self, field)
            if value is not None and not Path(value).is_absolute():
                updates[field] = str(base / value)
        return dataclasses.replace(self, **updates)


def _parse_bool(value: str, key: str, line_no: int) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise ConfigError(f"line {line_no}: {key} must be 'true' or 'false', got {value!r}")


def _parse_float(value: str, key: str, line_no: int) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: {key} expects a float, got {value!r}") from exc


def _parse_int(value: str, key: str, line_no: int) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(
            f"line {line_no}: {key} expects an integer, got {value!r}"
        ) from exc


def parse_config(text: str) -> RunConfig:
    """Parse config text into a RunConfig, applying defaults."""
    config = RunConfig()
    seen: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        if key in seen:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        seen.add(key)
        _apply(config, key, value, line_no)
    return config


def _apply(config: RunConfig, key: str, value: str, line_no: int) -> None:
    if key in _PATH_KEYS:
        if not value:
            raise ConfigError(f"line {line_no}: {key} needs a path")
        setattr(config, _PATH_KEYS[key], value)
        return
    if key == "tau":
        v = _parse_float(value, key, line_no)
        if v <= 0.0:
            raise ConfigError(f"line {line_no}: tau must be > 0, got {value}")
        config.tau = v
    elif key == "w":
        v = _parse_float(value, key, line_no)
        if v < 0.0:
            raise ConfigError(f"line {line_no}: w must be >= 0, got {value}")
        config.distill_weight = v
    elif key == "lambda":
        v = _parse_float(value, key, line_no)
        if not (0.0 <= v <= 1.0):
            raise ConfigError(f"line {line_no}: lambda must lie in [0, 1], got {value}")
        config.ensemble_lambda = v
    elif key == "distill_norm":
        if value not in DISTILL_NORMS:
            raise ConfigError(
                f"line {line_no}: distill_norm must be one of {DISTILL_NORMS}, "
                f"got {value!r}"
            )
        config.distill_norm = value
    elif key == "learning_rate":
        v = _parse_float(value, key, line_no)
        if v <= 0.0:
            raise ConfigError(f"line {line_no}: learning_rate must be > 0, got {value}")
        config.learning_rate = v
    elif key == "iterations":
        v = _parse_int(value, key, line_no)
        if v < 0:
            raise ConfigError(f"line {line_no}: iterations must be >= 0, got {value}")
        config.iterations = v
    elif key == "seed":
        config.seed = _parse_int(value, key, line_no)
    elif key in ("nms_per_class", "nms_class_agnostic"):
        v = _parse_float(value, key, line_no)
        if not (0.0 < v <= 1.0):
            raise ConfigError(
                f"line {line_no}: {key} must lie in (0, 1], got {value}"
            )
        setattr(config, key, v)
    elif key in ("max_detections", "max_proposals"):
        v = _parse_int(value, key, line_no)
        if v < 1:
            raise ConfigError(f"line {line_no}: {key} must be >= 1, got {value}")
        setattr(config, key, v)
    elif key == "objective":
        if value not in OBJECTIVES:
            raise ConfigError(
                f"line {line_no}: objective must be one of {OBJECTIVES}, got {value!r}"
            )
        config.objective = value
    elif key == "inference_vocabulary":
        if value not in INFERENCE_VOCABULARIES:
            raise ConfigError(
                f"line {line_no}: inference_vocabulary must be one of "
                f"{INFERENCE_VOCABULARIES}, got {value!r}"
            )
        config.inference_vocabulary = value
    elif key == "objectness_rescore":
        config.objectness_rescore = _parse_bool(value, key, line_no)
    elif key == "ensemble":
        config.ensemble = _parse_bool(value, key, line_no)
    else:
        raise ConfigError(f"line {line_no}: unknown key {key!r}")


def load_config(path) -> RunConfig:
    """Read a config file and resolve its relative paths."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"missing config file: {p}")
    return parse_config(p.read_text(encoding="utf-8")).resolved(p.parent)


def config_text(config: RunConfig) -> str:
    """Serialize a RunConfig back to key=value text (known keys only)."""
    from vild.numfmt import fmt_float

    lines = []
    for key, field in _PATH_KEYS.items():
        value = getattr(config, field)
        if value is not None:
            lines.append(f"{key}={value}")
    lines.extend(
        [
            f"tau={fmt_float(config.tau)}",
            f"w={fmt_float(config.distill_weight)}",
            f"lambda={fmt_float(config.ensemble_lambda)}",
            f"distill_norm={config.distill_norm}",
            f"learning_rate={fmt_float(config.learning_rate)}",
            f"iterations={config.iterations}",
            f"seed={config.seed}",
            f"nms_per_class={fmt_float(config.nms_per_class)}",
            f"nms_class_agnostic={fmt_float(config.nms_class_agnostic)}",
            f"max_detections={config.max_detections}",
            f"max_proposals={config.max_proposals}",
            f"objective={config.objective}",
            f"inference_vocabulary={config.inference_vocabulary}",
            f"objectness_rescore={'true' if config.objectness_rescore else 'false'}",
            f"ensemble={'true' if config.ensemble else 'false'}",
        ]
    )
    return "\n".join(lines) + "\n"
