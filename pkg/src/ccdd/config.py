"""Run configuration: flat key=value text with typed validation.

Every key is declared once in SCHEMA with its type, default, and constraint;
parsing collects all offending keys before failing so a bad config reports
everything at once. Unknown keys are rejected.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .errors import ConfigError
from .schedules import DEFAULT_VP_BETA


@dataclass(frozen=True)
class Key:
    type: type
    default: Any
    choices: Optional[tuple] = None
    check: Optional[Callable[[Any], bool]] = None
    help: str = ""


def _pos(v) -> bool:
    return v > 0


def _nonneg(v) -> bool:
    return v >= 0


def _unit(v) -> bool:
    return 0.0 <= v <= 1.0


SCHEMA: dict[str, Key] = {
    # data
    "corpus": Key(str, "", help="path to a UTF-8 text corpus"),
    "tokenizer": Key(str, "char", choices=("byte", "char")),
    "seq_len": Key(int, 32, check=_pos),
    "batch_size": Key(int, 32, check=_pos),
    "seed": Key(int, 0),
    "out_dir": Key(str, "", help="output directory; falls back to $CCDD_OUT_DIR or ./runs"),
    # schedules
    "cont_schedule": Key(str, "concave_sqrt", choices=("vp_constant_beta", "concave_sqrt", "linear_alpha")),
    "cont_beta": Key(float, DEFAULT_VP_BETA, check=_pos),
    "disc_schedule": Key(str, "masked_linear", choices=("masked_linear", "uniform")),
    "uniform_rate": Key(float, 1.0, check=_pos),
    "pairing": Key(str, "continuous_ahead", choices=("synchronous", "continuous_ahead")),
    # embedder
    "embedder_mode": Key(str, "random_orthonormal", choices=("onehot_simplex", "random_orthonormal", "contextual")),
    "embed_dim": Key(int, 32, check=_pos),
    "ctx_weight": Key(float, 0.25, check=lambda v: 0.0 <= v < 1.0),
    "ctx_radius": Key(int, 1, check=_nonneg),
    # denoiser
    "arch": Key(str, "mdit", choices=("mdit", "mmdit", "moedit")),
    "n_layers": Key(int, 2, check=_pos),
    "d_model": Key(int, 64, check=_pos),
    "n_heads": Key(int, 4, check=_pos),
    "n_experts": Key(int, 4, check=lambda v: v >= 2),
    "fuse": Key(str, "concat", choices=("add", "concat")),
    "use_rotary": Key(bool, True),
    # training
    "train_steps": Key(int, 1000, check=_nonneg),
    "lr": Key(float, 3e-4, check=_pos),
    "warmup_steps": Key(int, 100, check=_nonneg),
    "weight_decay": Key(float, 0.02, check=_nonneg),
    "grad_clip": Key(float, 1.0, check=_nonneg),
    "adam_beta1": Key(float, 0.9, check=_unit),
    "adam_beta2": Key(float, 0.999, check=_unit),
    "adam_eps": Key(float, 1e-8, check=_pos),
    "p_drop": Key(float, 0.15, check=_unit),
    "p_r_min": Key(float, 0.0, check=_unit),
    "p_r_max": Key(float, 0.9, check=_unit),
    "rep_mask_mode": Key(str, "zero", choices=("zero", "reembed")),
    "t_floor": Key(float, 1e-4, check=lambda v: 0.0 < v <= 0.1),
    "gamma_cont": Key(float, 1.0, check=_nonneg),
    "gamma_disc": Key(float, 1.0, check=_nonneg),
    "lambda_cont": Key(str, "one", choices=("one",)),
    "lambda_disc": Key(str, "inv_t", choices=("inv_t", "one")),
    "checkpoint_every": Key(int, 0, check=_nonneg, help="0 saves only the final checkpoint"),
    "workers": Key(int, 1, check=_pos),
    # sampler
    "sample_steps": Key(int, 64, check=_pos),
    "cfg_w": Key(float, 1.0),
    "eta_ddpm": Key(float, 0.0, check=_unit),
    "temperature": Key(float, 1.0, check=_pos),
    "variance_mode": Key(str, "exact_posterior", choices=("alg2_literal", "exact_posterior")),
    "grid_shape": Key(str, "uniform_angle", choices=("uniform_angle", "uniform_t")),
    "decode_source": Key(str, "discrete_tokens", choices=("discrete_tokens", "nn_from_latent")),
    "argmax_tokens": Key(bool, False),
    "sample_count": Key(int, 8, check=_pos),
    "sample_length": Key(int, 0, check=_nonneg, help="0 uses the checkpoint's seq_len"),
    "dump_latents": Key(bool, False),
    # evaluation
    "eval_p_r": Key(float, 1.0, check=_unit),
    "eval_n_mc": Key(int, 16, check=_pos),
    "discrete_ppl_only": Key(bool, True),
    "eval_batch_size": Key(int, 64, check=_pos),
    # io
    "checkpoint": Key(str, "", help="checkpoint path for sample/eval/resume"),
}

# Keys that define the identity of a training run for resume purposes; the
# checkpoint's hash covers exactly these, so extending train_steps or moving
# out_dir does not block resumption.
IDENTITY_KEYS = tuple(
    k
    for k in SCHEMA
    if k
    not in (
        "out_dir",
        "checkpoint",
        "train_steps",
        "checkpoint_every",
        "sample_steps",
        "cfg_w",
        "eta_ddpm",
        "temperature",
        "variance_mode",
        "grid_shape",
        "decode_source",
        "argmax_tokens",
        "sample_count",
        "sample_length",
        "dump_latents",
        "eval_p_r",
        "eval_n_mc",
        "discrete_ppl_only",
        "eval_batch_size",
        "workers",
    )
)


def _parse_value(key: str, raw: str, spec: Key):
    if spec.type is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError("expected true/false")
    if spec.type is int:
        return int(raw.strip())
    if spec.type is float:
        value = float(raw.strip())
        if math.isnan(value) or math.isinf(value):
            raise ValueError("must be finite")
        return value
    return raw.strip()


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: spec.default for k, spec in SCHEMA.items()}
        merged.update(self.values)
        self.values = merged
        self.validate()

    def __getattr__(self, name: str):
        values = object.__getattribute__(self, "__dict__").get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def validate(self) -> None:
        problems = []
        for key, value in self.values.items():
            spec = SCHEMA.get(key)
            if spec is None:
                problems.append(f"{key}: unknown key")
                continue
            if spec.type is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
                self.values[key] = value
            if not isinstance(value, spec.type) or (spec.type is not bool and isinstance(value, bool)):
                problems.append(f"{key}: expected {spec.type.__name__}, got {type(value).__name__}")
                continue
            if spec.choices and value not in spec.choices:
                problems.append(f"{key}: must be one of {spec.choices}, got {value!r}")
            elif spec.check and not spec.check(value):
                problems.append(f"{key}: value {value!r} out of range")
        if self.values.get("p_r_min", 0.0) > self.values.get("p_r_max", 1.0):
            problems.append("p_r_min: must not exceed p_r_max")
        if problems:
            raise ConfigError("invalid config: " + "; ".join(sorted(problems)))

    def replace(self, **overrides) -> "RunConfig":
        merged = dict(self.values)
        merged.update(overrides)
        return RunConfig(merged)

    def to_text(self) -> str:
        lines = [f"{key} = {_format_value(self.values[key])}" for key in SCHEMA]
        return "\n".join(lines) + "\n"

    def identity_text(self) -> str:
        return "\n".join(f"{k} = {_format_value(self.values[k])}" for k in IDENTITY_KEYS) + "\n"

    def resolved_out_dir(self) -> str:
        if self.values["out_dir"]:
            return self.values["out_dir"]
        return os.environ.get("CCDD_OUT_DIR", "runs")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, Any] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (part.strip() for part in body.split("=", 1))
        spec = SCHEMA.get(key)
        if spec is None:
            problems.append(f"{key}: unknown key")
            continue
        try:
            values[key] = _parse_value(key, raw, spec)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(sorted(problems)))
    return RunConfig(values)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def parse_overrides(pairs: dict[str, str]) -> dict[str, Any]:
    """Parse raw string overrides (CLI flags, API payloads) against the schema."""
    values: dict[str, Any] = {}
    problems = []
    for key, raw in pairs.items():
        spec = SCHEMA.get(key)
        if spec is None:
            problems.append(f"{key}: unknown key")
            continue
        try:
            values[key] = _parse_value(key, str(raw), spec)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ConfigError("invalid overrides: " + "; ".join(sorted(problems)))
    return values
