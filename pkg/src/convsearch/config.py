"""Flat key=value config files shared by the CLI subcommands.

One file may carry generation, model and training keys together; each
extractor picks the keys it owns. Unknown keys are rejected up front so typos
fail loudly instead of silently using defaults.
"""

from __future__ import annotations

from typing import Optional

from .corpus import GenConfig
from .losses import LossWeights
from .model import ModelConfig
from .trainer import AblationFlags, TrainConfig

GEN_KEYS = (
    "n_topics", "passages_per_topic", "n_conversations",
    "turns_min", "turns_max", "p_shift", "p_anaphora", "p_ellipsis", "seed",
)
MODEL_KEYS = ("d_model", "n_layers", "n_heads", "context_len", "ff_mult", "dropout")
TRAIN_KEYS = (
    "epochs", "batch_size", "learning_rate", "seed",
    "lambda_igl", "lambda_g", "tau",
    "ccl_on", "igl_on", "gen_on",
    "sampling_mode", "k_rand", "grad_clip", "pooling_mode",
    "ccl_normalized", "igl_normalized", "igl_two_sided",
)

KNOWN_KEYS = frozenset(GEN_KEYS) | frozenset(MODEL_KEYS) | frozenset(TRAIN_KEYS)


class ConfigError(ValueError):
    pass


def parse_config_file(path: str) -> dict:
    """Read "key = value" lines; '#' starts a comment."""
    mapping: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise ConfigError(f"{path}:{line_no}: empty key or value")
            if key in mapping:
                raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
            mapping[key] = value
    unknown = set(mapping) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return mapping


def _as_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")


def _take(mapping: dict, key: str, convert, default):
    if key not in mapping:
        return default
    value = mapping[key]
    try:
        if convert is bool:
            return _as_bool(value, key)
        return convert(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from exc


def gen_config_from(mapping: dict, seed_override: Optional[int] = None) -> GenConfig:
    base = GenConfig()
    cfg = GenConfig(
        n_topics=_take(mapping, "n_topics", int, base.n_topics),
        passages_per_topic=_take(mapping, "passages_per_topic", int, base.passages_per_topic),
        n_conversations=_take(mapping, "n_conversations", int, base.n_conversations),
        turns_min=_take(mapping, "turns_min", int, base.turns_min),
        turns_max=_take(mapping, "turns_max", int, base.turns_max),
        p_shift=_take(mapping, "p_shift", float, base.p_shift),
        p_anaphora=_take(mapping, "p_anaphora", float, base.p_anaphora),
        p_ellipsis=_take(mapping, "p_ellipsis", float, base.p_ellipsis),
        seed=_take(mapping, "seed", int, base.seed),
    )
    if seed_override is not None:
        cfg.seed = seed_override
    cfg.validate()
    return cfg


def model_config_from(mapping: dict, vocab_size: int) -> ModelConfig:
    base = ModelConfig(vocab_size=vocab_size)
    cfg = ModelConfig(
        vocab_size=vocab_size,
        d_model=_take(mapping, "d_model", int, base.d_model),
        n_layers=_take(mapping, "n_layers", int, base.n_layers),
        n_heads=_take(mapping, "n_heads", int, base.n_heads),
        context_len=_take(mapping, "context_len", int, base.context_len),
        ff_mult=_take(mapping, "ff_mult", int, base.ff_mult),
        dropout=_take(mapping, "dropout", float, base.dropout),
    )
    cfg.validate()
    return cfg


def _parse_grad_clip(value: str) -> Optional[float]:
    if value.lower() == "none":
        return None
    return float(value)


def train_config_from(mapping: dict, seed_override: Optional[int] = None) -> TrainConfig:
    base = TrainConfig()
    weights = LossWeights(
        lambda_igl=_take(mapping, "lambda_igl", float, base.weights.lambda_igl),
        lambda_g=_take(mapping, "lambda_g", float, base.weights.lambda_g),
        tau=_take(mapping, "tau", float, base.weights.tau),
    )
    ablation = AblationFlags(
        ccl_on=_take(mapping, "ccl_on", bool, True),
        igl_on=_take(mapping, "igl_on", bool, True),
        gen_on=_take(mapping, "gen_on", bool, True),
    )
    cfg = TrainConfig(
        epochs=_take(mapping, "epochs", int, base.epochs),
        batch_size=_take(mapping, "batch_size", int, base.batch_size),
        learning_rate=_take(mapping, "learning_rate", float, base.learning_rate),
        seed=_take(mapping, "seed", int, base.seed),
        weights=weights,
        ablation=ablation,
        sampling_mode=_take(mapping, "sampling_mode", str, base.sampling_mode),
        k_rand=_take(mapping, "k_rand", int, base.k_rand),
        grad_clip=_take(mapping, "grad_clip", _parse_grad_clip, base.grad_clip),
        pooling_mode=_take(mapping, "pooling_mode", str, base.pooling_mode),
        ccl_normalized=_take(mapping, "ccl_normalized", bool, base.ccl_normalized),
        igl_normalized=_take(mapping, "igl_normalized", bool, base.igl_normalized),
        igl_two_sided=_take(mapping, "igl_two_sided", bool, base.igl_two_sided),
    )
    if seed_override is not None:
        cfg.seed = seed_override
    cfg.validate()
    return cfg
