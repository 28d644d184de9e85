"""Flat ``key = value`` experiment configuration files.

One pair per line; ``#`` starts a comment. Unknown keys are rejected and all
values are range-checked before a run starts.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from glora.baselines import RULE_KINDS
from glora.errors import ParseError, ValidationError
from glora.fedsim.sampling import DEFAULT_PROPORTIONS

REQUIRED = ("rule", "rounds", "output")
RANK_DISTRIBUTIONS = tuple(DEFAULT_PROPORTIONS)


@dataclass(frozen=True)
class ExperimentConfig:
    rule: str
    rounds: int
    output: str
    # aggregation
    ratio: float = 1.0
    budget_rank: int = 0
    core_ratio: float = 0.5
    # task
    d_out: int = 64
    d_in: int = 32
    k_shared: int = 2
    k_priv: int = 2
    eta: float = 0.5
    noise_std: float = 0.0
    samples: int = 128
    eval_samples: int = 128
    layers: int = 1
    # federation
    n_clients: int = 10
    participation: float = 1.0
    rank_dist: str = "uniform"
    rank_levels: tuple[int, ...] = (4,)
    rank_proportions: tuple[float, ...] = ()
    # local optimisation
    lr: float = 0.1
    local_steps: int = 10
    init_scale: float = 1.0
    # run control
    seed: int = 0
    inject_gauge: bool = False
    gauge_cond_max: float = 100.0
    track_inconsistency: bool = False
    inconsistency_trials: int = 5
    timing: bool = False
    checkpoint_dir: str = ""
    checkpoint_every: int = 0

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(key: str, raw: str) -> Any:
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple[int"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {raw!r} as {kind}", key) from None


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ParseError(f"expected 'key = value', got {content!r}", lineno)
        key, value = (part.strip() for part in content.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno)
        if key in pairs:
            raise ParseError(f"duplicate key {key!r}", lineno)
        pairs[key] = value
    return pairs


def config_from_pairs(pairs: dict[str, str]) -> ExperimentConfig:
    unknown = sorted(set(pairs) - set(_FIELDS))
    if unknown:
        raise ValidationError(f"unknown key {unknown[0]!r}", unknown[0])
    missing = [k for k in REQUIRED if k not in pairs]
    if missing:
        raise ValidationError(f"missing required key {missing[0]!r}", missing[0])
    values = {k: _convert(k, v) for k, v in pairs.items()}
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return config_from_pairs(parse_pairs(text))


def loads_config(text: str) -> ExperimentConfig:
    return config_from_pairs(parse_pairs(text))


def _check(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ValidationError(f"{key} {message}", key)


def validate(cfg: ExperimentConfig) -> None:
    _check(cfg.rule in RULE_KINDS, "rule", f"must be one of {', '.join(RULE_KINDS)}")
    _check(cfg.rounds >= 0, "rounds", "must be >= 0")
    _check(bool(cfg.output), "output", "must be a non-empty path")
    _check(0.0 < cfg.ratio <= 1.0, "ratio", "must be in (0,1]")
    _check(cfg.budget_rank >= 0, "budget_rank", "must be >= 0 (0 uses ratio)")
    _check(0.0 <= cfg.core_ratio <= 1.0, "core_ratio", "must be in [0,1]")
    _check(cfg.d_out >= 2, "d_out", "must be >= 2")
    _check(cfg.d_in >= 2, "d_in", "must be >= 2")
    _check(cfg.k_shared >= 1, "k_shared", "must be >= 1")
    _check(cfg.k_priv >= 0, "k_priv", "must be >= 0")
    _check(cfg.k_shared + cfg.k_priv <= min(cfg.d_out, cfg.d_in), "k_priv",
           "k_shared + k_priv must not exceed min(d_out, d_in)")
    _check(0.0 <= cfg.eta <= 1.0, "eta", "must be in [0,1]")
    _check(cfg.noise_std >= 0.0, "noise_std", "must be >= 0")
    _check(cfg.samples >= 1, "samples", "must be >= 1")
    _check(cfg.eval_samples >= 1, "eval_samples", "must be >= 1")
    _check(cfg.layers >= 1, "layers", "must be >= 1")
    _check(cfg.n_clients >= 1, "n_clients", "must be >= 1")
    _check(0.0 < cfg.participation <= 1.0, "participation", "must be in (0,1]")
    _check(cfg.rank_dist in RANK_DISTRIBUTIONS, "rank_dist", f"must be one of {', '.join(RANK_DISTRIBUTIONS)}")
    _check(len(cfg.rank_levels) >= 1 and all(r >= 1 for r in cfg.rank_levels), "rank_levels",
           "must list ranks >= 1")
    _check(max(cfg.rank_levels) <= min(cfg.d_out, cfg.d_in), "rank_levels", "must not exceed min(d_out, d_in)")
    if cfg.rank_proportions:
        _check(len(cfg.rank_proportions) == len(cfg.rank_levels), "rank_proportions",
               "must have one entry per rank level")
        _check(all(p >= 0 for p in cfg.rank_proportions) and abs(sum(cfg.rank_proportions) - 1.0) <= 1e-9,
               "rank_proportions", "must be nonnegative and sum to 1")
    elif len(cfg.rank_levels) not in (1, 5):
        _check(cfg.rank_dist == "uniform", "rank_proportions",
               "must be given unless there are 1 or 5 rank levels or rank_dist is uniform")
    _check(cfg.lr >= 0.0, "lr", "must be >= 0")
    _check(cfg.local_steps >= 1, "local_steps", "must be >= 1")
    _check(cfg.init_scale > 0.0, "init_scale", "must be > 0")
    _check(cfg.seed >= 0, "seed", "must be >= 0")
    _check(cfg.gauge_cond_max >= 1.0, "gauge_cond_max", "must be >= 1")
    _check(cfg.inconsistency_trials >= 1, "inconsistency_trials", "must be >= 1")
    _check(cfg.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")
    _check(cfg.checkpoint_every == 0 or bool(cfg.checkpoint_dir), "checkpoint_dir",
           "must be set when checkpoint_every > 0")
    if cfg.rule == "fedit":
        _check(len(set(cfg.rank_levels)) == 1, "rank_levels", "must hold a single rank for fedit")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def dumps_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def write_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg), encoding="utf-8")
