"""Aggregation wall-time scaling benchmark.

Bench config (flat ``key = value``)::

    points = 512x512,1024x1024     # d_out x d_in per point
    r_sigma = 64                   # total participating rank
    client_rank = 8                # r_sigma / client_rank clients
    rules = glora,flexlora
    repeats = 7
    seed = 0
    output = bench.csv

GLoRA is timed on ``aggregate`` over pre-gauge-fixed submissions (clients do
the QR); FlexLoRA on ``flexlora_aggregate`` over the raw factors, which
includes building the dense average and its SVD.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from glora.baselines import flexlora_aggregate
from glora.cli.config import parse_pairs
from glora.consensus import BudgetPolicy, Submission, aggregate
from glora.errors import ValidationError
from glora.gauge import FactorPair, gauge_fix
from glora.readout import ClientProfile

BENCH_HEADER = "rule,d_out,d_in,r_sigma,clients,median_s,growth_ratio"
BENCH_RULES = ("glora", "flexlora")


@dataclass(frozen=True)
class BenchConfig:
    points: tuple[tuple[int, int], ...]
    r_sigma: int = 64
    client_rank: int = 8
    rules: tuple[str, ...] = BENCH_RULES
    repeats: int = 7
    seed: int = 0
    output: str = "bench.csv"

    @property
    def n_clients(self) -> int:
        return self.r_sigma // self.client_rank


@dataclass(frozen=True)
class BenchRow:
    rule: str
    d_out: int
    d_in: int
    r_sigma: int
    clients: int
    median_s: float
    growth_ratio: float | None


def _parse_point(text: str) -> tuple[int, int]:
    try:
        d_out, d_in = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"points: bad point {text!r}, expected DOUTxDIN", "points") from None
    if d_out < 1 or d_in < 1:
        raise ValidationError("points: dimensions must be >= 1", "points")
    return d_out, d_in


def bench_config_from_text(text: str) -> BenchConfig:
    pairs = parse_pairs(text)
    known = {"points", "r_sigma", "client_rank", "rules", "repeats", "seed", "output"}
    unknown = sorted(set(pairs) - known)
    if unknown:
        raise ValidationError(f"unknown key {unknown[0]!r}", unknown[0])
    if "points" not in pairs:
        raise ValidationError("missing required key 'points'", "points")
    kwargs: dict[str, object] = {"points": tuple(_parse_point(p.strip()) for p in pairs["points"].split(",") if p.strip())}
    for key in ("r_sigma", "client_rank", "repeats", "seed"):
        if key in pairs:
            try:
                kwargs[key] = int(pairs[key])
            except ValueError:
                raise ValidationError(f"{key}: cannot parse {pairs[key]!r} as int", key) from None
    if "rules" in pairs:
        kwargs["rules"] = tuple(r.strip() for r in pairs["rules"].split(",") if r.strip())
    if "output" in pairs:
        kwargs["output"] = pairs["output"]
    cfg = BenchConfig(**kwargs)
    if not cfg.points:
        raise ValidationError("points must list at least one point", "points")
    if cfg.client_rank < 1 or cfg.r_sigma < cfg.client_rank or cfg.r_sigma % cfg.client_rank:
        raise ValidationError("r_sigma must be a positive multiple of client_rank", "r_sigma")
    if any(r not in BENCH_RULES for r in cfg.rules) or not cfg.rules:
        raise ValidationError(f"rules must be drawn from {', '.join(BENCH_RULES)}", "rules")
    if cfg.repeats < 1:
        raise ValidationError("repeats must be >= 1", "repeats")
    if any(min(p) < cfg.client_rank for p in cfg.points):
        raise ValidationError("every dimension must be >= client_rank", "points")
    return cfg


def load_bench_config(path) -> BenchConfig:
    return bench_config_from_text(Path(path).read_text(encoding="utf-8"))


def _stimulus(d_out: int, d_in: int, cfg: BenchConfig):
    rng = np.random.default_rng([cfg.seed, d_out, d_in])
    m = cfg.n_clients
    pairs = [
        (1.0 / m, FactorPair(rng.standard_normal((d_out, cfg.client_rank)), rng.standard_normal((cfg.client_rank, d_in))))
        for _ in range(m)
    ]
    # exact weights summing to one
    pairs[-1] = (1.0 - (m - 1) * (1.0 / m), pairs[-1][1])
    return pairs


def _median_time(fn, repeats: int) -> float:
    start = time.perf_counter()
    fn()
    first = time.perf_counter() - start
    # a warm-up run only matters when it is short enough for cold caches to show
    times = [first] if first > 0.1 else []
    while len(times) < repeats:
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def time_point(rule: str, d_out: int, d_in: int, cfg: BenchConfig) -> float:
    pairs = _stimulus(d_out, d_in, cfg)
    if rule == "glora":
        subs = [Submission(i, w, gauge_fix(fp)) for i, (w, fp) in enumerate(pairs)]
        budget = BudgetPolicy(1.0)
        return _median_time(lambda: aggregate(subs, budget), cfg.repeats)
    profiles = [ClientProfile(i, cfg.client_rank) for i in range(len(pairs))]
    return _median_time(lambda: flexlora_aggregate(pairs, profiles), cfg.repeats)


def run_bench(cfg: BenchConfig) -> list[BenchRow]:
    rows: list[BenchRow] = []
    for rule in cfg.rules:
        prev = None
        for d_out, d_in in cfg.points:
            median = time_point(rule, d_out, d_in, cfg)
            growth = None if prev is None else median / prev
            rows.append(BenchRow(rule, d_out, d_in, cfg.r_sigma, cfg.n_clients, median, growth))
            prev = median
    return rows


def format_bench_row(row: BenchRow) -> str:
    growth = "" if row.growth_ratio is None else "%.17g" % row.growth_ratio
    return f"{row.rule},{row.d_out},{row.d_in},{row.r_sigma},{row.clients},{'%.17g' % row.median_s},{growth}"


def write_bench(rows: list[BenchRow], path) -> None:
    text = BENCH_HEADER + "\n" + "".join(format_bench_row(r) + "\n" for r in rows)
    Path(path).write_text(text, encoding="utf-8")
