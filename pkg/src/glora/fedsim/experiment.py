"""The federated round loop on synthetic tasks.

Per round: sample participants, read out each participant's initialization
from the latest server state, train locally, aggregate with the configured
rule, refresh client histories, and record metrics. All randomness is keyed
on ``(seed, purpose, round, layer, client)`` so a run is reproducible from
any round boundary and independent of the worker count.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Hashable

import numpy as np

from glora.baselines import AggregationRule, make_rule
from glora.cli.config import ExperimentConfig
from glora.fedsim.sampling import RankAssignment, assign_ranks, sample_participants
from glora.fedsim.task import SyntheticTask, TaskConfig, generate_task
from glora.fedsim.training import local_train
from glora.gauge import FactorPair, aggregation_inconsistency, apply_gauge, random_gauge
from glora.readout import ClientProfile

DEAD_COMPONENT_TOL = 1e-10

_TASK, _INIT, _GAUGE, _INCONS = 1, 2, 3, 4


@dataclass
class RoundRecord:
    round: int
    participant_ids: tuple[int, ...]
    eval_loss: float
    recovery_error: float
    wall_time_agg: float
    inconsistency: float | None = None


@dataclass
class RunState:
    """Everything needed to continue a run at ``next_round``."""

    config: ExperimentConfig
    next_round: int
    layer_states: list[object | None]
    profiles: list[dict[int, ClientProfile]]

    @property
    def ranks(self) -> dict[int, int]:
        return {cid: p.rank for cid, p in self.profiles[0].items()}


@dataclass
class Simulation:
    config: ExperimentConfig
    rule: AggregationRule
    tasks: list[SyntheticTask]
    weights_all: np.ndarray
    targets: list[np.ndarray] = field(repr=False)


def worker_count() -> int:
    env = os.environ.get("GLORA_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def task_config(cfg: ExperimentConfig) -> TaskConfig:
    return TaskConfig(cfg.d_out, cfg.d_in, cfg.k_shared, cfg.k_priv, cfg.eta, cfg.noise_std,
                      cfg.samples, cfg.eval_samples, cfg.n_clients)


def rank_assignment(cfg: ExperimentConfig) -> RankAssignment:
    return RankAssignment(cfg.rank_dist, tuple(cfg.rank_levels), tuple(cfg.rank_proportions) or None)


def rule_for(cfg: ExperimentConfig) -> AggregationRule:
    return make_rule(cfg.rule, cfg.ratio, cfg.core_ratio, cfg.budget_rank or None)


def build_simulation(cfg: ExperimentConfig) -> Simulation:
    tcfg = task_config(cfg)
    tasks = [generate_task(tcfg, seed=int(np.random.SeedSequence([cfg.seed, _TASK, layer]).generate_state(1)[0]))
             for layer in range(cfg.layers)]
    counts = np.array([d.n for d in tasks[0].train], dtype=np.float64)
    weights_all = counts / counts.sum()
    targets = [t.weighted_target(weights_all) for t in tasks]
    return Simulation(cfg, rule_for(cfg), tasks, weights_all, targets)


def initial_state(cfg: ExperimentConfig) -> RunState:
    ranks = assign_ranks(cfg.n_clients, rank_assignment(cfg), cfg.seed)
    profiles = [
        {cid: ClientProfile(cid, ranks[cid], cfg.samples) for cid in range(cfg.n_clients)}
        for _ in range(cfg.layers)
    ]
    return RunState(cfg, 0, [None] * cfg.layers, profiles)


def _rng(cfg: ExperimentConfig, purpose: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, purpose, *keys])


def fresh_components(init: FactorPair, rank: int, d_in: int, scale: float, rng: np.random.Generator) -> FactorPair:
    """Pad or revive an initialization to exactly ``rank`` trainable components.

    Missing or numerically dead components (zero column of B and zero row of
    A) get ``B = 0`` and a Gaussian row of A, which keeps the product
    unchanged while restoring a nonzero gradient.
    """
    d_out = init.b.shape[0]
    k = min(init.rank, rank)
    b = np.zeros((d_out, rank))
    a = np.zeros((rank, d_in))
    b[:, :k] = init.b[:, :k]
    a[:k] = init.a[:k]
    strength = np.linalg.norm(b, axis=0) * np.linalg.norm(a, axis=1)
    top = strength.max() if strength.size else 0.0
    dead = strength <= DEAD_COMPONENT_TOL * top if top > 0 else np.ones(rank, dtype=bool)
    noise = rng.standard_normal((rank, d_in)) * (scale / math.sqrt(d_in))
    b[:, dead] = 0.0
    a[dead] = noise[dead]
    return FactorPair(b, a, init.layer_id)


def _client_init(sim: Simulation, state: RunState, layer: int, cid: int, t: int) -> FactorPair:
    cfg = sim.config
    profile = state.profiles[layer][cid]
    rng = _rng(cfg, _INIT, t, layer, cid)
    server = state.layer_states[layer]
    if server is None:
        base = FactorPair(np.zeros((cfg.d_out, 1)), np.zeros((1, cfg.d_in)), layer)
    else:
        base = sim.rule.init_for(server, profile, layer)
    return fresh_components(base, profile.rank, cfg.d_in, cfg.init_scale, rng)


def _train_client(sim: Simulation, state: RunState, layer: int, cid: int, t: int) -> FactorPair:
    cfg = sim.config
    init = _client_init(sim, state, layer, cid, t)
    trained = local_train(sim.tasks[layer], cid, init, cfg.local_steps, cfg.lr)
    if cfg.inject_gauge:
        seed = int(_rng(cfg, _GAUGE, t, layer, cid).integers(2**63))
        trained = apply_gauge(trained, random_gauge(trained.rank, seed, cfg.gauge_cond_max))
    return trained


def run_round(sim: Simulation, state: RunState, pool: ThreadPoolExecutor | None = None) -> RoundRecord:
    """Advance ``state`` by one round in place and return its record."""
    cfg = sim.config
    t = state.next_round
    participants = sample_participants(cfg.n_clients, cfg.participation, t, cfg.seed)
    counts = np.array([state.profiles[0][c].sample_count for c in participants], dtype=np.float64)
    weights = counts / counts.sum()
    losses, errors, agg_time, incons = [], [], 0.0, []
    for layer in range(cfg.layers):
        jobs = [(layer, cid) for cid in participants]
        if pool is None:
            trained = [_train_client(sim, state, layer, cid, t) for _, cid in jobs]
        else:
            trained = list(pool.map(lambda job: _train_client(sim, state, job[0], job[1], t), jobs))
        entries = [(cid, float(w), fp) for cid, w, fp in zip(participants, weights, trained)]
        start = time.perf_counter()
        new_state, uploads = sim.rule.aggregate_round(entries, t)
        elapsed = time.perf_counter() - start
        agg_time += elapsed
        state.layer_states[layer] = new_state
        if uploads:
            for cid, upd in uploads.items():
                state.profiles[layer][cid].history = upd.u
        dense = sim.rule.dense(new_state)
        task = sim.tasks[layer]
        losses.append(task.eval_mse(dense, sim.weights_all))
        target = sim.targets[layer]
        errors.append(float(np.linalg.norm(dense - target) / max(np.linalg.norm(target), 1e-300)))
        if cfg.track_inconsistency:
            seed = int(_rng(cfg, _INCONS, t, layer).integers(2**63))
            pairs = [(w, fp) for _, w, fp in entries]
            incons.append(aggregation_inconsistency(sim.rule, pairs, cfg.inconsistency_trials,
                                                    cfg.gauge_cond_max, seed))
    state.next_round = t + 1
    return RoundRecord(
        round=t + 1,
        participant_ids=tuple(participants),
        eval_loss=float(np.mean(losses)),
        recovery_error=float(np.mean(errors)),
        wall_time_agg=agg_time if cfg.timing else 0.0,
        inconsistency=max(incons) if incons else None,
    )


def run_experiment(
    cfg: ExperimentConfig,
    state: RunState | None = None,
    on_round: Callable[[RoundRecord, RunState], None] | None = None,
) -> list[RoundRecord]:
    """Run rounds ``state.next_round .. cfg.rounds - 1``; records are 1-based by round."""
    sim = build_simulation(cfg)
    state = state if state is not None else initial_state(cfg)
    records: list[RoundRecord] = []
    workers = worker_count()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while state.next_round < cfg.rounds:
            record = run_round(sim, state, pool)
            records.append(record)
            if on_round is not None:
                on_round(record, state)
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def global_updates(cfg: ExperimentConfig, rounds: int | None = None) -> list[list[np.ndarray]]:
    """Per-round materialized global updates (per layer); used to compare rules."""
    sim = build_simulation(cfg)
    state = initial_state(cfg)
    out = []
    for _ in range(cfg.rounds if rounds is None else rounds):
        run_round(sim, state)
        out.append([sim.rule.dense(s) for s in state.layer_states])
    return out


ClientId = Hashable
