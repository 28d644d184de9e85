from __future__ import annotations

import numpy as np
import pytest

from conftest import rel_err
from glora.baselines import make_rule
from glora.cli.config import ExperimentConfig
from glora.errors import Divergence, InvalidConfig
from glora.fedsim.experiment import (
    build_simulation,
    fresh_components,
    global_updates,
    initial_state,
    run_experiment,
    worker_count,
)
from glora.fedsim.sampling import RankAssignment, assign_ranks, sample_participants
from glora.fedsim.task import TaskConfig, generate_task
from glora.fedsim.training import dense_train, factor_gradients, local_train, sample_loss
from glora.gauge import FactorPair
from glora.linalg import numerical_rank


def central_differences(data, w0, b, a, eps=1e-5):
    def grad(x, f):
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + eps
            hi = f()
            x[idx] = orig - eps
            lo = f()
            x[idx] = orig
            g[idx] = (hi - lo) / (2 * eps)
        return g

    loss = lambda: sample_loss(data, w0, b, a)
    return grad(b, loss), grad(a, loss)


def max_rel(approx, exact):
    return float(np.max(np.abs(approx - exact) / np.maximum(np.abs(exact), 1e-8)))


class TestTask:
    def test_bases_orthonormal_and_orthogonal(self):
        task = generate_task(TaskConfig(d_out=20, d_in=10, k_shared=2, k_priv=3, n_clients=4), 5)
        s = task.shared_basis
        np.testing.assert_allclose(s.T @ s, np.eye(2), atol=1e-10)
        for p in task.private_bases:
            np.testing.assert_allclose(p.T @ p, np.eye(3), atol=1e-10)
            assert np.abs(s.T @ p).max() <= 1e-10

    def test_target_rank(self):
        task = generate_task(TaskConfig(d_out=20, d_in=10, k_shared=2, k_priv=3, n_clients=4), 5)
        for i in range(4):
            assert numerical_rank(task.target(i)) == 5

    def test_no_private_part_shares_column_space(self):
        task = generate_task(TaskConfig(d_out=16, d_in=8, k_shared=3, k_priv=0, n_clients=3), 1)
        proj = task.shared_basis @ task.shared_basis.T
        for i in range(3):
            t = task.target(i)
            assert np.abs(proj @ t - t).max() <= 1e-12

    def test_deterministic(self):
        cfg = TaskConfig(n_clients=3)
        a, b = generate_task(cfg, 9), generate_task(cfg, 9)
        assert a.w0.tobytes() == b.w0.tobytes()
        assert all(x.x.tobytes() == y.x.tobytes() for x, y in zip(a.train, b.train))
        assert generate_task(cfg, 10).w0.tobytes() != a.w0.tobytes()

    @pytest.mark.parametrize(
        "kwargs", [{"d_out": 1}, {"k_shared": 0}, {"k_shared": 20, "k_priv": 20}, {"eta": 1.5}, {"noise_std": -1.0}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidConfig):
            generate_task(TaskConfig(**kwargs), 0)

    def test_sufficient_statistics_match_samples(self, rng):
        task = generate_task(TaskConfig(d_out=8, d_in=5, noise_std=0.3, n_clients=2, samples=30), 3)
        data = task.train[1]
        b, a = rng.standard_normal((8, 2)), rng.standard_normal((2, 5))
        assert data.loss(b @ a) == pytest.approx(sample_loss(data, task.w0, b, a), rel=1e-10)


class TestTraining:
    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_match_finite_differences(self, seed):
        task = generate_task(TaskConfig(d_out=6, d_in=4, k_shared=1, k_priv=1, noise_std=0.1, samples=16, n_clients=1), seed)
        rng = np.random.default_rng(seed)
        b, a = rng.standard_normal((6, 3)), rng.standard_normal((3, 4))
        gb, ga = factor_gradients(task.train[0], b, a)
        fb, fa = central_differences(task.train[0], task.w0, b.copy(), a.copy())
        assert max_rel(fb, gb) <= 1e-5
        assert max_rel(fa, ga) <= 1e-5

    def test_lr_zero_returns_init(self, rng):
        task = generate_task(TaskConfig(n_clients=1), 0)
        init = FactorPair(rng.standard_normal((64, 2)), rng.standard_normal((2, 32)))
        out = local_train(task, 0, init, 5, 0.0)
        np.testing.assert_array_equal(out.b, init.b)
        np.testing.assert_array_equal(out.a, init.a)

    def test_stationary_at_target(self):
        task = generate_task(TaskConfig(d_out=12, d_in=8, k_shared=2, k_priv=1, n_clients=1, samples=64), 2)
        target = task.target(0)
        b = task.shared_basis @ np.eye(2, 3) + task.private_bases[0] @ np.eye(1, 3, 2)
        coords = np.vstack([task.shared_coords, task.private_coords[0]])
        init = FactorPair(b, coords)
        assert np.abs(init.product() - target).max() <= 1e-12
        out = local_train(task, 0, init, 10, 0.1)
        assert np.abs(out.b - init.b).max() <= 1e-12
        assert np.abs(out.a - init.a).max() <= 1e-12

    def test_divergence(self, rng):
        task = generate_task(TaskConfig(n_clients=1), 0)
        init = FactorPair(rng.standard_normal((64, 4)), rng.standard_normal((4, 32)))
        with pytest.raises(Divergence):
            local_train(task, 0, init, 200, 50.0)

    def test_bad_arguments(self, rng):
        task = generate_task(TaskConfig(n_clients=1), 0)
        init = FactorPair(np.zeros((64, 1)), np.ones((1, 32)))
        with pytest.raises(ValueError):
            local_train(task, 0, init, 0, 0.1)
        with pytest.raises(ValueError):
            local_train(task, 0, init, 1, -0.1)

    def test_dense_train_converges(self):
        task = generate_task(TaskConfig(d_out=16, d_in=8, n_clients=1, samples=200), 1)
        delta = dense_train(task, 0, np.zeros((16, 8)), 300, 0.5)
        assert rel_err(delta, task.target(0)) <= 1e-6


class TestSampling:
    def test_full(self):
        assert sample_participants(7, 1.0, 3, 0) == list(range(7))

    def test_count(self):
        ids = sample_participants(50, 0.1, 0, 0)
        assert len(ids) == 5 and len(set(ids)) == 5 and ids == sorted(ids)

    def test_at_least_one(self):
        assert len(sample_participants(5, 0.01, 0, 0)) == 1

    def test_deterministic(self):
        assert sample_participants(50, 0.2, 4, 1) == sample_participants(50, 0.2, 4, 1)
        rounds = {tuple(sample_participants(50, 0.2, t, 1)) for t in range(10)}
        assert len(rounds) > 1

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            sample_participants(5, 0.0, 0, 0)

    def test_roughly_uniform(self):
        counts = np.zeros(20)
        for t in range(2000):
            counts[sample_participants(20, 0.25, t, 3)] += 1
        assert np.abs(counts / 2000 - 0.25).max() < 0.04


class TestRanks:
    def test_single_level(self):
        assert set(assign_ranks(9, RankAssignment("uniform", (4,)), 0).values()) == {4}

    def test_uniform_five_levels(self):
        ranks = assign_ranks(50, RankAssignment("uniform"), 0)
        assert sorted(ranks) == list(range(50))
        assert [list(ranks.values()).count(r) for r in (2, 4, 8, 16, 32)] == [10] * 5

    def test_normal_counts(self):
        dist = RankAssignment("normal")
        ranks = list(assign_ranks(50, dist, 3).values())
        # oracle: floor(p n) per type, remainder to the modal (middle) type
        expected = [5, 10, 20, 10, 5]
        assert [ranks.count(r) for r in dist.levels] == expected
        assert dist.type_counts(50) == expected

    def test_leftover_goes_to_modal(self):
        dist = RankAssignment("heavy-tail")
        counts = dist.type_counts(7)
        assert sum(counts) == 7
        assert counts[0] == max(counts)

    def test_needs_proportions(self):
        with pytest.raises(InvalidConfig):
            RankAssignment("normal", (1, 2, 3)).resolved_proportions()
        with pytest.raises(InvalidConfig):
            RankAssignment("uniform", (1, 2), (0.5, 0.6)).resolved_proportions()

    def test_deterministic_and_positive(self):
        a = assign_ranks(30, RankAssignment("heavy-tail"), 11)
        assert a == assign_ranks(30, RankAssignment("heavy-tail"), 11)
        assert min(a.values()) >= 1


def test_fresh_components_revive_dead_directions(rng):
    b = np.zeros((6, 3))
    b[:, 0] = 1.0
    init = FactorPair(b, np.ones((3, 4)))
    out = fresh_components(init, 4, 4, 1.0, rng)
    assert out.rank == 4
    np.testing.assert_allclose(out.product(), init.product())
    assert not out.b[:, 1:].any()
    assert np.abs(out.a[1:]).min() > 0


def small_cfg(**kw) -> ExperimentConfig:
    base = dict(rule="glora", rounds=4, output="unused.csv", d_out=16, d_in=8, n_clients=6, rank_levels=(2, 4),
                eta=0.5, lr=0.3, local_steps=10, participation=0.5)
    base.update(kw)
    return ExperimentConfig(**base)


class TestExperiment:
    def test_zero_rounds(self):
        assert run_experiment(small_cfg(rounds=0)) == []

    def test_records(self):
        recs = run_experiment(small_cfg())
        assert [r.round for r in recs] == [1, 2, 3, 4]
        assert all(len(r.participant_ids) == 3 for r in recs)
        assert all(np.isfinite([r.eval_loss, r.recovery_error, r.wall_time_agg]).all() for r in recs)
        assert all(r.inconsistency is None and r.wall_time_agg == 0.0 for r in recs)

    def test_thread_count_independent(self, monkeypatch):
        cfg = small_cfg(layers=2)
        monkeypatch.setenv("GLORA_THREADS", "1")
        assert worker_count() == 1
        one = run_experiment(cfg)
        monkeypatch.setenv("GLORA_THREADS", "4")
        assert worker_count() == 4
        many = run_experiment(cfg)
        assert one == many

    @pytest.mark.parametrize("rule", ["glora", "hetlora", "flexlora"])
    def test_rules_run(self, rule):
        recs = run_experiment(small_cfg(rule=rule, track_inconsistency=True, inconsistency_trials=2))
        assert len(recs) == 4 and all(r.inconsistency is not None for r in recs)

    def test_fedit_runs_homogeneous(self):
        assert len(run_experiment(small_cfg(rule="fedit", rank_levels=(3,)))) == 4

    def test_histories_follow_participation(self):
        cfg = small_cfg(rounds=1)
        from glora.fedsim.experiment import run_round
        sim = build_simulation(cfg)
        state = initial_state(cfg)
        rec = run_round(sim, state)
        for cid, prof in state.profiles[0].items():
            assert (prof.history is not None) == (cid in rec.participant_ids)

    def test_timing_flag(self):
        recs = run_experiment(small_cfg(timing=True, rounds=1))
        assert recs[0].wall_time_agg > 0.0

    def test_single_client_recovery_tracks_dense_oracle(self):
        cfg = ExperimentConfig(rule="glora", rounds=50, output="x", d_out=32, d_in=16, k_shared=2, k_priv=2,
                               n_clients=1, rank_levels=(4,), lr=0.05, local_steps=3)
        errs = [r.recovery_error for r in run_experiment(cfg)]
        assert all(b <= a for a, b in zip(errs[2:], errs[3:]))
        assert errs[-1] < 0.05
        sim = build_simulation(cfg)
        delta = np.zeros((32, 16))
        for _ in range(cfg.rounds):
            delta = dense_train(sim.tasks[0], 0, delta, cfg.local_steps, cfg.lr)
        dense_err = rel_err(delta, sim.targets[0])
        assert errs[-1] <= 2 * dense_err

    def test_matches_flexlora_in_exact_regime(self):
        cfg = ExperimentConfig(rule="glora", rounds=5, output="x", eta=0.7, rank_levels=(8,), core_ratio=1.0,
                               lr=0.3, local_steps=30)
        g = global_updates(cfg)
        f = global_updates(cfg.replace(rule="flexlora"))
        for a, b in zip(g, f):
            assert rel_err(a[0], b[0]) <= 1e-6

    def test_gauge_injection_in_loop(self):
        cfg = ExperimentConfig(rule="glora", rounds=8, output="x", eta=0.7, rank_levels=(4,), lr=0.3, local_steps=30)
        base = [r.eval_loss for r in run_experiment(cfg)]
        gauged = [r.eval_loss for r in run_experiment(cfg.replace(inject_gauge=True))]
        assert max(abs(x - y) for x, y in zip(base, gauged)) <= 1e-6
        fedit = cfg.replace(rule="fedit")
        fb = [r.eval_loss for r in run_experiment(fedit)]
        fg = [r.eval_loss for r in run_experiment(fedit.replace(inject_gauge=True))]
        assert max(abs(x - y) for x, y in zip(fb, fg)) > 1e-3
