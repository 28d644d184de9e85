from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import projector, rel_err
from glora.consensus import (
    BudgetPolicy,
    Submission,
    aggregate,
    build_weighted_basis,
    consensus_basis,
    materialize,
    normalize_weights,
    project_coordinates,
)
from glora.errors import DimensionMismatch, EmptyRound
from glora.gauge import FactorPair, GaugeFixedUpdate, gauge_fix


def make_round(rng, n_clients=4, d_out=20, d_in=9, ranks=None):
    ranks = ranks or [int(r) for r in rng.integers(1, 5, size=n_clients)]
    w = normalize_weights(rng.uniform(0.5, 2.0, size=len(ranks)))
    pairs = [FactorPair(rng.standard_normal((d_out, r)), rng.standard_normal((r, d_in))) for r in ranks]
    subs = [Submission(i, float(wi), gauge_fix(fp)) for i, (wi, fp) in enumerate(zip(w, pairs))]
    dense = sum(wi * fp.product() for wi, fp in zip(w, pairs))
    return subs, dense


class TestBudget:
    @pytest.mark.parametrize(
        "ratio,total,d_out,expected",
        [(1.0, 10, 64, 10), (0.7, 10, 64, 7), (0.5, 9, 64, 5), (0.3, 40, 64, 12), (0.01, 10, 64, 1), (1.0, 80, 32, 32)],
    )
    def test_ratio(self, ratio, total, d_out, expected):
        assert BudgetPolicy(ratio).effective_rank(total, d_out) == expected

    def test_fixed(self):
        assert BudgetPolicy(mode="fixed", rank=5).effective_rank(3, 64) == 3
        assert BudgetPolicy(mode="fixed", rank=5).effective_rank(30, 64) == 5

    def test_invalid(self):
        for kwargs in ({"ratio": 0.0}, {"ratio": 1.5}, {"mode": "fixed"}, {"mode": "other"}):
            with pytest.raises(ValueError):
                BudgetPolicy(**kwargs)


def test_weighted_basis_order(rng):
    subs, _ = make_round(rng, 3)
    shuffled = [subs[2], subs[0], subs[1]]
    np.testing.assert_array_equal(build_weighted_basis(shuffled), build_weighted_basis(subs))
    assert build_weighted_basis(subs).shape[1] == sum(s.update.k for s in subs)


class TestConsensusBasis:
    def test_matches_dense_projector(self, backend, rng):
        m = rng.standard_normal((30, 8))
        u = consensus_basis(m, BudgetPolicy(mode="fixed", rank=5))
        vals, vecs = np.linalg.eigh(m @ m.T)
        top = vecs[:, np.argsort(vals)[::-1][:5]]
        assert np.linalg.norm(projector(u) - projector(top)) <= 1e-8
        np.testing.assert_allclose(u.T @ u, np.eye(5), atol=1e-13)

    def test_drops_null_directions(self, rng):
        b = rng.standard_normal((12, 2))
        m = np.column_stack([b, b])
        assert consensus_basis(m).shape[1] == 2

    def test_empty(self):
        with pytest.raises(EmptyRound):
            consensus_basis(np.zeros((4, 0)))
        with pytest.raises(EmptyRound):
            consensus_basis(np.zeros((4, 2)))


class TestAggregate:
    def test_exact_at_full_budget(self, backend, rng):
        subs, dense = make_round(rng)
        state = aggregate(subs, BudgetPolicy(1.0))
        assert rel_err(materialize(state), dense) <= 1e-10

    def test_is_projection_of_average(self, rng):
        subs, dense = make_round(rng, 5, 30, 11, [3, 3, 3, 3, 3])
        state = aggregate(subs, BudgetPolicy(mode="fixed", rank=6))
        p = projector(state.u_ref)
        assert rel_err(materialize(state), p @ dense) <= 1e-10

    def test_weights_must_sum_to_one(self, rng):
        subs, _ = make_round(rng, 2)
        bad = [Submission(s.client_id, 0.4, s.update) for s in subs]
        with pytest.raises(ValueError):
            aggregate(bad)

    def test_d_in_mismatch(self, rng):
        a = gauge_fix(FactorPair(rng.standard_normal((6, 2)), rng.standard_normal((2, 3))))
        b = gauge_fix(FactorPair(rng.standard_normal((6, 2)), rng.standard_normal((2, 4))))
        with pytest.raises(DimensionMismatch):
            aggregate([Submission(0, 0.5, a), Submission(1, 0.5, b)])

    def test_empty(self):
        with pytest.raises(EmptyRound):
            aggregate([])

    def test_order_independent(self, rng):
        subs, _ = make_round(rng, 4)
        a = aggregate(subs)
        b = aggregate(subs[::-1])
        assert a.u_ref.tobytes() == b.u_ref.tobytes() and a.z_g.tobytes() == b.z_g.tobytes()

    def test_project_coordinates_shape_check(self, rng):
        upd = GaugeFixedUpdate(np.eye(5)[:, :2], rng.standard_normal((2, 3)))
        with pytest.raises(DimensionMismatch):
            project_coordinates(np.eye(4)[:, :2], upd)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_overlapping_subspaces_still_exact(self, n, seed):
        rng = np.random.default_rng(seed)
        shared = rng.standard_normal((25, 3))
        w = normalize_weights(rng.uniform(0.1, 1, size=n))
        pairs = [FactorPair(shared @ rng.standard_normal((3, 2)), rng.standard_normal((2, 8))) for _ in range(n)]
        subs = [Submission(i, float(wi), gauge_fix(fp)) for i, (wi, fp) in enumerate(zip(w, pairs))]
        dense = sum(wi * fp.product() for wi, fp in zip(w, pairs))
        # rank([U_i]) <= 3 here, so budget 3 already recovers the average
        state = aggregate(subs, BudgetPolicy(mode="fixed", rank=3))
        assert rel_err(materialize(state), dense) <= 1e-9
        assert math.isclose(float(np.trace(state.u_ref.T @ state.u_ref)), state.rank, rel_tol=1e-12)


class TestWorkedExamples:
    def test_one_client_basis(self):
        upd = GaugeFixedUpdate(np.eye(3)[:, :1], np.ones((1, 2)))
        np.testing.assert_array_equal(build_weighted_basis([Submission(0, 1.0, upd)]), np.eye(3)[:, :1])

    def test_two_client_basis(self):
        e = np.eye(3)
        subs = [Submission(0, 0.25, GaugeFixedUpdate(e[:, :1], np.ones((1, 2)))),
                Submission(1, 0.75, GaugeFixedUpdate(e[:, 1:2], np.ones((1, 2))))]
        np.testing.assert_allclose(build_weighted_basis(subs), np.column_stack([0.5 * e[:, 0], np.sqrt(0.75) * e[:, 1]]))

    def test_basis_outer_is_projector_sum(self, rng):
        subs, _ = make_round(rng, 3)
        m = build_weighted_basis(subs)
        k = sum(s.weight * projector(s.update.u) for s in subs)
        assert np.linalg.norm(m @ m.T - k) <= 1e-12

    def test_single_axis(self):
        u = consensus_basis(np.eye(4)[:, :1], BudgetPolicy(mode="fixed", rank=1))
        np.testing.assert_array_equal(projector(u), np.diag([1.0, 0, 0, 0]))

    def test_two_axes_degenerate(self):
        m = np.sqrt(0.5) * np.eye(5)[:, :2]
        u = consensus_basis(m, BudgetPolicy(mode="fixed", rank=2))
        assert np.linalg.norm(projector(u) - np.diag([1.0, 1, 0, 0, 0])) <= 1e-10

    def test_seeded_dense_oracle(self, rng):
        m = rng.standard_normal((32, 6))
        vals, vecs = np.linalg.eigh(m @ m.T)
        order = np.argsort(vals)[::-1]
        assert vals[order[3]] - vals[order[4]] > 1e-6
        u = consensus_basis(m, BudgetPolicy(mode="fixed", rank=4))
        assert np.linalg.norm(projector(u) - projector(vecs[:, order[:4]])) <= 1e-8

    def test_contained_and_orthogonal_coordinates(self, rng):
        u_ref = np.eye(6)[:, :3]
        inside = GaugeFixedUpdate(np.eye(6)[:, 1:3], rng.standard_normal((2, 4)))
        outside = GaugeFixedUpdate(np.eye(6)[:, 4:6], rng.standard_normal((2, 4)))
        assert np.abs(u_ref @ project_coordinates(u_ref, inside) - inside.product()).max() <= 1e-10
        assert np.abs(project_coordinates(u_ref, outside)).max() <= 1e-12

    def test_seeded_projection(self, rng):
        subs, _ = make_round(rng, 3)
        u_ref = consensus_basis(build_weighted_basis(subs), BudgetPolicy(mode="fixed", rank=2))
        upd = subs[0].update
        z = project_coordinates(u_ref, upd)
        assert np.abs(u_ref @ z - projector(u_ref) @ upd.product()).max() <= 1e-10

    def test_single_client_full_budget(self, rng):
        subs, dense = make_round(rng, 1)
        subs = [Submission(0, 1.0, subs[0].update)]
        assert rel_err(materialize(aggregate(subs)), subs[0].update.product()) <= 1e-10

    def test_rank_one_shared_axis(self):
        e1 = np.eye(4)[:, :1]
        a1, a2 = np.array([[1.0, 2, 3]]), np.array([[3.0, -2, 1]])
        subs = [Submission(0, 0.5, GaugeFixedUpdate(e1, a1)), Submission(1, 0.5, GaugeFixedUpdate(e1, a2))]
        out = materialize(aggregate(subs, BudgetPolicy(mode="fixed", rank=1)))
        np.testing.assert_allclose(out, e1 @ (0.5 * a1 + 0.5 * a2), atol=1e-15)

    def test_materialize_norm(self, rng):
        subs, _ = make_round(rng)
        state = aggregate(subs)
        assert abs(np.linalg.norm(materialize(state)) - np.linalg.norm(state.z_g)) <= 1e-12 * np.linalg.norm(state.z_g)

    def test_zero_coordinates(self):
        from glora.consensus import ServerState
        np.testing.assert_array_equal(materialize(ServerState(np.eye(3)[:, :2], np.zeros((2, 2)))), np.zeros((3, 2)))
