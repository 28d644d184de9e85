from __future__ import annotations

import numpy as np
import pytest

from conftest import rel_err
from glora.baselines import (
    FedITRule,
    FlexLoRARule,
    GLoRARule,
    HetLoRARule,
    dense_average,
    fedit_aggregate,
    flexlora_aggregate,
    hetlora_aggregate,
    hetlora_padded_average,
    make_rule,
)
from glora.consensus import BudgetPolicy
from glora.errors import EmptyRound, HeterogeneousRanks
from glora.gauge import FactorPair, aggregation_inconsistency
from glora.readout import ClientProfile, ReadoutConfig


def _pairs(rng, ranks, weights=None, d_out=14, d_in=9):
    weights = weights or [1.0 / len(ranks)] * len(ranks)
    return [(w, FactorPair(rng.standard_normal((d_out, r)), rng.standard_normal((r, d_in)))) for w, r in zip(weights, ranks)]


class TestFedIT:
    def test_identical_pairs(self, rng):
        fp = _pairs(rng, [3])[0][1]
        out = fedit_aggregate([(0.3, fp), (0.7, fp)])
        np.testing.assert_allclose(out.b, fp.b, atol=1e-15)
        np.testing.assert_allclose(out.a, fp.a, atol=1e-15)

    def test_hand_case(self):
        i = np.eye(2)
        out = fedit_aggregate([(0.5, FactorPair(i, i)), (0.5, FactorPair(3 * i, i))])
        np.testing.assert_array_equal(out.b, 2 * i)
        np.testing.assert_array_equal(out.a, i)

    def test_gauge_stimulus_changes_product(self, rng):
        fp = _pairs(rng, [3])[0][1]
        gauged = FactorPair(fp.b * 2.0, fp.a * 0.5)
        out = fedit_aggregate([(0.5, fp), (0.5, gauged)])
        oracle = (1.5 * fp.b) @ (0.75 * fp.a)
        np.testing.assert_allclose(out.product(), oracle, atol=1e-12)
        assert np.linalg.norm(out.product() - fp.product()) > 0.1 * np.linalg.norm(fp.product())

    def test_heterogeneous(self, rng):
        with pytest.raises(HeterogeneousRanks):
            fedit_aggregate(_pairs(rng, [2, 3]))

    def test_empty(self):
        with pytest.raises(EmptyRound):
            fedit_aggregate([])


class TestHetLoRA:
    def test_homogeneous_equals_fedit(self, rng):
        pairs = _pairs(rng, [3, 3, 3], [0.2, 0.3, 0.5])
        a = hetlora_padded_average(pairs)
        b = fedit_aggregate(pairs)
        np.testing.assert_array_equal(a.b, b.b)
        np.testing.assert_array_equal(a.a, b.a)

    def test_single_client(self, rng):
        pairs = _pairs(rng, [4], [1.0])
        out = hetlora_aggregate(pairs, [ClientProfile(0, 4)])
        np.testing.assert_array_equal(out[0].b, pairs[0][1].b)

    def test_brute_force(self, rng):
        pairs = _pairs(rng, [1, 2], [0.4, 0.6])
        out = hetlora_aggregate(pairs, [ClientProfile(0, 1), ClientProfile(1, 2)])
        (w1, p1), (w2, p2) = pairs
        b = np.zeros((14, 2))
        a = np.zeros((2, 9))
        b[:, :1] += w1 * p1.b
        a[:1] += w1 * p1.a
        b += w2 * p2.b
        a += w2 * p2.a
        np.testing.assert_array_equal(out[1].b, b)
        np.testing.assert_array_equal(out[1].a, a)
        np.testing.assert_array_equal(out[0].b, b[:, :1])
        np.testing.assert_array_equal(out[0].a, a[:1])

    def test_client_rank_above_broadcast_is_zero_padded(self, rng):
        pairs = _pairs(rng, [2], [1.0])
        out = hetlora_aggregate(pairs, [ClientProfile(0, 4)])
        assert out[0].rank == 4 and not out[0].b[:, 2:].any()


class TestFlexLoRA:
    def test_single_rank_one(self, rng):
        pairs = _pairs(rng, [1], [1.0])
        out = flexlora_aggregate(pairs, [ClientProfile(0, 1)])
        assert rel_err(out[0].product(), pairs[0][1].product()) <= 1e-12

    def test_orthogonal_rank_one(self):
        e = np.eye(4)
        p1 = FactorPair(e[:, :1], 2 * e[:1, :3])
        p2 = FactorPair(e[:, 1:2], e[1:2, :3])
        pairs = [(0.5, p1), (0.5, p2)]
        out = flexlora_aggregate(pairs, [ClientProfile(0, 2), ClientProfile(1, 2)])
        avg = 0.5 * p1.product() + 0.5 * p2.product()
        for fp in out.values():
            assert rel_err(fp.product(), avg) <= 1e-9

    def test_gauge_invariant(self, rng):
        pairs = _pairs(rng, [2, 3, 4], [0.2, 0.3, 0.5])
        assert aggregation_inconsistency(FlexLoRARule(), pairs, n_trials=10) <= 1e-9

    def test_balanced_split(self, rng):
        pairs = _pairs(rng, [2, 3])
        out = flexlora_aggregate(pairs, [ClientProfile(0, 3)])[0]
        np.testing.assert_allclose(np.linalg.norm(out.b, axis=0), np.linalg.norm(out.a, axis=1), rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_glora_matches_flexlora_products(seed):
    rng = np.random.default_rng(seed)
    pairs = _pairs(rng, [2, 3, 2], [0.2, 0.5, 0.3])
    profiles = [ClientProfile(i, 8) for i in range(3)]
    glora = GLoRARule(BudgetPolicy(1.0), ReadoutConfig(1.0))
    flex = FlexLoRARule()
    entries = [(i, w, fp) for i, (w, fp) in enumerate(pairs)]
    gs, _ = glora.aggregate_round(entries, 0)
    fs, _ = flex.aggregate_round(entries, 0)
    for p in profiles:
        assert rel_err(glora.init_for(gs, p).product(), flex.init_for(fs, p).product()) <= 1e-8


class TestRules:
    def test_make_rule(self):
        assert isinstance(make_rule("glora", 0.5), GLoRARule)
        assert make_rule("glora", budget_rank=3).budget.mode == "fixed"
        assert isinstance(make_rule("fedit"), FedITRule)
        assert isinstance(make_rule("hetlora"), HetLoRARule)
        assert isinstance(make_rule("flexlora"), FlexLoRARule)
        with pytest.raises(ValueError):
            make_rule("fedavg")

    @pytest.mark.parametrize("kind", ["glora", "fedit", "hetlora", "flexlora"])
    def test_state_matrix_round_trip(self, rng, kind):
        rule = make_rule(kind)
        entries = [(i, w, fp) for i, (w, fp) in enumerate(_pairs(rng, [3, 3]))]
        state, _ = rule.aggregate_round(entries, 4)
        again = rule.state_from_matrices(rule.state_matrices(state), 4)
        np.testing.assert_array_equal(rule.dense(state), rule.dense(again))
        p = ClientProfile(0, 3)
        np.testing.assert_array_equal(rule.init_for(state, p).b, rule.init_for(again, p).b)

    def test_glora_drops_zero_update_and_renormalizes(self, rng):
        pairs = _pairs(rng, [2, 2], [0.5, 0.5])
        zero = FactorPair(np.zeros((14, 2)), rng.standard_normal((2, 9)))
        entries = [(0, 0.25, pairs[0][1]), (1, 0.5, zero), (2, 0.25, pairs[1][1])]
        state, uploads = GLoRARule().aggregate_round(entries, 0)
        assert set(uploads) == {0, 2}
        expected = 0.5 * pairs[0][1].product() + 0.5 * pairs[1][1].product()
        assert rel_err(GLoRARule().dense(state), expected) <= 1e-10

    def test_glora_all_zero(self, rng):
        zero = FactorPair(np.zeros((5, 1)), np.ones((1, 3)))
        with pytest.raises(EmptyRound):
            GLoRARule().aggregate_round([(0, 1.0, zero)], 0)

    def test_fedit_broadcast_rank_check(self, rng):
        rule = FedITRule()
        state, _ = rule.aggregate_round([(0, 1.0, _pairs(rng, [2])[0][1])], 0)
        with pytest.raises(HeterogeneousRanks):
            rule.init_for(state, ClientProfile(0, 3))

    def test_dense_average(self, rng):
        pairs = _pairs(rng, [1, 4], [0.3, 0.7])
        np.testing.assert_allclose(dense_average(pairs), 0.3 * pairs[0][1].product() + 0.7 * pairs[1][1].product())
