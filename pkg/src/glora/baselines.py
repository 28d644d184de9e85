"""Aggregation rules: GLoRA and the factor/dense baselines it is compared against.

Every rule exposes the same round interface so the simulator can swap them:

* ``aggregate_round(entries, round)`` with ``entries`` a list of
  ``(client_id, weight, FactorPair)`` returns ``(state, uploads)``;
* ``dense(state)`` materializes the global update for metrics;
* ``init_for(state, profile)`` reads out a client's next initialization;
* ``global_update(pairs)`` is the one-shot ``[(weight, FactorPair)] -> ΔW``
  map used by ``aggregation_inconsistency``.
"""
from __future__ import annotations

import math
from typing import Hashable, Sequence

import numpy as np

from glora.consensus import BudgetPolicy, ServerState, Submission, aggregate, materialize
from glora.errors import EmptyRound, HeterogeneousRanks, ZeroUpdate
from glora.gauge import FactorPair, GaugeFixedUpdate, gauge_fix
from glora.linalg import DEFAULT_RANK_TOL
from glora.linalg.core import _fix_signs
from glora.readout import ClientProfile, ReadoutConfig, SpectralState, readout_one, spectral_readout

RULE_KINDS = ("glora", "fedit", "hetlora", "flexlora")


def _check_weights(pairs):
    w = np.array([p[0] for p in pairs], dtype=np.float64)
    if not len(w):
        raise EmptyRound("no submissions")
    if (w < 0).any() or abs(math.fsum(w) - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    return w


def fedit_aggregate(pairs: Sequence[tuple[float, FactorPair]]) -> FactorPair:
    """Weighted average of B and of A separately (homogeneous ranks only)."""
    w = _check_weights(pairs)
    ranks = {fp.rank for _, fp in pairs}
    if len(ranks) != 1:
        raise HeterogeneousRanks(f"FedIT needs equal ranks, got {sorted(ranks)}")
    b = sum(wi * fp.b for wi, (_, fp) in zip(w, pairs))
    a = sum(wi * fp.a for wi, (_, fp) in zip(w, pairs))
    return FactorPair(b, a, pairs[0][1].layer_id)


def _pad(fp: FactorPair, r: int) -> tuple[np.ndarray, np.ndarray]:
    b = np.zeros((fp.b.shape[0], r))
    a = np.zeros((r, fp.a.shape[1]))
    b[:, : fp.rank] = fp.b
    a[: fp.rank] = fp.a
    return b, a


def hetlora_padded_average(pairs: Sequence[tuple[float, FactorPair]]) -> FactorPair:
    w = _check_weights(pairs)
    r_max = max(fp.rank for _, fp in pairs)
    b = np.zeros((pairs[0][1].b.shape[0], r_max))
    a = np.zeros((r_max, pairs[0][1].a.shape[1]))
    for wi, (_, fp) in zip(w, pairs):
        pb, pa = _pad(fp, r_max)
        b += wi * pb
        a += wi * pa
    return FactorPair(b, a, pairs[0][1].layer_id)


def _truncate(fp: FactorPair, r: int) -> FactorPair:
    if r <= fp.rank:
        return FactorPair(fp.b[:, :r], fp.a[:r], fp.layer_id)
    b, a = _pad(fp, r)
    return FactorPair(b, a, fp.layer_id)


def hetlora_aggregate(
    pairs: Sequence[tuple[float, FactorPair]], profiles: Sequence[ClientProfile]
) -> dict[Hashable, FactorPair]:
    """Zero-pad to the largest rank, average, and give each client its leading ``r_i`` slice."""
    avg = hetlora_padded_average(pairs)
    return {p.client_id: _truncate(avg, p.rank) for p in profiles}


def dense_average(pairs: Sequence[tuple[float, FactorPair]]) -> np.ndarray:
    w = _check_weights(pairs)
    out = np.zeros((pairs[0][1].b.shape[0], pairs[0][1].a.shape[1]))
    for wi, (_, fp) in zip(w, pairs):
        out += wi * (fp.b @ fp.a)
    return out


def _dense_spectrum(dense: np.ndarray) -> SpectralState:
    # LAPACK SVD: the full dense decomposition is the cost this baseline is measured by
    u, s, vt = np.linalg.svd(dense, full_matrices=False)
    v = np.ascontiguousarray(vt.T)
    u = np.ascontiguousarray(u)
    _fix_signs(u, v)
    return SpectralState(u, s, v)


def _spectral_split(spec: SpectralState, r: int, layer_id) -> FactorPair:
    k = min(r, spec.length)
    root = np.sqrt(spec.sigma[:k])
    return FactorPair(spec.u_s[:, :k] * root, (spec.v[:, :k] * root).T, layer_id)


def flexlora_aggregate(
    pairs: Sequence[tuple[float, FactorPair]], profiles: Sequence[ClientProfile]
) -> dict[Hashable, FactorPair]:
    """Dense weighted update, thin SVD, balanced top-``r_i`` split per client."""
    spec = _dense_spectrum(dense_average(pairs))
    layer = pairs[0][1].layer_id
    return {p.client_id: _spectral_split(spec, p.rank, layer) for p in profiles}


class AggregationRule:
    kind = "base"

    def global_update(self, pairs):
        entries = [(i, w, fp) for i, (w, fp) in enumerate(pairs)]
        state, _ = self.aggregate_round(entries, 0)
        return self.dense(state)

    def aggregate_round(self, entries, round):
        raise NotImplementedError

    def dense(self, state) -> np.ndarray:
        raise NotImplementedError

    def init_for(self, state, profile: ClientProfile, layer_id=0) -> FactorPair:
        raise NotImplementedError

    # checkpoint support: state <-> list of matrices
    def state_matrices(self, state) -> list[np.ndarray]:
        raise NotImplementedError

    def state_from_matrices(self, mats: list[np.ndarray], round: int):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class GLoRARule(AggregationRule):
    kind = "glora"

    def __init__(self, budget: BudgetPolicy = BudgetPolicy(), readout: ReadoutConfig = ReadoutConfig(),
                 rank_tol: float = DEFAULT_RANK_TOL):
        self.budget = budget
        self.readout = readout
        self.rank_tol = rank_tol

    def gauge_fix_entries(self, entries):
        fixed = []
        for cid, w, fp in entries:
            try:
                fixed.append((cid, w, gauge_fix(fp, self.rank_tol)))
            except ZeroUpdate:
                continue
        if not fixed:
            raise EmptyRound("every client update is numerically zero")
        total = math.fsum(w for _, w, _ in fixed)
        return [(cid, w / total, upd) for cid, w, upd in fixed]

    def aggregate_round(self, entries, round):
        fixed = self.gauge_fix_entries(entries)
        subs = [Submission(cid, w, upd) for cid, w, upd in fixed]
        state = aggregate(subs, self.budget, round)
        uploads: dict[Hashable, GaugeFixedUpdate] = {cid: upd for cid, _, upd in fixed}
        return _GLoRAState(state), uploads

    def dense(self, state):
        return materialize(state.server)

    def init_for(self, state, profile, layer_id=0):
        return readout_one(state.spectrum, profile, self.readout, layer_id)

    def state_matrices(self, state):
        return [state.server.u_ref, state.server.z_g]

    def state_from_matrices(self, mats, round):
        return _GLoRAState(ServerState(mats[0], mats[1], round))

    def __repr__(self):
        return f"GLoRARule(budget={self.budget!r}, readout={self.readout!r})"


class _GLoRAState:
    """Server state plus its lazily computed spectral form."""

    def __init__(self, server: ServerState):
        self.server = server
        self._spectrum = None

    @property
    def spectrum(self) -> SpectralState:
        if self._spectrum is None:
            self._spectrum = spectral_readout(self.server)
        return self._spectrum


class FedITRule(AggregationRule):
    kind = "fedit"

    def aggregate_round(self, entries, round):
        return fedit_aggregate([(w, fp) for _, w, fp in entries]), None

    def dense(self, state):
        return state.product()

    def init_for(self, state, profile, layer_id=0):
        if profile.rank != state.rank:
            raise HeterogeneousRanks(f"FedIT broadcast has rank {state.rank}, client wants {profile.rank}")
        return FactorPair(state.b.copy(), state.a.copy(), layer_id)

    def state_matrices(self, state):
        return [state.b, state.a]

    def state_from_matrices(self, mats, round):
        return FactorPair(mats[0], mats[1])


class HetLoRARule(AggregationRule):
    kind = "hetlora"

    def aggregate_round(self, entries, round):
        return hetlora_padded_average([(w, fp) for _, w, fp in entries]), None

    def dense(self, state):
        return state.product()

    def init_for(self, state, profile, layer_id=0):
        out = _truncate(state, profile.rank)
        return FactorPair(out.b, out.a, layer_id)

    def state_matrices(self, state):
        return [state.b, state.a]

    def state_from_matrices(self, mats, round):
        return FactorPair(mats[0], mats[1])


class FlexLoRARule(AggregationRule):
    kind = "flexlora"

    def aggregate_round(self, entries, round):
        dense = dense_average([(w, fp) for _, w, fp in entries])
        return _FlexState(dense), None

    def dense(self, state):
        return state.dense

    def init_for(self, state, profile, layer_id=0):
        return _spectral_split(state.spectrum, profile.rank, layer_id)

    def state_matrices(self, state):
        return [state.dense]

    def state_from_matrices(self, mats, round):
        return _FlexState(mats[0])


class _FlexState:
    def __init__(self, dense: np.ndarray):
        self.dense = dense
        self._spectrum = None

    @property
    def spectrum(self) -> SpectralState:
        if self._spectrum is None:
            self._spectrum = _dense_spectrum(self.dense)
        return self._spectrum


def make_rule(kind: str, ratio: float = 1.0, core_ratio: float = 0.5, budget_rank: int | None = None) -> AggregationRule:
    if kind == "glora":
        budget = BudgetPolicy(ratio=ratio) if budget_rank is None else BudgetPolicy(mode="fixed", rank=budget_rank)
        return GLoRARule(budget, ReadoutConfig(core_ratio))
    if kind == "fedit":
        return FedITRule()
    if kind == "hetlora":
        return HetLoRARule()
    if kind == "flexlora":
        return FlexLoRARule()
    raise ValueError(f"unknown rule {kind!r}; expected one of {RULE_KINDS}")
