"""Rank-compatible readout of the server state for heterogeneous clients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from glora.consensus import ServerState
from glora.errors import DimensionMismatch
from glora.gauge import FactorPair
from glora.linalg import thin_svd

DEFAULT_CORE_RATIO = 0.5
# alignment scores lie in [0, 1]; closer than this they count as tied
SCORE_TIE_DECIMALS = 12


@dataclass(frozen=True)
class SpectralState:
    u_s: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def length(self) -> int:
        return self.sigma.shape[0]


@dataclass
class ClientProfile:
    client_id: Hashable
    rank: int
    sample_count: int = 1
    history: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("client rank must be >= 1")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass(frozen=True)
class ReadoutConfig:
    core_ratio: float = DEFAULT_CORE_RATIO

    def __post_init__(self):
        if not 0.0 <= self.core_ratio <= 1.0:
            raise ValueError("core_ratio must be in [0,1]")

    def core_count(self, rank: int) -> int:
        return min(rank, math.floor(self.core_ratio * rank + 1e-9))


def spectral_readout(state: ServerState) -> SpectralState:
    """Energy-ordered form of ``U_ref Z_g`` from the SVD of the small ``Z_g``."""
    svd = thin_svd(state.z_g)
    return SpectralState(state.u_ref @ svd.u, svd.sigma, svd.v)


def alignment_scores(history: np.ndarray, u_s: np.ndarray) -> np.ndarray:
    """``‖historyᵀ u_j‖²`` for every column ``u_j`` of ``u_s``."""
    if history.shape[0] != u_s.shape[0]:
        raise DimensionMismatch(f"history has {history.shape[0]} rows, u_s has {u_s.shape[0]}")
    proj = history.T @ u_s
    return (proj * proj).sum(axis=0)


def select_components(spec: SpectralState, profile: ClientProfile, cfg: ReadoutConfig = ReadoutConfig()) -> list[int]:
    """Zero-based spectral indices sent to one client, ascending.

    The leading ``floor(γ r_i)`` components are always kept; the rest of the
    rank budget goes to the components best aligned with the client's
    history. Scores equal to 12 decimals tie, and ties go to the lower
    index. Without history the leading ``r_i`` components are used.
    """
    length = spec.length
    size = min(profile.rank, length)
    if profile.history is None:
        return list(range(size))
    n_core = min(cfg.core_count(profile.rank), size)
    scores = np.round(alignment_scores(profile.history, spec.u_s), SCORE_TIE_DECIMALS)
    tail = sorted(range(n_core, length), key=lambda j: (-scores[j], j))[: size - n_core]
    return sorted(list(range(n_core)) + tail)


def balanced_factorize(spec: SpectralState, indices: Sequence[int], layer_id: Hashable = 0) -> FactorPair:
    """``B = U_s[:, I] √σ_I`` and ``A = √σ_I V[:, I]ᵀ``."""
    idx = np.asarray(indices, dtype=np.intp)
    root = np.sqrt(spec.sigma[idx])
    b = spec.u_s[:, idx] * root
    a = (spec.v[:, idx] * root).T
    return FactorPair(b, a, layer_id)


def readout_all(
    state: ServerState,
    profiles: Sequence[ClientProfile],
    cfg: ReadoutConfig = ReadoutConfig(),
    layer_id: Hashable = 0,
) -> dict[Hashable, FactorPair]:
    spec = spectral_readout(state)
    return {p.client_id: balanced_factorize(spec, select_components(spec, p, cfg), layer_id) for p in profiles}


def readout_one(spec: SpectralState, profile: ClientProfile, cfg: ReadoutConfig, layer_id: Hashable = 0) -> FactorPair:
    return balanced_factorize(spec, select_components(spec, profile, cfg), layer_id)


def update_histories(profiles: Mapping[Hashable, ClientProfile], subspaces: Mapping[Hashable, np.ndarray]) -> None:
    """Overwrite each participant's history with its latest uploaded basis."""
    for cid, u in subspaces.items():
        profiles[cid].history = u
