"""Server-side projected aggregation.

Clients upload gauge-fixed ``(U_i, Â_i)``. The server finds the top-``R``
eigenspace of ``Σ p_i U_i U_iᵀ`` through the small Gram matrix of
``M = [√p_i U_i]`` and averages the coordinates ``U_refᵀ U_i Â_i`` in that
shared frame. Nothing of size ``d_out x d_out`` or ``d_out x d_in`` is built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from glora.errors import DimensionMismatch, EmptyRound
from glora.gauge import GaugeFixedUpdate
from glora.linalg import sym_eig

EIG_REL_FLOOR = 1e-12
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Submission:
    client_id: Hashable
    weight: float
    update: GaugeFixedUpdate


@dataclass(frozen=True)
class BudgetPolicy:
    """Server rank budget: ``ratio`` of the total participating rank, or a ``fixed`` rank."""

    ratio: float = 1.0
    mode: str = "ratio"
    rank: int | None = None

    def __post_init__(self):
        if self.mode not in ("ratio", "fixed"):
            raise ValueError(f"mode must be 'ratio' or 'fixed', got {self.mode!r}")
        if self.mode == "ratio" and not 0.0 < self.ratio <= 1.0:
            raise ValueError("ratio must be in (0,1]")
        if self.mode == "fixed" and (self.rank is None or self.rank < 1):
            raise ValueError("fixed budget needs rank >= 1")

    def effective_rank(self, total_rank: int, d_out: int) -> int:
        cap = min(d_out, total_rank)
        if self.mode == "fixed":
            want = self.rank
        else:
            # round away representation noise such as 0.7 * 10 = 7.000000000000001
            want = math.ceil(round(self.ratio * total_rank, 9))
        return max(1, min(want, cap))


@dataclass(frozen=True)
class ServerState:
    u_ref: np.ndarray
    z_g: np.ndarray
    round: int = 0

    @property
    def rank(self) -> int:
        return self.u_ref.shape[1]


def _ordered(submissions: Sequence[Submission]) -> list[Submission]:
    subs = [s for s in submissions if s.update.k >= 1]
    if not subs:
        raise EmptyRound("no submission with a nonzero update")
    return sorted(subs, key=lambda s: s.client_id)


def normalize_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have a positive sum")
    return w / total


def build_weighted_basis(submissions: Sequence[Submission]) -> np.ndarray:
    """Concatenate ``√p_i U_i`` in ascending client_id order."""
    subs = _ordered(submissions)
    d_out = subs[0].update.d_out
    if any(s.update.d_out != d_out for s in subs):
        raise DimensionMismatch("submissions disagree on d_out")
    return np.hstack([math.sqrt(s.weight) * s.update.u for s in subs])


def consensus_basis(m: np.ndarray, budget: BudgetPolicy = BudgetPolicy()) -> np.ndarray:
    """Orthonormal basis of the top-R eigenspace of ``m mᵀ`` via the Gram matrix ``mᵀ m``.

    Directions whose Gram eigenvalue is at most ``1e-12 * λ_max`` are dropped,
    so fewer than R columns may come back.
    """
    if m.ndim != 2 or m.shape[1] == 0:
        raise EmptyRound("weighted basis has no columns")
    d_out, total = m.shape
    r_budget = budget.effective_rank(total, d_out)
    gram = m.T @ m
    eig = sym_eig(gram)
    lam_max = eig.values[0]
    if lam_max <= 0.0:
        raise EmptyRound("weighted basis is numerically zero")
    keep = int(min(r_budget, (eig.values > EIG_REL_FLOOR * lam_max).sum()))
    lam = eig.values[:keep]
    u_ref = (m @ eig.vectors[:, :keep]) / np.sqrt(lam)
    return _reorthonormalize(u_ref)


def _reorthonormalize(u: np.ndarray, max_iter: int = 4) -> np.ndarray:
    # dividing by sqrt(λ) amplifies rounding for small λ; Newton-Schulz steps
    # restore orthonormality by right-multiplication, leaving the span unchanged
    for _ in range(max_iter):
        gram = u.T @ u
        gram[np.diag_indices_from(gram)] -= 1.0
        if np.abs(gram).max() <= 1e-14:
            break
        u = u - 0.5 * (u @ gram)
    return u


def project_coordinates(u_ref: np.ndarray, upd: GaugeFixedUpdate) -> np.ndarray:
    """Coordinates ``U_refᵀ U_i Â_i`` of a client update in the reference frame."""
    if u_ref.shape[0] != upd.d_out:
        raise DimensionMismatch(f"u_ref has {u_ref.shape[0]} rows, update has {upd.d_out}")
    return (u_ref.T @ upd.u) @ upd.a_hat


def aggregate(
    submissions: Sequence[Submission],
    budget: BudgetPolicy = BudgetPolicy(),
    round: int = 0,
) -> ServerState:
    """One round of projected aggregation; returns ``(U_ref, Z_g)``.

    Weights must already sum to one over the submissions.
    """
    subs = _ordered(submissions)
    total_w = math.fsum(s.weight for s in subs)
    if any(s.weight < 0 for s in subs) or abs(total_w - 1.0) > WEIGHT_TOL:
        raise ValueError(f"submission weights must be nonnegative and sum to 1 (got {total_w!r})")
    d_in = subs[0].update.d_in
    if any(s.update.d_in != d_in for s in subs):
        raise DimensionMismatch("submissions disagree on d_in")
    u_ref = consensus_basis(build_weighted_basis(subs), budget)
    z_g = np.zeros((u_ref.shape[1], d_in))
    for s in subs:
        z_g += s.weight * project_coordinates(u_ref, s.update)
    return ServerState(u_ref, z_g, round)


def materialize(state: ServerState) -> np.ndarray:
    """Dense ``U_ref Z_g``; for metrics and tests only."""
    return state.u_ref @ state.z_g
