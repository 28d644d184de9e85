"""Gauge fixing of LoRA factor pairs and gauge-sensitivity measurement.

A LoRA update ``ΔW = B @ A`` is unchanged by ``(B, A) -> (B Q, Q⁻¹ A)`` for
any invertible ``Q``. Gauge fixing maps every member of that family to the
same column subspace ``U`` (orthonormal) plus coordinates ``Â = T A`` where
``B = U T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from glora.errors import DimensionMismatch, SingularGauge, ZeroMatrix, ZeroUpdate
from glora.linalg import DEFAULT_RANK_TOL, check_matrix, reduced_qr, solve_upper, thin_svd

INCONSISTENCY_FLOOR = 1e-15


@dataclass(frozen=True)
class FactorPair:
    b: np.ndarray
    a: np.ndarray
    layer_id: Hashable = 0

    def __post_init__(self):
        b = check_matrix(self.b, "b")
        a = check_matrix(self.a, "a")
        if b.shape[1] != a.shape[0]:
            raise DimensionMismatch(f"inner ranks differ: b is {b.shape}, a is {a.shape}")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def rank(self) -> int:
        return self.b.shape[1]

    def product(self) -> np.ndarray:
        return self.b @ self.a


@dataclass(frozen=True)
class GaugeFixedUpdate:
    """Orthonormal column basis ``u`` and coordinates ``a_hat`` with ``ΔW = u @ a_hat``."""

    u: np.ndarray
    a_hat: np.ndarray

    def __post_init__(self):
        if self.u.ndim != 2 or self.a_hat.ndim != 2 or self.u.shape[1] != self.a_hat.shape[0]:
            raise DimensionMismatch(f"u {self.u.shape} and a_hat {self.a_hat.shape} do not chain")

    @property
    def k(self) -> int:
        return self.u.shape[1]

    @property
    def d_out(self) -> int:
        return self.u.shape[0]

    @property
    def d_in(self) -> int:
        return self.a_hat.shape[1]

    def product(self) -> np.ndarray:
        return self.u @ self.a_hat


def gauge_fix(fp: FactorPair, rank_tol: float = DEFAULT_RANK_TOL) -> GaugeFixedUpdate:
    """Reduced QR ``B = U T`` and ``Â = T A``; dependent columns of ``B`` are dropped.

    Raises ``ZeroUpdate`` when ``B`` is numerically zero.
    """
    try:
        qr = reduced_qr(fp.b, rank_tol)
    except ZeroMatrix as exc:
        raise ZeroUpdate("factor B is numerically zero; the client contributes nothing") from exc
    return GaugeFixedUpdate(qr.q, qr.r_upper @ fp.a)


def random_gauge(r: int, seed: int, cond_max: float = 100.0) -> np.ndarray:
    """Invertible ``r x r`` matrix ``U diag(s) Vᵀ`` with condition number at most ``cond_max``.

    ``U`` and ``V`` are Haar-orthogonal and ``s`` is log-uniform on
    ``[cond_max**-0.5, cond_max**0.5]``; deterministic in ``seed``.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if cond_max < 1:
        raise ValueError("cond_max must be >= 1")
    rng = np.random.default_rng(seed)
    u = _haar(rng, r)
    v = _haar(rng, r)
    half = 0.5 * np.log(cond_max)
    s = np.exp(rng.uniform(-half, half, size=r))
    return (u * s) @ v.T


def _haar(rng: np.random.Generator, r: int) -> np.ndarray:
    qr = reduced_qr(rng.standard_normal((r, r)))
    if qr.k < r:  # measure-zero event
        return np.eye(r)
    # nonnegative-diagonal QR of a Gaussian matrix is Haar distributed
    return qr.q


def apply_gauge(fp: FactorPair, q) -> FactorPair:
    """Return ``(B q, q⁻¹ A)``; the inverse is applied through a QR solve."""
    q = check_matrix(q, "q")
    r = fp.rank
    if q.shape != (r, r):
        raise DimensionMismatch(f"gauge must be {r}x{r}, got {q.shape}")
    try:
        qr = reduced_qr(q)
    except ZeroMatrix as exc:
        raise SingularGauge("gauge matrix is zero") from exc
    if qr.k < r:
        raise SingularGauge(f"gauge matrix is numerically singular (rank {qr.k} < {r})")
    a_new = solve_upper(qr.r_upper, qr.q.T @ fp.a)
    return FactorPair(fp.b @ q, a_new, fp.layer_id)


GaugeFactory = Callable[[int, int, np.random.Generator], np.ndarray]


def aggregation_inconsistency(
    rule,
    submissions: Sequence[tuple[float, FactorPair]],
    n_trials: int = 20,
    cond_max: float = 100.0,
    seed: int = 0,
    gauge_factory: GaugeFactory | None = None,
) -> float:
    """Worst relative change of a rule's global update under per-client gauges.

    ``rule`` needs a ``global_update(pairs) -> ndarray`` method. Each trial
    draws an independent gauge per client, by default with
    ``random_gauge(r, ·, cond_max)``; ``gauge_factory(client_index, r, rng)``
    overrides the stimulus.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    pairs = list(submissions)
    weights = np.array([w for w, _ in pairs], dtype=np.float64)
    if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    reference = np.asarray(rule.global_update(pairs))
    denom = max(float(np.linalg.norm(reference)), INCONSISTENCY_FLOOR)
    worst = 0.0
    for trial in range(n_trials):
        rng = np.random.default_rng([seed, trial])
        gauged = []
        for idx, (w, fp) in enumerate(pairs):
            if gauge_factory is None:
                q = random_gauge(fp.rank, int(rng.integers(2**63)), cond_max)
            else:
                q = gauge_factory(idx, fp.rank, rng)
            gauged.append((w, apply_gauge(fp, q)))
        other = np.asarray(rule.global_update(gauged))
        worst = max(worst, float(np.linalg.norm(reference - other)) / denom)
    return worst


def condition_number(q) -> float:
    sigma = thin_svd(q).sigma
    return float(np.inf) if sigma[-1] == 0 else float(sigma[0] / sigma[-1])
