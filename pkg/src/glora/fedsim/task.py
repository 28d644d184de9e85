"""Synthetic heterogeneous low-rank regression tasks.

Client ``i`` observes ``y = (W0 + ΔW*_i) x + noise`` with
``ΔW*_i = shared_basis @ S + private_basis_i @ P_i``. The private bases
are orthogonal to the shared one; ``eta`` is the private share of the
update energy (0 gives identical targets, values near 1 mostly
client-specific ones). It is a controllable stand-in for label-skew
partitions, not a model of them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from glora.errors import InvalidConfig
from glora.linalg import reduced_qr


@dataclass(frozen=True)
class TaskConfig:
    d_out: int = 64
    d_in: int = 32
    k_shared: int = 2
    k_priv: int = 2
    eta: float = 0.5
    noise_std: float = 0.0
    samples: int = 128
    eval_samples: int = 128
    n_clients: int = 10

    def validate(self) -> None:
        if self.d_out < 2 or self.d_in < 2:
            raise InvalidConfig("d_out and d_in must be >= 2")
        if self.k_shared < 1 or self.k_priv < 0:
            raise InvalidConfig("k_shared must be >= 1 and k_priv >= 0")
        if self.k_shared + self.k_priv > min(self.d_out, self.d_in):
            raise InvalidConfig("k_shared + k_priv must not exceed min(d_out, d_in)")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidConfig("eta must be in [0,1]")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std must be >= 0")
        if self.samples < 1 or self.eval_samples < 1 or self.n_clients < 1:
            raise InvalidConfig("samples, eval_samples and n_clients must be >= 1")


@dataclass
class ClientData:
    """Sufficient statistics of one client's quadratic objective.

    With residual targets ``r = y - W0 x``,
    ``L(ΔW) = ½ tr(ΔW cxx ΔWᵀ) - tr(ΔWᵀ cyx) + c0`` equals
    ``(1/2n) Σ ‖r - ΔW x‖²``.
    """

    x: np.ndarray
    y: np.ndarray
    cxx: np.ndarray
    cyx: np.ndarray
    c0: float

    @classmethod
    def from_samples(cls, x: np.ndarray, y: np.ndarray, w0: np.ndarray) -> "ClientData":
        n = x.shape[0]
        resid = y - x @ w0.T
        return cls(x, y, x.T @ x / n, resid.T @ x / n, float((resid * resid).sum()) / (2 * n))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def loss(self, delta: np.ndarray) -> float:
        return 0.5 * float(((delta @ self.cxx) * delta).sum()) - float((delta * self.cyx).sum()) + self.c0

    def residual_gradient(self, delta: np.ndarray) -> np.ndarray:
        """``(1/n) Σ (ŷ - y) xᵀ`` at adapter ``delta``."""
        return delta @ self.cxx - self.cyx


@dataclass
class SyntheticTask:
    config: TaskConfig
    w0: np.ndarray
    shared_basis: np.ndarray
    shared_coords: np.ndarray
    private_bases: list[np.ndarray]
    private_coords: list[np.ndarray]
    train: list[ClientData] = field(repr=False)
    evaluation: list[ClientData] = field(repr=False)

    @property
    def n_clients(self) -> int:
        return len(self.train)

    def target(self, client_id: int) -> np.ndarray:
        out = self.shared_basis @ self.shared_coords
        if self.private_bases[client_id].shape[1]:
            out = out + self.private_bases[client_id] @ self.private_coords[client_id]
        return out

    def weighted_target(self, weights: np.ndarray) -> np.ndarray:
        return sum(w * self.target(i) for i, w in enumerate(weights))

    def eval_mse(self, delta: np.ndarray, weights: np.ndarray) -> float:
        """Weighted held-out mean squared error of ``W0 + delta`` (mean over samples and outputs)."""
        d_out = self.config.d_out
        return float(sum(w * 2.0 * data.loss(delta) / d_out for w, data in zip(weights, self.evaluation)))


def _orthonormal(rng: np.random.Generator, d: int, k: int, against: np.ndarray | None = None) -> np.ndarray:
    if k == 0:
        return np.zeros((d, 0))
    g = rng.standard_normal((d, k))
    if against is not None:
        for _ in range(2):
            g -= against @ (against.T @ g)
    return reduced_qr(g).q


def _scaled(rng: np.random.Generator, shape: tuple[int, int], energy: float) -> np.ndarray:
    m = rng.standard_normal(shape)
    norm = np.linalg.norm(m)
    return m * (np.sqrt(energy) / norm) if norm > 0 else m


def generate_task(cfg: TaskConfig, seed: int) -> SyntheticTask:
    """Deterministic in ``(cfg, seed)``."""
    cfg.validate()
    rng = np.random.default_rng([seed, 0x7A5C])
    d_out, d_in = cfg.d_out, cfg.d_in
    w0 = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
    shared = _orthonormal(rng, d_out, cfg.k_shared)
    scale = float(cfg.k_shared + cfg.k_priv)
    shared_energy = (1.0 - cfg.eta) * scale if cfg.k_priv else scale
    s = _scaled(rng, (cfg.k_shared, d_in), shared_energy)
    priv_b, priv_c, train, evaluation = [], [], [], []
    for _ in range(cfg.n_clients):
        pb = _orthonormal(rng, d_out, cfg.k_priv, against=shared)
        pc = _scaled(rng, (cfg.k_priv, d_in), cfg.eta * scale) if cfg.k_priv else np.zeros((0, d_in))
        priv_b.append(pb)
        priv_c.append(pc)
    task = SyntheticTask(cfg, w0, shared, s, priv_b, priv_c, [], [])
    for i in range(cfg.n_clients):
        w = w0 + task.target(i)
        for n, bucket in ((cfg.samples, train), (cfg.eval_samples, evaluation)):
            x = rng.standard_normal((n, d_in))
            y = x @ w.T + cfg.noise_std * rng.standard_normal((n, d_out))
            bucket.append(ClientData.from_samples(x, y, w0))
    task.train = train
    task.evaluation = evaluation
    return task
