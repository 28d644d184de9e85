"""Full-batch gradient descent on a client's LoRA factors."""
from __future__ import annotations

import numpy as np

from glora.errors import Divergence
from glora.fedsim.task import ClientData, SyntheticTask
from glora.gauge import FactorPair


def factor_gradients(data: ClientData, b: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(∂L/∂B, ∂L/∂A) = (G Aᵀ, Bᵀ G)`` with ``G = (1/n) Σ (ŷ - y) xᵀ``."""
    g = data.residual_gradient(b @ a)
    return g @ a.T, b.T @ g


def sample_loss(data: ClientData, w0: np.ndarray, b: np.ndarray, a: np.ndarray) -> float:
    """``(1/2n) Σ ‖y - (W0 + BA) x‖²`` evaluated sample by sample."""
    pred = data.x @ (w0 + b @ a).T
    return float(((data.y - pred) ** 2).sum()) / (2 * data.n)


def local_train(task: SyntheticTask, client_id: int, init: FactorPair, steps: int, lr: float) -> FactorPair:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lr < 0:
        raise ValueError("lr must be >= 0")
    data = task.train[client_id]
    b = init.b.copy()
    a = init.a.copy()
    if lr == 0:
        return FactorPair(b, a, init.layer_id)
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            gb, ga = factor_gradients(data, b, a)
            b -= lr * gb
            a -= lr * ga
            if not (np.isfinite(b).all() and np.isfinite(a).all()):
                break
        finite = np.isfinite(b).all() and np.isfinite(a).all() and np.isfinite(data.loss(b @ a))
    if not finite:
        raise Divergence(f"client {client_id}: loss became non-finite at step {step + 1} (lr={lr} too large?)")
    return FactorPair(b, a, init.layer_id)


def dense_train(task: SyntheticTask, client_id: int, delta: np.ndarray, steps: int, lr: float) -> np.ndarray:
    """Gradient descent directly on ``ΔW``; reference trajectory for the factorized trainer."""
    data = task.train[client_id]
    delta = delta.copy()
    for _ in range(steps):
        delta -= lr * data.residual_gradient(delta)
    return delta
