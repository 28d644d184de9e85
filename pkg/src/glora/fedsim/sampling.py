"""Participation sampling and client rank assignment."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from glora.errors import InvalidConfig

DEFAULT_LEVELS = (2, 4, 8, 16, 32)
# five client types, smallest rank first; heavy-tail puts most clients on small ranks
DEFAULT_PROPORTIONS = {
    "uniform": (0.2, 0.2, 0.2, 0.2, 0.2),
    "normal": (0.1, 0.2, 0.4, 0.2, 0.1),
    "heavy-tail": (0.4, 0.25, 0.15, 0.12, 0.08),
}


def sample_participants(n_clients: int, fraction: float, round: int, seed: int) -> list[int]:
    """``max(1, round(fraction n))`` distinct ids, uniform without replacement, sorted."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0,1]")
    count = max(1, min(n_clients, math.floor(fraction * n_clients + 0.5)))
    if count == n_clients:
        return list(range(n_clients))
    rng = np.random.default_rng([seed, 0x51A7, round])
    return sorted(int(i) for i in rng.choice(n_clients, size=count, replace=False))


@dataclass(frozen=True)
class RankAssignment:
    distribution: str = "uniform"
    levels: tuple[int, ...] = DEFAULT_LEVELS
    proportions: tuple[float, ...] | None = None

    def resolved_proportions(self) -> tuple[float, ...]:
        if self.proportions is not None:
            props = tuple(self.proportions)
        elif len(self.levels) == 1:
            props = (1.0,)
        elif self.distribution in DEFAULT_PROPORTIONS and len(self.levels) == 5:
            props = DEFAULT_PROPORTIONS[self.distribution]
        elif self.distribution == "uniform":
            props = tuple(1.0 / len(self.levels) for _ in self.levels)
        else:
            raise InvalidConfig(
                f"distribution {self.distribution!r} needs five rank levels or explicit proportions"
            )
        if len(props) != len(self.levels):
            raise InvalidConfig("rank proportions and levels differ in length")
        if any(p < 0 for p in props) or abs(math.fsum(props) - 1.0) > 1e-9:
            raise InvalidConfig("rank proportions must be nonnegative and sum to 1")
        if any(r < 1 for r in self.levels):
            raise InvalidConfig("rank levels must be >= 1")
        return props

    def type_counts(self, n_clients: int) -> list[int]:
        """``floor(p n)`` clients per type; the remainder goes to the modal type."""
        props = self.resolved_proportions()
        counts = [math.floor(p * n_clients + 1e-9) for p in props]
        modal = max(range(len(props)), key=lambda j: (props[j], -j))
        counts[modal] += n_clients - sum(counts)
        return counts


def assign_ranks(n_clients: int, dist: RankAssignment, seed: int) -> dict[int, int]:
    counts = dist.type_counts(n_clients)
    ranks = [r for r, c in zip(dist.levels, counts) for _ in range(c)]
    order = np.random.default_rng([seed, 0x4A2B]).permutation(n_clients)
    return {int(cid): ranks[pos] for pos, cid in enumerate(order)}
