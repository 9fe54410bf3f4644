"""Retraining-cost model and the dispatch threshold between strategies.

Cost is measured in samples read: restarting training at slice i means
replaying slices i..S, and the pass over slice k sits on top of the k-1
slices already folded into the checkpoint, so it is priced at k * n/S.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidArgument


@dataclass(frozen=True)
class CostConfig:
    n: int
    num_slices: int
    phi: float

    def __post_init__(self) -> None:
        if self.num_slices < 1:
            raise InvalidArgument("num_slices must be >= 1")
        if self.n < self.num_slices:
            raise InvalidArgument("n must be >= num_slices")
        if self.phi < 0:
            raise InvalidArgument("phi must be non-negative")


@dataclass(frozen=True)
class ThresholdResult:
    """Dispatch threshold t, trailing retrain depth r, and the cost vector.

    Direct parameter update applies iff the revoked sample's slice index is
    strictly below t; t = num_slices + 1 means no retraining is affordable.
    """

    t: int
    r: int
    costs: tuple[float, ...]


def retrain_cost(i: int, config: CostConfig) -> float:
    """Samples read when retraining restarts at slice i: (n/S) * sum(i..S)."""
    s = config.num_slices
    if not 1 <= i <= s:
        raise InvalidArgument(f"slice index must be in [1, {s}], got {i}")
    return (config.n / s) * (s * (s + 1) // 2 - (i - 1) * i // 2)


def threshold(config: CostConfig) -> ThresholdResult:
    """Least slice index whose retrain cost fits the tolerable overhead phi."""
    s = config.num_slices
    costs = tuple(retrain_cost(i, config) for i in range(1, s + 1))
    t = next((i for i, c in enumerate(costs, start=1) if c <= config.phi), s + 1)
    r = s - t + 1 if t <= s else 0
    return ThresholdResult(t=t, r=r, costs=costs)
