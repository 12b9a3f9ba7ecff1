"""Drift-allocation strategies.

A strategy is a pure rule mapping the currently observable state to a drift
allocation with total budget <= 1.  Rules only ever see the current state
(no lookahead).  ``weights_alive`` is the hot-loop form: it receives the
positions of the alive particles only and returns one weight per entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .particles import DriftAllocation


@dataclass(frozen=True)
class Strategy:
    name: str

    def weights_alive(self, positions: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, system) -> DriftAllocation:
        weights = np.zeros(system.K)
        alive_idx = np.flatnonzero(system.alive)
        if alive_idx.size:
            weights[alive_idx] = self.weights_alive(system.positions[alive_idx], system.t)
        return DriftAllocation(weights=weights)


@dataclass(frozen=True)
class _PushLaggard(Strategy):
    def weights_alive(self, positions, t):
        w = np.zeros(positions.size)
        w[np.argmin(positions)] = 1.0  # lowest index wins ties
        return w


@dataclass(frozen=True)
class _PushLeader(Strategy):
    def weights_alive(self, positions, t):
        w = np.zeros(positions.size)
        w[np.argmax(positions)] = 1.0
        return w


@dataclass(frozen=True)
class _NullDrift(Strategy):
    def weights_alive(self, positions, t):
        return np.zeros(positions.size)


@dataclass(frozen=True)
class _UniformSplit(Strategy):
    def weights_alive(self, positions, t):
        return np.full(positions.size, 1.0 / positions.size)


@dataclass(frozen=True)
class _InversePosition(Strategy):
    """Weight proportional to 1/x, normalized to spend the full unit budget."""

    def weights_alive(self, positions, t):
        inv = 1.0 / positions
        if not np.all(np.isfinite(inv)):
            w = np.zeros(positions.size)
            w[np.argmin(positions)] = 1.0
            return w
        return inv / inv.sum()


push_the_laggard = _PushLaggard(name="push_the_laggard")
push_the_leader = _PushLeader(name="push_the_leader")
null_drift = _NullDrift(name="null")
uniform_split = _UniformSplit(name="uniform")
proportional_to_inverse_position = _InversePosition(name="proportional")

_REGISTRY: dict[str, Strategy] = {}


def register_strategy(strategy: Strategy) -> None:
    _REGISTRY[strategy.name] = strategy


for _s in (push_the_laggard, null_drift, uniform_split, push_the_leader,
           proportional_to_inverse_position):
    register_strategy(_s)


def builtin_strategies() -> list[Strategy]:
    """The strategy-sweep set: the optimal rule plus plausible and bad rivals."""
    return [push_the_laggard, null_drift, uniform_split, push_the_leader,
            proportional_to_inverse_position]


def get_strategy(name: str) -> Strategy:
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown strategy {name!r}; registered: {known}") from None
