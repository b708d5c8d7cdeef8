"""States, actions, feasibility, slot costs and the threshold decision rule.

Every other module speaks this vocabulary. The scalar API works on small
frozen dataclasses; the simulator uses the array kernels at the bottom of the
module, which follow the same rules element-wise.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np


def _check_bit(name: str, value) -> int:
    if value not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {value!r}")
    return int(value)


@dataclass(frozen=True, order=True, slots=True)
class SlotState:
    """Observable per-file pair at the start of a slot."""

    request: int
    cached: int

    def __post_init__(self):
        object.__setattr__(self, "request", _check_bit("request", self.request))
        object.__setattr__(self, "cached", _check_bit("cached", self.cached))


@dataclass(frozen=True, order=True, slots=True)
class ActionPair:
    """Per-file decision: fetch over the back-haul, keep in cache for next slot.

    Ordering is lexicographic on (fetch, cache), which is the tie-break order
    used by every argmin in the package.
    """

    fetch: int
    cache: int

    def __post_init__(self):
        object.__setattr__(self, "fetch", _check_bit("fetch", self.fetch))
        object.__setattr__(self, "cache", _check_bit("cache", self.cache))


@dataclass(frozen=True, slots=True)
class PriceSample:
    store_price: float
    fetch_price: float

    def __post_init__(self):
        if not (self.store_price >= 0 and self.fetch_price >= 0):
            raise ValueError(f"prices must be nonnegative, got {self}")


@dataclass(frozen=True, slots=True)
class ValueTable:
    """Reduced value function: expected optimal cost-to-go for cache state 0 and 1."""

    v0: float
    v1: float

    def delta(self, discount: float) -> float:
        """Discounted saving of entering the next slot with the file cached."""
        return discount * (self.v0 - self.v1)


STATES = tuple(SlotState(r, s) for r, s in product((0, 1), repeat=2))
ACTIONS = tuple(ActionPair(w, a) for w, a in product((0, 1), repeat=2))


def _feasible(r: int, s: int, w: int, a: int) -> bool:
    # serve every request; only cache what is locally available
    return r <= w + s and a <= s + w


FEASIBLE = np.zeros((2, 2, 2, 2), dtype=bool)
for _r, _s, _w, _a in product((0, 1), repeat=4):
    FEASIBLE[_r, _s, _w, _a] = _feasible(_r, _s, _w, _a)

# Non-dominated actions per state. Derived once by hand and checked against a
# brute-force Q-factor comparison in the test suite.
_REDUCED_TABLE = {
    (0, 0): ((0, 0), (1, 1)),
    (0, 1): ((0, 0), (0, 1)),
    (1, 0): ((1, 0), (1, 1)),
    (1, 1): ((0, 0), (0, 1)),
}
REDUCED = np.zeros((2, 2, 2, 2), dtype=bool)
for (_r, _s), _acts in _REDUCED_TABLE.items():
    for _w, _a in _acts:
        REDUCED[_r, _s, _w, _a] = True


def feasible_actions(state: SlotState) -> frozenset[ActionPair]:
    return frozenset(
        act for act in ACTIONS if FEASIBLE[state.request, state.cached, act.fetch, act.cache]
    )


def reduced_actions(state: SlotState) -> frozenset[ActionPair]:
    return frozenset(ActionPair(w, a) for w, a in _REDUCED_TABLE[state.request, state.cached])


def instantaneous_cost(action: ActionPair, prices: PriceSample) -> float:
    return prices.store_price * action.cache + prices.fetch_price * action.fetch


def bellman_decide(state: SlotState, prices: PriceSample, delta_v: float) -> ActionPair:
    """Optimal action given the marginal future cost ``delta_v``.

    ``delta_v`` is gamma * (V0 - V1), the discounted saving of having the file
    cached next slot. Ties at a threshold resolve to caching.
    """
    rho, lam = prices.store_price, prices.fetch_price
    r, s = state.request, state.cached
    if s == 0 and r == 0:
        a = int(delta_v >= lam + rho)
        return ActionPair(a, a)
    a = int(delta_v >= rho)
    return ActionPair(1 if (r == 1 and s == 0) else 0, a)


# ---------------------------------------------------------------------------
# Array kernels. Shapes broadcast; bits are integer arrays.


def bellman_decide_arrays(r, s, rho, lam, delta):
    """Vectorized :func:`bellman_decide`. Returns integer arrays ``(w, a)``."""
    r = np.asarray(r)
    s = np.asarray(s)
    empty_idle = (r == 0) & (s == 0)
    threshold = np.where(empty_idle, lam + rho, rho)
    a = (delta >= threshold).astype(np.int8)
    w = np.where(empty_idle, a, (r == 1) & (s == 0)).astype(np.int8)
    return w, a


def feasible_arrays(r, s, w, a):
    return (r <= w + s) & (a <= s + w)
