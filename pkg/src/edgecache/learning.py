"""Online solvers when the input distributions are unknown.

Two learners:

* :func:`stochastic_value_step` keeps running estimates of the two reduced
  values and acts with the threshold rule.
* :func:`q_learning_step` is tabular Q-learning on the marginalized factors.

Q-factor semantics
------------------
``factors[r, s, w, a]`` estimates the expected cost-to-go *after* the slot's
own prices have been paid, i.e. the continuation that follows action (w, a)
in state (r, s). The greedy score of an action is therefore

    w * fetch_price + a * store_price + discount * factors[r, s, w, a]

and the update target is the best such score in the next slot (whose prices
are observed before the update), so the table never has to average away the
current slot's price noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import ACTIONS, FEASIBLE, ActionPair, PriceSample, SlotState, bellman_decide

# action index k = 2 * w + a; feasible action indices per state, padded with -1
ACTION_W = np.array([a.fetch for a in ACTIONS])
ACTION_A = np.array([a.cache for a in ACTIONS])
N_FEASIBLE = FEASIBLE.reshape(2, 2, 4).sum(axis=-1)
FEASIBLE_INDEX = np.full((2, 2, 4), -1, dtype=np.int64)
for _r in (0, 1):
    for _s in (0, 1):
        _ks = np.flatnonzero(FEASIBLE[_r, _s].ravel())
        FEASIBLE_INDEX[_r, _s, : len(_ks)] = _ks


@dataclass(frozen=True)
class ValueEstimate:
    v0_hat: float
    v1_hat: float
    stepsize: float

    def __post_init__(self):
        if not 0.0 < self.stepsize < 1.0:
            raise ValueError(f"stepsize must lie in (0,1), got {self.stepsize}")


def stochastic_value_step(
    est: ValueEstimate, state: SlotState, prices: PriceSample, discount: float
) -> tuple[ActionPair, ValueEstimate]:
    delta = discount * (est.v0_hat - est.v1_hat)
    act = bellman_decide(state, prices, delta)
    cont = est.v1_hat if act.cache else est.v0_hat
    target = act.fetch * prices.fetch_price + act.cache * prices.store_price + discount * cont
    b = est.stepsize
    if state.cached:
        return act, replace(est, v1_hat=(1 - b) * est.v1_hat + b * target)
    return act, replace(est, v0_hat=(1 - b) * est.v0_hat + b * target)


@dataclass(frozen=True)
class ExplorationSchedule:
    """Exploration probability per 1-based slot index ``t``.

    ``constant`` returns ``epsilon``; ``glie_inverse_t`` returns
    ``max(1/t, floor)`` (plain 1/t with the default floor of 0).
    """

    kind: str = "constant"
    epsilon: float = 0.01
    floor: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "glie_inverse_t"):
            raise ValueError(f"unknown exploration kind {self.kind!r}")
        if not (0.0 <= self.epsilon <= 1.0 and 0.0 <= self.floor <= 1.0):
            raise ValueError("exploration probabilities must lie in [0,1]")

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.epsilon
        return max(1.0 / max(t, 1), self.floor)

    def array(self, horizon: int) -> np.ndarray:
        return np.array([self(t) for t in range(1, horizon + 1)])


BOOTSTRAP_MODES = ("min", "realized")


@dataclass(frozen=True)
class QEstimate:
    """Tabular factors ``[r, s, w, a]`` with per-entry visit counts.

    ``bootstrap`` selects the update target: ``"min"`` (best next action) or
    ``"realized"`` (the action actually taken next slot).
    """

    factors: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2, 2)))
    stepsize: float = 0.1
    visit_counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2, 2), dtype=np.int64))
    bootstrap: str = "min"

    def __post_init__(self):
        if not 0.0 < self.stepsize < 1.0:
            raise ValueError(f"stepsize must lie in (0,1), got {self.stepsize}")
        if self.bootstrap not in BOOTSTRAP_MODES:
            raise ValueError(f"bootstrap must be one of {BOOTSTRAP_MODES}")


# ---------------------------------------------------------------------------
# Array kernels shared by the scalar API and the simulator.
# ``q`` has shape (..., 2, 2, 2, 2); r, s and prices broadcast to ``q.shape[:-4]``.


def action_scores(q, r, s, store, fetch, discount, extra=None):
    """Greedy scores of the four actions, shape (..., 4); infeasible -> +inf.

    ``extra`` optionally adds a per-action term of shape (..., 4), e.g. the
    dual-price surcharges of the constrained learner.
    """
    lead = q.shape[:-4]
    flat = q.reshape(-1, 16)
    r = np.broadcast_to(r, lead).reshape(-1)
    s = np.broadcast_to(s, lead).reshape(-1)
    base = (r * 8 + s * 4)[:, None] + np.arange(4)
    cont = np.take_along_axis(flat, base, axis=1).reshape(lead + (4,))
    store = np.asarray(store)[..., None]
    fetch = np.asarray(fetch)[..., None]
    scores = ACTION_W * fetch + ACTION_A * store + discount * cont
    if extra is not None:
        scores = scores + extra
    feas = FEASIBLE.reshape(2, 2, 4)[r, s].reshape(lead + (4,))
    return np.where(feas, scores, np.inf)


def choose_actions(scores, r, s, epsilon, u_explore, u_pick):
    """Epsilon-greedy action indices.

    Greedy ties go to the lowest index (lexicographic (w, a) order).
    Exploration picks ``feasible[int(u_pick * n_feasible)]``.
    """
    greedy = np.argmin(scores, axis=-1)
    n = N_FEASIBLE[r, s]
    pick = FEASIBLE_INDEX[r, s, np.minimum((u_pick * n).astype(np.int64), n - 1)]
    return np.where(u_explore < epsilon, pick, greedy)


def apply_update(q, visits, r, s, k, target, stepsize):
    """In-place step ``q[.., r, s, w, a] += stepsize * (target - q)`` at the visited entries."""
    lead = q.shape[:-4]
    flat = q.reshape(-1, 16)
    cnt = visits.reshape(-1, 16)
    rows = np.arange(flat.shape[0])
    col = (np.broadcast_to(r, lead) * 8 + np.broadcast_to(s, lead) * 4 + np.broadcast_to(k, lead)).reshape(-1)
    flat[rows, col] = (1 - stepsize) * flat[rows, col] + stepsize * np.broadcast_to(target, lead).reshape(-1)
    cnt[rows, col] += 1


# ---------------------------------------------------------------------------
# Scalar API


def _scores(est: QEstimate, state: SlotState, prices: PriceSample, discount: float) -> np.ndarray:
    return action_scores(
        est.factors, state.request, state.cached, prices.store_price, prices.fetch_price, discount
    )


def epsilon_greedy(scores: np.ndarray, state: SlotState, epsilon: float, rng) -> int:
    """Index into ACTIONS. Always consumes two uniforms from ``rng``."""
    u_explore, u_pick = rng.random(2)
    return int(choose_actions(scores, state.request, state.cached, epsilon, u_explore, u_pick))


def q_learning_step(
    est: QEstimate,
    state: SlotState,
    prices: PriceSample,
    next_request: int,
    next_prices: PriceSample,
    discount: float,
    epsilon_t: float,
    rng,
    next_action: ActionPair | None = None,
) -> tuple[ActionPair, QEstimate]:
    """Act epsilon-greedily in ``state`` and update the visited factor.

    The target is the best score available in the next slot, whose request
    and prices must be supplied. With ``bootstrap="realized"`` the caller
    passes the action actually taken next (``next_action``) instead.
    """
    if not 0.0 <= epsilon_t <= 1.0:
        raise ValueError("epsilon_t must lie in [0,1]")
    k = epsilon_greedy(_scores(est, state, prices, discount), state, epsilon_t, rng)
    act = ACTIONS[k]
    nxt = SlotState(next_request, act.cache)
    next_scores = _scores(est, nxt, next_prices, discount)
    if est.bootstrap == "realized":
        if next_action is None:
            raise ValueError("realized bootstrap needs next_action")
        target = next_scores[2 * next_action.fetch + next_action.cache]
    else:
        target = next_scores.min()
    factors = est.factors.copy()
    visits = est.visit_counts.copy()
    apply_update(factors, visits, state.request, state.cached, k, target, est.stepsize)
    return act, replace(est, factors=factors, visit_counts=visits)


def greedy_policy(est: QEstimate, discount: float) -> Callable[[SlotState, PriceSample], ActionPair]:
    """Rule mapping (state, prices) to the greedy action of the current table."""
    factors = est.factors.copy()

    def policy(state: SlotState, prices: PriceSample) -> ActionPair:
        scores = action_scores(
            factors, state.request, state.cached, prices.store_price, prices.fetch_price, discount
        )
        return ACTIONS[int(np.argmin(scores))]

    return policy
