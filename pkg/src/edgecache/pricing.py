"""Capacity constraints handled through prices.

Storage and back-haul limits are dualized: stochastic multipliers act as
per-size-unit surcharges on the storage and fetch prices. A hard per-slot
cache limit is enforced by a greedy repair of the proposed cache bits.

Storage modes
-------------
``long_term``  -- average stored size at most ``soft_capacity``; the surcharge
                  is paid for every cached file.
``stability``  -- inflow of new content must not outgrow outflow; inserting a
                  file pays the surcharge, evicting one earns it.
``instantaneous`` -- hard per-slot limit ``hard_capacity`` via projection.
``backhaul``   -- average fetched size at most ``link_budget``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import ACTIONS, ActionPair, PriceSample, SlotState, ValueTable, bellman_decide
from .learning import (
    ACTION_A,
    ACTION_W,
    QEstimate,
    action_scores,
    apply_update,
    choose_actions,
)

INSTANTANEOUS = "instantaneous"
LONG_TERM = "long_term"
STABILITY = "stability"
BACKHAUL = "backhaul"
MODES = (INSTANTANEOUS, LONG_TERM, STABILITY, BACKHAUL)


@dataclass(frozen=True)
class DualState:
    mu_hat: float = 0.0
    nu_hat: float = 0.0
    stepsize: float = 1e-3

    def __post_init__(self):
        if self.mu_hat < 0 or self.nu_hat < 0:
            raise ValueError("multipliers must be nonnegative")
        if not self.stepsize > 0:
            raise ValueError("dual stepsize must be positive")


@dataclass(frozen=True)
class CapacityConfig:
    """Which constraints are active and their budgets.

    ``soft_capacity`` defaults to ``hard_capacity``. ``dual_timing`` chooses
    whether multipliers see the proposed (``"proposed"``) or the projected
    (``"projected"``) actions.
    """

    modes: frozenset = frozenset()
    hard_capacity: float | None = None
    soft_capacity: float | None = None
    link_budget: float | None = None
    dual_timing: str = "proposed"

    def __post_init__(self):
        modes = frozenset(self.modes)
        object.__setattr__(self, "modes", modes)
        unknown = modes - set(MODES)
        if unknown:
            raise ValueError(f"unknown capacity modes {sorted(unknown)}")
        if LONG_TERM in modes and STABILITY in modes:
            raise ValueError("long_term and stability storage modes are mutually exclusive")
        if self.hard_capacity is not None and not self.hard_capacity > 0:
            raise ValueError("hard_capacity must be positive")
        if self.soft_capacity is None and self.hard_capacity is not None:
            object.__setattr__(self, "soft_capacity", self.hard_capacity)
        if self.soft_capacity is not None and not self.soft_capacity > 0:
            raise ValueError("soft_capacity must be positive")
        if (
            self.soft_capacity is not None
            and self.hard_capacity is not None
            and self.soft_capacity > self.hard_capacity
        ):
            raise ValueError("soft_capacity must not exceed hard_capacity")
        if INSTANTANEOUS in modes and self.hard_capacity is None:
            raise ValueError("instantaneous mode needs hard_capacity")
        if LONG_TERM in modes and self.soft_capacity is None:
            raise ValueError("long_term mode needs soft_capacity or hard_capacity")
        if BACKHAUL in modes and (self.link_budget is None or self.link_budget < 0):
            raise ValueError("backhaul mode needs a nonnegative link_budget")
        if self.dual_timing not in ("proposed", "projected"):
            raise ValueError("dual_timing must be 'proposed' or 'projected'")

    @property
    def storage_mode(self) -> str | None:
        for mode in (LONG_TERM, STABILITY):
            if mode in self.modes:
                return mode
        return None


def default_dual_stepsize(sizes: Sequence[float]) -> float:
    sizes = np.asarray(sizes, dtype=float)
    return 1e-3 / (sizes.mean() * len(sizes))


def augment_prices(prices: PriceSample, size: float, duals: DualState) -> PriceSample:
    return PriceSample(
        prices.store_price + duals.mu_hat * size, prices.fetch_price + duals.nu_hat * size
    )


def dual_update_capacity(duals: DualState, cached_bytes: float, soft_capacity: float) -> DualState:
    mu = max(0.0, duals.mu_hat + duals.stepsize * (cached_bytes - soft_capacity))
    return replace(duals, mu_hat=mu)


def net_inflow(actions: Sequence[ActionPair], states: Sequence[SlotState], sizes: Sequence[float]) -> float:
    """Size inserted minus size evicted by one slot's decisions."""
    total = 0.0
    for act, st, size in zip(actions, states, sizes, strict=True):
        total += size * (max(act.cache - st.cached, 0) - max(st.cached - act.cache, 0))
    return total


def dual_update_stability(
    duals: DualState,
    actions: Sequence[ActionPair],
    states: Sequence[SlotState],
    sizes: Sequence[float],
) -> DualState:
    mu = max(0.0, duals.mu_hat + duals.stepsize * net_inflow(actions, states, sizes))
    return replace(duals, mu_hat=mu)


def dual_update_backhaul(duals: DualState, fetched_bytes: float, link_budget: float) -> DualState:
    nu = max(0.0, duals.nu_hat + duals.stepsize * (fetched_bytes - link_budget))
    return replace(duals, nu_hat=nu)


def stability_adjusted_decide(
    state: SlotState,
    prices: PriceSample,
    value: ValueTable,
    duals: DualState,
    size: float,
    discount: float,
) -> ActionPair:
    """Threshold rule under the stability surcharge.

    An empty slot pays the surcharge to insert. A cached file keeps at the
    plain storage price, while dropping it earns the surcharge back, so it is
    kept iff ``store_price + g*V1 <= g*V0 - mu*size``, i.e. iff
    ``store_price + mu*size <= delta`` (written this way so that mu = 0
    rounds exactly like the plain rule).
    """
    delta = value.delta(discount)
    credit = duals.mu_hat * size
    if state.cached == 0:
        return bellman_decide(state, PriceSample(prices.store_price + credit, prices.fetch_price), delta)
    return ActionPair(0, int(prices.store_price + credit <= delta))


# ---------------------------------------------------------------------------
# Hard-capacity projection


def repair_fetch(request, cached):
    """Cheapest fetch bit that still serves the request once caching is refused."""
    return request * (1 - cached)


def project_c4(candidates, hard_capacity: float) -> list[tuple[int, ActionPair]]:
    """Greedy first-fit admission of proposed cache bits.

    ``candidates`` are ``(file_id, action, sort_key, size, state)`` tuples.
    Files proposing to cache are admitted in ascending ``sort_key`` (ties by
    input position); files that no longer fit are skipped, switched to
    ``a = 0`` and given the minimal feasible fetch bit.
    """
    if not hard_capacity > 0:
        raise ValueError("hard_capacity must be positive")
    candidates = list(candidates)
    out = {i: act for i, (_, act, _, _, _) in enumerate(candidates)}
    order = sorted(
        (i for i, c in enumerate(candidates) if c[1].cache == 1), key=lambda i: candidates[i][2]
    )
    used = 0.0
    for i in order:
        _, act, _, size, st = candidates[i]
        if used + size <= hard_capacity:
            used += size
        else:
            out[i] = ActionPair(repair_fetch(st.request, st.cached), 0)
    return [(candidates[i][0], out[i]) for i in range(len(candidates))]


def project_c4_arrays(w, a, keys, sizes, r, s, hard_capacity):
    """Vectorized projection over a batch; arrays shaped (n, F), sizes (F,).

    Returns new ``(w, a)`` arrays; inputs are not modified.
    """
    w = w.copy()
    a = a.copy()
    n, n_files = a.shape
    order = np.argsort(np.where(a == 1, keys, np.inf), axis=1, kind="stable")
    used = np.zeros(n)
    rows = np.arange(n)
    for j in range(n_files):
        f = order[:, j]
        cand = a[rows, f] == 1
        if not cand.any():
            break
        size = sizes[f]
        fits = used + size <= hard_capacity
        used = np.where(cand & fits, used + size, used)
        reject = cand & ~fits
        if reject.any():
            rr, ff = rows[reject], f[reject]
            a[rr, ff] = 0
            w[rr, ff] = repair_fetch(r[rr, ff], s[rr, ff])
    return w, a


# ---------------------------------------------------------------------------
# Constrained learner


def surcharges(config: CapacityConfig, mu, nu, sizes, s):
    """Per-action dual surcharge, shape (..., 4).

    long_term: ``mu*size*a``; stability: ``mu*size*(a - s)``;
    backhaul: ``nu*size*w``.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    store = (mu * sizes)[..., None]
    extra = np.zeros(np.broadcast_shapes(store.shape[:-1], np.shape(s)) + (4,))
    mode = config.storage_mode
    if mode == LONG_TERM:
        extra = extra + store * ACTION_A
    elif mode == STABILITY:
        extra = extra + store * (ACTION_A - np.asarray(s)[..., None])
    if BACKHAUL in config.modes:
        extra = extra + (nu * sizes)[..., None] * ACTION_W
    return extra


def update_duals(config: CapacityConfig, duals: DualState, w, a, s, sizes) -> DualState:
    """Multiplier step for one slot's (proposed or projected) decisions."""
    w = np.asarray(w)
    a = np.asarray(a)
    s = np.asarray(s)
    sizes = np.asarray(sizes, dtype=float)
    mode = config.storage_mode
    if mode == LONG_TERM:
        duals = dual_update_capacity(duals, float(a @ sizes), config.soft_capacity)
    elif mode == STABILITY:
        flow = float(((a - s) * sizes).sum())
        duals = replace(duals, mu_hat=max(0.0, duals.mu_hat + duals.stepsize * flow))
    if BACKHAUL in config.modes:
        duals = dual_update_backhaul(duals, float(w @ sizes), config.link_budget)
    return duals


def mq_learning_step(
    estimates: Sequence[QEstimate],
    states: Sequence[SlotState],
    prices: Sequence[PriceSample],
    next_requests: Sequence[int],
    next_prices: Sequence[PriceSample],
    sizes: Sequence[float],
    duals: DualState,
    config: CapacityConfig,
    discount: float,
    epsilon_t: float,
    rngs: Sequence,
):
    """One slot of the constrained learner over all files.

    Order: (1) epsilon-greedy proposals on dual-augmented scores, (2) dual
    step, (3) hard-capacity repair, (4) cache states advance, (5) each
    file's visited factor moves toward the best augmented score of the next
    slot (priced with the updated multipliers).

    ``rngs`` holds one generator per file; each file consumes two uniforms.
    Returns ``(actions, estimates, duals, slot_cost)`` where ``slot_cost`` is
    the raw storage-plus-fetch cost of the executed actions.
    """
    n = len(estimates)
    q = np.stack([e.factors for e in estimates])
    visits = np.stack([e.visit_counts for e in estimates])
    r = np.array([st.request for st in states])
    s = np.array([st.cached for st in states])
    rho = np.array([pr.store_price for pr in prices])
    lam = np.array([pr.fetch_price for pr in prices])
    sizes = np.asarray(sizes, dtype=float)
    u = np.array([rng.random(2) for rng in rngs]).reshape(n, 2)

    extra = surcharges(config, duals.mu_hat, duals.nu_hat, sizes, s)
    scores = action_scores(q, r, s, rho, lam, discount, extra)
    k = choose_actions(scores, r, s, epsilon_t, u[:, 0], u[:, 1])
    w, a = ACTION_W[k], ACTION_A[k]

    proposed = (w, a)
    if INSTANTANEOUS in config.modes:
        keys = np.take_along_axis(scores, k[:, None], axis=1)[:, 0]
        w2, a2 = project_c4_arrays(
            w[None], a[None], keys[None], sizes, r[None], s[None], config.hard_capacity
        )
        w, a = w2[0], a2[0]
    timing = proposed if config.dual_timing == "proposed" else (w, a)
    new_duals = update_duals(config, duals, timing[0], timing[1], s, sizes)
    k = 2 * w + a

    r_next = np.asarray(next_requests)
    rho_next = np.array([pr.store_price for pr in next_prices])
    lam_next = np.array([pr.fetch_price for pr in next_prices])
    extra_next = surcharges(config, new_duals.mu_hat, new_duals.nu_hat, sizes, a)
    target = action_scores(q, r_next, a, rho_next, lam_next, discount, extra_next).min(axis=-1)
    new_est = []
    for f, est in enumerate(estimates):
        qf, vf = q[f].copy(), visits[f].copy()
        apply_update(qf, vf, r[f], s[f], k[f], target[f], est.stepsize)
        new_est.append(replace(est, factors=qf, visit_counts=vf))
    actions = [ACTIONS[int(x)] for x in k]
    slot_cost = float((w * lam + a * rho).sum())
    return actions, new_est, new_duals, slot_cost
