"""Offline solvers for a single file whose input distributions are known.

All expectations are exact sums over the finite joint support
(request x storage price x fetch price); nothing here samples.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .core import ACTIONS, FEASIBLE, REDUCED, ValueTable, bellman_decide_arrays
from .env import CatalogFile, PriceModel


@dataclass(frozen=True)
class FileModel:
    popularity: float
    store_prices: PriceModel
    fetch_prices: PriceModel
    discount: float

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount out of (0,1): {self.discount}")
        if not 0.0 <= self.popularity <= 1.0:
            raise ValueError(f"popularity out of [0,1]: {self.popularity}")

    @classmethod
    def from_file(cls, file: CatalogFile, discount: float) -> "FileModel":
        return cls(file.popularity, file.store_prices, file.fetch_prices, discount)

    def price_grid(self):
        """Joint price support as flat arrays ``(rho, lam, prob)``."""
        rho = np.asarray(self.store_prices.values)
        lam = np.asarray(self.fetch_prices.values)
        prob = np.outer(self.store_prices.probs, self.fetch_prices.probs)
        rr, ll = np.meshgrid(rho, lam, indexing="ij")
        return rr.ravel(), ll.ravel(), prob.ravel()

    @property
    def value_bound(self) -> float:
        """Cost-to-go of always fetching on demand and never caching."""
        return self.popularity * self.fetch_prices.mean / (1.0 - self.discount)


# ---------------------------------------------------------------------------
# Bellman backup and value iteration


_MASKS = [(r, s, FEASIBLE[r, s].ravel()) for s in (0, 1) for r in (0, 1)]
_ACT_W = np.array([act.fetch for act in ACTIONS])[:, None]
_ACT_A = np.array([act.cache for act in ACTIONS])[:, None]


def _backup_arrays(p, g, rho, lam, prob, v0, v1):
    # cost-plus-continuation of each action, shape (4, K) over the price support
    costs = _ACT_W * lam + _ACT_A * rho + g * np.where(_ACT_A == 1, v1, v0)
    out = [0.0, 0.0]
    for r, s, mask in _MASKS:
        pr = p if r else 1.0 - p
        if pr:
            out[s] += pr * float(costs[mask].min(axis=0) @ prob)
    return out


def backup(model: FileModel, table: ValueTable) -> ValueTable:
    """One Bellman backup: minimize over feasible actions, average over inputs."""
    rho, lam, prob = model.price_grid()
    return ValueTable(*_backup_arrays(model.popularity, model.discount, rho, lam, prob, table.v0, table.v1))


def iterate_values(model: FileModel, start: ValueTable | None = None) -> Iterator[ValueTable]:
    """Endless value-iteration sequence, starting from ``start`` (default zeros)."""
    table = start or ValueTable(0.0, 0.0)
    while True:
        yield table
        table = backup(model, table)


def _stop_threshold(tolerance: float, discount: float) -> float:
    # a step of size d leaves at most d * g / (1 - g) to the fixed point
    return tolerance * min(1.0, (1.0 - discount) / discount)


def value_iteration(model: FileModel, tolerance: float = 1e-9, max_iter: int = 1_000_000) -> ValueTable:
    """Iterate the backup from (0, 0).

    Stops once a sweep moves less than ``tolerance * (1 - g) / g`` (or
    ``tolerance`` if smaller), so the result is within ``tolerance`` of the
    fixed point in both entries.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    stop = _stop_threshold(tolerance, model.discount)
    grid = model.price_grid()
    v0 = v1 = 0.0
    for _ in range(max_iter):
        n0, n1 = _backup_arrays(model.popularity, model.discount, *grid, v0, v1)
        if max(abs(n0 - v0), abs(n1 - v1)) < stop:
            return ValueTable(n0, n1)
        v0, v1 = n0, n1
    raise RuntimeError(f"value iteration did not converge in {max_iter} sweeps")


def bellman_residual(model: FileModel, table: ValueTable) -> float:
    nxt = backup(model, table)
    return max(abs(table.v0 - nxt.v0), abs(table.v1 - nxt.v1))


def optimal_delta(model: FileModel, tolerance: float = 1e-9) -> float:
    return value_iteration(model, tolerance).delta(model.discount)


# ---------------------------------------------------------------------------
# Closed-form system in (V0, V1)


def _closed_form_rhs(model: FileModel, v0, v1):
    """Right-hand sides of the two-equation system, broadcasting over v0/v1.

    With delta = g(V0 - V1), keep/cache happens iff the price of doing so is
    at most delta (the same tie rule as the decision rule).
    """
    rho, lam, prob = model.price_grid()
    g, p = model.discount, model.popularity
    v0 = np.asarray(v0, dtype=float)[..., None]
    v1 = np.asarray(v1, dtype=float)[..., None]
    delta = g * (v0 - v1)
    keep = rho <= delta
    fill = lam + rho <= delta
    # cached, or just fetched for a request: pay rho to keep, else fall back to V0
    carry = np.where(keep, rho + g * v1, g * v0) @ prob
    # idle and empty: prefetch-and-cache if worth it
    idle = np.where(fill, lam + rho + g * v1, g * v0) @ prob
    rhs1 = carry
    rhs0 = (1.0 - p) * idle + p * (model.fetch_prices.mean + carry)
    return rhs0, rhs1


def closed_form_residual(model: FileModel, table: ValueTable) -> tuple[float, float]:
    """Absolute residuals ``(|V0 - rhs0|, |V1 - rhs1|)``."""
    rhs0, rhs1 = _closed_form_rhs(model, table.v0, table.v1)
    return abs(table.v0 - float(rhs0)), abs(table.v1 - float(rhs1))


def grid_search_solve(
    model: FileModel, grid_step: float, bounds: tuple[float, float] | None = None
) -> ValueTable:
    """Exhaustive 2-D search minimizing the summed closed-form residuals."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    lo, hi = bounds if bounds is not None else (0.0, model.value_bound + grid_step)
    axis = lo + grid_step * np.arange(int(np.floor((hi - lo) / grid_step + 1e-9)) + 1)
    best, best_val = None, np.inf
    chunk = max(1, 2_000_000 // (len(axis) * len(model.store_prices.values) * len(model.fetch_prices.values)))
    for start in range(0, len(axis), chunk):
        v0 = axis[start:start + chunk, None]
        v1 = axis[None, :]
        rhs0, rhs1 = _closed_form_rhs(model, *np.broadcast_arrays(v0, v1))
        score = np.abs(v0 - rhs0) + np.abs(v1 - rhs1)
        i, j = np.unravel_index(np.argmin(score), score.shape)
        if score[i, j] < best_val:
            best_val = score[i, j]
            best = ValueTable(float(axis[start + i]), float(axis[j]))
    return best


# ---------------------------------------------------------------------------
# Finite-horizon approximations


def finite_horizon_values(model: FileModel, horizon: int) -> ValueTable:
    """Values of the h-step look-ahead recursion.

    h = 0 is the myopic baseline (fetch on demand, never cache). Step h uses
    the decision rule driven by the marginal cost of step h - 1.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    p, g = model.popularity, model.discount
    table = ValueTable(p * model.fetch_prices.mean, 0.0)
    rho, lam, prob = model.price_grid()
    for _ in range(horizon):
        delta = table.delta(g)
        vals = []
        for s in (0, 1):
            total = 0.0
            for r, pr in ((0, 1.0 - p), (1, p)):
                w, a = bellman_decide_arrays(r, s, rho, lam, delta)
                cost = w * lam + a * rho + g * np.where(a == 1, table.v1, table.v0)
                total += pr * float(cost @ prob)
            vals.append(total)
        table = ValueTable(*vals)
    return table


def finite_horizon_delta(model: FileModel, horizon: int) -> float:
    """Marginal future cost used by the h-horizon policy (0 for h = 0)."""
    if horizon == 0:
        return 0.0
    return finite_horizon_values(model, horizon - 1).delta(model.discount)


# ---------------------------------------------------------------------------
# Exact evaluation of stationary policies on the cache-state chain

Decision = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], tuple]


def threshold_rule(delta: float) -> Decision:
    return lambda r, s, rho, lam: bellman_decide_arrays(r, s, rho, lam, delta)


def myopic_rule(r, s, rho, lam):
    r = np.asarray(r)
    s = np.asarray(s)
    w = r * (1 - s)
    a = ((lam > rho) & ((w == 1) | (s == 1))).astype(np.int8)
    return np.broadcast_to(w, a.shape).astype(np.int8), a


def evaluate_policy(model: FileModel, decide: Decision) -> ValueTable:
    """Discounted cost-to-go of a stationary policy from each cache state.

    Solves V = c + g P V on the two-state chain of the cache bit.
    """
    rho, lam, prob = model.price_grid()
    p, g = model.popularity, model.discount
    cost = np.zeros(2)
    trans = np.zeros((2, 2))
    for s in (0, 1):
        for r, pr in ((0, 1.0 - p), (1, p)):
            w, a = decide(np.full_like(rho, r, dtype=np.int8), np.full_like(rho, s, dtype=np.int8), rho, lam)
            cost[s] += pr * float((w * lam + a * rho) @ prob)
            q = pr * float(a @ prob)
            trans[s, 1] += q
            trans[s, 0] += pr - q
    v = np.linalg.solve(np.eye(2) - g * trans, cost)
    return ValueTable(float(v[0]), float(v[1]))


def stationary_cache_probability(model: FileModel, decide: Decision, state=(1, 1)) -> float:
    """Pr(a = 1) of a policy in a fixed (r, s) state, averaged over prices."""
    rho, lam, prob = model.price_grid()
    r, s = state
    _, a = decide(np.full_like(rho, r, dtype=np.int8), np.full_like(rho, s, dtype=np.int8), rho, lam)
    return float(a @ prob)


# ---------------------------------------------------------------------------
# Marginalized Q-factor ensemble


@dataclass(frozen=True)
class QTable:
    """Q-factors indexed ``[r, s, w, a]``; infeasible entries are NaN."""

    factors: np.ndarray
    active: np.ndarray = REDUCED

    def __getitem__(self, key):
        return float(self.factors[key])

    def implied_delta(self, model: FileModel) -> float:
        return implied_delta(self.factors, model)


def implied_delta(factors: np.ndarray, model: FileModel) -> float:
    # Q(1,0,1,0) - Q(1,0,1,1) = g(V0 - V1) - E[rho]
    return float(factors[1, 0, 1, 0] - factors[1, 0, 1, 1] + model.store_prices.mean)


def _action_probs(model: FileModel, delta: float, strict: bool = False) -> np.ndarray:
    """Pr(action = (w,a) | state (r,s)) under the threshold rule, shape (2,2,2,2).

    ``strict`` evaluates the rule just below ``delta`` (ties go against caching).
    """
    rho, lam, prob = model.price_grid()
    if strict:
        delta = np.nextafter(delta, -np.inf)
    out = np.zeros((2, 2, 2, 2))
    for r in (0, 1):
        for s in (0, 1):
            w, a = bellman_decide_arrays(r, s, rho, lam, delta)
            np.add.at(out[r, s], (w, a), prob)
    return out


def _factors_for_policy(model: FileModel, probs: np.ndarray) -> np.ndarray:
    """Solve the ensemble equation with the successor action law held fixed.

    Every factor equals ``E[lam] w + E[rho] a + g * c[a]`` where ``c[a]`` is the
    expected next factor given next cache state ``a``; that makes the system
    a 2x2 linear one in ``c``.
    """
    p, g = model.popularity, model.discount
    e_rho, e_lam = model.store_prices.mean, model.fetch_prices.mean
    w = np.arange(2)[:, None]
    a = np.arange(2)[None, :]
    base = e_lam * w + e_rho * a  # (w, a)
    req = np.array([1 - p, p])
    # law of the next action (w', a') given next cache state s' = a
    law = np.einsum("r,rswa->swa", req, probs)
    cost = np.einsum("swa,wa->s", law, base)
    trans = law.sum(axis=1)  # (s', a')
    c = np.linalg.solve(np.eye(2) - g * trans, cost)
    per_action = base + g * c[a]
    out = np.broadcast_to(per_action, (2, 2, 2, 2)).copy()
    out[~FEASIBLE] = np.nan
    return out


def q_factor_backup(model: FileModel, factors: np.ndarray) -> np.ndarray:
    """One application of the ensemble equation to every feasible factor.

    Successor actions are weighted by the probability that each is optimal
    under the threshold rule at the marginal cost the table implies.
    """
    p, g = model.popularity, model.discount
    e_rho, e_lam = model.store_prices.mean, model.fetch_prices.mean
    probs = _action_probs(model, implied_delta(factors, model))
    filled = np.where(FEASIBLE, factors, 0.0)
    cont = np.array([
        (1 - p) * np.sum(filled[0, a] * probs[0, a]) + p * np.sum(filled[1, a] * probs[1, a])
        for a in (0, 1)
    ])
    w = np.arange(2)[:, None]
    a = np.arange(2)[None, :]
    new = np.broadcast_to(e_lam * w + e_rho * a + g * cont[a], (2, 2, 2, 2)).copy()
    new[~FEASIBLE] = np.nan
    return new


def q_factor_ensemble(model: FileModel, tolerance: float = 1e-12) -> QTable:
    """Fixed point of the Q-factor ensemble equation.

    The successor action law is a threshold rule in the implied marginal cost
    ``delta``, so it is constant between consecutive breakpoints (support
    values of ``rho`` and ``rho + lam``) and the equation is linear there.
    Each piece is solved exactly; the first piece whose own implied ``delta``
    falls inside it is the answer. The map can jump over a breakpoint
    without crossing it, in which case the answer sits on the breakpoint with
    the tied support points cached with the probability that makes the
    implied ``delta`` equal it (found by bisection to ``tolerance``).

    With deterministic prices this equals the exact optimal Q-factors; with
    random prices it is a mean-field approximation.
    """
    rho, lam, _ = model.price_grid()
    cuts = np.unique(np.concatenate([rho, rho + lam]))

    def implied(probs):
        f = _factors_for_policy(model, probs)
        return implied_delta(f, model), f

    # pieces (-inf, c0), [c0, c1), ..., [ck, inf); test each piece's midpoint policy
    edges = np.concatenate([[-np.inf], cuts, [np.inf]])
    for lo, hi in itertools.pairwise(edges):
        probe = lo if np.isfinite(lo) else hi - 1.0
        d, f = implied(_action_probs(model, probe))
        if lo <= d < hi:
            return QTable(f)
    for c in cuts:
        below, at = _action_probs(model, c, strict=True), _action_probs(model, c)
        d_below, _ = implied(below)
        d_at, _ = implied(at)
        if (d_below - c) * (d_at - c) > 0:
            continue
        lo_w, hi_w = 0.0, 1.0
        sign = np.sign(d_below - c)
        while hi_w - lo_w > tolerance:
            mid = 0.5 * (lo_w + hi_w)
            d, _ = implied((1 - mid) * below + mid * at)
            if np.sign(d - c) == sign:
                lo_w = mid
            else:
                hi_w = mid
        return QTable(_factors_for_policy(model, (1 - lo_w) * below + lo_w * at))
    raise RuntimeError("no fixed point of the ensemble equation found")  # pragma: no cover
