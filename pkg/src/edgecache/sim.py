"""Slot-synchronous simulation of a cache serving many files.

The engine advances a batch of independent replications at once: every
per-file quantity is an array shaped (replications, files). Each
(replication, file) pair owns its random stream (see :mod:`edgecache.env`), so
results do not depend on how replications are batched.

Within a slot the order is: reveal requests and prices; policy proposes
actions (learners first absorb the previous slot's transition); multipliers
step; the hard-capacity repair runs; costs are recorded; cache bits advance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ActionPair, PriceSample, SlotState, bellman_decide_arrays, feasible_arrays
from .env import CatalogFile, ScenarioSchedule, draw_exogenous
from .learning import (
    ACTION_A,
    ACTION_W,
    BOOTSTRAP_MODES,
    ExplorationSchedule,
    action_scores,
    apply_update,
    choose_actions,
)
from .planning import FileModel, finite_horizon_delta, finite_horizon_values, value_iteration
from .pricing import (
    BACKHAUL,
    INSTANTANEOUS,
    LONG_TERM,
    STABILITY,
    CapacityConfig,
    default_dual_stepsize,
    project_c4_arrays,
    surcharges,
)

POLICY_KINDS = (
    "optimal_stationary",
    "finite_horizon",
    "myopic",
    "stochastic_value",
    "q_learning",
    "mq_learning",
)
NO_DATA = None  # caching_ratio result when no slot matches the filter
# Ranking of cache proposals in the hard-capacity repair (lowest first):
# "score" is the chosen caching action's own score; "advantage" is that score
# minus the best non-caching alternative, i.e. how much caching saves.
PRIORITIES = ("score", "advantage")


@dataclass(frozen=True)
class Scenario:
    """Catalog, optional block schedule, discount and capacity settings."""

    files: tuple[CatalogFile, ...]
    discount: float = 0.9
    schedule: ScenarioSchedule | None = None
    capacity: CapacityConfig = field(default_factory=CapacityConfig)
    dual_stepsize: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "files", tuple(self.files))
        if not self.files:
            raise ValueError("scenario needs at least one file")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount out of (0,1): {self.discount}")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([f.size for f in self.files])

    @property
    def zeta(self) -> float:
        if self.dual_stepsize is not None:
            return self.dual_stepsize
        return default_dual_stepsize(self.sizes)

    def blocks(self, horizon: int):
        """Per-block catalogs and the block id of each slot."""
        if self.schedule is None:
            return [list(self.files)], np.zeros(horizon, dtype=np.int64)
        return self.schedule.resolve(self.files), self.schedule.block_index(horizon)

    def block_models(self, horizon: int) -> list[list[FileModel]]:
        catalogs, _ = self.blocks(horizon)
        return [[FileModel.from_file(f, self.discount) for f in cat] for cat in catalogs]


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        params = dict(self.params)
        if self.kind == "finite_horizon":
            h = params.get("horizon")
            if h is None or int(h) != h or h < 0:
                raise ValueError("finite_horizon needs an integer horizon >= 0")
        if self.kind in ("stochastic_value", "q_learning", "mq_learning"):
            beta = params.setdefault("stepsize", 0.1)
            if not 0.0 < beta < 1.0:
                raise ValueError(f"stepsize must lie in (0,1), got {beta}")
        if self.kind in ("q_learning", "mq_learning"):
            expl = params.setdefault("exploration", ExplorationSchedule())
            if not isinstance(expl, ExplorationSchedule):
                params["exploration"] = ExplorationSchedule(**expl)
            if params.setdefault("bootstrap", "min") not in BOOTSTRAP_MODES:
                raise ValueError(f"bootstrap must be one of {BOOTSTRAP_MODES}")
        params.setdefault("priced", self.kind == "mq_learning")
        if params.setdefault("priority", "score") not in PRIORITIES:
            raise ValueError(f"priority must be one of {PRIORITIES}")
        object.__setattr__(self, "params", params)

    @classmethod
    def make(cls, kind: str, **params) -> "PolicySpec":
        return cls(kind, params)


@dataclass
class TrajectoryRecord:
    """Per-slot arrays of one run, shaped (T, F) unless noted."""

    requests: np.ndarray
    cached: np.ndarray  # state bit at the start of the slot
    fetch: np.ndarray
    cache: np.ndarray
    store_prices: np.ndarray
    fetch_prices: np.ndarray
    sizes: np.ndarray  # (F,)
    mu: np.ndarray  # (T,) multiplier in force during the slot
    nu: np.ndarray  # (T,)

    @property
    def file_costs(self) -> np.ndarray:
        return self.store_prices * self.cache + self.fetch_prices * self.fetch

    @property
    def slot_costs(self) -> np.ndarray:
        return self.file_costs.sum(axis=1)

    @property
    def cached_size(self) -> np.ndarray:
        return self.cache @ self.sizes

    @property
    def horizon(self) -> int:
        return self.requests.shape[0]

    def state(self, t: int, f: int) -> SlotState:
        return SlotState(int(self.requests[t, f]), int(self.cached[t, f]))

    def action(self, t: int, f: int) -> ActionPair:
        return ActionPair(int(self.fetch[t, f]), int(self.cache[t, f]))

    def prices(self, t: int, f: int) -> PriceSample:
        return PriceSample(float(self.store_prices[t, f]), float(self.fetch_prices[t, f]))

    def check(self) -> None:
        """Raise if the cache-state recursion or feasibility is violated."""
        if np.any(self.cached[0] != 0):
            raise AssertionError("initial cache state must be empty")
        if np.any(self.cached[1:] != self.cache[:-1]):
            raise AssertionError("cache state does not follow the previous caching decision")
        if not np.all(feasible_arrays(self.requests, self.cached, self.fetch, self.cache)):
            raise AssertionError("infeasible action recorded")


@dataclass
class EnsembleResult:
    """Per-replication slot series: (N, T), per-file costs (N, T, F)."""

    file_costs: np.ndarray
    cached_size: np.ndarray
    fetched_size: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    records: list | None = None
    factors: np.ndarray | None = None  # final Q tables (N, F, 2, 2, 2, 2) of Q learners

    @property
    def costs(self) -> np.ndarray:
        return self.file_costs.sum(axis=-1)

    @property
    def mean_cost(self) -> np.ndarray:
        return self.costs.mean(axis=0)


# ---------------------------------------------------------------------------
# Controllers: vectorized decision makers over a (n, F) batch


class _Controller:
    learns = False

    def __init__(self, spec: PolicySpec, scenario: Scenario, models, n: int):
        self.spec = spec
        self.g = scenario.discount
        self.models = models
        self.n = n
        self.n_files = len(scenario.files)
        self.priority = spec.params.get("priority", "score")

    def on_block(self, b: int) -> None:
        pass

    def propose(self, t, r, s, rho, lam, extra, u):
        """Return (w, a, key) arrays; ``key`` ranks cache proposals for repair."""
        raise NotImplementedError

    def commit(self, r, s, rho, lam, extra, w, a) -> None:
        pass


def _augment(rho, lam, extra):
    # surcharges are linear in the bits: extra[..., 1] - extra[..., 0] is the
    # storage surcharge, extra[..., 2] - extra[..., 0] the fetch surcharge
    if extra is None:
        return rho, lam
    return rho + (extra[..., 1] - extra[..., 0]), lam + (extra[..., 2] - extra[..., 0])


class _ThresholdController(_Controller):
    """Acts with the threshold rule and a fixed marginal cost per block."""

    def __init__(self, spec, scenario, models, n):
        super().__init__(spec, scenario, models, n)
        self.delta_by_block = []
        self.v_by_block = []
        for block in models:
            deltas, values = [], []
            for m in block:
                if spec.kind == "optimal_stationary":
                    v = value_iteration(m, spec.params.get("tolerance", 1e-9))
                    deltas.append(v.delta(self.g))
                else:
                    h = int(spec.params["horizon"])
                    v = finite_horizon_values(m, max(h - 1, 0))
                    deltas.append(finite_horizon_delta(m, h))
                values.append((v.v0, v.v1))
            self.delta_by_block.append(np.array(deltas))
            self.v_by_block.append(np.array(values))
        self.on_block(0)

    def on_block(self, b):
        self.delta = self.delta_by_block[b]
        self.v1 = self.v_by_block[b][:, 1]

    def propose(self, t, r, s, rho, lam, extra, u):
        rho_a, lam_a = _augment(rho, lam, extra)
        w, a = bellman_decide_arrays(r, s, rho_a, lam_a, self.delta)
        if self.priority == "advantage":
            key = w * lam_a * (r == 0) + rho_a - self.delta
        else:
            key = w * lam_a + rho_a + self.g * self.v1
        return w, a, key


class _MyopicController(_Controller):
    def propose(self, t, r, s, rho, lam, extra, u):
        rho_a, lam_a = _augment(rho, lam, extra)
        w = (r * (1 - s)).astype(np.int8)
        a = ((lam_a > rho_a) & ((w == 1) | (s == 1))).astype(np.int8)
        return w, a, w * lam_a + rho_a


class _ValueLearner(_Controller):
    learns = True

    def __init__(self, spec, scenario, models, n):
        super().__init__(spec, scenario, models, n)
        self.v = np.zeros((n, self.n_files, 2))
        self.beta = spec.params["stepsize"]

    def propose(self, t, r, s, rho, lam, extra, u):
        rho_a, lam_a = _augment(rho, lam, extra)
        delta = self.g * (self.v[..., 0] - self.v[..., 1])
        w, a = bellman_decide_arrays(r, s, rho_a, lam_a, delta)
        if self.priority == "advantage":
            return w, a, w * lam_a * (r == 0) + rho_a - delta
        return w, a, w * lam_a + rho_a + self.g * self.v[..., 1]

    def commit(self, r, s, rho, lam, extra, w, a):
        rho_a, lam_a = _augment(rho, lam, extra)
        cont = np.take_along_axis(self.v, a[..., None].astype(np.int64), axis=-1)[..., 0]
        target = w * lam_a + a * rho_a + self.g * cont
        idx = s[..., None].astype(np.int64)
        old = np.take_along_axis(self.v, idx, axis=-1)[..., 0]
        np.put_along_axis(self.v, idx, ((1 - self.beta) * old + self.beta * target)[..., None], axis=-1)


class _QLearner(_Controller):
    learns = True

    def __init__(self, spec, scenario, models, n):
        super().__init__(spec, scenario, models, n)
        self.q = np.zeros((n, self.n_files, 2, 2, 2, 2))
        init = spec.params.get("initial_factors")
        if init is not None:
            self.q[...] = np.asarray(init, dtype=float)
        self.visits = np.zeros(self.q.shape, dtype=np.int64)
        self.beta = spec.params["stepsize"]
        self.explore = spec.params["exploration"]
        self.realized = spec.params["bootstrap"] == "realized"
        self.frozen = bool(spec.params.get("frozen", False))
        self.pending = None

    def propose(self, t, r, s, rho, lam, extra, u):
        scores = action_scores(self.q, r, s, rho, lam, self.g, extra)
        eps = self.explore(t + 1)
        if self.pending is not None and not self.realized:
            apply_update(self.q, self.visits, *self.pending, scores.min(axis=-1), self.beta)
            scores = action_scores(self.q, r, s, rho, lam, self.g, extra)
        k = choose_actions(scores, r, s, eps, u[..., 0], u[..., 1])
        if self.pending is not None and self.realized:
            target = np.take_along_axis(scores, k[..., None], axis=-1)[..., 0]
            apply_update(self.q, self.visits, *self.pending, target, self.beta)
        key = np.take_along_axis(scores, k[..., None], axis=-1)[..., 0]
        if self.priority == "advantage":
            key = key - np.where(ACTION_A == 0, scores, np.inf).min(axis=-1)
        return ACTION_W[k].astype(np.int8), ACTION_A[k].astype(np.int8), key

    def commit(self, r, s, rho, lam, extra, w, a):
        if not self.frozen:
            self.pending = (r, s, 2 * w.astype(np.int64) + a)


_CONTROLLERS = {
    "optimal_stationary": _ThresholdController,
    "finite_horizon": _ThresholdController,
    "myopic": _MyopicController,
    "stochastic_value": _ValueLearner,
    "q_learning": _QLearner,
    "mq_learning": _QLearner,
}


# ---------------------------------------------------------------------------
# Engine


def _simulate(scenario: Scenario, policy: PolicySpec, horizon: int, seed: int,
              replications: Sequence[int], record: bool = False) -> EnsembleResult:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    catalogs, block_of = scenario.blocks(horizon)
    draws = draw_exogenous(catalogs, block_of, seed, replications)
    n, n_files = len(replications), len(scenario.files)
    models = scenario.block_models(horizon)
    ctrl = _CONTROLLERS[policy.kind](policy, scenario, models, n)

    cfg = scenario.capacity
    priced = policy.params.get("priced", False) and (
        cfg.storage_mode is not None or BACKHAUL in cfg.modes
    )
    project = INSTANTANEOUS in cfg.modes
    sizes = scenario.sizes
    zeta = scenario.zeta

    s = np.zeros((n, n_files), dtype=np.int8)
    mu = np.zeros(n)
    nu = np.zeros(n)
    file_costs = np.zeros((n, horizon, n_files))
    cached_size = np.zeros((n, horizon))
    fetched_size = np.zeros((n, horizon))
    mu_hist = np.zeros((n, horizon))
    nu_hist = np.zeros((n, horizon))
    if record:
        rec = {k: np.zeros((n, horizon, n_files), dtype=np.int8) for k in ("r", "s", "w", "a")}
        rec_rho = np.zeros((n, horizon, n_files))
        rec_lam = np.zeros((n, horizon, n_files))

    block = 0
    for t in range(horizon):
        if block_of[t] != block:
            block = int(block_of[t])
            ctrl.on_block(block)
        r = draws.requests[:, :, t]
        rho = draws.store_prices[:, :, t]
        lam = draws.fetch_prices[:, :, t]
        u = draws.explore[:, :, t]
        extra = surcharges(cfg, mu[:, None], nu[:, None], sizes, s) if priced else None
        mu_hist[:, t] = mu
        nu_hist[:, t] = nu

        w, a, key = ctrl.propose(t, r, s, rho, lam, extra, u)
        w_prop, a_prop = w, a
        if project:
            w, a = project_c4_arrays(w, a, key, sizes, r, s, cfg.hard_capacity)
        if priced:
            wd, ad = (w_prop, a_prop) if cfg.dual_timing == "proposed" else (w, a)
            if cfg.storage_mode == LONG_TERM:
                mu = np.maximum(0.0, mu + zeta * (ad @ sizes - cfg.soft_capacity))
            elif cfg.storage_mode == STABILITY:
                mu = np.maximum(0.0, mu + zeta * ((ad - s) @ sizes))
            if BACKHAUL in cfg.modes:
                nu = np.maximum(0.0, nu + zeta * (wd @ sizes - cfg.link_budget))
        ctrl.commit(r, s, rho, lam, extra, w, a)

        file_costs[:, t] = rho * a + lam * w
        cached_size[:, t] = a @ sizes
        fetched_size[:, t] = w @ sizes
        if record:
            rec["r"][:, t], rec["s"][:, t], rec["w"][:, t], rec["a"][:, t] = r, s, w, a
            rec_rho[:, t], rec_lam[:, t] = rho, lam
        s = a.astype(np.int8)

    records = None
    if record:
        records = [
            TrajectoryRecord(rec["r"][i], rec["s"][i], rec["w"][i], rec["a"][i], rec_rho[i],
                             rec_lam[i], sizes.copy(), mu_hist[i], nu_hist[i])
            for i in range(n)
        ]
    factors = ctrl.q if isinstance(ctrl, _QLearner) else None
    return EnsembleResult(file_costs, cached_size, fetched_size, mu_hist, nu_hist, records, factors)


def simulate_ensemble(scenario: Scenario, policy: PolicySpec, replications: int, horizon: int,
                      seed: int, record: bool = False, batch_cells: int = 5000) -> EnsembleResult:
    """Run ``replications`` independent trajectories, batching for speed.

    ``batch_cells`` bounds replications x files per batch; batching never
    changes results.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    per = max(1, batch_cells // len(scenario.files))
    parts = []
    for start in range(0, replications, per):
        reps = range(start, min(start + per, replications))
        parts.append(_simulate(scenario, policy, horizon, seed, reps, record))
    def join(name):
        if getattr(parts[0], name) is None:
            return None
        return np.concatenate([getattr(p, name) for p in parts])

    records = sum((p.records for p in parts), []) if record else None
    return EnsembleResult(join("file_costs"), join("cached_size"), join("fetched_size"),
                          join("mu"), join("nu"), records, join("factors"))


def run_trajectory(scenario: Scenario, policy: PolicySpec, horizon: int, seed: int,
                   replication: int = 0) -> TrajectoryRecord:
    return _simulate(scenario, policy, horizon, seed, [replication], record=True).records[0]


def run_ensemble(scenario: Scenario, policy: PolicySpec, replications: int, horizon: int,
                 seed: int) -> np.ndarray:
    """Average per-slot cost over ``replications`` runs, shape (T,)."""
    return simulate_ensemble(scenario, policy, replications, horizon, seed).mean_cost


# ---------------------------------------------------------------------------
# Metrics and baselines


def discounted_cost(record_or_costs, discount: float) -> float:
    """``sum_t discount**t * c_t`` with the first slot undiscounted."""
    costs = getattr(record_or_costs, "slot_costs", record_or_costs)
    costs = np.asarray(costs, dtype=float)
    return float(costs @ discount ** np.arange(costs.shape[-1]))


def caching_ratio(record: TrajectoryRecord, state_filter: SlotState | None = None):
    """Share of decisions with ``a = 1``; :data:`NO_DATA` when nothing matches."""
    mask = np.ones(record.cache.shape, dtype=bool)
    if state_filter is not None:
        mask = (record.requests == state_filter.request) & (record.cached == state_filter.cached)
    total = int(mask.sum())
    if total == 0:
        return NO_DATA
    return float(record.cache[mask].sum()) / total


def myopic_policy(state: SlotState, prices: PriceSample) -> ActionPair:
    """Fetch only on demand; keep iff fetching would cost more than storing."""
    w = state.request * (1 - state.cached)
    a = int(prices.fetch_price > prices.store_price and (w == 1 or state.cached == 1))
    return ActionPair(w, a)


def single_file_scenario(popularity: float, store_prices, fetch_prices, discount: float,
                         size: float = 1.0, **kw) -> Scenario:
    return Scenario((CatalogFile(0, size, popularity, store_prices, fetch_prices),), discount, **kw)
