"""Experiment configuration files.

Format: YAML, one mapping. Grammar (all keys optional unless marked)::

    seed: int                       # root seed (default 0)
    horizon: int >= 1               # slots T (default 600)
    replications: int >= 1          # N (default 10)
    discount: float in (0,1)        # default 0.9
    output: path                    # default "results"
    catalog:                        # required
      count: int >= 1               # required
      size_range: [low, high]       # default [1, 100]
      popularity: float | [float]   # fixed popularity (scalar or per file)
      popularity_range: [lo, hi]    # otherwise uniform draws (default [0, 0.5])
      store_prices: <price>         # default mean 2
      fetch_prices: <price>         # default mean 44
    schedule:
      spread_fraction: float >= 0   # default 0.1
      blocks:                       # list, each:
        - length: int >= 1
          popularity: float | [float]
          store_mean: float | [float]
          fetch_mean: float | [float]
    policy:                         # required
      kind: optimal_stationary | finite_horizon | myopic | stochastic_value
            | q_learning | mq_learning
      horizon: int >= 0             # finite_horizon only
      stepsize: float in (0,1)      # learners
      exploration: {kind: constant | glie_inverse_t, epsilon: float, floor: float}
      bootstrap: min | realized
      priority: score | advantage
      priced: bool
    capacity:
      modes: [instantaneous | long_term | stability | backhaul]
      hard_capacity: float > 0      # or hard_capacity_fraction of total size
      hard_capacity_fraction: float in (0,1]
      soft_capacity: float > 0
      link_budget: float >= 0
      dual_stepsize: float > 0
      dual_timing: proposed | projected

    <price> is either {mean: m, spread: s} (two-point, default spread 10% of
    the mean) or {values: [...], probs: [...]}.

Diagnostics carry the line number of the offending key and its dotted path.
Valid configs round-trip to a canonical form via :meth:`ExperimentConfig.canonical`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .env import (
    Block,
    PriceModel,
    ScenarioSchedule,
    build_catalog,
    model_from_mean,
    two_point_model,
)
from .learning import ExplorationSchedule
from .pricing import MODES, CapacityConfig
from .sim import POLICY_KINDS, PRIORITIES, PolicySpec, Scenario


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(diagnostics))


def _to_python(node, path, lines):
    """Convert a composed YAML node, recording the line of every key path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ConfigError([f"line {key_node.start_mark.line + 1}: {sub}: duplicate key"])
            lines[sub] = key_node.start_mark.line + 1
            out[key] = _to_python(value_node, sub, lines)
            lines[sub] = key_node.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


class _Checker:
    def __init__(self, lines):
        self.lines = lines
        self.errors: list[str] = []

    def fail(self, path, msg):
        line = self.lines.get(path)
        while line is None and "." in path:
            path_up = path.rsplit(".", 1)[0]
            line = self.lines.get(path_up)
            if line is None:
                path = path_up
        where = f"line {line}: " if line is not None else ""
        self.errors.append(f"{where}{path}: {msg}")

    def mapping(self, data, path, allowed):
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
            return {}
        for key in data:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return data

    def number(self, data, key, path, default=None, lo=None, hi=None, lo_open=False, hi_open=False,
               integer=False, msg=None):
        sub = f"{path}.{key}" if path else key
        value = data.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or (integer and not isinstance(value, int)):
            self.fail(sub, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
            return default
        bad = (lo is not None and (value <= lo if lo_open else value < lo)) or (
            hi is not None and (value >= hi if hi_open else value > hi)
        )
        if bad:
            lo_b = "(" if lo_open else "["
            hi_b = ")" if hi_open else "]"
            self.fail(sub, msg or f"{key} out of {lo_b}{lo if lo is not None else '-inf'},{hi if hi is not None else 'inf'}{hi_b}: {value}")
            return default
        return value

    def choice(self, data, key, path, options, default):
        value = data.get(key, default)
        if value not in options:
            self.fail(f"{path}.{key}", f"expected one of {', '.join(map(str, options))}, got {value!r}")
            return default
        return value


@dataclass
class ExperimentConfig:
    """Validated experiment: scenario, policy and run settings."""

    data: dict  # canonical nested dict
    scenario: Scenario
    policy: PolicySpec
    horizon: int
    replications: int
    seed: int
    output: str

    def canonical(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=None)


_TOP = {"seed", "horizon", "replications", "discount", "output", "catalog", "schedule", "policy", "capacity"}
_CATALOG = {"count", "size_range", "popularity", "popularity_range", "store_prices", "fetch_prices"}
_SCHEDULE = {"spread_fraction", "blocks"}
_BLOCK = {"length", "popularity", "store_mean", "fetch_mean"}
_POLICY = {"kind", "horizon", "stepsize", "exploration", "bootstrap", "priority", "priced"}
_EXPLORE = {"kind", "epsilon", "floor"}
_CAPACITY = {"modes", "hard_capacity", "hard_capacity_fraction", "soft_capacity", "link_budget",
             "dual_stepsize", "dual_timing"}


def _price(ck: _Checker, data, path, default_mean):
    if data is None:
        return model_from_mean(default_mean), {"mean": default_mean, "spread": 0.1 * default_mean}
    data = ck.mapping(data, path, {"mean", "spread", "values", "probs"})
    try:
        if "values" in data or "probs" in data:
            model = PriceModel(tuple(data.get("values", ())), tuple(data.get("probs", ())))
            return model, {"values": list(model.values), "probs": list(model.probs)}
        mean = ck.number(data, "mean", path, default_mean, lo=0)
        spread = ck.number(data, "spread", path, 0.1 * mean, lo=0)
        return two_point_model(mean, spread), {"mean": mean, "spread": spread}
    except (ValueError, TypeError) as exc:
        ck.fail(path, str(exc))
        return model_from_mean(default_mean), {}


def _range(ck, data, key, path, default):
    value = data.get(key, default)
    if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value)
            and value[0] <= value[1]):
        ck.fail(f"{path}.{key}", f"expected [low, high] with low <= high, got {value!r}")
        return default
    return value


def _override_value(ck, value, path, n_files, lo=0.0, hi=None):
    if value is None:
        return None
    values = value if isinstance(value, list) else [value]
    if isinstance(value, list) and len(value) != n_files:
        ck.fail(path, f"expected {n_files} per-file values, got {len(value)}")
        return None
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v < lo or (hi is not None and v > hi):
            ck.fail(path, f"value {v!r} out of range")
            return None
    return tuple(float(v) for v in value) if isinstance(value, list) else float(value)


def build_config(raw: dict, lines: dict | None = None) -> ExperimentConfig:
    """Validate a parsed config; raise :class:`ConfigError` listing every problem."""
    lines = lines or {}
    ck = _Checker(lines)
    raw = ck.mapping(raw, "", _TOP)
    canon: dict = {}
    seed = ck.number(raw, "seed", "", 0, lo=0, integer=True)
    horizon = ck.number(raw, "horizon", "", 600, lo=1, integer=True)
    reps = ck.number(raw, "replications", "", 10, lo=1, integer=True)
    gamma = ck.number(raw, "discount", "", 0.9, lo=0, hi=1, lo_open=True, hi_open=True,
                      msg=f"discount out of (0,1): {raw.get('discount')}")
    output = str(raw.get("output", "results"))
    canon.update(seed=seed, horizon=horizon, replications=reps, discount=gamma, output=output)

    # catalog
    if "catalog" not in raw:
        ck.fail("catalog", "required section missing")
    cat = ck.mapping(raw.get("catalog"), "catalog", _CATALOG)
    count = ck.number(cat, "count", "catalog", 1, lo=1, integer=True)
    size_range = _range(ck, cat, "size_range", "catalog", [1, 100])
    if size_range[0] <= 0:
        ck.fail("catalog.size_range", "sizes must be positive")
        size_range = [1, 100]
    pop_range = _range(ck, cat, "popularity_range", "catalog", [0.0, 0.5])
    popularity = _override_value(ck, cat.get("popularity"), "catalog.popularity", count, 0.0, 1.0)
    store, store_c = _price(ck, cat.get("store_prices"), "catalog.store_prices", 2.0)
    fetch, fetch_c = _price(ck, cat.get("fetch_prices"), "catalog.fetch_prices", 44.0)
    canon["catalog"] = {"count": count, "size_range": list(size_range), "popularity_range": list(pop_range),
                        "store_prices": store_c, "fetch_prices": fetch_c}
    if popularity is not None:
        canon["catalog"]["popularity"] = list(popularity) if isinstance(popularity, tuple) else popularity

    # schedule
    schedule = None
    if "schedule" in raw:
        sch = ck.mapping(raw["schedule"], "schedule", _SCHEDULE)
        spread = ck.number(sch, "spread_fraction", "schedule", 0.1, lo=0, hi=1)
        blocks_raw = sch.get("blocks")
        if not isinstance(blocks_raw, list) or not blocks_raw:
            ck.fail("schedule.blocks", "expected a non-empty list of blocks")
            blocks_raw = []
        blocks, blocks_c = [], []
        for i, b in enumerate(blocks_raw):
            path = f"schedule.blocks[{i}]"
            b = ck.mapping(b, path, _BLOCK)
            length = ck.number(b, "length", path, None, lo=1, integer=True)
            if length is None:
                ck.fail(path, "block length is required")
                continue
            kw = {}
            for key, hi in (("popularity", 1.0), ("store_mean", None), ("fetch_mean", None)):
                val = _override_value(ck, b.get(key), f"{path}.{key}", count, 0.0, hi)
                if val is not None:
                    kw[key] = val
            blocks.append(Block(length, **kw))
            blocks_c.append({"length": length, **{k: list(v) if isinstance(v, tuple) else v for k, v in kw.items()}})
        if blocks:
            schedule = ScenarioSchedule(tuple(blocks), spread)
            if schedule.total_length != horizon:
                ck.fail("schedule.blocks", f"block lengths sum to {schedule.total_length}, horizon is {horizon}")
        canon["schedule"] = {"spread_fraction": spread, "blocks": blocks_c}

    # policy
    if "policy" not in raw:
        ck.fail("policy", "required section missing")
    pol = ck.mapping(raw.get("policy"), "policy", _POLICY)
    if "kind" not in pol and "policy" in raw:
        ck.fail("policy.kind", "required key missing")
    kind = ck.choice(pol, "kind", "policy", POLICY_KINDS, "optimal_stationary")
    params: dict = {}
    if kind == "finite_horizon":
        params["horizon"] = ck.number(pol, "horizon", "policy", None, lo=0, integer=True)
        if params["horizon"] is None:
            ck.fail("policy.horizon", "finite_horizon needs horizon >= 0")
            params["horizon"] = 0
    if kind in ("stochastic_value", "q_learning", "mq_learning"):
        params["stepsize"] = ck.number(pol, "stepsize", "policy", 0.1, lo=0, hi=1, lo_open=True, hi_open=True)
    if kind in ("q_learning", "mq_learning"):
        ex = ck.mapping(pol.get("exploration"), "policy.exploration", _EXPLORE)
        ekind = ck.choice(ex, "kind", "policy.exploration", ("constant", "glie_inverse_t"), ex.get("kind", "constant"))
        eps = ck.number(ex, "epsilon", "policy.exploration", 0.01, lo=0, hi=1)
        floor = ck.number(ex, "floor", "policy.exploration", 0.0, lo=0, hi=1)
        params["exploration"] = {"kind": ekind, "epsilon": eps, "floor": floor}
        params["bootstrap"] = ck.choice(pol, "bootstrap", "policy", ("min", "realized"), "min")
    params["priority"] = ck.choice(pol, "priority", "policy", PRIORITIES, "score")
    priced = pol.get("priced", kind == "mq_learning")
    if not isinstance(priced, bool):
        ck.fail("policy.priced", "expected true or false")
        priced = False
    params["priced"] = priced
    canon["policy"] = {"kind": kind, **params}

    # capacity
    cap_cfg = CapacityConfig()
    zeta = None
    if "capacity" in raw:
        cap = ck.mapping(raw["capacity"], "capacity", _CAPACITY)
        modes = cap.get("modes", [])
        if not isinstance(modes, list) or any(m not in MODES for m in modes):
            ck.fail("capacity.modes", f"expected a list drawn from {', '.join(MODES)}, got {modes!r}")
            modes = []
        hard = ck.number(cap, "hard_capacity", "capacity", None, lo=0, lo_open=True)
        frac = ck.number(cap, "hard_capacity_fraction", "capacity", None, lo=0, hi=1, lo_open=True)
        if hard is not None and frac is not None:
            ck.fail("capacity.hard_capacity_fraction", "give hard_capacity or hard_capacity_fraction, not both")
        soft = ck.number(cap, "soft_capacity", "capacity", None, lo=0, lo_open=True)
        budget = ck.number(cap, "link_budget", "capacity", None, lo=0)
        zeta = ck.number(cap, "dual_stepsize", "capacity", None, lo=0, lo_open=True)
        timing = ck.choice(cap, "dual_timing", "capacity", ("proposed", "projected"), "proposed")
        canon["capacity"] = {k: v for k, v in dict(
            modes=sorted(modes), hard_capacity=hard, hard_capacity_fraction=frac, soft_capacity=soft,
            link_budget=budget, dual_stepsize=zeta, dual_timing=timing).items() if v is not None}
        cap_args = dict(modes=frozenset(modes), hard_capacity=hard, soft_capacity=soft, link_budget=budget,
                        dual_timing=timing)
    if ck.errors:
        raise ConfigError(ck.errors)

    files = build_catalog(count, tuple(size_range), seed, popularity, tuple(pop_range), store, fetch)
    if "capacity" in raw:
        if frac is not None:
            cap_args["hard_capacity"] = frac * sum(f.size for f in files)
        try:
            cap_cfg = CapacityConfig(**cap_args)
        except ValueError as exc:
            ck.fail("capacity", str(exc))
    try:
        scenario = Scenario(tuple(files), gamma, schedule, cap_cfg, zeta)
        policy = PolicySpec(kind, {**params, "exploration": ExplorationSchedule(**params["exploration"])}
                            if "exploration" in params else params)
    except ValueError as exc:
        ck.fail("policy", str(exc))
    if ck.errors:
        raise ConfigError(ck.errors)
    return ExperimentConfig(canon, scenario, policy, horizon, reps, seed, output)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError([f"{source}: {where}parse error: {getattr(exc, 'problem', exc)}"]) from None
    if node is None:
        raise ConfigError([f"{source}: empty configuration"])
    lines: dict = {}
    raw = _to_python(node, "", lines)
    if not isinstance(raw, dict):
        raise ConfigError([f"{source}: line 1: top level must be a mapping"])
    return build_config(raw, lines)


def validate_config(path) -> ExperimentConfig:
    """Load and validate ``path``; raises :class:`ConfigError` with line-anchored messages."""
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))
