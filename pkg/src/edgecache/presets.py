"""Named experiments: parameter sweeps and the non-stationary capacity run.

Every preset maps a parameter dict to a set of curves. A curve is a name, a
column tuple and a list of rows; the CLI writes one CSV per curve.

Per-slot cost of a stationary policy is reported as ``(1 - g) * V0`` -- the
discount-normalized expected cost of a run that starts with an empty cache --
computed exactly on the finite supports. Simulated quantities reuse the
engine; independent single-file models are batched as the files of one
unconstrained scenario, which leaves each model's dynamics untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .env import Block, CatalogFile, ScenarioSchedule, build_catalog, model_from_mean, random_block_popularities
from .learning import ExplorationSchedule
from .planning import (
    FileModel,
    evaluate_policy,
    myopic_rule,
    stationary_cache_probability,
    threshold_rule,
    value_iteration,
)
from .pricing import INSTANTANEOUS, LONG_TERM, CapacityConfig
from .sim import PolicySpec, Scenario, simulate_ensemble


@dataclass
class Curve:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple]


def _grid(start, stop, step):
    return [round(float(x), 10) for x in np.arange(start, stop + step / 2, step)]


def make_model(p, rho_bar, lambda_bar, gamma, spread=0.1) -> FileModel:
    return FileModel(p, model_from_mean(rho_bar, spread), model_from_mean(lambda_bar, spread), gamma)


def optimal_slot_cost(model: FileModel) -> float:
    return (1 - model.discount) * value_iteration(model).v0


def myopic_slot_cost(model: FileModel) -> float:
    return (1 - model.discount) * evaluate_policy(model, myopic_rule).v0


def optimal_caching_ratio(model: FileModel, state=(1, 1)) -> float:
    delta = value_iteration(model).delta(model.discount)
    return stationary_cache_probability(model, threshold_rule(delta), state)


# ---------------------------------------------------------------------------


def fig2(prm) -> list[Curve]:
    curves = []
    for p in prm["ps"]:
        for lam in prm["lambda_bars"]:
            rows = [
                (rho, lam, p, optimal_slot_cost(make_model(p, rho, lam, prm["gamma"], prm["spread"])))
                for rho in prm["rho_bars"]
            ]
            curves.append(Curve(f"fig2_lambda{lam:g}_p{p:g}", ("rho_bar", "lambda_bar", "p", "avg_cost"), rows))
    return curves


def fig3(prm) -> list[Curve]:
    curves = []
    for lam in prm["lambda_bars"]:
        for rho in prm["rho_bars"]:
            rows = [
                (p, rho, lam, optimal_slot_cost(make_model(p, rho, lam, prm["gamma"], prm["spread"])))
                for p in prm["ps"]
            ]
            curves.append(Curve(f"fig3_lambda{lam:g}_rho{rho:g}", ("p", "rho_bar", "lambda_bar", "avg_cost"), rows))
    return curves


def fig4(prm) -> list[Curve]:
    curves = []
    p = prm["p"]
    for lam in prm["lambda_bars"]:
        rows = [
            (rho, lam, p, optimal_caching_ratio(make_model(p, rho, lam, prm["gamma"], prm["spread"])))
            for rho in prm["rho_bars"]
        ]
        curves.append(Curve(f"fig4_lambda{lam:g}", ("rho_bar", "lambda_bar", "p", "caching_ratio"), rows))
    return curves


def fig5(prm) -> list[Curve]:
    cols = ("rho_bar", "lambda_bar", "p", "gamma", "avg_cost")
    lam = prm["lambda_bar"]
    dp, myo = [], []
    for gamma in prm["gammas"]:
        for p in prm["ps"]:
            for rho in prm["rho_bars"]:
                m = make_model(p, rho, lam, gamma, prm["spread"])
                dp.append((rho, lam, p, gamma, optimal_slot_cost(m)))
                myo.append((rho, lam, p, gamma, myopic_slot_cost(m)))
    return [Curve("fig5_dp", cols, dp), Curve("fig5_myopic", cols, myo)]


def batch_scenario(models: list[FileModel], discount: float) -> Scenario:
    """Independent single-file models packed as the files of one scenario."""
    files = tuple(
        CatalogFile(i, 1.0, m.popularity, m.store_prices, m.fetch_prices) for i, m in enumerate(models)
    )
    return Scenario(files, discount)


def fig6(prm) -> list[Curve]:
    cols = ("rho_bar", "lambda_bar", "p", "avg_cost")
    points = [(p, lam, rho) for p in prm["ps"] for lam in prm["lambda_bars"] for rho in prm["rho_bars"]]
    models = [make_model(p, rho, lam, prm["gamma"], prm["spread"]) for p, lam, rho in points]
    sc = batch_scenario(models, prm["gamma"])
    q_spec = PolicySpec.make(
        "q_learning",
        stepsize=prm["beta"],
        exploration=ExplorationSchedule("constant", prm["epsilon"]),
    )
    burn = prm["burn_in"]
    learned = simulate_ensemble(sc, q_spec, prm["N"], prm["T"], prm["seed"]).file_costs
    planned = simulate_ensemble(sc, PolicySpec("optimal_stationary"), prm["N"], prm["T"], prm["seed"]).file_costs
    q_cost = learned[:, burn:].mean(axis=(0, 1))
    vi_cost = planned[:, burn:].mean(axis=(0, 1))
    curves = []
    for p in prm["ps"]:
        for lam in prm["lambda_bars"]:
            idx = [i for i, pt in enumerate(points) if pt[:2] == (p, lam)]
            tag = f"lambda{lam:g}_p{p:g}"
            curves.append(Curve(f"fig6_vi_{tag}", cols, [(points[i][2], lam, p, vi_cost[i]) for i in idx]))
            curves.append(Curve(f"fig6_q_{tag}", cols, [(points[i][2], lam, p, q_cost[i]) for i in idx]))
    return curves


FIG7_BLOCKS = ((44.0, 2.0), (40.0, 5.0), (38.0, 2.0))  # (fetch mean, storage mean) per block


def fig7_scenario(prm) -> Scenario:
    """Catalog with uniform sizes, three equal blocks, hard limit plus average limit."""
    n_files, horizon, seed = prm["F"], prm["T"], prm["seed"]
    n_blocks = len(FIG7_BLOCKS)
    catalog = build_catalog(n_files, tuple(prm["size_range"]), seed)
    pops = random_block_popularities(seed, n_blocks, n_files, *prm["popularity_range"])
    base, extra = divmod(horizon, n_blocks)
    blocks = tuple(
        Block(base + (extra if b == n_blocks - 1 else 0), popularity=pops[b], store_mean=rho, fetch_mean=lam)
        for b, (lam, rho) in enumerate(FIG7_BLOCKS)
    )
    capacity = prm["capacity_fraction"] * sum(f.size for f in catalog)
    modes = {INSTANTANEOUS, LONG_TERM} if prm["soft_pricing"] else {INSTANTANEOUS}
    return Scenario(
        tuple(catalog),
        prm["gamma"],
        ScenarioSchedule(blocks, prm["spread"]),
        CapacityConfig(frozenset(modes), hard_capacity=capacity),
        prm.get("zeta"),
    )


def fig7_policies(prm) -> dict[str, PolicySpec]:
    pr = prm["priority"]
    return {
        "mq": PolicySpec.make(
            "mq_learning",
            stepsize=prm["beta"],
            exploration=ExplorationSchedule("constant", prm["epsilon"]),
            priority=pr,
        ),
        "myopic": PolicySpec.make("myopic", priority=pr),
        "optimal": PolicySpec.make("optimal_stationary", priority=pr),
    }


def fig7(prm) -> list[Curve]:
    sc = fig7_scenario(prm)
    _, block_of = sc.blocks(prm["T"])
    cols = ("slot", "block", "avg_cost", "avg_cached_size", "avg_mu")
    curves = []
    for name, spec in fig7_policies(prm).items():
        res = simulate_ensemble(sc, spec, prm["N"], prm["T"], prm["seed"])
        cost, cached, mu = res.mean_cost, res.cached_size.mean(axis=0), res.mu.mean(axis=0)
        rows = [(t + 1, int(block_of[t]), cost[t], cached[t], mu[t]) for t in range(prm["T"])]
        curves.append(Curve(f"fig7_{name}", cols, rows))
    return curves


@dataclass(frozen=True)
class Preset:
    run: Callable[[dict], list[Curve]]
    defaults: dict
    aliases: dict  # CLI --replications / --horizon map to these keys


_COMMON = {"gamma": 0.9, "spread": 0.1}
PRESETS = {
    "fig2": Preset(fig2, {**_COMMON, "rho_bars": _grid(1, 80, 1), "lambda_bars": [43, 45, 50, 58], "ps": [0.3, 0.5]}, {}),
    "fig3": Preset(fig3, {**_COMMON, "ps": _grid(0, 1, 0.05), "rho_bars": [2, 10, 40], "lambda_bars": [45, 58]}, {}),
    "fig4": Preset(fig4, {**_COMMON, "p": 0.5, "rho_bars": _grid(1, 40, 1), "lambda_bars": [20, 30, 40, 50, 60]}, {}),
    "fig5": Preset(fig5, {**_COMMON, "lambda_bar": 53, "rho_bars": _grid(1, 40, 1), "ps": [0.3, 0.5], "gammas": [0.5, 0.9]}, {}),
    "fig6": Preset(
        fig6,
        {**_COMMON, "rho_bars": _grid(2, 30, 4), "lambda_bars": [29, 36, 44], "ps": [0.3, 0.5],
         "beta": 0.1, "epsilon": 0.01, "N": 20, "T": 3000, "burn_in": 1000, "seed": 0},
        {"replications": "N", "horizon": "T"},
    ),
    "fig7": Preset(
        fig7,
        {**_COMMON, "F": 50, "N": 100, "T": 600, "beta": 0.3, "epsilon": 0.01, "size_range": [1, 100],
         "popularity_range": [0.0, 0.5], "capacity_fraction": 0.4, "soft_pricing": True, "zeta": None,
         "priority": "score", "seed": 0},
        {"replications": "N", "horizon": "T"},
    ),
}


def preset_params(name: str, overrides: dict | None = None) -> dict:
    """Defaults of ``name`` updated with ``overrides``; unknown keys raise KeyError."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    params = dict(PRESETS[name].defaults)
    for key, value in (overrides or {}).items():
        if key not in params:
            raise KeyError(f"preset {name} has no parameter {key!r}; known: {', '.join(sorted(params))}")
        params[key] = value
    return params


def run_preset(name: str, overrides: dict | None = None) -> tuple[list[Curve], dict]:
    params = preset_params(name, overrides)
    return PRESETS[name].run(params), params
