# %% [markdown]
# Learning the same decisions from experience
# -------------------------------------------
# Here the price and request distributions are hidden from the controller.
# A tabular learner keeps one continuation estimate per (state, action) and
# acts greedily on "price now + discounted estimate", exploring a little.

# %%
import numpy as np

from edgecache.core import STATES, PriceSample, bellman_decide
from edgecache.env import two_point_model
from edgecache.learning import ExplorationSchedule, QEstimate, greedy_policy
from edgecache.planning import FileModel, value_iteration
from edgecache.sim import PolicySpec, simulate_ensemble, single_file_scenario

model = FileModel(0.5, two_point_model(4, 0.4), two_point_model(40, 4), 0.9)
scenario = single_file_scenario(model.popularity, model.store_prices, model.fetch_prices, model.discount)

# %% Train for 50k slots with a constant step and 5% exploration.
spec = PolicySpec.make("q_learning", stepsize=0.1, exploration=ExplorationSchedule("constant", 0.05))
res = simulate_ensemble(scenario, spec, replications=1, horizon=50_000, seed=4)
learned = greedy_policy(QEstimate(res.factors[0, 0]), model.discount)

# %% Compare decision by decision with the planner.
delta = value_iteration(model).delta(model.discount)
agree = total = 0
for state in STATES:
    for rho in model.store_prices.values:
        for lam in model.fetch_prices.values:
            pr = PriceSample(rho, lam)
            agree += learned(state, pr) == bellman_decide(state, pr, delta)
            total += 1
print(f"learned policy agrees with the planner on {agree}/{total} (state, price) cases")

# %% Running cost: exploration keeps costing while it is switched on.
costs = res.costs[0]
for lo, hi in ((0, 1000), (1000, 10_000), (40_000, 50_000)):
    print(f"slots {lo:>6}-{hi:<6} mean cost while learning {costs[lo:hi].mean():.2f}")

# %% Freeze the table, stop exploring, and replay 10k fresh slots next to the planner.
frozen = PolicySpec.make("q_learning", exploration=ExplorationSchedule("constant", 0.0),
                         initial_factors=res.factors, frozen=True)
greedy = simulate_ensemble(scenario, frozen, 1, 10_000, seed=5).costs[0].mean()
planned = simulate_ensemble(scenario, PolicySpec("optimal_stationary"), 1, 10_000, seed=5).costs[0].mean()
print(f"frozen greedy policy {greedy:.3f} vs planner {planned:.3f} per slot")
