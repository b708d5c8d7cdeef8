# %% [markdown]
# Many files, one cache
# ---------------------
# With a storage budget the per-file decisions interact. Two mechanisms are
# combined: a hard repair step that drops the least valuable caching
# decisions whenever the proposal would overflow, and a per-byte surcharge on
# storage that rises while the average stored size exceeds the budget.
# The run below uses three regimes of prices and popularity, 100 slots each.

# %%
import numpy as np

from edgecache.presets import fig7_policies, fig7_scenario, preset_params

prm = preset_params("fig7", {"F": 20, "N": 10, "T": 300})
scenario = fig7_scenario(prm)
budget = scenario.capacity.hard_capacity
print(f"{len(scenario.files)} files, total size {scenario.sizes.sum():.0f}, budget {budget:.0f}")

# %%
from edgecache.sim import simulate_ensemble

_, block_of = scenario.blocks(prm["T"])
for name, spec in fig7_policies(prm).items():
    res = simulate_ensemble(scenario, spec, prm["N"], prm["T"], prm["seed"])
    cost = res.mean_cost
    per_block = [cost[block_of == b].mean() for b in range(3)]
    print(f"{name:>8}: cost per block {np.round(per_block, 1)}, "
          f"max stored {res.cached_size.max():.0f}, final surcharge {res.mu[:, -1].mean():.2e}")
