# %% [markdown]
# Values and thresholds for a single file
# ---------------------------------------
# A file is requested with probability p each slot. Fetching it costs a
# random price lambda, keeping it for the next slot costs a random price rho.
# The planner reduces the problem to two numbers, the expected cost-to-go
# with and without the file in cache, and acts by comparing prices with the
# discounted gap between them.

# %%
import numpy as np

from edgecache.env import point_mass
from edgecache.planning import FileModel, value_iteration
from edgecache.planning import evaluate_policy, myopic_rule, threshold_rule
from edgecache.presets import make_model

# %% A case small enough to do by hand: always requested, rho = 1, lambda = 4.
hand = FileModel(1.0, point_mass(1.0), point_mass(4.0), 0.5)
v = value_iteration(hand)
print("V0 = %.6f, V1 = %.6f, threshold = %.3f" % (v.v0, v.v1, v.delta(hand.discount)))
# keeping costs 1 per slot and saves a fetch of 4, so the file is fetched once and kept

# %% Sweep the mean storage price and compare with the myopic rule.
gamma, lam, p = 0.9, 53.0, 0.3
print("\n rho_bar   optimal   myopic   (per-slot cost)")
for rho in (5, 10, 20, 30, 40, 60):
    m = make_model(p, rho, lam, gamma)
    opt = (1 - gamma) * value_iteration(m).v0
    myo = (1 - gamma) * evaluate_policy(m, myopic_rule).v0
    print(f"{rho:8.0f} {opt:9.3f} {myo:8.3f}")
print("always-fetch level p * lambda_bar =", p * lam)

# %% The threshold itself, as a function of storage price.
for rho in (2, 10, 30):
    m = make_model(p, rho, lam, gamma)
    d = value_iteration(m).delta(gamma)
    rule = threshold_rule(d)
    w, a = rule(1, 0, np.array(float(rho)), np.array(lam))
    print(f"rho_bar={rho:>2}: threshold {d:6.2f}; request with empty cache -> fetch {int(w)}, keep {int(a)}")
