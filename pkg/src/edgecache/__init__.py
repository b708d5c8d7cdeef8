"""Fetch/cache decisions for an edge cache under dynamic storage and fetch prices.

Modules
-------
core      states, actions, feasibility, slot cost, threshold decision rule
env       price models, catalogs, block schedules, seeded random streams
planning  value iteration and other solvers for known distributions
learning  stochastic value estimates and tabular Q-learning
pricing   dual-price handling of storage / back-haul limits, constrained learner
sim       vectorized trajectory and ensemble simulation, metrics, baselines
presets   the named experiment sweeps; config / cli for files and the command line
"""

from .core import (
    ACTIONS,
    STATES,
    ActionPair,
    PriceSample,
    SlotState,
    ValueTable,
    bellman_decide,
    feasible_actions,
    instantaneous_cost,
    reduced_actions,
)
from .env import (
    AffinePriceDecomposition,
    Block,
    CatalogFile,
    PriceModel,
    ScenarioSchedule,
    build_catalog,
    compose_affine_price,
    sample_slot,
    two_point_model,
)
from .learning import (
    ExplorationSchedule,
    QEstimate,
    ValueEstimate,
    greedy_policy,
    q_learning_step,
    stochastic_value_step,
)
from .planning import (
    FileModel,
    QTable,
    bellman_residual,
    closed_form_residual,
    finite_horizon_values,
    grid_search_solve,
    q_factor_ensemble,
    value_iteration,
)
from .pricing import (
    CapacityConfig,
    DualState,
    augment_prices,
    dual_update_backhaul,
    dual_update_capacity,
    dual_update_stability,
    mq_learning_step,
    project_c4,
    stability_adjusted_decide,
)
from .sim import (
    PolicySpec,
    Scenario,
    TrajectoryRecord,
    caching_ratio,
    discounted_cost,
    myopic_policy,
    run_ensemble,
    run_trajectory,
    simulate_ensemble,
)

__version__ = "0.1.0"
