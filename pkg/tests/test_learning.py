import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hand_model
from edgecache.core import FEASIBLE, STATES, ActionPair, PriceSample, SlotState, bellman_decide
from edgecache.env import two_point_model
from edgecache.learning import (
    ExplorationSchedule,
    QEstimate,
    ValueEstimate,
    action_scores,
    choose_actions,
    greedy_policy,
    q_learning_step,
    stochastic_value_step,
)
from edgecache.planning import FileModel, value_iteration
from edgecache.sim import PolicySpec, simulate_ensemble, single_file_scenario

A = ActionPair


class FixedUniforms:
    """Stand-in generator returning scripted uniforms."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, n):
        out, self.values = self.values[:n], self.values[n:]
        return np.array(out)


def test_stochastic_value_examples():
    act, est = stochastic_value_step(ValueEstimate(0, 0, 0.5), SlotState(0, 0), PriceSample(1, 4), 0.9)
    assert act == A(0, 0) and (est.v0_hat, est.v1_hat) == (0, 0)
    act, est = stochastic_value_step(ValueEstimate(10, 2, 0.5), SlotState(1, 0), PriceSample(1, 4), 0.9)
    assert act == A(1, 1) and est.v0_hat == pytest.approx(8.4) and est.v1_hat == 2
    act, est = stochastic_value_step(ValueEstimate(10, 2, 0.5), SlotState(0, 1), PriceSample(8, 4), 0.9)
    assert act == A(0, 0) and est.v1_hat == pytest.approx(5.5) and est.v0_hat == 10
    with pytest.raises(ValueError):
        ValueEstimate(0, 0, 1.0)


def test_q_step_single_slot_example():
    est = QEstimate(stepsize=0.3)
    act, new = q_learning_step(
        est, SlotState(1, 0), PriceSample(1, 4), next_request=1, next_prices=PriceSample(1, 4),
        discount=0.9, epsilon_t=0.0, rng=FixedUniforms([0.5, 0.5]),
    )
    assert act == A(1, 0)
    assert new.factors[1, 0, 1, 0] == pytest.approx(1.2)
    assert np.count_nonzero(new.factors) == 1
    assert new.visit_counts[1, 0, 1, 0] == 1


def test_pure_exploration_is_uniform():
    n = 100_000
    u = np.random.default_rng(0).random((n, 2))
    scores = np.tile(action_scores(np.zeros((2, 2, 2, 2)), 1, 0, 1.0, 4.0, 0.9), (n, 1))
    k = choose_actions(scores, 1, 0, 1.0, u[:, 0], u[:, 1])
    assert set(np.unique(k)) == {2, 3}  # (1,0) and (1,1)
    assert abs(np.mean(k == 2) - 0.5) < 0.01
    # the scalar step consumes the same two uniforms per call
    rng = np.random.default_rng(0)
    acts = [
        q_learning_step(QEstimate(), SlotState(1, 0), PriceSample(1, 4), 0, PriceSample(1, 4), 0.9, 1.0, rng)[0]
        for _ in range(200)
    ]
    assert [2 * a.fetch + a.cache for a in acts] == k[:200].tolist()


def test_realized_bootstrap_uses_given_action():
    q = np.zeros((2, 2, 2, 2))
    q[0, 0, 0, 0] = 10.0
    args = (SlotState(1, 0), PriceSample(1, 4), 0, PriceSample(2, 4), 0.5, 0.0)
    # greedy picks (1,0); next state is (0,0) where (0,0) scores 5, (1,0) 4, (1,1) 6
    act, new = q_learning_step(QEstimate(q, 0.5, bootstrap="realized"), *args,
                               FixedUniforms([0.9, 0.0]), next_action=A(0, 0))
    assert act == A(1, 0) and new.factors[1, 0, 1, 0] == pytest.approx(2.5)
    _, best = q_learning_step(QEstimate(q, 0.5), *args, FixedUniforms([0.9, 0.0]))
    assert best.factors[1, 0, 1, 0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        q_learning_step(QEstimate(q, 0.5, bootstrap="realized"), *args, FixedUniforms([0.9, 0.0]))


def test_epsilon_validation():
    with pytest.raises(ValueError):
        q_learning_step(QEstimate(), SlotState(0, 0), PriceSample(1, 4), 0, PriceSample(1, 4), 0.9, 1.5,
                        np.random.default_rng(0))
    with pytest.raises(ValueError):
        QEstimate(stepsize=0)
    with pytest.raises(ValueError):
        ExplorationSchedule("sometimes")


def test_exploration_schedules():
    assert ExplorationSchedule("constant", 0.05)(7) == 0.05
    sched = ExplorationSchedule("glie_inverse_t", floor=0.01)
    assert sched(1) == 1.0 and sched(10) == 0.1 and sched(1000) == 0.01


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(0.05, 0.95),
    st.sampled_from([0.5, 0.9]),
    st.floats(0.05, 0.9),
)
def test_single_entry_update_and_bounded_iterates(seed, p, g, beta):
    rng = np.random.default_rng(seed)
    pmax = 50.0
    est = QEstimate(stepsize=beta)
    state = SlotState(int(rng.random() < p), 0)
    prices = PriceSample(*rng.uniform(0, pmax, 2))
    for _ in range(300):
        nxt_r = int(rng.random() < p)
        nxt_prices = PriceSample(*rng.uniform(0, pmax, 2))
        act, new = q_learning_step(est, state, prices, nxt_r, nxt_prices, g, 0.2, rng)
        assert np.count_nonzero(new.factors != est.factors) <= 1
        assert new.visit_counts.sum() == est.visit_counts.sum() + 1
        assert np.all(new.factors >= 0) and np.all(new.factors <= 2 * pmax / (1 - g) + 1e-9)
        est, state, prices = new, SlotState(nxt_r, act.cache), nxt_prices


def test_glie_visits_every_feasible_pair():
    rng = np.random.default_rng(3)
    p = 0.5
    sched = ExplorationSchedule("glie_inverse_t", floor=0.01)
    est = QEstimate()
    store, fetch = two_point_model(2, 0.2), two_point_model(44, 4.4)
    state = SlotState(int(rng.random() < p), 0)
    prices = PriceSample(store.sample(rng), fetch.sample(rng))
    for t in range(1, 10_001):
        nxt_r = int(rng.random() < p)
        nxt = PriceSample(store.sample(rng), fetch.sample(rng))
        act, est = q_learning_step(est, state, prices, nxt_r, nxt, 0.9, sched(t), rng)
        state, prices = SlotState(nxt_r, act.cache), nxt
    assert np.all(est.visit_counts[FEASIBLE] > 0)
    assert np.all(est.visit_counts[~FEASIBLE] == 0)


def test_greedy_policy_examples():
    pol = greedy_policy(QEstimate(), 0.9)
    assert pol(SlotState(1, 1), PriceSample(3, 7)) == A(0, 0)
    # tie between (0,0) and (0,1) in state (0,1) at zero storage price -> lexicographic (0,0)
    assert pol(SlotState(0, 1), PriceSample(0, 7)) == A(0, 0)


def test_converged_table_on_hand_case():
    """Deterministic hand case: learner's greedy action in (1,0) is fetch-and-cache."""
    m = hand_model()
    sc = single_file_scenario(1.0, m.store_prices, m.fetch_prices, m.discount)
    spec = PolicySpec.make("q_learning", stepsize=0.1, exploration={"kind": "constant", "epsilon": 0.05})
    q = simulate_ensemble(sc, spec, 1, 50_000, seed=1).factors[0, 0]
    pol = greedy_policy(QEstimate(q), m.discount)
    assert pol(SlotState(1, 0), PriceSample(1, 4)) == A(1, 1)
    assert pol(SlotState(1, 1), PriceSample(1, 4)) == A(0, 1)
    # the on-path continuation (keep while cached) reproduces V1 = 2
    assert q[1, 1, 0, 1] == pytest.approx(2, abs=1e-6)


def test_stationary_learning_matches_planner():
    """Random-price model with a clear margin between thresholds and prices."""
    m = FileModel(0.5, two_point_model(4, 0.4), two_point_model(40, 4), 0.9)
    delta = value_iteration(m).delta(0.9)
    sc = single_file_scenario(m.popularity, m.store_prices, m.fetch_prices, m.discount)
    spec = PolicySpec.make("q_learning", stepsize=0.1, exploration={"kind": "constant", "epsilon": 0.05})
    q = simulate_ensemble(sc, spec, 1, 50_000, seed=4).factors[0, 0]
    pol = greedy_policy(QEstimate(q), m.discount)
    for state in STATES:
        for rho in m.store_prices.values:
            for lam in m.fetch_prices.values:
                pr = PriceSample(rho, lam)
                assert pol(state, pr) == bellman_decide(state, pr, delta)
