"""Shared oracles and model generators for the test suite.

The oracles are deliberately naive re-implementations (explicit loops over
requests, price pairs and actions, feasibility written out by hand) so they
share no code with the package.
"""

import numpy as np
from hypothesis import strategies as st

from edgecache.env import PriceModel
from edgecache.planning import FileModel


def feasible(r, s, w, a):
    return r <= w + s and a <= s + w


def support(model: PriceModel):
    return list(zip(model.values, model.probs))


def oracle_values(model: FileModel, tol=1e-12, max_iter=200_000):
    """Value iteration by brute-force enumeration, to ``tol`` of the fixed point."""
    p, g = model.popularity, model.discount
    rhos, lams = support(model.store_prices), support(model.fetch_prices)
    v = [0.0, 0.0]
    for _ in range(max_iter):
        new = []
        for s in (0, 1):
            total = 0.0
            for r, pr in ((0, 1 - p), (1, p)):
                for rho, qr in rhos:
                    for lam, ql in lams:
                        best = min(
                            w * lam + a * rho + g * v[a]
                            for w in (0, 1)
                            for a in (0, 1)
                            if feasible(r, s, w, a)
                        )
                        total += pr * qr * ql * best
            new.append(total)
        step = max(abs(new[0] - v[0]), abs(new[1] - v[1]))
        v = new
        if step * g / (1 - g) < tol:
            return tuple(v)
    raise RuntimeError("oracle did not converge")


def oracle_best_actions(r, s, rho, lam, v0, v1, g):
    """All minimizers of cost-plus-continuation over the feasible set."""
    scores = {
        (w, a): w * lam + a * rho + g * (v1 if a else v0)
        for w in (0, 1)
        for a in (0, 1)
        if feasible(r, s, w, a)
    }
    best = min(scores.values())
    return {k for k, v in scores.items() if abs(v - best) <= 1e-9 * max(1.0, abs(best))}, scores


def random_price_model(rng, n_points, low=0.0, high=60.0):
    values = np.sort(rng.uniform(low, high, size=n_points))
    probs = rng.dirichlet(np.ones(n_points))
    probs[-1] = 1.0 - probs[:-1].sum()
    return PriceModel(tuple(values), tuple(probs))


def random_model(rng, discounts=(0.5, 0.9, 0.99), n_points=None) -> FileModel:
    k_rho = n_points or int(rng.choice([2, 4]))
    k_lam = n_points or int(rng.choice([2, 4]))
    return FileModel(
        float(rng.uniform(0, 1)),
        random_price_model(rng, k_rho, 0.0, 20.0),
        random_price_model(rng, k_lam, 0.0, 60.0),
        float(rng.choice(discounts)),
    )


@st.composite
def price_models(draw, max_value=60.0, sizes=(1, 2, 4)):
    k = draw(st.sampled_from(sizes))
    values = draw(st.lists(st.floats(0.0, max_value, allow_nan=False), min_size=k, max_size=k))
    weights = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    total = sum(weights)
    probs = [w / total for w in weights]
    probs[-1] = 1.0 - sum(probs[:-1])
    return PriceModel(tuple(values), tuple(probs))


@st.composite
def file_models(draw, discounts=(0.5, 0.9)):
    return FileModel(
        draw(st.floats(0.0, 1.0)),
        draw(price_models(20.0)),
        draw(price_models(60.0)),
        draw(st.sampled_from(discounts)),
    )


HAND = dict(popularity=1.0, store=1.0, fetch=4.0, discount=0.5)


def hand_model() -> FileModel:
    from edgecache.env import point_mass

    return FileModel(1.0, point_mass(1.0), point_mass(4.0), 0.5)


# one "criterion N: PASS/FAIL ..." line per acceptance check, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
