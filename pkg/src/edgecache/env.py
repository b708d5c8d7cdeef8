"""Stochastic inputs: requests, prices, file catalogs and block schedules.

Seeding rule
------------
Every random stream descends from one integer root seed through
:class:`numpy.random.SeedSequence` spawn keys:

* ``(0, replication, file_id)`` -- the per-file stream of one trajectory
  (requests, prices, exploration draws),
* ``(1,)`` -- catalog construction (sizes, default popularities),
* ``(2, block)`` -- per-block popularity draws of generated schedules.

Streams with different keys are statistically independent, so replications
and files can be simulated in any order or in parallel with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import PriceSample

TRAJECTORY_KEY = 0
CATALOG_KEY = 1
SCHEDULE_KEY = 2

DEFAULT_SPREAD = 0.1


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the sub-stream ``key`` of root ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def trajectory_rng(seed: int, replication: int, file_id: int) -> np.random.Generator:
    return make_rng(seed, TRAJECTORY_KEY, replication, file_id)


@dataclass(frozen=True)
class PriceModel:
    """Finite-support price distribution."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(q) for q in self.probs)
        if len(values) == 0 or len(values) != len(probs):
            raise ValueError("support values and probabilities must be non-empty and aligned")
        if any(v < 0 for v in values):
            raise ValueError(f"negative price in support {values}")
        if any(q < 0 for q in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got {probs}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def max_value(self) -> float:
        return max(self.values)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def from_uniform(self, u):
        """Map uniforms on [0, 1) to support values by inverse CDF."""
        cum = self.cumulative
        idx = np.searchsorted(cum[:-1], u, side="right")
        return np.asarray(self.values)[idx]

    def sample(self, rng: np.random.Generator, size=None):
        return self.from_uniform(rng.random(size))


def point_mass(value: float) -> PriceModel:
    return PriceModel((value,), (1.0,))


def two_point_model(mean: float, spread: float) -> PriceModel:
    """Equiprobable support ``{mean - spread, mean + spread}``."""
    if spread < 0:
        raise ValueError(f"spread must be nonnegative, got {spread}")
    if mean < spread:
        raise ValueError(f"mean {mean} < spread {spread} would give a negative price")
    if spread == 0:
        return point_mass(mean)
    return PriceModel((mean - spread, mean + spread), (0.5, 0.5))


def model_from_mean(mean: float, spread_fraction: float = DEFAULT_SPREAD) -> PriceModel:
    return two_point_model(mean, spread_fraction * mean)


@dataclass(frozen=True)
class AffinePriceDecomposition:
    """Price = size * (shared_per_bit + file_per_bit) + shared_const + file_const."""

    shared_per_bit: float = 0.0
    file_per_bit: float = 0.0
    shared_const: float = 0.0
    file_const: float = 0.0


def compose_affine_price(decomp: AffinePriceDecomposition, size: float) -> float:
    price = size * (decomp.shared_per_bit + decomp.file_per_bit) + (
        decomp.shared_const + decomp.file_const
    )
    if price < 0:
        raise ValueError(f"composed price {price} is negative for size {size}")
    return price


@dataclass(frozen=True)
class CatalogFile:
    id: int
    size: float
    popularity: float
    store_prices: PriceModel
    fetch_prices: PriceModel

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError(f"file {self.id}: size must be positive, got {self.size}")
        if not 0.0 <= self.popularity <= 1.0:
            raise ValueError(f"file {self.id}: popularity must lie in [0, 1], got {self.popularity}")


def sample_slot(file: CatalogFile, rng: np.random.Generator) -> tuple[int, PriceSample]:
    """Draw one slot's request bit and prices for ``file``.

    Consumes exactly three uniforms: request, storage price, fetch price.
    """
    u_req, u_rho, u_lam = rng.random(3)
    request = int(u_req < file.popularity)
    prices = PriceSample(
        float(file.store_prices.from_uniform(u_rho)), float(file.fetch_prices.from_uniform(u_lam))
    )
    return request, prices


def build_catalog(
    count: int,
    size_range: tuple[float, float],
    seed: int,
    popularity: float | Sequence[float] | None = None,
    popularity_range: tuple[float, float] = (0.0, 0.5),
    store_prices: PriceModel | None = None,
    fetch_prices: PriceModel | None = None,
) -> list[CatalogFile]:
    """Catalog with i.i.d. uniform sizes on ``size_range``.

    Popularities default to i.i.d. uniform draws on ``popularity_range``; prices
    default to the two-point models around 2 (storage) and 44 (fetching).
    """
    low, high = size_range
    if count < 1:
        raise ValueError("count must be at least 1")
    if not 0 < low <= high:
        raise ValueError(f"invalid size range {size_range}")
    rng = make_rng(seed, CATALOG_KEY)
    sizes = rng.uniform(low, high, size=count) if high > low else np.full(count, float(low))
    if popularity is None:
        pops = rng.uniform(*popularity_range, size=count)
    else:
        pops = np.broadcast_to(np.asarray(popularity, dtype=float), (count,))
    store_prices = store_prices or model_from_mean(2.0)
    fetch_prices = fetch_prices or model_from_mean(44.0)
    return [
        CatalogFile(i, float(sizes[i]), float(pops[i]), store_prices, fetch_prices)
        for i in range(count)
    ]


@dataclass(frozen=True)
class Block:
    """A stationary stretch of slots.

    Each override is ``None`` (keep the catalog value), a scalar applied to all
    files, or one value per file. Price overrides are means; the distribution
    is the two-point model with the schedule's spread fraction.
    """

    length: int
    popularity: float | tuple[float, ...] | None = None
    store_mean: float | tuple[float, ...] | None = None
    fetch_mean: float | tuple[float, ...] | None = None

    def __post_init__(self):
        if int(self.length) != self.length or self.length < 1:
            raise ValueError(f"block length must be a positive integer, got {self.length}")
        for name in ("popularity", "store_mean", "fetch_mean"):
            value = getattr(self, name)
            if value is not None and not np.isscalar(value):
                object.__setattr__(self, name, tuple(float(v) for v in value))


@dataclass(frozen=True)
class ScenarioSchedule:
    blocks: tuple[Block, ...]
    spread_fraction: float = DEFAULT_SPREAD

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("a schedule needs at least one block")

    @property
    def total_length(self) -> int:
        return sum(b.length for b in self.blocks)

    def block_index(self, horizon: int) -> np.ndarray:
        """Block id of every slot ``0 .. horizon-1``; the last block extends if needed."""
        ids = np.concatenate([np.full(b.length, i) for i, b in enumerate(self.blocks)])
        if horizon > len(ids):
            ids = np.concatenate([ids, np.full(horizon - len(ids), len(self.blocks) - 1)])
        return ids[:horizon]

    def resolve(self, catalog: Sequence[CatalogFile]) -> list[list[CatalogFile]]:
        """Per-block catalogs with the overrides applied."""
        out = []
        n = len(catalog)
        for block in self.blocks:
            pops = _per_file(block.popularity, n)
            stores = _per_file(block.store_mean, n)
            fetches = _per_file(block.fetch_mean, n)
            files = []
            for i, f in enumerate(catalog):
                files.append(
                    CatalogFile(
                        f.id,
                        f.size,
                        f.popularity if pops is None else pops[i],
                        f.store_prices
                        if stores is None
                        else model_from_mean(stores[i], self.spread_fraction),
                        f.fetch_prices
                        if fetches is None
                        else model_from_mean(fetches[i], self.spread_fraction),
                    )
                )
            out.append(files)
        return out


def _per_file(value, n):
    if value is None:
        return None
    if np.isscalar(value):
        return [float(value)] * n
    if len(value) != n:
        raise ValueError(f"override has {len(value)} entries for {n} files")
    return [float(v) for v in value]


def equal_blocks(
    horizon: int, count: int, **overrides: Sequence
) -> ScenarioSchedule:
    """``count`` blocks of equal length covering ``horizon`` (remainder to the last).

    Keyword overrides map a :class:`Block` field to one value per block.
    """
    base = horizon // count
    lengths = [base] * count
    lengths[-1] += horizon - base * count
    blocks = []
    for i, length in enumerate(lengths):
        kw = {k: v[i] for k, v in overrides.items()}
        blocks.append(Block(length, **kw))
    return ScenarioSchedule(tuple(blocks))


def random_block_popularities(
    seed: int, n_blocks: int, n_files: int, low: float = 0.0, high: float = 0.5
) -> list[tuple[float, ...]]:
    """Independent uniform popularities per block and file."""
    return [
        tuple(make_rng(seed, SCHEDULE_KEY, b).uniform(low, high, size=n_files))
        for b in range(n_blocks)
    ]


@dataclass
class ExogenousDraws:
    """Realized inputs for a batch of trajectories, arrays shaped (n, F, T)."""

    requests: np.ndarray
    store_prices: np.ndarray
    fetch_prices: np.ndarray
    explore: np.ndarray  # (n, F, T, 2) uniforms for epsilon-greedy
    block: np.ndarray = field(default=None)  # (T,)


def draw_exogenous(
    block_catalogs: Sequence[Sequence[CatalogFile]],
    block_of_slot: np.ndarray,
    seed: int,
    replications: Sequence[int],
) -> ExogenousDraws:
    """Realize requests, prices and exploration uniforms.

    Per (replication, file) stream the draw order is fixed: a (T, 3) block of
    uniforms for request / storage price / fetch price, then a (T, 2) block
    for exploration. Uniforms are mapped through the block-specific
    distributions, so policies compared under one seed see the same
    randomness (common random numbers).
    """
    horizon = len(block_of_slot)
    n_files = len(block_catalogs[0])
    n = len(replications)
    shape = (n, n_files, horizon)
    req = np.empty(shape, dtype=np.int8)
    rho = np.empty(shape)
    lam = np.empty(shape)
    explore = np.empty(shape + (2,))
    for i, rep in enumerate(replications):
        for f in range(n_files):
            rng = trajectory_rng(seed, rep, block_catalogs[0][f].id)
            u = rng.random((horizon, 3))
            explore[i, f] = rng.random((horizon, 2))
            for b, files in enumerate(block_catalogs):
                mask = block_of_slot == b
                if not mask.any():
                    continue
                cf = files[f]
                req[i, f, mask] = u[mask, 0] < cf.popularity
                rho[i, f, mask] = cf.store_prices.from_uniform(u[mask, 1])
                lam[i, f, mask] = cf.fetch_prices.from_uniform(u[mask, 2])
    return ExogenousDraws(req, rho, lam, explore, np.asarray(block_of_slot))
