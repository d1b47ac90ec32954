"""TSP/CVRP instances and the synthetic training-data recipe."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np


class Kind(str, Enum):
    TSP = "TSP"
    CVRP = "CVRP"


class DistanceMode(str, Enum):
    CONTINUOUS = "continuous"
    ROUNDED_INT = "rounded_int"


class InvalidConfigError(ValueError):
    pass


class NotApplicableError(ValueError):
    pass


@dataclass(eq=False)
class Instance:
    """A routing instance.

    For CVRP node 0 is the depot and ``demands[0] == 0``. TSP instances have
    no depot; every node is a customer and ``demands`` is ``None``.
    ``node_ids`` keeps the ids a file used so solutions can be written back in
    those ids; generated instances number nodes from 1.
    """

    kind: Kind
    coords: np.ndarray
    demands: Optional[np.ndarray] = None
    capacity: Optional[int] = None
    name: str = ""
    distance_mode: DistanceMode = DistanceMode.CONTINUOUS
    node_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.distance_mode = DistanceMode(self.distance_mode)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        if self.node_ids is None:
            self.node_ids = np.arange(1, len(self.coords) + 1, dtype=np.int64)
        else:
            self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        if self.demands is not None:
            self.demands = np.asarray(self.demands, dtype=np.int64)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_customers(self) -> int:
        return self.n_nodes - 1 if self.kind is Kind.CVRP else self.n_nodes

    @property
    def customers(self) -> np.ndarray:
        start = 1 if self.kind is Kind.CVRP else 0
        return np.arange(start, self.n_nodes)

    def validate(self):
        if self.n_customers < 1:
            raise InvalidConfigError("instance needs at least one customer")
        if not np.all(np.isfinite(self.coords)):
            raise InvalidConfigError("coordinates must be finite")
        if len(self.node_ids) != self.n_nodes:
            raise InvalidConfigError("node_ids length differs from node count")
        if self.kind is Kind.CVRP:
            if self.demands is None or self.capacity is None:
                raise InvalidConfigError("CVRP needs demands and capacity")
            if len(self.demands) != self.n_nodes:
                raise InvalidConfigError("demands length must equal N+1")
            if self.demands[0] != 0:
                raise InvalidConfigError("depot demand must be 0")
            if np.any(self.demands < 0):
                raise InvalidConfigError("demands must be non-negative")
            if self.demands.max() > self.capacity:
                raise InvalidConfigError("a customer demand exceeds the capacity")

    def with_coords(self, coords, distance_mode=None) -> "Instance":
        return Instance(
            kind=self.kind,
            coords=coords,
            demands=None if self.demands is None else self.demands.copy(),
            capacity=self.capacity,
            name=self.name,
            distance_mode=self.distance_mode if distance_mode is None else distance_mode,
            node_ids=self.node_ids.copy(),
        )

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        same_dem = (self.demands is None and other.demands is None) or (
            self.demands is not None
            and other.demands is not None
            and np.array_equal(self.demands, other.demands)
        )
        return (
            self.kind is other.kind
            and self.name == other.name
            and self.distance_mode is other.distance_mode
            and self.capacity == other.capacity
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.node_ids, other.node_ids)
            and same_dem
        )


@dataclass(frozen=True)
class ScaleSampler:
    """``Fixed(N)`` when ``lo == hi``, otherwise integer-uniform on ``[lo, hi]``."""

    lo: int
    hi: int

    @classmethod
    def fixed(cls, n: int) -> "ScaleSampler":
        return cls(n, n)

    def sample(self, rng: np.random.Generator) -> int:
        if self.lo == self.hi:
            return self.lo
        return int(rng.integers(self.lo, self.hi + 1))


@dataclass(frozen=True)
class GenConfig:
    scale: ScaleSampler = field(default_factory=lambda: ScaleSampler.fixed(100))
    route_size: Tuple[float, float, float] = (3.0, 6.0, 25.0)  # (min, mode, max)
    demand_range: Tuple[int, int] = (1, 9)
    seed: int = 0

    def __post_init__(self):
        if self.scale.lo > self.scale.hi:
            raise InvalidConfigError("scale lo > hi")
        if self.scale.lo < 1:
            raise InvalidConfigError("scale must be >= 1")
        a, c, b = self.route_size
        if not (a <= c <= b):
            raise InvalidConfigError("route size needs min <= mode <= max")
        if not (1 <= self.demand_range[0] <= self.demand_range[1]):
            raise InvalidConfigError("demand range must be positive and ordered")


def gen_capacity(demands, rng: np.random.Generator, route_size=(3.0, 6.0, 25.0), r=None):
    """Draw a route size ``r`` and return ``(r, ceil(r * mean customer demand))``.

    ``demands`` holds customer demands only. Passing ``r`` skips the draw.
    """
    d = np.asarray(demands, dtype=np.float64)
    if d.size == 0 or np.any(d <= 0):
        raise InvalidConfigError("customer demands must be non-empty and positive")
    mean = d.sum() / d.size
    forced = r is not None
    while True:
        if not forced:
            r = float(rng.triangular(*route_size))
        q = int(math.ceil(r * mean))
        if q >= d.max() or forced:
            return r, max(q, int(d.max()))


def gen_instance(config: GenConfig, kind, rng: Optional[np.random.Generator] = None,
                 n: Optional[int] = None, name: str = "") -> Instance:
    """Uniform ``[0, 1]^2`` instance; CVRP adds integer demands and a sampled capacity."""
    kind = Kind(kind)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if n is None:
        n = config.scale.sample(rng)
    if n < 1:
        raise InvalidConfigError("scale must be >= 1")
    if kind is Kind.TSP:
        coords = rng.random((n, 2))
        return Instance(kind, coords, name=name or f"tsp{n}")
    coords = rng.random((n + 1, 2))
    lo, hi = config.demand_range
    cust = rng.integers(lo, hi + 1, size=n)
    _, q = gen_capacity(cust, rng, config.route_size)
    demands = np.concatenate(([0], cust))
    return Instance(kind, coords, demands=demands, capacity=q, name=name or f"cvrp{n}")


def gen_batch(config: GenConfig, kind, rng: np.random.Generator, count: int, n: int):
    return [gen_instance(config, kind, rng, n=n) for _ in range(count)]


def expected_route_size(inst: Instance) -> float:
    """Capacity over mean customer demand: how many customers fit on one route."""
    if inst.kind is not Kind.CVRP:
        raise NotApplicableError("expected route size is defined for CVRP only")
    total = float(inst.demands[1:].sum())
    if total <= 0:
        raise NotApplicableError("total demand must be positive")
    return inst.capacity / (total / inst.n_customers)


def batch_size_for(n: int, bs_init: int = 120) -> int:
    # round half up
    return max(1, int(math.floor(bs_init * (100.0 / n) ** 1.6 + 0.5)))
