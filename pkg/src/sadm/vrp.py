"""CVRP instances, generation, tours, validation, cost, and file formats.

Node 0 is always the depot; customers are numbered 1..n. Distances are
Euclidean and computed on demand, never stored as a matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# capacity anchors: (customer count, vehicle capacity)
_CAP_ANCHORS = ((20, 30), (50, 40), (100, 50))


class ValidationError(ValueError):
    """A tour violates the instance constraints."""


def capacity_for(n: int) -> int:
    """Vehicle capacity for instance size n.

    Piecewise-linear between the anchors 20->30, 50->40, 100->50, rounded to
    the nearest integer and clamped to [30, 50].
    """
    if n <= _CAP_ANCHORS[0][0]:
        return _CAP_ANCHORS[0][1]
    if n >= _CAP_ANCHORS[-1][0]:
        return _CAP_ANCHORS[-1][1]
    for (n0, c0), (n1, c1) in zip(_CAP_ANCHORS, _CAP_ANCHORS[1:]):
        if n0 <= n <= n1:
            return int(round(c0 + (n - n0) * (c1 - c0) / (n1 - n0)))
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class Instance:
    """One CVRP instance: depot, customer coordinates, integer demands."""

    n: int
    depot: np.ndarray          # [2]
    coords: np.ndarray         # [n, 2], row i-1 is customer i
    demands: np.ndarray        # [n] positive ints
    capacity: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "depot", np.asarray(self.depot, dtype=np.float64))
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.float64))
        object.__setattr__(self, "demands", np.asarray(self.demands, dtype=np.int64))
        if self.coords.shape != (self.n, 2):
            raise ValueError(f"coords shape {self.coords.shape} != ({self.n}, 2)")
        if self.demands.shape != (self.n,):
            raise ValueError(f"demands shape {self.demands.shape} != ({self.n},)")
        if np.any(self.demands <= 0) or np.any(self.demands > self.capacity):
            raise ValueError("demands must lie in (0, capacity]")
        if not (np.all(np.isfinite(self.coords)) and np.all(np.isfinite(self.depot))):
            raise ValueError("coordinates must be finite")

    def point(self, i: int) -> np.ndarray:
        """Coordinates of node i (0 = depot)."""
        return self.depot if i == 0 else self.coords[i - 1]

    def dist(self, i: int, j: int) -> float:
        a, b = self.point(i), self.point(j)
        return float(math.hypot(a[0] - b[0], a[1] - b[1]))

    def demand(self, i: int) -> int:
        return int(self.demands[i - 1])

    def replace_coords(self, depot: np.ndarray, coords: np.ndarray) -> "Instance":
        return Instance(self.n, depot, coords, self.demands, self.capacity, self.seed)


@dataclass(frozen=True)
class NormalizedInstance:
    """Instance view with demands divided by capacity; capacity becomes 1."""

    base: Instance
    demands_hat: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "demands_hat", self.base.demands.astype(np.float64) / self.base.capacity
        )


def normalize(inst: Instance) -> NormalizedInstance:
    return NormalizedInstance(inst)


@dataclass
class Tour:
    """A complete solution: list of routes, each a list of customer indices.

    The depot is implicit at both ends of every route.
    """

    routes: list

    def customers(self):
        for route in self.routes:
            yield from route

    def canonical(self) -> "Tour":
        """Drop empty routes (repeated depot visits collapse to nothing)."""
        return Tour([list(r) for r in self.routes if len(r) > 0])


def generate(n: int, seed: int) -> Instance:
    """Sample an instance: depot and customers uniform in the unit square,
    integer demands uniform in 1..9, capacity from the size anchors.

    Pure function of (n, seed)."""
    if n < 1:
        raise ValueError(f"instance size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    depot = rng.random(2)
    coords = rng.random((n, 2))
    demands = rng.integers(1, 10, size=n)
    return Instance(n, depot, coords, demands, capacity_for(n), seed)


def validate(inst: Instance, tour: Tour) -> list:
    """Return all constraint violations (empty list means the tour is valid)."""
    violations = []
    seen = {}
    for r, route in enumerate(tour.routes):
        for c in route:
            if not (1 <= c <= inst.n):
                violations.append(f"route {r}: unknown customer index {c}")
                continue
            seen[c] = seen.get(c, 0) + 1
        load = sum(inst.demand(c) for c in route if 1 <= c <= inst.n)
        if load > inst.capacity:
            violations.append(
                f"route {r}: demand {load} exceeds capacity {inst.capacity}"
            )
    for c in range(1, inst.n + 1):
        count = seen.get(c, 0)
        if count == 0:
            violations.append(f"customer {c} is never visited")
        elif count > 1:
            violations.append(f"customer {c} is visited {count} times")
    return violations


def route_cost(inst: Instance, route) -> float:
    if not route:
        return 0.0
    cost = inst.dist(0, route[0])
    for a, b in zip(route, route[1:]):
        cost += inst.dist(a, b)
    return cost + inst.dist(route[-1], 0)


def tour_cost(inst: Instance, tour: Tour) -> float:
    """Total Euclidean length over all routes (depot to depot each).

    Raises ValidationError for an invalid tour."""
    violations = validate(inst, tour)
    if violations:
        raise ValidationError("; ".join(violations))
    return sum(route_cost(inst, r) for r in tour.routes)


# ---------------------------------------------------------------------------
# line-oriented JSON file formats

def instance_to_json(inst: Instance) -> str:
    return json.dumps(
        {
            "n": inst.n,
            "seed": inst.seed,
            "capacity": inst.capacity,
            "depot": [inst.depot[0], inst.depot[1]],
            "coords": inst.coords.tolist(),
            "demands": inst.demands.tolist(),
        }
    )


def instance_from_json(line: str) -> Instance:
    d = json.loads(line)
    return Instance(
        n=d["n"],
        depot=np.asarray(d["depot"]),
        coords=np.asarray(d["coords"]),
        demands=np.asarray(d["demands"]),
        capacity=d["capacity"],
        seed=d["seed"],
    )


def write_instances(path, instances):
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(instance_to_json(inst) + "\n")


def read_instances(path) -> list:
    with open(path) as fh:
        return [instance_from_json(line) for line in fh if line.strip()]


def tour_to_json(inst: Instance, tour: Tour, cost: float) -> str:
    return json.dumps(
        {"instance_seed": inst.seed, "routes": [list(r) for r in tour.routes], "cost": cost}
    )


def tour_from_json(line: str) -> tuple:
    d = json.loads(line)
    return d["instance_seed"], Tour([list(r) for r in d["routes"]]), d["cost"]


def read_tours(path) -> list:
    with open(path) as fh:
        return [tour_from_json(line) for line in fh if line.strip()]
