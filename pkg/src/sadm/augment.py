"""Inference-time instance augmentation: rotation and dilation about the
center of the unit square.

Rotations are isometries, so a tour found on a rotated instance keeps its
cost. Dilations scale every distance by k, so tours found on dilated
instances are re-costed on the original coordinates before comparison.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from . import vrp

CENTER = (0.5, 0.5)

DEFAULT_ROTATIONS = tuple(math.radians(d) for d in range(0, 360, 45))
DEFAULT_DILATIONS = (1.0, 1.1, 1.2, 1.6, 1.8)


@dataclass(frozen=True)
class AugmentationSet:
    """Grid of rotation angles (radians) x dilation factors, plus identity."""

    rotations: tuple = DEFAULT_ROTATIONS
    dilations: tuple = DEFAULT_DILATIONS
    include_identity: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rotations", tuple(float(r) for r in self.rotations))
        object.__setattr__(self, "dilations", tuple(float(k) for k in self.dilations))
        for k in self.dilations:
            if not (np.isfinite(k) and k > 0):
                raise ValueError(f"dilation factors must be finite and positive, got {k}")
        for r in self.rotations:
            if not np.isfinite(r):
                raise ValueError(f"rotation angles must be finite, got {r}")

    def transforms(self) -> list:
        """All (theta, k) pairs, identity first when requested."""
        combos = [(theta, k) for theta in self.rotations for k in self.dilations]
        if self.include_identity and (0.0, 1.0) not in combos:
            combos.insert(0, (0.0, 1.0))
        return combos


def rotate(inst: vrp.Instance, theta: float) -> vrp.Instance:
    """Rotate all coordinates (depot included) by theta about (0.5, 0.5)."""
    a, b = CENTER
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    center = np.array([a, b])
    return inst.replace_coords(
        rot @ (inst.depot - center) + center,
        (inst.coords - center) @ rot.T + center,
    )


def dilate(inst: vrp.Instance, k: float) -> vrp.Instance:
    """Scale all coordinates about (0.5, 0.5) by factor k > 0."""
    if k <= 0:
        raise ValueError(f"dilation factor must be positive, got {k}")
    a, b = CENTER
    center = np.array([a, b])
    return inst.replace_coords(
        k * (inst.depot - center) + center,
        k * (inst.coords - center) + center,
    )


def transform(inst: vrp.Instance, theta: float, k: float) -> vrp.Instance:
    return dilate(rotate(inst, theta), k)


@dataclass
class AugmentedResult:
    best_tour: vrp.Tour
    best_cost: float                       # on the original coordinates
    table: list = field(default_factory=list)  # (theta, k, cost on originals)


def _greedy_tour(params: M.ModelParams, inst: vrp.Instance) -> vrp.Tour:
    with T.no_grad():
        res = M.rollout_batch(params, [inst], mode="greedy", bn_mode="eval")[0]
    return res.tour


def augmented_infer(params: M.ModelParams, inst: vrp.Instance,
                    augset: AugmentationSet | None = None,
                    threads: int = 1) -> AugmentedResult:
    """Greedy inference over every transformed copy of the instance.

    Route structures are applied back to the original coordinates before
    costing, so dilation members compete fairly; the cheapest tour wins.
    """
    augset = augset or AugmentationSet()
    combos = augset.transforms()

    def solve(combo):
        theta, k = combo
        tour = _greedy_tour(params, transform(inst, theta, k))
        return theta, k, tour, vrp.tour_cost(inst, tour)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(solve, combos))
    else:
        rows = [solve(c) for c in combos]

    best_theta, best_k, best_tour, best_cost = min(rows, key=lambda r: r[3])
    return AugmentedResult(
        best_tour=best_tour,
        best_cost=best_cost,
        table=[(theta, k, cost) for theta, k, tour, cost in rows],
    )


def dilation_ablation(params: M.ModelParams, instances: list, k_grid,
                      threads: int = 1) -> list:
    """Greedy cost per dilation factor over an evaluation set.

    Returns rows (k, mean_cost, cumulative_mean_cost) where the cumulative
    column takes each instance's best cost over the factors seen so far."""
    k_grid = [float(k) for k in k_grid]
    if not k_grid:
        raise ValueError("dilation grid must be non-empty")

    def costs_at(k):
        out = np.empty(len(instances))
        for i, inst in enumerate(instances):
            tour = _greedy_tour(params, dilate(inst, k))
            out[i] = vrp.tour_cost(inst, tour)
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_costs = list(pool.map(costs_at, k_grid))
    else:
        all_costs = [costs_at(k) for k in k_grid]

    rows = []
    best = np.full(len(instances), np.inf)
    for k, costs in zip(k_grid, all_costs):
        best = np.minimum(best, costs)
        rows.append((k, float(costs.mean()), float(best.mean())))
    return rows


def ablation_csv(rows) -> str:
    lines = ["k,mean_cost,cumulative_mean_cost"]
    for k, mean_cost, cum in rows:
        lines.append(f"{k:.6f},{mean_cost:.6f},{cum:.6f}")
    return "\n".join(lines) + "\n"
