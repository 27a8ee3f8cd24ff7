"""Classical reference solvers: Clarke-Wright parallel savings and an exact
brute-force oracle for tiny instances, plus optimality-gap reporting.

The oracle enumerates capacity-feasible customer subsets, solves each
subset's route order exactly (Held-Karp), and picks the cheapest partition
by dynamic programming over bitmasks. It is a true optimum for n <= 8.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .vrp import Instance, Tour

BRUTE_FORCE_LIMIT = 8


class SizeLimitError(ValueError):
    """Instance too large for exact enumeration."""


def clarke_wright(inst: Instance) -> Tour:
    """Parallel savings construction.

    Start from singleton routes; repeatedly merge the route endpoints with the
    largest saving s_ij = d(0,i) + d(0,j) - d(i,j) while capacity allows.
    Ties break lexicographically on (i, j)."""
    n = inst.n
    routes = {c: [c] for c in range(1, n + 1)}   # route id -> customer list
    loads = {c: inst.demand(c) for c in range(1, n + 1)}
    route_of = {c: c for c in range(1, n + 1)}   # endpoint customer -> route id

    savings = []
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            s = inst.dist(0, i) + inst.dist(0, j) - inst.dist(i, j)
            savings.append((s, i, j))
    savings.sort(key=lambda t: (-t[0], t[1], t[2]))

    for s, i, j in savings:
        ri, rj = route_of.get(i), route_of.get(j)
        if ri is None or rj is None or ri == rj:
            continue  # interior node or same route
        if loads[ri] + loads[rj] > inst.capacity:
            continue
        a, b = routes[ri], routes[rj]
        if a[-1] != i:
            a.reverse()
        if b[0] != j:
            b.reverse()
        # a now ends at i, b starts at j: splice them
        merged = a + b
        for endpoint in (a[0], a[-1], b[0], b[-1]):
            route_of.pop(endpoint, None)
        del routes[rj], loads[rj]
        routes[ri] = merged
        loads[ri] = loads.get(ri, 0) + sum(inst.demand(c) for c in b)
        route_of[merged[0]] = ri
        route_of[merged[-1]] = ri

    return Tour([routes[rid] for rid in sorted(routes)])


def _held_karp_route_costs(inst: Instance):
    """Optimal depot-to-depot cost (and path) for every customer subset."""
    n = inst.n
    d = np.zeros((n + 1, n + 1))
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            d[i, j] = d[j, i] = inst.dist(i, j)

    size = 1 << n
    INF = np.inf
    dp = np.full((size, n), INF)
    parent = np.full((size, n), -1, dtype=np.int64)
    for j in range(n):
        dp[1 << j, j] = d[0, j + 1]
    for mask in range(1, size):
        for j in range(n):
            bit = 1 << j
            if not mask & bit or dp[mask, j] == INF:
                continue
            rest = mask
            base = dp[mask, j]
            for k in range(n):
                kbit = 1 << k
                if mask & kbit:
                    continue
                cand = base + d[j + 1, k + 1]
                nmask = mask | kbit
                if cand < dp[nmask, k]:
                    dp[nmask, k] = cand
                    parent[nmask, k] = j

    route_cost = np.full(size, INF)
    route_end = np.full(size, -1, dtype=np.int64)
    for mask in range(1, size):
        closing = dp[mask] + d[1:, 0]
        j = int(np.argmin(closing))
        route_cost[mask] = closing[j]
        route_end[mask] = j

    def path_of(mask: int) -> list:
        out = []
        j = int(route_end[mask])
        m = mask
        while j >= 0:
            out.append(j + 1)
            pj = int(parent[m, j])
            m ^= 1 << j
            j = pj
        out.reverse()
        return out

    return route_cost, path_of


def brute_force_optimal(inst: Instance) -> tuple:
    """Exact optimum by partitioning customers into feasible routes.

    Hard limit n <= 8: the enumeration scales with ordered set partitions."""
    if inst.n > BRUTE_FORCE_LIMIT:
        raise SizeLimitError(
            f"brute force limited to n <= {BRUTE_FORCE_LIMIT}, got n = {inst.n}"
        )
    n = inst.n
    route_cost, path_of = _held_karp_route_costs(inst)

    demands = np.array([inst.demand(c) for c in range(1, n + 1)])
    feasible = np.zeros(1 << n, dtype=bool)
    for mask in range(1, 1 << n):
        load = sum(int(demands[j]) for j in range(n) if mask & (1 << j))
        feasible[mask] = load <= inst.capacity

    size = 1 << n
    best = np.full(size, np.inf)
    choice = np.zeros(size, dtype=np.int64)
    best[0] = 0.0
    for mask in range(1, size):
        low = mask & (-mask)  # the lowest remaining customer pins the subset
        sub = mask
        while sub:
            if sub & low and feasible[sub]:
                cand = best[mask ^ sub] + route_cost[sub]
                if cand < best[mask]:
                    best[mask] = cand
                    choice[mask] = sub
            sub = (sub - 1) & mask

    routes = []
    mask = size - 1
    while mask:
        sub = int(choice[mask])
        routes.append(path_of(sub))
        mask ^= sub
    return Tour(routes), float(best[size - 1])


@dataclass
class GapReport:
    """Per-instance method-vs-reference costs and optimality gaps."""

    rows: list = field(default_factory=list)  # (label, method_cost, ref_cost, gap)
    mean_cost: float = 0.0
    mean_gap: float = 0.0

    def to_csv(self) -> str:
        lines = ["instance_seed,cost,reference,gap"]
        for label, cost, ref, gap in self.rows:
            lines.append(f"{label},{cost:.6f},{ref:.6f},{gap:.6f}")
        lines.append(f"mean,{self.mean_cost:.6f},,{self.mean_gap:.6f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "instances": [
                    {"instance_seed": label, "cost": cost, "reference": ref, "gap": gap}
                    for label, cost, ref, gap in self.rows
                ],
                "mean_cost": self.mean_cost,
                "mean_gap": self.mean_gap,
            },
            indent=1,
        )


def gap_report(method_costs, reference_costs, labels=None) -> GapReport:
    """Per-instance gap = cost/reference - 1; the mean gap averages those."""
    method_costs = [float(c) for c in method_costs]
    reference_costs = [float(c) for c in reference_costs]
    if len(method_costs) != len(reference_costs):
        raise ValueError(
            f"got {len(method_costs)} method costs but "
            f"{len(reference_costs)} reference costs"
        )
    if any(r <= 0 for r in reference_costs):
        raise ValueError("reference costs must be strictly positive")
    if labels is None:
        labels = list(range(len(method_costs)))
    gaps = [c / r - 1.0 for c, r in zip(method_costs, reference_costs)]
    return GapReport(
        rows=list(zip(labels, method_costs, reference_costs, gaps)),
        mean_cost=float(np.mean(method_costs)) if method_costs else 0.0,
        mean_gap=float(np.mean(gaps)) if gaps else 0.0,
    )
