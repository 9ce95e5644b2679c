"""Depth-first branch and bound for the flavor-assignment model."""

from __future__ import annotations

import math

import numpy as np

from ..catalog import Catalog
from ..errors import BudgetExceeded, TooLarge
from .heuristic import solve_heuristic
from .model import MICRO, QOE_TOL, AssignmentSolution, Coefficients, SolveParams, Status, qoe_ok

DEFAULT_MAX_INSTANCES = 60
DEFAULT_NODE_LIMIT = 200_000


def solve_exact(instances, catalog: Catalog, params: SolveParams, incumbent=None,
                node_limit: int = DEFAULT_NODE_LIMIT, max_instances: int = DEFAULT_MAX_INSTANCES,
                seed_with_heuristic: bool = True) -> AssignmentSolution:
    """Minimum-cost feasible assignment.

    Instances are branched in id order and each instance's in-band flavors
    in (cost, id) order.  The bound at a node adds, for every unassigned
    instance, its cheapest in-band flavor that still fits the remaining
    capacity of its cloud; the average-QoE constraint and the interaction
    between unassigned instances are relaxed.  Among equal-cost optima the
    lexicographically smallest (instance id, flavor id) assignment is kept.

    When ``node_limit`` is reached the best incumbent comes back with status
    ``HeuristicFeasible``, its gap and ``budget_exceeded`` set.
    """
    coef = Coefficients(instances, catalog, params)
    n = len(coef.instances)
    if n > max_instances:
        raise TooLarge(f"{n} instances exceeds the exact-solver budget of {max_instances}")
    if n == 0:
        return AssignmentSolution({}, 0.0, math.nan, {}, Status.OPTIMAL, gap=0.0)

    band = coef.band_mask(params)
    cands: list[list[tuple[int, int, int, int, float]]] = []
    for i in range(n):
        cols = np.flatnonzero(band[i])
        if cols.size == 0:
            return AssignmentSolution.infeasible()
        cols = cols[np.lexsort((cols, coef.cost_micro[cols]))]
        cands.append([(int(coef.cost_micro[j]), int(j), int(coef.vcpu[j]), int(coef.cloud[j]),
                       float(coef.qoe[i, j])) for j in cols])

    qmax = [max(c[4] for c in row) for row in cands]
    qmax_suffix = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        qmax_suffix[i] = qmax_suffix[i + 1] + qmax[i]
    q_target = n * params.q_min - QOE_TOL - 1e-7

    best_cost = math.inf
    best_key: tuple[int, ...] | None = None
    if incumbent is None and seed_with_heuristic:
        incumbent = solve_heuristic(coef.instances, catalog, params, coef=coef)
    if incumbent is not None:
        mapping = getattr(incumbent, "assignment", incumbent)
        if mapping and getattr(incumbent, "feasible", True):
            col = {fid: k for k, fid in enumerate(coef.flavor_ids)}
            key = tuple(col[mapping[iid]] for iid in coef.instance_ids)
            if _key_feasible(key, coef, band, params):
                best_cost, best_key = sum(int(coef.cost_micro[j]) for j in key), key

    rem = [int(x) for x in coef.capacity]
    prefix: list[int] = []
    qsofar: list[float] = []
    nodes = 0
    aborted = False

    def bound_from(k: int) -> int | None:
        total = 0
        for row in cands[k:]:
            for cost, _, vcpu, cloud, _ in row:
                if vcpu <= rem[cloud]:
                    total += cost
                    break
            else:
                return None
        return total

    root = bound_from(0)
    if root is None:
        return AssignmentSolution.infeasible()

    def dfs(k: int, cost: int):
        nonlocal best_cost, best_key, nodes, aborted
        if aborted:
            return
        nodes += 1
        if nodes > node_limit:
            aborted = True
            return
        if k == n:
            key = tuple(prefix)
            if qoe_ok(qsofar, n, params.q_min) and (cost < best_cost or (cost == best_cost and key < best_key)):
                best_cost, best_key = cost, key
            return
        rest = bound_from(k)
        if rest is None:
            return
        bound = cost + rest
        if bound > best_cost:
            return
        if bound == best_cost and best_key is not None and tuple(prefix) > best_key[:k]:
            return
        if math.fsum(qsofar) + qmax_suffix[k] < q_target:
            return
        others = rest - _first_fit_cost(cands[k], rem)
        for c, j, vcpu, cloud, q in cands[k]:
            if vcpu > rem[cloud]:
                continue
            if cost + c + others > best_cost:
                # candidates are cost-sorted, so later ones are no better
                break
            rem[cloud] -= vcpu
            prefix.append(j)
            qsofar.append(q)
            dfs(k + 1, cost + c)
            qsofar.pop()
            prefix.pop()
            rem[cloud] += vcpu
            if aborted:
                return

    dfs(0, 0)

    if best_key is None:
        if aborted:
            raise BudgetExceeded(f"node limit {node_limit} reached without an incumbent")
        return AssignmentSolution.infeasible(nodes=nodes)
    if aborted:
        gap = (best_cost - root) / best_cost if best_cost > 0 else 0.0
        return coef.solution(list(best_key), Status.HEURISTIC, gap=gap, nodes=nodes, budget_exceeded=True)
    return coef.solution(list(best_key), Status.OPTIMAL, gap=0.0, nodes=nodes)


def _first_fit_cost(row, rem) -> int:
    for cost, _, vcpu, cloud, _ in row:
        if vcpu <= rem[cloud]:
            return cost
    return 0


def _key_feasible(key, coef: Coefficients, band: np.ndarray, params: SolveParams) -> bool:
    if not all(band[i, j] for i, j in enumerate(key)):
        return False
    used = np.zeros(len(coef.capacity), dtype=np.int64)
    for j in key:
        used[coef.cloud[j]] += coef.vcpu[j]
    if (used > coef.capacity).any():
        return False
    return qoe_ok([float(coef.qoe[i, j]) for i, j in enumerate(key)], len(key), params.q_min)


def solve(instances, catalog: Catalog, params: SolveParams, exact_max_n: int = DEFAULT_MAX_INSTANCES,
          node_limit: int = DEFAULT_NODE_LIMIT, incumbent=None) -> AssignmentSolution:
    """Exact branch and bound within its scale budget, the heuristic beyond it."""
    if len(instances) <= exact_max_n:
        return solve_exact(instances, catalog, params, incumbent=incumbent, node_limit=node_limit,
                           max_instances=exact_max_n)
    return solve_heuristic(instances, catalog, params, incumbent=incumbent)


__all__ = ["solve_exact", "solve", "MICRO"]
