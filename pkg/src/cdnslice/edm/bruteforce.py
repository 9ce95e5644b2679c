"""Exhaustive enumeration oracle for small assignment problems."""

from __future__ import annotations

import math

import numpy as np

from ..catalog import Catalog
from ..errors import TooLarge
from ..qoe import mos_flavored
from .model import MICRO, AssignmentSolution, SolveParams, Status, check_feasibility, estimated_load

DEFAULT_CAP = 10 ** 7


def solve_bruteforce(instances, catalog: Catalog, params: SolveParams,
                     cap: int = DEFAULT_CAP) -> AssignmentSolution:
    """Cheapest assignment that passes :func:`check_feasibility`, by enumeration.

    All ``p**n`` assignments are ranked by total cost, ties by the
    (instance id, flavor id) lexicographic order, and handed to the referee
    one by one.
    """
    insts = sorted(instances, key=lambda s: s.instance_id)
    fids = sorted(f.id for f in catalog.flavors)
    n, p = len(insts), len(fids)
    if n == 0:
        return AssignmentSolution({}, 0.0, math.nan, {}, Status.OPTIMAL)
    total = p ** n
    if total > cap:
        raise TooLarge(f"{p}^{n} = {total} assignments exceeds cap {cap}")

    prices = np.array([round(catalog.flavor(f).cost_per_hour * MICRO) for f in fids], dtype=np.int64)
    digits = np.unravel_index(np.arange(total), (p,) * n)  # row-major == lexicographic
    costs = np.zeros(total, dtype=np.int64)
    for d in digits:
        costs += prices[d]
    order = np.argsort(costs, kind="stable")

    for idx in order:
        mapping = {insts[i].instance_id: fids[int(digits[i][idx])] for i in range(n)}
        if not check_feasibility(mapping, insts, catalog, params):
            flavors = [catalog.flavor(mapping[s.instance_id]) for s in insts]
            qvals = [mos_flavored(s.sessions, f.vcpu, catalog.eta(f.id), params.sigma)
                     for s, f in zip(insts, flavors)]
            return AssignmentSolution(
                assignment=mapping,
                total_cost=int(costs[idx]) / MICRO,
                avg_qoe=math.fsum(qvals) / n,
                per_instance_load={s.instance_id: estimated_load(s, f.vcpu) for s, f in zip(insts, flavors)},
                status=Status.OPTIMAL, nodes=int(total))
    return AssignmentSolution.infeasible(nodes=int(total))
