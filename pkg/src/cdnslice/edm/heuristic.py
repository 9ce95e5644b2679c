"""Greedy-plus-repair solver for assignment problems too large for branch and bound."""

from __future__ import annotations

import math

import numpy as np

from ..catalog import Catalog
from .model import (QOE_TOL, AssignmentSolution, Coefficients, SolveParams, Status,
                    check_feasibility, qoe_ok)


def relaxed_lower_bound(coef: Coefficients, band: np.ndarray) -> int | None:
    """Sum of per-instance cheapest in-band flavors (micro-USD/h), or None if some row is empty."""
    if not band.any(axis=1).all():
        return None
    costs = np.where(band, coef.cost_micro[None, :], np.iinfo(np.int64).max)
    return int(costs.min(axis=1).sum())


class _State:
    def __init__(self, coef: Coefficients, band: np.ndarray):
        self.coef = coef
        self.band = band
        self.n = len(coef.instances)
        self.cur = np.full(self.n, -1, dtype=np.int64)
        self.used = np.zeros(len(coef.capacity), dtype=np.int64)

    def place(self, i: int, j: int):
        c = self.coef
        if self.cur[i] >= 0:
            self.used[c.cloud[self.cur[i]]] -= c.vcpu[self.cur[i]]
        self.cur[i] = j
        self.used[c.cloud[j]] += c.vcpu[j]

    def spare(self) -> np.ndarray:
        return self.coef.capacity - self.used

    def fits_matrix(self) -> np.ndarray:
        """fits[i, j]: moving instance i to flavor j keeps flavor j's cloud within capacity."""
        c = self.coef
        spare_at = self.spare()[c.cloud]  # per column
        own_cloud = c.cloud[self.cur]
        freed = np.where(c.cloud[None, :] == own_cloud[:, None], c.vcpu[self.cur][:, None], 0)
        return c.vcpu[None, :] <= spare_at[None, :] + freed

    def qvals(self) -> list[float]:
        return [float(self.coef.qoe[i, j]) for i, j in enumerate(self.cur)]

    def current_q(self) -> np.ndarray:
        return self.coef.qoe[np.arange(self.n), self.cur]


def _greedy(st: _State) -> None:
    coef, band = st.coef, st.band
    min_vcpu = np.where(band, coef.vcpu[None, :], np.iinfo(np.int64).max).min(axis=1)
    n_opts = band.sum(axis=1)
    order = sorted(range(st.n), key=lambda i: (-int(min_vcpu[i]), int(n_opts[i]), coef.instance_ids[i]))
    for i in order:
        fits = band[i] & (coef.vcpu <= st.spare()[coef.cloud])
        pool = fits if fits.any() else band[i]  # overload now, C6 repair later
        cols = np.flatnonzero(pool)
        j = cols[np.argmin(coef.cost_micro[cols])]
        st.place(i, int(j))


def _max_qoe_packing(st: _State) -> bool:
    """Highest-QoE fitting flavor per instance, placing first those with most to lose.

    The regret of an instance is how much QoE it gives up if its best cloud
    is full and it must settle for the best flavor elsewhere.
    """
    coef, band = st.coef, st.band
    qb = np.where(band, coef.qoe, -np.inf)
    top = qb.max(axis=1)
    best_cloud = coef.cloud[qb.argmax(axis=1)]
    other = np.where(coef.cloud[None, :] != best_cloud[:, None], qb, -np.inf).max(axis=1)
    regret = np.where(np.isfinite(other), top - other, np.inf)
    for i in sorted(range(st.n), key=lambda i: (-regret[i], coef.instance_ids[i])):
        cols = np.flatnonzero(band[i] & (coef.vcpu <= st.spare()[coef.cloud]))
        if cols.size == 0:
            return False
        j = cols[np.lexsort((cols, coef.cost_micro[cols], -coef.qoe[i, cols]))[0]]
        st.place(i, int(j))
    return True


def _best_per_row(ok: np.ndarray, key: np.ndarray):
    """Column of the smallest ``key`` per row among ``ok`` entries (-1 where none)."""
    masked = np.where(ok, key, np.inf)
    cols = masked.argmin(axis=1)
    rows = np.arange(len(cols))
    cols[~ok[rows, cols]] = -1
    return cols


def _repair_capacity(st: _State, max_rounds: int = 200) -> bool:
    coef = st.coef
    rows = np.arange(st.n)
    for _ in range(max_rounds):
        if not (st.spare() < 0).any():
            return True
        over = st.spare() < 0
        in_over = over[coef.cloud[st.cur]]
        same = coef.cloud[None, :] == coef.cloud[st.cur][:, None]
        relieves = ~same | (coef.vcpu[None, :] < coef.vcpu[st.cur][:, None])
        ok = st.band & st.fits_matrix() & relieves & in_over[:, None]
        delta = coef.cost_micro[None, :] - coef.cost_micro[st.cur][:, None]
        best = _best_per_row(ok, delta.astype(float))
        movers = rows[best >= 0]
        if movers.size == 0:
            return False
        moved = False
        for i in movers[np.lexsort((movers, delta[movers, best[movers]]))]:
            j = int(best[i])
            src, dst = coef.cloud[st.cur[i]], coef.cloud[j]
            if st.spare()[src] >= 0:
                continue
            freed = coef.vcpu[st.cur[i]] if src == dst else 0
            if coef.vcpu[j] > st.spare()[dst] + freed:
                continue
            st.place(int(i), j)
            moved = True
        if not moved:
            return False
    return not (st.spare() < 0).any()


def _repair_qoe(st: _State, params: SolveParams, max_rounds: int = 200) -> bool:
    """Raise total QoE by the upgrades with the lowest cost per unit of QoE gained."""
    coef = st.coef
    target = st.n * params.q_min - QOE_TOL
    rows = np.arange(st.n)
    for _ in range(max_rounds):
        if qoe_ok(st.qvals(), st.n, params.q_min):
            return True
        dq = coef.qoe - st.current_q()[:, None]
        ok = st.band & st.fits_matrix() & (dq > 1e-12)
        dc = (coef.cost_micro[None, :] - coef.cost_micro[st.cur][:, None]).astype(float)
        ratio = dc / np.where(ok, dq, 1.0)
        best = _best_per_row(ok, ratio)
        movers = rows[best >= 0]
        if movers.size == 0:
            if _eject_upgrade(st):
                continue
            return False
        deficit = target - math.fsum(st.qvals())
        moved = False
        for i in movers[np.lexsort((movers, ratio[movers, best[movers]]))]:
            if deficit <= 0:
                break
            j = int(best[i])
            if not _fits(st, int(i), j):
                continue
            deficit -= dq[i, j]
            st.place(int(i), j)
            moved = True
        if not moved and not _eject_upgrade(st):
            return False
    return qoe_ok(st.qvals(), st.n, params.q_min)


def _eject_upgrade(st: _State, candidates: int = 64) -> bool:
    """An upgrade blocked by a full cloud, made room for by moving one other instance out.

    Among the cheapest blocked upgrades (by cost per QoE gained), pick the
    pair of moves with the lowest combined cost per unit of net QoE gain.
    """
    coef = st.coef
    q = st.current_q()
    dq = coef.qoe - q[:, None]
    dc = (coef.cost_micro[None, :] - coef.cost_micro[st.cur][:, None]).astype(float)
    blocked = st.band & ~st.fits_matrix() & (dq > 1e-12)
    if not blocked.any():
        return False
    ii, jj = np.nonzero(blocked)
    ratio = dc[ii, jj] / dq[ii, jj]
    order = np.lexsort((jj, ii, ratio))[:candidates]
    spare = st.spare()
    cur_cloud = coef.cloud[st.cur]
    cur_vcpu = coef.vcpu[st.cur]
    best = None
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        c = coef.cloud[j]
        need = coef.vcpu[j] - spare[c] - (cur_vcpu[i] if cur_cloud[i] == c else 0)
        members = np.flatnonzero((cur_cloud == c) & (cur_vcpu >= need))
        members = members[members != i]
        if members.size == 0:
            continue
        dest_ok = (coef.cloud != c) & (coef.vcpu <= spare[coef.cloud])
        opts = st.band[members] & dest_ok[None, :]
        net = dq[i, j] + coef.qoe[members] - q[members][:, None]
        opts &= net > 1e-12
        if not opts.any():
            continue
        cost = dc[i, j] + coef.cost_micro[None, :] - coef.cost_micro[st.cur[members]][:, None]
        score = np.where(opts, cost / np.where(opts, net, 1.0), np.inf)
        r, col = np.unravel_index(int(np.argmin(score)), score.shape)
        if best is None or score[r, col] < best[0]:
            best = (float(score[r, col]), i, j, int(members[r]), int(col))
    if best is None:
        return False
    _, i, j, m, col = best
    st.place(m, col)
    st.place(i, j)
    return True


def _improve(st: _State, params: SolveParams, max_rounds: int) -> None:
    """Cheaper flavors for single instances while the QoE surplus allows it."""
    coef = st.coef
    rows = np.arange(st.n)
    for _ in range(max_rounds):
        surplus = math.fsum(st.qvals()) - (st.n * params.q_min - QOE_TOL)
        dq = coef.qoe - st.current_q()[:, None]
        dc = coef.cost_micro[None, :] - coef.cost_micro[st.cur][:, None]
        ok = st.band & st.fits_matrix() & (dc < 0) & (dq >= 1e-9 - surplus)
        best = _best_per_row(ok, dc.astype(float))
        movers = rows[best >= 0]
        if movers.size == 0:
            return
        moved = False
        for i in movers[np.lexsort((movers, dc[movers, best[movers]]))]:
            j = int(best[i])
            if dq[i, j] < 1e-9 - surplus or not _fits(st, int(i), j):
                continue
            prev = int(st.cur[i])
            st.place(int(i), j)
            if not qoe_ok(st.qvals(), st.n, params.q_min):
                st.place(int(i), prev)
                continue
            surplus += dq[i, j]
            moved = True
        if not moved:
            return


def _fits(st: _State, i: int, j: int) -> bool:
    coef = st.coef
    freed = coef.vcpu[st.cur[i]] if coef.cloud[st.cur[i]] == coef.cloud[j] else 0
    return coef.vcpu[j] <= st.spare()[coef.cloud[j]] + freed


def solve_heuristic(instances, catalog: Catalog, params: SolveParams, incumbent=None,
                    max_improve: int = 50, coef: Coefficients | None = None) -> AssignmentSolution:
    """Feasible assignment with a reported gap to the coupling-relaxed lower bound.

    ``incumbent`` (an assignment mapping or solution) is kept whenever it is
    feasible for this problem and cheaper than what the greedy passes find.
    """
    coef = coef or Coefficients(instances, catalog, params)
    n = len(coef.instances)
    if n == 0:
        return AssignmentSolution({}, 0.0, math.nan, {}, Status.OPTIMAL, gap=0.0)
    band = coef.band_mask(params)
    lb = relaxed_lower_bound(coef, band)
    if lb is None:
        return AssignmentSolution.infeasible()

    st = _State(coef, band)
    _greedy(st)
    found = _repair_capacity(st) and _repair_qoe(st, params)
    if not found:
        # capacity-bound QoE: restart from the best QoE packing and shed cost afterwards
        st = _State(coef, band)
        found = _max_qoe_packing(st) and _repair_qoe(st, params)
    if found:
        _improve(st, params, max_improve)
        found = not check_feasibility(dict(zip(coef.instance_ids, (coef.flavor_ids[j] for j in st.cur))),
                                      coef.instances, catalog, params)

    best = coef.solution([int(j) for j in st.cur], Status.HEURISTIC) if found else None
    inc = _as_solution(incumbent, coef, catalog, params)
    if inc is not None and (best is None or inc.total_cost < best.total_cost):
        best = inc
    if best is None:
        return AssignmentSolution.infeasible()
    best.gap = (best.total_cost * 1e6 - lb) / lb if lb > 0 else 0.0
    if round(best.total_cost * 1e6) == lb:
        best.status = Status.OPTIMAL
        best.gap = 0.0
    return best


def _as_solution(incumbent, coef: Coefficients, catalog: Catalog, params: SolveParams):
    mapping = getattr(incumbent, "assignment", incumbent)
    if not mapping or check_feasibility(mapping, coef.instances, catalog, params):
        return None
    col = {fid: k for k, fid in enumerate(coef.flavor_ids)}
    return coef.solution([col[mapping[iid]] for iid in coef.instance_ids], Status.HEURISTIC)
