"""Brute-force reference solvers for small instances."""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import OracleSizeLimit
from .instance import (
    ProblemInstance, Solution, Variant, check_partition, pairwise_squared, tour_length,
    tours_length,
)

MAX_SINGLE = 10
MAX_MULTI = 9
MAX_CETSP = 7
_BLOCK = 20000


@dataclass
class OracleResult:
    best_solution: Solution
    optimal_value: float
    evaluated_count: int


def _dist_matrix(instance: ProblemInstance, metric: str) -> np.ndarray:
    pts = instance.coords
    if instance.depot is not None:
        pts = np.vstack([pts, instance.depot_xy[None, :]])
    d = pairwise_squared(pts, pts)
    if metric == "euclidean":
        d = np.sqrt(d)
    elif metric != "squared":
        raise ValueError(f"unknown metric {metric!r}")
    return d


def _orders(n: int, fix_first: bool, mirror: bool):
    """Node orders as an int array, lexicographic; optionally modulo rotation/reflection."""
    if n == 1:
        return np.zeros((1, 1), dtype=np.int16)
    if fix_first:
        rest = np.array(list(itertools.permutations(range(1, n))), dtype=np.int16).reshape(-1, n - 1)
        perms = np.hstack([np.zeros((len(rest), 1), dtype=np.int16), rest])
        if mirror and n >= 3:
            perms = perms[perms[:, 1] < perms[:, -1]]
    else:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int16).reshape(-1, n)
        if mirror and n >= 2:
            perms = perms[perms[:, 0] < perms[:, -1]]
    return perms


def _break_sets(variant: Variant, n: int, m: int):
    if variant in (Variant.BASIC,) or m == 1:
        return [()]
    if variant is Variant.RETURNING:
        if m == 2:
            return [(k, l) for k in range(n) for l in range(k, n)]
        return list(itertools.combinations(range(n), m))
    return list(itertools.combinations(range(n - 1), m - 1))


def _objective_block(perms: np.ndarray, breaks, variant: Variant, d: np.ndarray) -> np.ndarray:
    """Objective for every (order, break set) in a block; shape (orders, breaks)."""
    n = perms.shape[1]
    p = perms.astype(np.intp)
    returning = variant in (Variant.BASIC, Variant.RETURNING)
    if returning:
        nxt = np.roll(p, -1, axis=1)
        links = d[p, nxt] if n > 1 else np.zeros((len(p), 1))
    else:
        links = d[p[:, :-1], p[:, 1:]] if n > 1 else np.zeros((len(p), 0))
    base = links.sum(axis=1)
    if variant is Variant.DEPOT:
        dep = d.shape[0] - 1
        to_dep = d[p, dep]
        base = base + to_dep[:, 0] + to_dep[:, -1]
    out = np.empty((len(p), len(breaks)))
    for c, R in enumerate(breaks):
        val = base.copy()
        if variant is Variant.NONRETURNING:
            for k in R:
                val -= links[:, k]
        elif variant is Variant.DEPOT:
            for k in R:
                val += -links[:, k] + to_dep[:, k] + to_dep[:, k + 1]
        elif variant is Variant.RETURNING and len(set(R)) > 1:
            ks = list(R)
            for i, k in enumerate(ks):
                prev = ks[i - 1]
                val += d[p[:, k], p[:, (prev + 1) % n]] - links[:, k]
        out[:, c] = val
    return out


def tours_from(order: Sequence[int], R: Tuple[int, ...], variant: Variant) -> List[List[int]]:
    """Split a 0-based node order at break positions R into 1-based tours."""
    order = [int(i) + 1 for i in order]
    ks = sorted(set(R))
    if variant in (Variant.BASIC, Variant.RETURNING, Variant.CETSP):
        if len(ks) <= 1:
            return [order]
        segs = [order[ks[i] + 1:ks[i + 1] + 1] for i in range(len(ks) - 1)]
        segs.append(order[ks[-1] + 1:] + order[:ks[0] + 1])
        return segs
    cuts = [0] + [k + 1 for k in ks] + [len(order)]
    return [order[cuts[i]:cuts[i + 1]] for i in range(len(cuts) - 1)]


def exact_solve(instance: ProblemInstance, metric: str = "squared") -> OracleResult:
    """Minimise the variant objective by enumerating all orders and break sets.

    Raises:
        OracleSizeLimit: above 10 nodes for one salesman or 9 for several,
            and for CETSP instances (see :func:`cetsp_order_oracle`).
    """
    v = instance.variant
    n, m = instance.n, instance.salesmen
    if v is Variant.CETSP:
        raise OracleSizeLimit("oracle size limit: CETSP needs cetsp_order_oracle")
    bound = MAX_SINGLE if m == 1 else MAX_MULTI
    if n > bound:
        raise OracleSizeLimit(f"oracle size limit: n={n} exceeds {bound} for m={m}")
    d = _dist_matrix(instance, metric)
    returning = v in (Variant.BASIC, Variant.RETURNING)
    perms = _orders(n, fix_first=returning, mirror=(not returning or m == 1))
    breaks = _break_sets(v, n, m)
    best_val = math.inf
    best = None
    for start in range(0, len(perms), _BLOCK):
        blk = perms[start:start + _BLOCK]
        vals = _objective_block(blk, breaks, v, d)
        flat = int(np.argmin(vals))
        val = float(vals.flat[flat])
        if val < best_val:
            best_val = val
            best = (blk[flat // len(breaks)], breaks[flat % len(breaks)])
    order, R = best
    tours = tours_from(order, R, v)
    check_partition(tours, n)
    eu = tours_length(tours, instance, "euclidean")
    sq = tours_length(tours, instance, "squared")
    sol = Solution(variant=v, tours=tours, breaks=tuple(k + 1 for k in R),
                   euclidean_length=eu, squared_length=sq)
    value = sq if metric == "squared" else eu
    return OracleResult(best_solution=sol, optimal_value=value,
                        evaluated_count=len(perms) * len(breaks))


def variant_objective(solution: Solution, instance: ProblemInstance, metric: str = "squared") -> float:
    """Variant objective of a solution (CETSP: length of its waypoint cycle)."""
    if instance.variant is Variant.CETSP and solution.waypoints is not None:
        return tour_length(solution.waypoints, True, metric)
    return tours_length(solution.tours, instance, metric)


# ---- close-enough order oracle ------------------------------------------------

def _path_cost(w, a, b):
    return math.hypot(*(a - w)) + math.hypot(*(w - b))


def best_disk_point(a: np.ndarray, b: np.ndarray, c: np.ndarray, rho: float,
                    current: Optional[np.ndarray] = None) -> np.ndarray:
    """Point of the disk (c, rho) minimising ``|a - w| + |w - b|``."""
    if rho <= 0.0:
        return c.copy()
    ab = b - a
    L2 = float(ab @ ab)
    t = 0.0 if L2 == 0 else min(1.0, max(0.0, float((c - a) @ ab) / L2))
    q = a + t * ab
    if math.hypot(*(q - c)) <= rho:
        if current is not None and math.hypot(*(current - c)) <= rho and \
                _path_cost(current, a, b) <= math.sqrt(L2) + 1e-15:
            return current.copy()
        return q
    phi0 = math.atan2(q[1] - c[1], q[0] - c[0])

    def f(phi):
        w = c + rho * np.array([math.cos(phi), math.sin(phi)])
        return _path_cost(w, a, b)

    grid = phi0 + np.linspace(-math.pi / 2, math.pi / 2, 33)
    vals = [f(p) for p in grid]
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    phi = res.x if res.fun <= vals[i] else grid[i]
    return c + rho * np.array([math.cos(phi), math.sin(phi)])


def refine_waypoints(centers: np.ndarray, radii: np.ndarray, tol: float = 1e-9,
                     max_iter: int = 10000):
    """Coordinate descent on the waypoint cycle through disks taken in the given order.

    Each waypoint in turn moves to the best point of its disk given its two
    neighbours, so the cycle length never increases. Returns the waypoints
    and the length after every full pass.
    """
    n = len(centers)
    w = centers.astype(float).copy()
    history = [tour_length(w, True)]
    if n == 1:
        return w, history
    for _ in range(max_iter):
        moved = 0.0
        for t in range(n):
            a = w[t - 1]
            b = w[(t + 1) % n]
            new = best_disk_point(a, b, centers[t], float(radii[t]), w[t])
            if _path_cost(new, a, b) <= _path_cost(w[t], a, b):
                moved = max(moved, float(np.max(np.abs(new - w[t]))))
                w[t] = new
        history.append(tour_length(w, True))
        if moved < tol:
            break
    return w, history


@functools.lru_cache(maxsize=16)
def _waypoint_problem(n: int):
    import cvxpy as cp

    centers = cp.Parameter((n, 2))
    radii = cp.Parameter(n, nonneg=True)
    w = cp.Variable((n, 2))
    links = cp.vstack([w[(i + 1) % n] - w[i] for i in range(n)])
    prob = cp.Problem(cp.Minimize(cp.sum(cp.norm(links, axis=1))),
                      [cp.norm(w - centers, axis=1) <= radii])
    return prob, centers, radii, w


def exact_waypoints(centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Globally shortest waypoint cycle through disks in the given order.

    Fixed-order waypoint placement is a second-order cone program; the solver
    result is projected back into each disk to remove tolerance-level excess.
    """
    n = len(centers)
    if n < 3:
        return refine_waypoints(centers, radii)[0]
    prob, c_par, r_par, w = _waypoint_problem(n)
    c_par.value = np.asarray(centers, dtype=float)
    r_par.value = np.asarray(radii, dtype=float)
    prob.solve(solver="CLARABEL")
    out = np.asarray(w.value, dtype=float)
    off = out - centers
    dist = np.linalg.norm(off, axis=1)
    over = dist > radii
    out[over] = centers[over] + off[over] * (radii[over] / dist[over])[:, None]
    return out


def cetsp_order_oracle(instance: ProblemInstance) -> OracleResult:
    """Best visiting order for a close-enough instance.

    Every cyclic order (modulo rotation and reflection) is scanned. For each,
    the waypoints are refined by :func:`refine_waypoints` and then placed by
    the exact fixed-order solve; the shorter of the two cycles is kept
    (coordinate descent can stall where neighbouring waypoints meet).
    """
    n = instance.n
    if n > MAX_CETSP:
        raise OracleSizeLimit(f"oracle size limit: n={n} exceeds {MAX_CETSP} for CETSP")
    x = instance.coords
    rho = instance.radii
    perms = _orders(n, fix_first=True, mirror=True)
    best = (math.inf, None, None)
    for p in perms:
        p = p.astype(int)
        w, hist = refine_waypoints(x[p], rho[p])
        length = hist[-1]
        if np.any(rho[p] > 0):
            w2 = exact_waypoints(x[p], rho[p])
            l2 = tour_length(w2, True)
            if l2 < length:
                w, length = w2, l2
        if length < best[0] - 1e-12:
            best = (length, p, w)
    length, p, w = best
    tours = [[int(i) + 1 for i in p]]
    sol = Solution(variant=instance.variant, tours=tours, breaks=(),
                   euclidean_length=length, squared_length=tour_length(w, True, "squared"),
                   waypoints=w)
    return OracleResult(best_solution=sol, optimal_value=length, evaluated_count=len(perms))
