"""Compiled inner loops for the codevector sweep.

Every variant's update has the same shape once its partition table is
reduced to expected link weights ``C[j, b]`` (``b`` ranges over the
codevectors followed by any fixed points such as the depot):

    y_j = (sum_i p(j|i) t_ij + theta * sum_b C[j, b] z_b)
          / (sum_i p(j|i) + theta * sum_b C[j, b])

with ``t_ij = x_i`` for point nodes and the nearest point of node i's disk
(seen from the current ``y_j``) for close-enough nodes. Sharing one kernel
keeps reductions between variants bit-exact: a coefficient of exactly 1.0 or
0.0 produces exactly the arithmetic of the simpler variant.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# status codes returned next to the new coordinates
OK = 0
DEGENERATE = 1
COINCIDENT = 2


@njit(cache=True)
def update_one(j, y, fixed, x, assoc, coef, theta, rho, interior_zero):
    """New position of codevector ``j``; returns ``(ny0, ny1, status)``."""
    n = y.shape[0]
    yj0 = y[j, 0]
    yj1 = y[j, 1]
    s0 = 0.0
    s1 = 0.0
    mass = 0.0
    status = OK
    for i in range(x.shape[0]):
        p = assoc[i, j]
        t0 = x[i, 0]
        t1 = x[i, 1]
        r = rho[i]
        if r > 0.0:
            d0 = yj0 - t0
            d1 = yj1 - t1
            dist = math.sqrt(d0 * d0 + d1 * d1)
            if interior_zero and dist <= r:
                t0 = yj0
                t1 = yj1
            elif dist > 0.0:
                t0 = t0 + r * (d0 / dist)
                t1 = t1 + r * (d1 / dist)
            else:
                t0 = t0 + r
                status = COINCIDENT
        s0 += p * t0
        s1 += p * t1
        mass += p
    c0 = 0.0
    c1 = 0.0
    csum = 0.0
    for b in range(coef.shape[1]):
        c = coef[j, b]
        if c != 0.0:
            tc = theta * c
            if b < n:
                c0 += tc * y[b, 0]
                c1 += tc * y[b, 1]
            else:
                c0 += tc * fixed[b - n, 0]
                c1 += tc * fixed[b - n, 1]
            csum += c
    den = mass + theta * csum
    if not den > 0.0:
        return yj0, yj1, DEGENERATE
    return (s0 + c0) / den, (s1 + c1) / den, status


@njit(cache=True)
def sweep_pass(y, fixed, x, assoc, coef, theta, rho, interior_zero):
    """One in-place Gauss-Seidel pass over all codevectors in index order.

    Returns ``(max_displacement, bad_index, coincident)``; ``bad_index`` is
    the first codevector whose denominator vanished (-1 if none).
    """
    n = y.shape[0]
    moved = 0.0
    coincident = False
    for j in range(n):
        a, b, status = update_one(j, y, fixed, x, assoc, coef, theta, rho, interior_zero)
        if status == DEGENERATE:
            return math.inf, j, coincident
        if status == COINCIDENT:
            coincident = True
        dm = max(abs(a - y[j, 0]), abs(b - y[j, 1]))
        if not dm <= moved:
            moved = dm
        y[j, 0] = a
        y[j, 1] = b
    return moved, -1, coincident


def no_fixed() -> np.ndarray:
    return np.zeros((0, 2))


@njit(cache=True)
def associate(x, y, beta, rho, interior_zero, assoc):
    """Fill ``assoc`` with p(j|i) in place; return ``sum_i log sum_j exp(-beta d_ij)``.

    ``d`` is squared Euclidean for ``rho_i == 0`` and the squared gap to the
    disk otherwise (zero inside it when ``interior_zero``).
    """
    n = x.shape[0]
    k = y.shape[0]
    total = 0.0
    for i in range(n):
        top = -math.inf
        for j in range(k):
            d0 = x[i, 0] - y[j, 0]
            d1 = x[i, 1] - y[j, 1]
            d = d0 * d0 + d1 * d1
            r = rho[i]
            if r > 0.0:
                gap = math.sqrt(d) - r
                if interior_zero and gap < 0.0:
                    gap = 0.0
                d = gap * gap
            v = -beta * d
            assoc[i, j] = v
            if v > top:
                top = v
        s = 0.0
        for j in range(k):
            e = math.exp(assoc[i, j] - top)
            assoc[i, j] = e
            s += e
        for j in range(k):
            assoc[i, j] /= s
        total += top + math.log(s)
    return total
