"""Variant rules: partition tables, codevector updates, free energy and extraction.

Every variant is described by a *link model*: a fixed set of base links
between codevectors (and the depot), plus, for each partition configuration
R, a sparse list of link-weight changes (links removed at a break, links
added by the rewiring). The Gibbs weight of R is ``exp(-beta*theta*E(R))``
with ``E(R)`` the weighted sum of squared link lengths of those changes, and
the free energy is

    F = -(1/beta) sum_i log sum_j exp(-beta d(x_i, y_j))
        + theta * (base link length)
        - (1/beta) log sum_R exp(-beta*theta*E(R)).

Its gradient with respect to y_j is a weighted sum of (y_j - y_b) over the
*expected* link weights K[j, b], which gives the generic update
:func:`link_update`. The per-variant closed forms (:func:`nonreturning_update`,
:func:`returning_update`, :func:`depot_update`, :func:`cetsp_update`) are
special cases of it and are what the engine runs.

Indices are 0-based here: break ``k`` removes the link between codevectors
``k`` and ``k + 1``; the depot is point index ``n``.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from . import kernels
from .engine import AnnealState, Trace, log_sum_exp, row_log_sum_exp
from .errors import DegenerateUpdate, PartitionError
from .instance import (
    ProblemInstance, Solution, Variant, check_partition, pairwise_close_enough,
    pairwise_squared, tour_length, tours_length,
)

MAX_SALESMEN = 3


# ---- link models -----------------------------------------------------------

@dataclass(frozen=True)
class LinkModel:
    n: int
    npoints: int
    base_a: np.ndarray
    base_b: np.ndarray
    base_w: np.ndarray
    base_weta: np.ndarray
    configs: np.ndarray          # (C, r) break positions
    ent_cid: np.ndarray
    ent_a: np.ndarray
    ent_b: np.ndarray
    ent_w: np.ndarray
    ent_weta: np.ndarray
    ent_comp: np.ndarray
    ncomp: int
    ordered_pairs: bool = False
    base_links: np.ndarray = None    # expected-link matrix of the base links alone
    eta_links: np.ndarray = None     # balance weights of the base links
    trivial: bool = False            # one configuration, no link changes

    @property
    def size(self) -> int:
        return len(self.configs)


def _chain(n):
    return [(j, j + 1) for j in range(n - 1)]


def _cycle(n):
    if n < 2:
        return []
    return _chain(n) + [(n - 1, 0)]


def _model(n, npoints, base, configs, entries, ncomp=1, ordered_pairs=False) -> LinkModel:
    base = list(base)
    ent = list(entries) or [(0, 0, 0, 0.0, 0.0, 0)]
    cfg = np.array(configs, dtype=int).reshape(len(configs), -1)
    cid, a, b, w, weta, comp = (np.array(col) for col in zip(*ent))
    ba = np.array([e[0] for e in base], dtype=int)
    bb = np.array([e[1] for e in base], dtype=int)
    return LinkModel(
        n=n, npoints=npoints,
        base_a=ba, base_b=bb,
        base_w=np.array([e[2] for e in base], dtype=float),
        base_weta=np.array([e[3] for e in base], dtype=float),
        configs=cfg,
        ent_cid=cid.astype(int), ent_a=a.astype(int), ent_b=b.astype(int),
        ent_w=w.astype(float), ent_weta=weta.astype(float), ent_comp=comp.astype(int),
        ncomp=ncomp, ordered_pairs=ordered_pairs,
        base_links=_symmetric(npoints, ba, bb, np.array([e[2] for e in base], dtype=float)),
        eta_links=_symmetric(npoints, ba, bb, np.array([e[3] for e in base], dtype=float)),
        trivial=(len(configs) == 1 and not entries),
    )


def _symmetric(npnt, a, b, w) -> np.ndarray:
    """Dense symmetric link-weight matrix with zero diagonal."""
    out = np.bincount(a * npnt + b, weights=w, minlength=npnt * npnt)
    out = out + np.bincount(b * npnt + a, weights=w, minlength=npnt * npnt)
    out = out.reshape(npnt, npnt)
    np.fill_diagonal(out, 0.0)
    return out


def _check_m(m, limit, what):
    if m > MAX_SALESMEN:
        raise PartitionError(
            f"at most {MAX_SALESMEN} salesmen are supported (exact partition enumeration)")
    if m < 1:
        raise PartitionError("salesmen must be >= 1")
    if m > limit:
        raise PartitionError(f"too many salesmen: {what}")


@functools.lru_cache(maxsize=64)
def nonreturning_model(n: int, m: int) -> LinkModel:
    _check_m(m, n, f"{m - 1} breaks among {n - 1} links")
    configs = list(itertools.combinations(range(n - 1), m - 1))
    entries = [(c, k, k + 1, -1.0, 0.0, 0) for c, R in enumerate(configs) for k in R]
    base = [(a, b, 1.0, 0.0) for a, b in _chain(n)]
    return _model(n, n, base, configs, entries)


@functools.lru_cache(maxsize=64)
def returning_model(n: int, m: int, diagonal_only: bool = False) -> LinkModel:
    _check_m(m, n, f"{m} salesmen for {n} codevectors")
    base = [(a, b, 1.0, 0.0) for a, b in _cycle(n)]
    if m == 1:
        configs = [()]
    elif m == 2:
        # ordered pairs incl. the diagonal (k = l is the unsplit tour)
        if diagonal_only:
            configs = [(k, k) for k in range(n)]
        else:
            configs = list(itertools.product(range(n), repeat=2))
    else:
        configs = list(itertools.combinations(range(n), m))
    entries = []
    for c, R in enumerate(configs):
        for i, k in enumerate(R):
            prev = R[i - 1]
            entries.append((c, k, (prev + 1) % n, 1.0, 0.0, i))
            entries.append((c, k, (k + 1) % n, -1.0, 0.0, i))
    return _model(n, n, base, configs, entries, ncomp=max(m, 1), ordered_pairs=(m == 2))


@functools.lru_cache(maxsize=64)
def depot_model(n: int, m: int, balanced: bool = False) -> LinkModel:
    _check_m(m, n, f"{m - 1} breaks among {n - 1} links")
    if balanced and m != 2:
        raise PartitionError("tour balancing is only defined for two salesmen")
    dep = n
    e = 1.0 if balanced else 0.0
    base = [(a, b, 1.0, 0.0) for a, b in _chain(n)]
    base += [(0, dep, 1.0, e), (n - 1, dep, 1.0, -e)]
    configs = list(itertools.combinations(range(n - 1), m - 1))
    entries = []
    for c, R in enumerate(configs):
        for k in R:
            entries += [(c, k, k + 1, -1.0, 0.0, 0),
                        (c, k, dep, 1.0, e, 0),
                        (c, k + 1, dep, 1.0, -e, 0)]
            if balanced:
                entries += [(c, i, i + 1, 0.0, 1.0 if i < k else -1.0, 0)
                            for i in range(n - 1) if i != k]
    return _model(n, n + 1, base, configs, entries)


@functools.lru_cache(maxsize=64)
def cycle_model(n: int) -> LinkModel:
    return returning_model(n, 1)


# ---- partition tables ------------------------------------------------------

@dataclass(frozen=True)
class PartitionTable:
    """Probability mass over partition configurations for one codevector chain.

    ``marginals[k]`` is the total probability of configurations that break
    after position ``k``; ``pair`` (returning, two salesmen) is the ordered
    pair matrix ``P(k, l)``; ``links`` holds the expected link weights.
    """

    configs: np.ndarray
    probs: np.ndarray
    log_norm: float
    marginals: np.ndarray
    links: np.ndarray
    base_energy: float
    chain_length: float
    pair: Optional[np.ndarray] = None
    pair_rows: Optional[np.ndarray] = None
    imbalance: float = 0.0

    @property
    def mass(self) -> float:
        return float(self.probs.sum())


def _points(y, depot):
    return y if depot is None else np.vstack([y, np.asarray(depot, dtype=float)[None, :]])


def _sqd(z, a, b):
    diff = z[a] - z[b]
    return np.einsum("ij,ij->i", diff, diff)


def build_table(model: LinkModel, y: np.ndarray, beta: float, theta: float,
                depot=None, eta: float = 0.0, sign: float = 1.0,
                strict: bool = False, zero: bool = False) -> PartitionTable:
    """Evaluate the Gibbs partition distribution of ``model`` at codevectors ``y``.

    ``strict`` replaces each configuration's weight by the sum of the
    exponentials of its per-salesman terms (the literal printed form for
    returning tours). ``zero`` forces every probability to 0 (reduction
    checks only; the result is not normalised).
    """
    z = _points(y, depot)
    se = sign * eta
    d0 = _sqd(z, model.base_a, model.base_b)
    chain_length = float(np.dot(model.base_w, d0))
    if model.trivial:
        return PartitionTable(
            configs=model.configs, probs=_ONE, log_norm=0.0, marginals=np.zeros(model.n),
            links=model.base_links, base_energy=chain_length, chain_length=chain_length,
        )
    base_energy = chain_length + se * float(np.dot(model.base_weta, d0)) if se else chain_length
    C = model.size
    d = _sqd(z, model.ent_a, model.ent_b)
    coef = model.ent_w + se * model.ent_weta if se else model.ent_w
    bt = beta * theta
    if strict:
        comp = np.bincount(model.ent_cid * model.ncomp + model.ent_comp,
                           weights=model.ent_w * d, minlength=C * model.ncomp)
        logw = row_log_sum_exp(-bt * comp.reshape(C, model.ncomp))
    else:
        energy = np.bincount(model.ent_cid, weights=coef * d, minlength=C)
        logw = -bt * energy
    log_norm = log_sum_exp(logw)
    if zero:
        probs = np.zeros(C)
    else:
        probs = np.exp(logw - log_norm)
    npnt = model.npoints
    links = _symmetric(npnt, model.ent_a, model.ent_b, probs[model.ent_cid] * coef)
    links += model.base_links
    if se:
        links += se * model.eta_links
    r = model.configs.shape[1]
    if r:
        marg = np.bincount(model.configs.ravel(), weights=np.repeat(probs, r),
                           minlength=model.n)
    else:
        marg = np.zeros(model.n)
    pair = rows = None
    n = model.n
    if model.ordered_pairs:
        pair = np.zeros((n, n))
        pair[model.configs[:, 0], model.configs[:, 1]] = probs
        rows = pair.sum(axis=1)
    imbalance = 0.0
    if eta:
        diff = np.bincount(model.ent_cid, weights=model.ent_weta * d, minlength=C)
        imbalance = float(np.dot(probs, diff) + np.dot(model.base_weta, d0))
    return PartitionTable(
        configs=model.configs, probs=probs, log_norm=log_norm, marginals=marg,
        links=links, base_energy=base_energy, chain_length=chain_length,
        pair=pair, pair_rows=rows, imbalance=imbalance,
    )


_ONE = np.ones(1)
_ONE.setflags(write=False)


def nonreturning_partition(codevectors, beta: float, theta: float, m: int,
                           zero: bool = False) -> PartitionTable:
    """Break-position distribution for open chains.

    ``P(R)`` is proportional to ``exp(+beta*theta*sum_{k in R} d(y_k, y_k+1))``:
    long links are the likely breaks.
    """
    y = np.asarray(codevectors, dtype=float)
    return build_table(nonreturning_model(len(y), m), y, beta, theta, zero=zero)


def returning_partition(codevectors, beta: float, theta: float, m: int,
                        strict: bool = False, diagonal_only: bool = False) -> PartitionTable:
    """Rewiring distribution for closed chains split into ``m`` cycles.

    The weight of R is the Gibbs factor of the net rewiring cost (added
    reconnections minus removed links). For two salesmen the table runs over
    ordered pairs including ``k == l`` (no split).
    """
    y = np.asarray(codevectors, dtype=float)
    model = returning_model(len(y), m, diagonal_only)
    return build_table(model, y, beta, theta, strict=strict)


def depot_partition(codevectors, depot, beta: float, theta: float, m: int,
                    eta: float = 0.0, sign: float = 1.0) -> PartitionTable:
    """Break distribution for depot tours: a break at k detours both ends via the depot."""
    y = np.asarray(codevectors, dtype=float)
    check_eta(eta)
    model = depot_model(len(y), m, eta > 0)
    return build_table(model, y, beta, theta, depot=depot, eta=eta, sign=sign)


def check_eta(eta: float) -> None:
    if eta >= 1.0:
        raise PartitionError("balance weight too large: eta must be < 1")
    if eta < 0:
        raise PartitionError("eta must be >= 0")


# ---- updates ---------------------------------------------------------------
#
# The engine runs whole passes through kernels.sweep_pass; the functions below
# compute a single codevector's update with the same compiled arithmetic, for
# inspection, residual checks and tests.

def _apply(j: int, state: AnnealState, coef: np.ndarray, fixed=None, rho=None,
           interior_zero: bool = True, trace: Optional[Trace] = None, hint: str = ""):
    y = np.ascontiguousarray(state.codevectors, dtype=float)
    n = len(y)
    fixed = kernels.no_fixed() if fixed is None else np.asarray(fixed, dtype=float).reshape(-1, 2)
    rho = np.zeros(n) if rho is None else np.asarray(rho, dtype=float)
    a, b, status = kernels.update_one(j, y, fixed, state.x, state.assoc,
                                      np.ascontiguousarray(coef), float(state.theta), rho,
                                      interior_zero)
    if status == kernels.DEGENERATE:
        raise DegenerateUpdate(state.beta, state.theta, j, hint)
    if status == kernels.COINCIDENT and trace is not None:
        trace.note(f"codevector {j + 1} coincides with a disk centre; using +x direction")
    return np.array([a, b])


def chain_coefficients(n: int, closed: bool) -> np.ndarray:
    """Neighbour link weights of an unbroken chain (cycle if ``closed``)."""
    return (cycle_model(n) if closed else nonreturning_model(n, 1)).base_links


def basic_update(j: int, state: AnnealState, closed: bool = True):
    """Single-tour update: weighted centroid pulled towards both chain neighbours.

    With ``closed=False`` the chain is open and the end codevectors have a
    single neighbour.
    """
    return _apply(j, state, chain_coefficients(len(state.codevectors), closed))


def nonreturning_update(j: int, state: AnnealState, table: PartitionTable):
    """Open-chain update with each neighbour link discounted by its break probability.

    Missing neighbours at the chain ends contribute nothing (their
    coefficients are dropped rather than taken as the origin).
    """
    return _apply(j, state, table.links)


def returning_update(j: int, state: AnnealState, table: PartitionTable):
    """Closed-chain update for split returning tours, from the expected link weights.

    For two salesmen this coincides with :func:`ordered_pair_update`.
    """
    return _apply(j, state, table.links, hint="reduce theta_decay step")


def ordered_pair_update(j: int, state: AnnealState, table: PartitionTable):
    """Two-salesman returning update written over the ordered pair table ``P(k, l)``.

    The ``l == j`` and ``l == j - 1`` terms of the neighbour sums are folded
    into the ``y_{j+1}``/``y_{j-1}`` coefficients and the denominator.
    """
    if table.pair is None:
        raise PartitionError("ordered pair table needs exactly two returning salesmen")
    y = state.codevectors
    n = len(y)
    th = state.theta
    p = state.assoc[:, j]
    num, den = np.dot(p, state.x), p.sum()
    if n > 1:
        P = table.pair
        rows = table.pair_rows
        jm = (j - 1) % n
        jp = (j + 1) % n
        c_next = th * (1.0 - 2.0 * (rows[j] - P[j, j]))
        c_prev = th * (1.0 - 2.0 * (rows[jm] - P[jm, jm]))
        w1 = P[j].copy()
        w1[[jm, j]] = 0.0
        w2 = P[jm].copy()
        w2[[j, jm]] = 0.0
        off = np.dot(w1, np.roll(y, -1, axis=0)) + np.dot(w2, y)
        num = num + c_next * y[jp] + c_prev * y[jm] + 2.0 * th * off
        den = den + 2.0 * th * (1.0 - 2.0 * P[j, jm])
    if not den > 0:
        raise DegenerateUpdate(state.beta, state.theta, j, "reduce theta_decay step")
    return num / den


def depot_update(j: int, state: AnnealState, table: PartitionTable, depot):
    """Depot-tour update; the chain ends are always tied to the depot.

    The depot coefficient of codevector j is ``M(j) + M(j-1)`` with the
    chain ends counting as permanently broken; balance weights, if any, are
    already folded into the table's link weights.
    """
    return _apply(j, state, table.links, fixed=depot)


def cetsp_targets(j: int, state: AnnealState, radii: np.ndarray, interior_zero: bool = True) -> np.ndarray:
    """Per-node attraction points ``x_i + rho_i u_ij`` for codevector ``j``.

    ``u_ij`` is the unit vector from ``x_i`` towards the current ``y_j``
    (``+x`` if they coincide). Inside a disk (with ``interior_zero``) the node
    exerts no pull, which is expressed by targeting ``y_j`` itself.
    """
    x = state.x
    yj = state.codevectors[j]
    diff = yj - x
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    active = radii > 0.0
    u = np.zeros_like(x)
    u[active & (r == 0.0)] = (1.0, 0.0)
    ok = active & (r > 0.0)
    u[ok] = diff[ok] / r[ok, None]
    t = x + radii[:, None] * u
    if interior_zero:
        inside = active & (r <= radii)
        t[inside] = yj
    return t


def cetsp_update(j: int, state: AnnealState, radii: np.ndarray, interior_zero: bool = True,
                 trace: Optional[Trace] = None):
    """Closed-chain update pulling towards the nearest point of each node's disk."""
    coef = chain_coefficients(len(state.codevectors), True)
    return _apply(j, state, coef, rho=radii, interior_zero=interior_zero, trace=trace)


def link_update(j: int, state: AnnealState, table: PartitionTable, depot=None, radii=None,
                interior_zero: bool = True):
    """Generic stationarity update from the expected link weights ``table.links``."""
    return _apply(j, state, table.links, fixed=depot, rho=radii, interior_zero=interior_zero)


# ---- rules -----------------------------------------------------------------

@dataclass
class VariantRules:
    """Everything the engine needs to anneal one variant.

    ``fixed`` holds the points that take part in links but never move (the
    depot); ``rho`` the disk radii (all zero for point variants).
    """

    instance: ProblemInstance
    model: LinkModel
    metric: Callable
    partition: Callable
    fixed: np.ndarray
    rho: np.ndarray
    free_energy: Callable = None
    interior_zero: bool = True
    strict: bool = False

    @property
    def variant(self) -> Variant:
        return self.instance.variant

    @property
    def balanced(self) -> bool:
        return self.variant is Variant.DEPOT and self.instance.balance_eta > 0

    def distances(self, y: np.ndarray) -> np.ndarray:
        return self.metric(self.instance.coords, y)

    def coefficients(self, table: PartitionTable) -> np.ndarray:
        """Expected link weights of every codevector, shape ``(n, n + len(fixed))``."""
        return table.links[: self.model.n]

    def update(self, j: int, state: AnnealState, table: PartitionTable) -> np.ndarray:
        return _apply(j, state, self.coefficients(table), self.fixed, self.rho,
                      self.interior_zero)

    def prepare(self, state: AnnealState) -> None:
        """Choose which tour the balance penalty charges (the currently longer one)."""
        if not self.balanced:
            return
        table = state.table if state.table is not None else self.partition(state)
        state.balance_sign = 1.0 if table.imbalance >= 0 else -1.0

    def link_energy(self, state: AnnealState, table: PartitionTable) -> float:
        return state.theta * table.base_energy - table.log_norm / state.beta

    def chain_length(self, y: np.ndarray) -> float:
        z = _points(y, self.instance.depot_xy)
        return float(np.dot(self.model.base_w, _sqd(z, self.model.base_a, self.model.base_b)))

    def extract(self, state: AnnealState, table: PartitionTable,
                trace: Optional[Trace] = None) -> Solution:
        return extract_solution(state, self.instance, table, trace,
                                interior_zero=self.interior_zero)


def rules_for(instance: ProblemInstance, interior_zero: bool = True,
              strict_returning_prob: bool = False, diagonal_only: bool = False) -> VariantRules:
    """Build the :class:`VariantRules` matching ``instance.variant``.

    ``diagonal_only`` restricts a two-salesman returning table to the
    unsplit configurations ``k == l`` (a reduction check).
    """
    v = instance.variant
    n, m = instance.n, instance.salesmen
    depot = instance.depot_xy
    eta = instance.balance_eta
    metric = pairwise_squared
    rho = np.zeros(n)
    fixed = kernels.no_fixed()
    if v is Variant.CETSP:
        rho = instance.radii

        def metric(x, y, _r=rho):
            return pairwise_close_enough(x, y, _r, interior_zero)

    if v in (Variant.BASIC, Variant.CETSP):
        model = cycle_model(n)
    elif v is Variant.NONRETURNING:
        model = nonreturning_model(n, m)
    elif v is Variant.RETURNING:
        model = returning_model(n, m, diagonal_only)
    elif v is Variant.DEPOT:
        check_eta(eta)
        model = depot_model(n, m, eta > 0)
        fixed = depot.reshape(1, 2)
    else:  # pragma: no cover
        raise PartitionError(f"unsupported variant {v}")

    eta = eta if v is Variant.DEPOT else 0.0
    strict = strict_returning_prob and v is Variant.RETURNING

    def partition(state):
        return build_table(model, state.codevectors, state.beta, state.theta,
                           depot=depot, eta=eta, sign=state.balance_sign, strict=strict)

    rules = VariantRules(instance=instance, model=model, metric=metric, partition=partition,
                         fixed=fixed, rho=rho, interior_zero=interior_zero,
                         strict=strict_returning_prob)
    rules.free_energy = functools.partial(variant_free_energy, rules=rules)
    return rules


def variant_free_energy(state: AnnealState, table: Optional[PartitionTable] = None,
                        rules: VariantRules = None) -> float:
    """Free energy of the variant at ``state`` (association + chain + partition terms)."""
    if table is None:
        table = rules.partition(state)
    d = rules.distances(state.codevectors)
    f1 = -float(np.sum(row_log_sum_exp(-state.beta * d))) / state.beta
    return f1 + rules.link_energy(state, table)


def free_energy_at(rules: VariantRules, y: np.ndarray, beta: float, theta: float,
                   sign: float = 1.0) -> float:
    """Free energy as a plain function of the codevectors (for derivative checks)."""
    st = AnnealState(codevectors=np.asarray(y, dtype=float), beta=beta, theta=theta,
                     x=rules.instance.coords, balance_sign=sign)
    return variant_free_energy(st, None, rules)


def _batch_lse(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=-1)
    return top + np.log(np.sum(np.exp(a - top[..., None]), axis=-1))


def free_energies(rules: VariantRules, ys: np.ndarray, beta: float, theta: float,
                  sign: float = 1.0) -> np.ndarray:
    """:func:`free_energy_at` for a stack of codevector sets ``ys`` of shape ``(B, n, 2)``.

    Vectorised over the stack, which makes finite-difference sweeps over every
    coordinate cheap.
    """
    ys = np.asarray(ys, dtype=float)
    x = rules.instance.coords
    model = rules.model
    d = np.einsum("bijk,bijk->bij", x[None, :, None, :] - ys[:, None, :, :],
                  x[None, :, None, :] - ys[:, None, :, :])
    rho = rules.rho
    if np.any(rho > 0):
        gap = np.sqrt(d) - rho[None, :, None]
        if rules.interior_zero:
            gap = np.maximum(gap, 0.0)
        d = np.where(rho[None, :, None] > 0, gap * gap, d)
    f1 = -np.sum(_batch_lse(-beta * d), axis=1) / beta

    depot = rules.instance.depot_xy
    if depot is not None:
        z = np.concatenate([ys, np.broadcast_to(depot, (len(ys), 1, 2))], axis=1)
    else:
        z = ys
    eta = rules.instance.balance_eta if rules.variant is Variant.DEPOT else 0.0
    se = sign * eta

    def sq(a, b):
        diff = z[:, a] - z[:, b]
        return np.einsum("bek,bek->be", diff, diff)

    d0 = sq(model.base_a, model.base_b)
    base = d0 @ model.base_w
    if se:
        base = base + se * (d0 @ model.base_weta)
    if model.trivial:
        log_norm = np.zeros(len(ys))
    else:
        de = sq(model.ent_a, model.ent_b)
        C = model.size
        bt = beta * theta
        if rules.strict and rules.variant is Variant.RETURNING:
            cols = model.ent_cid * model.ncomp + model.ent_comp
            M = np.zeros((len(cols), C * model.ncomp))
            M[np.arange(len(cols)), cols] = model.ent_w
            comp = (de @ M).reshape(len(ys), C, model.ncomp)
            logw = _batch_lse(-bt * comp)
        else:
            coef = model.ent_w + se * model.ent_weta if se else model.ent_w
            M = np.zeros((len(coef), C))
            M[np.arange(len(coef)), model.ent_cid] = coef
            logw = -bt * (de @ M)
        log_norm = _batch_lse(logw)
    return f1 + theta * base - log_norm / beta


# ---- extraction ------------------------------------------------------------

def _split(order, cpos, R, returning):
    """Split the node order at codevector breaks R; None if a tour would be empty."""
    n = len(order)
    if returning:
        ks = sorted(set(R))
        if len(ks) <= 1:
            return [list(order)]
        pos = [int(np.searchsorted(cpos, k, side="right")) for k in ks]
        segs = [list(order[pos[i]:pos[i + 1]]) for i in range(len(pos) - 1)]
        segs.append(list(order[pos[-1]:]) + list(order[:pos[0]]))
    else:
        pos = [0] + [int(np.searchsorted(cpos, k, side="right")) for k in sorted(R)] + [n]
        segs = [list(order[pos[i]:pos[i + 1]]) for i in range(len(pos) - 1)]
    if any(len(s) == 0 for s in segs):
        return None
    return segs


def _split_by_rank(order, R, returning):
    ks = sorted(set(R))
    if returning:
        if len(ks) <= 1:
            return [list(order)]
        pos = [k + 1 for k in ks]
        segs = [list(order[pos[i]:pos[i + 1]]) for i in range(len(pos) - 1)]
        segs.append(list(order[pos[-1]:]) + list(order[:pos[0]]))
        return segs
    pos = [0] + [k + 1 for k in ks] + [len(order)]
    return [list(order[pos[i]:pos[i + 1]]) for i in range(len(pos) - 1)]


def cover_disks(waypoints: np.ndarray, x: np.ndarray, radii: np.ndarray,
                max_passes: int = 100) -> Tuple[np.ndarray, bool]:
    """Move waypoints the minimal radial distance needed so every disk holds one.

    Annealing stops at a small positive theta, which leaves a waypoint a
    residual distance outside the disk it serves; this closes that gap.
    """
    w = waypoints.copy()
    for _ in range(max_passes):
        r = np.sqrt(pairwise_squared(x, w))
        gap = r - radii[:, None]
        missing = np.nonzero(gap.min(axis=1) > 0)[0]
        if missing.size == 0:
            return w, True
        for i in missing:
            ri = np.sqrt(np.sum((w - x[i]) ** 2, axis=1))
            j = int(np.argmin(ri - radii[i]))
            if ri[j] <= radii[i]:
                continue
            target = radii[i] * (1.0 - 1e-12)
            w[j] = x[i] + (w[j] - x[i]) * (target / ri[j])
    r = np.sqrt(pairwise_squared(x, w))
    return w, bool(np.all((r - radii[:, None]).min(axis=1) <= 0))


def extract_solution(state: AnnealState, instance: ProblemInstance, table: PartitionTable,
                     trace: Optional[Trace] = None, interior_zero: bool = True) -> Solution:
    """Read tours off the final annealing state.

    Nodes go to their most probable codevector and are ordered by codevector
    index (ties by position along the local chain direction); the chain is
    cut at the most probable partition whose tours are all non-empty.
    """
    v = instance.variant
    x = instance.coords
    y = state.codevectors
    n = len(x)
    assoc = state.assoc
    jstar = np.argmax(assoc, axis=1)
    best = assoc[np.arange(n), jstar]
    if trace is not None:
        if np.any((assoc >= best[:, None]).sum(axis=1) > 1):
            trace.note("ambiguous node assignment resolved by lowest codevector index")
        empty = n - len(np.unique(jstar))
        if empty:
            trace.note(f"{empty} codevector(s) without assigned nodes")
    closed = v.returning and v is not Variant.DEPOT
    nxt = np.empty_like(y)
    prv = np.empty_like(y)
    idx = np.arange(n)
    if closed:
        nxt[:] = y[(idx + 1) % n]
        prv[:] = y[idx - 1]
    else:
        nxt[:] = y[np.minimum(idx + 1, n - 1)]
        prv[:] = y[np.maximum(idx - 1, 0)]
    direction = (nxt - prv)[jstar]
    along = np.einsum("ij,ij->i", x - y[jstar], direction)
    order = np.lexsort((idx, along, jstar))
    cpos = jstar[order]
    returning = v in (Variant.RETURNING, Variant.BASIC, Variant.CETSP)

    rank = np.argsort(-table.probs, kind="stable")
    segs = None
    chosen = tuple(table.configs[rank[0]]) if len(rank) else ()
    for c in rank:
        R = tuple(int(k) for k in table.configs[c])
        segs = _split(order, cpos, R, returning)
        if segs is not None:
            chosen = R
            break
    if segs is None:
        segs = _split_by_rank(order, chosen, returning)
        if trace is not None:
            trace.note("no partition gave non-empty tours; breaks mapped onto node ranks")
    elif trace is not None and chosen != tuple(table.configs[rank[0]]):
        trace.note("most probable partition left a tour empty; used the next valid one")
    tours = [[int(i) + 1 for i in s] for s in segs]
    check_partition(tours, n)

    waypoints = None
    if v is Variant.CETSP:
        waypoints, ok = cover_disks(y, x, instance.radii)
        if not ok and trace is not None:
            trace.note("waypoint coverage repair did not cover every disk")
        eu = tour_length(waypoints, True, "euclidean")
        sq = tour_length(waypoints, True, "squared")
    else:
        eu = tours_length(tours, instance, "euclidean")
        sq = tours_length(tours, instance, "squared")
    return Solution(
        variant=v, tours=tours, breaks=tuple(k + 1 for k in chosen),
        euclidean_length=eu, squared_length=sq, codevectors=y.copy(), waypoints=waypoints,
    )
