"""Variant-agnostic deterministic-annealing machinery.

The engine owns the (beta, theta) schedule and the fixed-point sweep; all
variant knowledge (distance metric, partition table, codevector update,
solution extraction) lives in a :class:`~mep_route.variants.VariantRules`.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import DegenerateUpdate, NumericalDivergence
from .kernels import associate, sweep_pass
from .instance import Node, ProblemInstance, pairwise_squared

log = logging.getLogger(__name__)

TRACE_HEADER = ("step", "beta", "theta", "free_energy", "sq_tour_length", "sweeps")


def log_sum_exp(values: Sequence[float]) -> float:
    """``log(sum(exp(values)))`` without overflow.

    Raises:
        ValueError: if ``values`` is empty.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty exponent set")
    top = float(v.max())
    if not math.isfinite(top):
        return top
    return top + math.log(float(np.sum(np.exp(v - top))))


def row_log_sum_exp(a: np.ndarray) -> np.ndarray:
    """Row-wise :func:`log_sum_exp` of a 2-D array."""
    top = a.max(axis=1)
    return top + np.log(np.sum(np.exp(a - top[:, None]), axis=1))


def _node_coords(nodes) -> np.ndarray:
    if len(nodes) and isinstance(nodes[0], Node):
        return np.array([nd.position for nd in nodes], dtype=float).reshape(-1, 2)
    return np.asarray(nodes, dtype=float).reshape(-1, 2)


def association_probabilities(nodes, codevectors, beta: float,
                              metric: Optional[Callable] = None) -> np.ndarray:
    """Gibbs association matrix ``p[i, j] = p(j|i)``.

    Args:
        nodes: ``Node`` sequence or ``(n, 2)`` array.
        codevectors: ``(K, 2)`` array.
        beta: inverse temperature, > 0.
        metric: ``metric(x, y) -> (n, K)`` distance matrix; squared Euclidean
            when omitted.
    """
    x = _node_coords(nodes)
    y = np.asarray(codevectors, dtype=float).reshape(-1, 2)
    d = (metric or pairwise_squared)(x, y)
    logits = -beta * d
    return np.exp(logits - row_log_sum_exp(logits)[:, None])


def basic_free_energy(nodes, codevectors, beta: float, metric: Optional[Callable] = None) -> float:
    """``-(1/beta) * sum_i log sum_j exp(-beta d(x_i, y_j))``."""
    x = _node_coords(nodes)
    y = np.asarray(codevectors, dtype=float).reshape(-1, 2)
    d = (metric or pairwise_squared)(x, y)
    return float(-np.sum(row_log_sum_exp(-beta * d)) / beta)


@dataclass(frozen=True)
class Schedule:
    beta_init: float
    beta_growth: float
    beta_max: float
    theta_init: float = 1.0
    theta_decay: float = 0.98
    theta_min: float = 1e-4
    stability_tol: float = 0.05
    sweep_tol: float = 1e-8
    max_sweeps: int = 500
    perturbation: float = 1e-6
    rng_seed: int = 0
    theta_reset: bool = False

    def __post_init__(self):
        if not (0 < self.beta_init < self.beta_max):
            raise ValueError("need 0 < beta_init < beta_max")
        if not self.beta_growth > 1:
            raise ValueError("beta_growth must exceed 1")
        if not (0 < self.theta_min < self.theta_init):
            raise ValueError("need 0 < theta_min < theta_init")
        if not 0 < self.theta_decay < 1:
            raise ValueError("theta_decay must lie in (0, 1)")
        if min(self.stability_tol, self.sweep_tol) <= 0 or self.max_sweeps < 1:
            raise ValueError("tolerances must be positive and max_sweeps >= 1")
        if self.perturbation < 0:
            raise ValueError("perturbation must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_schedule(instance: ProblemInstance, **overrides) -> Schedule:
    """Schedule scaled to the instance so that beta is dimensionless.

    ``sweep_tol`` is absolute (coordinate units); ``beta_*`` are in inverse
    squared units. The stability and theta-decay defaults were chosen on
    held-out random instances: a 1e-4 stability threshold is never met once
    the chain starts to unfold, which drops theta to its floor at the first
    split and freezes a poor topology.
    """
    var = instance.spread()
    kw = dict(
        beta_init=1.0 / (10.0 * var),
        beta_growth=1.05,
        beta_max=1e5 / var,
        theta_init=1.0,
        theta_decay=0.98,
        theta_min=1e-4,
        stability_tol=0.05,
        sweep_tol=1e-8 * instance.scale(),
        max_sweeps=500,
        perturbation=1e-6,
        rng_seed=0,
    )
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return Schedule(**kw)


@dataclass
class AnnealState:
    """Mutable solver state; one anneal owns one state."""

    codevectors: np.ndarray
    beta: float
    theta: float
    x: np.ndarray
    assoc: Optional[np.ndarray] = None
    free_energy: float = float("nan")
    table: object = None
    balance_sign: float = 1.0

    def copy(self) -> "AnnealState":
        return replace(
            self,
            codevectors=self.codevectors.copy(),
            assoc=None if self.assoc is None else self.assoc.copy(),
        )


@dataclass
class TraceRecord:
    step: int
    beta: float
    theta: float
    free_energy: float
    sq_tour_length: float
    sweeps: int
    converged: bool = True
    assoc_norm_error: float = 0.0
    table_norm_error: float = 0.0
    energy_rise: float = 0.0


@dataclass
class Trace:
    records: List[TraceRecord] = field(default_factory=list)
    events: List[str] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("trace steps must increase")
        self.records.append(rec)

    def note(self, msg: str) -> None:
        if msg not in self.events:
            self.events.append(msg)
            log.debug(msg)

    @property
    def nonconverged(self) -> List[TraceRecord]:
        return [r for r in self.records if not r.converged]

    @property
    def energy_flags(self) -> List[TraceRecord]:
        return [r for r in self.records if r.energy_rise > 1e-6]

    def to_csv(self, trailer: Optional[str] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow([r.step, repr(r.beta), repr(r.theta), repr(r.free_energy),
                        repr(r.sq_tour_length), r.sweeps])
        if trailer:
            buf.write(f"# {trailer}\n")
        return buf.getvalue()


def initial_codevectors(instance: ProblemInstance, rng: np.random.Generator) -> np.ndarray:
    """Tiny circle around the node centroid, ordered by angle."""
    x = instance.coords
    n = len(x)
    offset = rng.uniform(0.0, 2.0 * math.pi)
    ang = offset + 2.0 * math.pi * np.arange(n) / n
    r = 1e-3 * instance.scale()
    return x.mean(axis=0) + r * np.column_stack([np.cos(ang), np.sin(ang)])


def refresh(state: AnnealState, rules) -> None:
    """Recompute associations, partition table and free energy for the current codevectors."""
    n = len(state.codevectors)
    if state.assoc is None or state.assoc.shape != (len(state.x), n):
        state.assoc = np.empty((len(state.x), n))
    lse = associate(state.x, state.codevectors, float(state.beta), rules.rho,
                    rules.interior_zero, state.assoc)
    state.table = rules.partition(state)
    state.free_energy = -lse / state.beta + rules.link_energy(state, state.table)


def fixed_point_sweep(state: AnnealState, rules, sweep_tol: float, max_sweeps: int,
                      trace: Optional[Trace] = None):
    """Iterate the variant update to a fixed point at the state's (beta, theta).

    Each pass recomputes associations and the partition table, then updates
    codevectors in index order, in place. Returns ``(state, passes,
    converged, energy_rise)``; ``energy_rise`` is the largest relative
    pass-to-pass free-energy increase seen.
    """
    rules.prepare(state)
    y = state.codevectors
    converged = False
    rise = 0.0
    prev_f = None
    passes = 0
    for passes in range(1, max_sweeps + 1):
        refresh(state, rules)
        f = state.free_energy
        if prev_f is not None and f - prev_f > 0:
            rise = max(rise, (f - prev_f) / max(abs(prev_f), 1e-300))
        prev_f = f
        moved, bad, coincident = sweep_pass(
            y, rules.fixed, state.x, state.assoc, rules.coefficients(state.table),
            float(state.theta), rules.rho, rules.interior_zero)
        if bad >= 0:
            raise DegenerateUpdate(state.beta, state.theta, bad, "reduce theta_decay step")
        if coincident and trace is not None:
            trace.note("a codevector coincided with a disk centre; used the +x direction")
        if not np.all(np.isfinite(y)):
            raise NumericalDivergence(state.beta, state.theta)
        if moved < sweep_tol:
            converged = True
            break
    refresh(state, rules)
    if not np.isfinite(state.free_energy):
        raise NumericalDivergence(state.beta, state.theta, "free energy is not finite")
    if not converged and trace is not None:
        trace.note(f"sweep did not converge within {max_sweeps} passes "
                   f"at beta={state.beta:.6g}, theta={state.theta:.6g}")
    return state, passes, converged, rise


def anneal(instance: ProblemInstance, schedule: Optional[Schedule] = None, rules=None,
           on_step: Optional[Callable] = None):
    """Run deterministic annealing and return ``(Solution, Trace)``.

    At fixed beta, theta is decayed geometrically until the squared chain
    length stops changing (relative change below ``stability_tol``); then
    beta grows geometrically and the codevectors receive seeded noise.
    Terminates once ``beta >= beta_max`` and ``theta <= theta_min``.

    ``on_step(state, rules, record)`` is called after every recorded step.
    """
    if rules is None:
        from .variants import rules_for
        rules = rules_for(instance)
    sched = schedule or default_schedule(instance)
    rng = np.random.default_rng(sched.rng_seed)
    scale = instance.scale()
    n = instance.n
    state = AnnealState(
        codevectors=initial_codevectors(instance, rng),
        beta=sched.beta_init, theta=sched.theta_init, x=instance.coords,
    )
    trace = Trace()
    # chains shorter than this are "collapsed": relative changes there are noise
    floor = n * (1e-4 * scale) ** 2
    step = 0
    while True:
        prev_len = None
        while True:
            state, passes, ok, rise = fixed_point_sweep(
                state, rules, sched.sweep_tol, sched.max_sweeps, trace)
            length = rules.chain_length(state.codevectors)
            rec = TraceRecord(
                step=step, beta=state.beta, theta=state.theta,
                free_energy=state.free_energy, sq_tour_length=length, sweeps=passes,
                converged=ok,
                assoc_norm_error=float(np.max(np.abs(state.assoc.sum(axis=1) - 1.0))),
                table_norm_error=float(abs(state.table.mass - 1.0)),
                energy_rise=rise,
            )
            trace.append(rec)
            step += 1
            if on_step is not None:
                on_step(state, rules, rec)
            if prev_len is not None and \
                    abs(length - prev_len) <= sched.stability_tol * max(prev_len, floor):
                break
            if state.theta <= sched.theta_min:
                break
            prev_len = length
            state.theta = max(state.theta * sched.theta_decay, sched.theta_min)
        if state.beta >= sched.beta_max and state.theta <= sched.theta_min:
            break
        if state.beta < sched.beta_max:
            state.beta = min(state.beta * sched.beta_growth, sched.beta_max)
            if sched.perturbation > 0:
                state.codevectors += rng.normal(0.0, sched.perturbation * scale,
                                                size=state.codevectors.shape)
            if sched.theta_reset:
                state.theta = sched.theta_init
    solution = rules.extract(state, state.table, trace)
    return solution, trace
