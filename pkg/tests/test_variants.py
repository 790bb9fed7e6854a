import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mep_route.engine import AnnealState, anneal, default_schedule, fixed_point_sweep, refresh
from mep_route.errors import PartitionError
from mep_route.instance import Variant, make_instance
from mep_route.variants import (
    basic_update, build_table, cetsp_targets, cetsp_update, depot_partition, depot_update,
    free_energies, free_energy_at, link_update, nonreturning_model, nonreturning_partition, nonreturning_update,
    ordered_pair_update, returning_partition, returning_update, rules_for,
)


def _rand(seed, n=6):
    return np.random.default_rng(seed).uniform(size=(n, 2))


def _state(x, y, beta=20.0, theta=0.3, rho=None):
    st_ = AnnealState(codevectors=np.array(y, dtype=float), beta=beta, theta=theta,
                      x=np.asarray(x, dtype=float))
    d = ((st_.x[:, None] - st_.codevectors[None]) ** 2).sum(-1)
    if rho is not None:
        gap = np.maximum(np.sqrt(d) - rho[:, None], 0.0)
        d = gap ** 2
    logits = -beta * d
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    st_.assoc = p / p.sum(axis=1, keepdims=True)
    return st_


# ---- partition tables --------------------------------------------------------

class TestNonreturningPartition:
    def test_two_salesmen_favour_the_long_link(self):
        y = np.array([(0, 0), (1, 0), (5, 0), (6, 0)], dtype=float)
        t = nonreturning_partition(y, beta=1.0, theta=1.0, m=2)
        d = np.array([1.0, 16.0, 1.0])
        want = np.exp(d - d.max()) / np.exp(d - d.max()).sum()
        np.testing.assert_allclose(t.probs, want, rtol=1e-12)
        assert t.marginals.argmax() == 1

    def test_three_salesmen_table_size(self):
        t = nonreturning_partition(_rand(0, 7), 3.0, 0.5, 3)
        assert len(t.probs) == math.comb(6, 2)

    def test_rejects_too_many_salesmen(self):
        with pytest.raises(PartitionError):
            nonreturning_model(6, 4)
        with pytest.raises(PartitionError):
            nonreturning_model(2, 3)


class TestReturningPartition:
    def test_ordered_pair_table_shape(self):
        t = returning_partition(_rand(1), 5.0, 0.5, 2)
        assert t.pair.shape == (6, 6)
        assert t.pair.sum() == pytest.approx(1.0, abs=1e-12)

    def test_diagonal_entries_are_unsplit_tours(self):
        y = _rand(2)
        t = returning_partition(y, 5.0, 0.5, 2)
        diag = np.diag(t.pair)
        # every diagonal configuration rewires nothing, so all share one weight
        np.testing.assert_allclose(diag, diag[0], rtol=1e-12)

    def test_pair_weight_matches_rewiring_cost(self):
        y = _rand(3)
        beta, theta = 4.0, 0.7
        t = returning_partition(y, beta, theta, 2)
        n = len(y)

        def d(a, b):
            return float(np.sum((y[a % n] - y[b % n]) ** 2))

        def cost(k, l):
            return d(k, l + 1) + d(l, k + 1) - d(k, k + 1) - d(l, l + 1)

        w = np.array([[math.exp(-beta * theta * cost(k, l)) for l in range(n)] for k in range(n)])
        np.testing.assert_allclose(t.pair, w / w.sum(), rtol=1e-10)

    def test_strict_mode_differs_but_normalises(self):
        y = _rand(4)
        a = returning_partition(y, 5.0, 0.5, 2)
        b = returning_partition(y, 5.0, 0.5, 2, strict=True)
        assert b.mass == pytest.approx(1.0, abs=1e-12)
        assert not np.allclose(a.probs, b.probs)


class TestDepotPartition:
    def test_break_energy_is_the_detour_cost(self):
        y = np.array([(0, 1), (1, 1), (2, 1)], dtype=float)
        dep = (1.0, 0.0)
        beta, theta = 2.0, 0.5
        t = depot_partition(y, dep, beta, theta, 2)
        e = [np.sum((y[k] - dep) ** 2) + np.sum((y[k + 1] - dep) ** 2)
             - np.sum((y[k] - y[k + 1]) ** 2) for k in range(2)]
        w = np.exp(-beta * theta * np.array(e))
        np.testing.assert_allclose(t.probs, w / w.sum(), rtol=1e-12)

    def test_eta_bounds(self):
        with pytest.raises(PartitionError):
            depot_partition(_rand(5), (0.5, 0.5), 1.0, 1.0, 2, eta=1.0)
        with pytest.raises(PartitionError):
            depot_partition(_rand(5), (0.5, 0.5), 1.0, 1.0, 2, eta=-0.1)

    def test_balance_needs_two_salesmen(self):
        with pytest.raises(PartitionError):
            depot_partition(_rand(5), (0.5, 0.5), 1.0, 1.0, 3, eta=0.2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["open", "ret", "depot"]), st.integers(1, 3),
       st.floats(1e-2, 1e4), st.floats(1e-4, 1.0))
def test_tables_normalised(seed, kind, m, beta, theta):
    y = _rand(seed, 7)
    if kind == "open":
        t = nonreturning_partition(y, beta, theta, m)
    elif kind == "ret":
        t = returning_partition(y, beta, theta, m)
    else:
        t = depot_partition(y, (0.5, 0.5), beta, theta, m, eta=0.3 if m == 2 else 0.0)
    assert abs(t.mass - 1.0) < 1e-9
    assert np.all(t.probs >= 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_three_salesmen_table_matches_direct_enumeration(seed):
    """Each unordered break set appears once, with the Gibbs weight of its summed links."""
    y = _rand(seed, 6)
    beta, theta = 3.0, 0.4
    t = nonreturning_partition(y, beta, theta, 3)
    d = np.sum(np.diff(y, axis=0) ** 2, axis=1)
    want = {}
    for R in itertools.permutations(range(5), 2):
        key = tuple(sorted(R))
        want[key] = math.exp(beta * theta * sum(d[k] for k in key))
    z = sum(want.values())
    got = {tuple(int(k) for k in c): p for c, p in zip(t.configs, t.probs)}
    assert set(got) == set(want)
    for key, w in want.items():
        assert got[key] == pytest.approx(w / z, rel=1e-10)


# ---- reduction identities ------------------------------------------------------

class TestReductions:
    def test_zero_table_nonreturning_equals_open_basic(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=(6, 2))
        st_ = _state(x, x + rng.normal(0, 0.05, (6, 2)))
        t = nonreturning_partition(st_.codevectors, st_.beta, st_.theta, 2, zero=True)
        for j in range(6):
            a = nonreturning_update(j, st_, t)
            b = basic_update(j, st_, closed=False)
            assert a.tobytes() == b.tobytes()

    def test_cetsp_zero_radius_trace_matches_basic(self):
        x = _rand(8, 7)
        basic = make_instance(x)
        cet = make_instance(x, Variant.CETSP, radius=0.0)
        sa, ta = anneal(basic)
        sb, tb = anneal(cet)
        assert ta.to_csv() == tb.to_csv()
        assert sa.codevectors.tobytes() == sb.codevectors.tobytes()
        assert sa.tours == sb.tours

    def test_diagonal_returning_matches_classical_tour(self):
        x = _rand(9, 7)
        basic = make_instance(x)
        ret = make_instance(x, Variant.RETURNING, 2)
        sa, ta = anneal(basic)
        sb, tb = anneal(ret, rules=rules_for(ret, diagonal_only=True))
        assert sa.codevectors.tobytes() == sb.codevectors.tobytes()
        ra = [(r.beta, r.theta, r.sq_tour_length, r.sweeps) for r in ta.records]
        rb = [(r.beta, r.theta, r.sq_tour_length, r.sweeps) for r in tb.records]
        assert ra == rb
        assert sorted(sb.tours[0]) == list(range(1, 8))

    def test_diagonal_update_is_bit_identical_per_codevector(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(size=(6, 2))
        st_ = _state(x, x + rng.normal(0, 0.05, (6, 2)))
        t = returning_partition(st_.codevectors, st_.beta, st_.theta, 2, diagonal_only=True)
        for j in range(6):
            assert returning_update(j, st_, t).tobytes() == basic_update(j, st_).tobytes()


# ---- updates agree with their closed forms -----------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_ordered_pair_form_matches_link_form(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(6, 2))
    st_ = _state(x, x + rng.normal(0, 0.1, (6, 2)), beta=8.0, theta=0.2)
    t = returning_partition(st_.codevectors, st_.beta, st_.theta, 2)
    for j in range(6):
        np.testing.assert_allclose(ordered_pair_update(j, st_, t), returning_update(j, st_, t),
                                   rtol=1e-12, atol=1e-12)


def test_ordered_pair_needs_pair_table():
    x = _rand(1)
    st_ = _state(x, x)
    with pytest.raises(PartitionError):
        ordered_pair_update(0, st_, returning_partition(x, 1.0, 1.0, 3))


def test_basic_update_closed_form():
    rng = np.random.default_rng(12)
    x = rng.uniform(size=(5, 2))
    st_ = _state(x, x + 0.02)
    y, th, p = st_.codevectors, st_.theta, st_.assoc
    for j in range(5):
        want = (p[:, j] @ x + th * (y[j - 1] + y[(j + 1) % 5])) / (p[:, j].sum() + 2 * th)
        np.testing.assert_allclose(basic_update(j, st_), want, rtol=1e-12)


def test_depot_update_ties_ends_to_depot():
    rng = np.random.default_rng(13)
    x = rng.uniform(size=(5, 2))
    dep = np.array([0.5, 0.5])
    st_ = _state(x, x + 0.02, theta=1e-12 + 0.4)
    t = depot_partition(st_.codevectors, dep, st_.beta, st_.theta, 1)
    y, th, p = st_.codevectors, st_.theta, st_.assoc
    want0 = (p[:, 0] @ x + th * (y[1] + dep)) / (p[:, 0].sum() + 2 * th)
    np.testing.assert_allclose(depot_update(0, st_, t, dep), want0, rtol=1e-12)


def test_cetsp_targets():
    x = np.array([(0.0, 0.0), (3.0, 0.0), (0.0, 0.0)])
    radii = np.array([1.0, 1.0, 0.0])
    st_ = _state(x, [(0.5, 0.0), (5.0, 0.0), (1.0, 1.0)], rho=radii)
    t = cetsp_targets(1, st_, radii)
    np.testing.assert_allclose(t, [(1.0, 0.0), (4.0, 0.0), (0.0, 0.0)])
    t0 = cetsp_targets(0, st_, radii)
    np.testing.assert_allclose(t0[0], (0.5, 0.0))   # inside: no pull
    raw = cetsp_targets(0, st_, radii, interior_zero=False)
    np.testing.assert_allclose(raw[0], (1.0, 0.0))


def test_cetsp_update_uses_targets():
    rng = np.random.default_rng(14)
    x = rng.uniform(size=(5, 2))
    radii = np.full(5, 0.1)
    st_ = _state(x, x + 0.3, rho=radii)
    y, th, p = st_.codevectors, st_.theta, st_.assoc
    for j in range(5):
        tg = cetsp_targets(j, st_, radii)
        want = (p[:, j] @ tg + th * (y[j - 1] + y[(j + 1) % 5])) / (p[:, j].sum() + 2 * th)
        got = cetsp_update(j, st_, radii)
        np.testing.assert_allclose(got, want, rtol=1e-12)
        st_.codevectors[j] = got


def test_cetsp_coincident_centre_uses_x_direction():
    x = np.array([(0.0, 0.0), (1.0, 0.0)])
    radii = np.array([0.5, 0.5])
    st_ = _state(x, [(0.0, 0.0), (2.0, 0.0)], rho=radii)
    t = cetsp_targets(0, st_, radii, interior_zero=False)
    np.testing.assert_allclose(t[0], (0.5, 0.0))


# ---- stationarity: the updates are the gradient's fixed points ----------------

def _fd(rules, y, beta, theta, sign, h=1e-6):
    g = np.zeros_like(y)
    for j in range(len(y)):
        for c in range(2):
            yp, ym = y.copy(), y.copy()
            yp[j, c] += h
            ym[j, c] -= h
            g[j, c] = (free_energy_at(rules, yp, beta, theta, sign)
                       - free_energy_at(rules, ym, beta, theta, sign)) / (2 * h)
    return g


CASES = [
    (Variant.BASIC, 1, {}),
    (Variant.NONRETURNING, 2, {}),
    (Variant.NONRETURNING, 3, {}),
    (Variant.RETURNING, 2, {}),
    (Variant.RETURNING, 3, {}),
    (Variant.DEPOT, 2, dict(depot=(0.5, 0.5))),
    (Variant.DEPOT, 2, dict(depot=(0.5, 0.5), eta=0.3)),
    (Variant.CETSP, 1, dict(radius=0.08)),
]


@pytest.mark.parametrize("variant,m,kw", CASES)
def test_fixed_point_is_stationary(variant, m, kw):
    rng = np.random.default_rng(21)
    inst = make_instance(rng.uniform(size=(6, 2)), variant, m, **kw)
    rules = rules_for(inst)
    st_ = AnnealState(codevectors=inst.coords + rng.normal(0, 0.05, (6, 2)), beta=25.0,
                      theta=0.3, x=inst.coords)
    _, _, ok, _ = fixed_point_sweep(st_, rules, 1e-13, 50000)
    assert ok
    g = _fd(rules, st_.codevectors, st_.beta, st_.theta, st_.balance_sign)
    assert np.max(np.abs(g)) < 1e-5 * inst.scale()


@pytest.mark.parametrize("variant,m,kw", CASES)
def test_link_update_matches_rules_update(variant, m, kw):
    rng = np.random.default_rng(22)
    inst = make_instance(rng.uniform(size=(6, 2)), variant, m, **kw)
    rules = rules_for(inst)
    st_ = AnnealState(codevectors=inst.coords + 0.03, beta=10.0, theta=0.5, x=inst.coords)
    refresh(st_, rules)
    radii = inst.radii if variant is Variant.CETSP else None
    for j in range(6):
        a = rules.update(j, st_, st_.table)
        b = link_update(j, st_, st_.table, depot=inst.depot_xy, radii=radii)
        assert a.tobytes() == b.tobytes()


def test_free_energy_matches_refresh():
    rng = np.random.default_rng(23)
    inst = make_instance(rng.uniform(size=(6, 2)), Variant.RETURNING, 2)
    rules = rules_for(inst)
    st_ = AnnealState(codevectors=inst.coords + 0.02, beta=9.0, theta=0.4, x=inst.coords)
    refresh(st_, rules)
    assert st_.free_energy == pytest.approx(
        free_energy_at(rules, st_.codevectors, 9.0, 0.4), rel=1e-12)


def test_free_energy_adds_partition_term_to_basic():
    y = _rand(24)
    x = _rand(25)
    beta, theta = 6.0, 0.3
    inst = make_instance(x, Variant.NONRETURNING, 2)
    rules = rules_for(inst)
    d = ((x[:, None] - y[None]) ** 2).sum(-1)
    f1 = -np.sum(np.log(np.exp(-beta * d).sum(axis=1))) / beta
    links = np.sum(np.diff(y, axis=0) ** 2, axis=1)
    f_part = -math.log(np.exp(beta * theta * links).sum()) / beta
    want = f1 + theta * links.sum() + f_part
    assert free_energy_at(rules, y, beta, theta) == pytest.approx(want, rel=1e-12)


# ---- extraction ----------------------------------------------------------------

def test_solutions_partition_the_nodes():
    for variant, m, kw in CASES:
        rng = np.random.default_rng(30)
        inst = make_instance(rng.uniform(size=(7, 2)), variant, m, **kw)
        sol, trace = anneal(inst, default_schedule(inst, beta_growth=1.3))
        ids = sorted(i for t in sol.tours for i in t)
        assert ids == list(range(1, 8))
        assert len(sol.tours) == m
        assert all(sol.tours)


def test_cetsp_solution_covers_every_disk():
    rng = np.random.default_rng(31)
    inst = make_instance(rng.uniform(size=(7, 2)), Variant.CETSP, radius=0.15)
    sol, _ = anneal(inst)
    w = np.asarray(sol.waypoints)
    gap = np.sqrt(((inst.coords[:, None] - w[None]) ** 2).sum(-1)) - 0.15
    assert np.all(gap.min(axis=1) <= 0)


@pytest.mark.parametrize("variant,m,kw,opts", [
    (Variant.BASIC, 1, {}, {}),
    (Variant.NONRETURNING, 3, {}, {}),
    (Variant.RETURNING, 2, {}, {}),
    (Variant.RETURNING, 3, {}, {"strict_returning_prob": True}),
    (Variant.DEPOT, 2, {"depot": (0.5, 0.5), "eta": 0.3}, {}),
    (Variant.CETSP, 1, {"radius": 0.2}, {"interior_zero": False}),
    (Variant.CETSP, 1, {"radius": 0.2}, {}),
])
def test_batched_free_energy_matches_single(variant, m, kw, opts):
    rng = np.random.default_rng(40)
    inst = make_instance(rng.uniform(size=(6, 2)), variant, m, **kw)
    rules = rules_for(inst, **opts)
    ys = rng.uniform(size=(5, 6, 2))
    for sign in (1.0, -1.0):
        got = free_energies(rules, ys, 7.0, 0.3, sign)
        want = [free_energy_at(rules, y, 7.0, 0.3, sign) for y in ys]
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)
