import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homspace.czd import (PreconditionError, adjacent_pointwise_diagnostic, basic_cover, cz_global, cz_local,
                          cz_weighted, dyadic_maximal, refines, vitali_cover)
from homspace.dyadic import build_adjacent_systems, build_system
from homspace.space_core import Ball, QuasimetricMeasureSpace

from conftest import cloud_metric, line

F = np.array([8.0, 0, 0, 0])


def oracle_cz(f, sysm, q0, alpha, measure):
    """Cubes inside q0 with average > alpha and no such ancestor below q0."""
    k0, i0 = q0
    base = set(sysm.members(k0, i0))
    out = []
    for c in sysm.all_cubes():
        if c.level < k0 or not set(c.members) <= base:
            continue
        a = lambda mem: sum(abs(f[j]) * measure[j] for j in mem) / sum(measure[j] for j in mem)
        if a(c.members) <= alpha:
            continue
        anc_ok = all(a(sysm.cube_containing(c.members[0], l).members) <= alpha for l in range(k0, c.level))
        if anc_ok:
            out.append(set(c.members))
    return sorted(map(sorted, out))


def test_maximal_constant(tree4):
    assert np.array_equal(dyadic_maximal(np.full(4, 2.5), tree4), np.full(4, 2.5))


def test_maximal_tree(tree4):
    mf = dyadic_maximal(F, tree4, (0, 0))
    assert mf.tolist() == [8, 4, 2, 2]
    assert np.all(mf >= F.mean())


def test_local_tree_example(tree4):
    dec = cz_local(F, tree4, (0, 0), 3.0)
    assert dec.member_sets == [{0, 1}]
    assert dec.omega.tolist() == [0, 1]
    assert dec.passed
    upper = next(c for c in dec.checks if c.name == "cz.i.upper")
    # measured dyadic doubling 2 is tighter than A1^N
    assert upper.measured == 4.0 and upper.bound == 6.0
    assert upper.bound <= tree4.space.A1 ** tree4.N * 3.0


def test_local_errors(tree4):
    with pytest.raises(PreconditionError):
        cz_local(F, tree4, (0, 0), 2.0)
    with pytest.raises(PreconditionError):
        cz_local(np.array([0, 0, 1.0, 0]), tree4, (1, 0), 5.0)


def test_local_empty_and_near_threshold(tree4):
    assert cz_local(F, tree4, (0, 0), 8.5).cubes == []
    dec = cz_local(F, tree4, (0, 0), 2.0001)
    assert dec.passed
    assert 2.0001 * len(dec.omega) <= F.sum()


def test_global(tree4):
    assert cz_global(F, tree4, 9.0).cubes == []
    dec = cz_global(F, tree4, 1.0)
    assert dec.member_sets == [{0, 1, 2, 3}] and dec.passed
    with pytest.raises(PreconditionError):
        cz_global(F, tree4, 0.0)


def test_weighted(tree4):
    same = cz_weighted(F, tree4, (0, 0), 3.0, np.ones(4))
    assert same.member_sets == cz_local(F, tree4, (0, 0), 3.0).member_sets
    w = np.array([1.0, 1, 2, 2])
    dec = cz_weighted(F, tree4, (0, 0), 3.0, w)
    assert dec.member_sets == [{0, 1}] and dec.passed
    # w(Omega) <= (1/alpha) int |f| w
    assert w[dec.omega].sum() <= (F * w).sum() / 3.0


def test_refinement_chain_line64():
    sysm = build_system(line(64), 0.25, override=True)
    rng = np.random.default_rng(1)
    f = rng.exponential(size=64) * (rng.random(64) < 0.3)
    alphas = np.linspace(f.mean() * 1.01, f.max() * 0.99, 10)
    decs = [cz_global(f, sysm, a) for a in alphas]
    assert all(d.passed for d in decs)
    assert all(refines(decs[i + 1], decs[i]) for i in range(9))


@given(st.integers(2, 40), st.integers(0, 10_000), st.floats(0.15, 0.45), st.floats(1.01, 20))
@settings(max_examples=60, deadline=None)
def test_local_matches_oracle(n, seed, delta, ratio):
    rng = np.random.default_rng(seed)
    s = QuasimetricMeasureSpace(cloud_metric(rng, n), rng.uniform(0.5, 2, n))
    sysm = build_system(s, delta, seed=seed, override=True)
    k = int(rng.integers(sysm.k_min, sysm.k_max + 1))
    i = int(rng.integers(sysm.n_cubes(k)))
    mem = sysm.members(k, i)
    f = np.zeros(n)
    f[mem] = rng.exponential(size=mem.size)
    a0 = (f[mem] * s.mass[mem]).sum() / s.mass[mem].sum()
    if a0 == 0:
        return
    dec = cz_local(f, sysm, (k, i), a0 * ratio)
    assert dec.passed
    assert sorted(map(sorted, dec.member_sets)) == oracle_cz(f, sysm, (k, i), a0 * ratio, s.mass)
    w = rng.uniform(0.2, 5, n)
    wa = (f[mem] * w[mem] * s.mass[mem]).sum() / (w[mem] * s.mass[mem]).sum()
    wdec = cz_weighted(f, sysm, (k, i), wa * ratio, w)
    assert wdec.passed
    assert sorted(map(sorted, wdec.member_sets)) == oracle_cz(f, sysm, (k, i), wa * ratio, w * s.mass)


def test_adjacent_pointwise():
    s = line(32)
    adj = build_adjacent_systems(s, 3, delta=0.25, override=True)
    f = np.zeros(32)
    f[3], f[20] = 5.0, 1.0
    row = adjacent_pointwise_diagnostic(f, adj.systems, range(32), 0.5, s.A1, s.A0, 0.25)
    assert row.passed


def test_basic_cover_examples():
    s = line(64)
    one = [Ball(3, 2.0)]
    assert basic_cover(s, one).selected == one
    two = [Ball(3, 1.5), Ball(40, 2.0)]
    res = basic_cover(s, two)
    assert {b.center for b in res.selected} == {3, 40} and res.passed
    rng = np.random.default_rng(0)
    balls = [Ball(int(rng.integers(64)), float(rng.uniform(0.5, 10)), bool(rng.integers(2))) for _ in range(100)]
    res = basic_cover(s, balls)
    assert res.passed and len(res.selected) <= len(balls)
    # independent dilation check
    C = s.A0 + 4 * s.A0 ** 2
    union = set().union(*(set(b.members(s.dist)) for b in balls))
    big = set().union(*(set(Ball(b.center, C * b.radius, b.closed).members(s.dist)) for b in res.selected))
    assert union <= big


def test_basic_cover_quasimetric():
    s = line(30)
    q = s.with_dist(s.dist ** 2)
    rng = np.random.default_rng(4)
    for _ in range(50):
        balls = [Ball(int(rng.integers(30)), float(rng.uniform(1, 200)), True) for _ in range(8)]
        assert basic_cover(q, balls).passed


def test_vitali_examples():
    s = line(10)
    sep = s.min_positive_dist
    res = vitali_cover(s, range(10), [Ball(i, sep / 2, True) for i in range(10)])
    assert res.passed and len(res.selected) == 10
    A = [2, 3, 4, 8]
    nested = [Ball(3, r, True) for r in (0.5, 1.0, 2.0)] + [Ball(a, 0.5, True) for a in A if a != 3]
    res = vitali_cover(s, A, nested)
    assert res.passed
    assert res.selected[0] == Ball(3, 2.0, True)
    assert sorted(b.center for b in res.selected[1:]) == [8]
    assert vitali_cover(s, [], []).selected == []


def test_vitali_precondition_names_atom():
    s = line(10)
    with pytest.raises(PreconditionError, match="atom 4"):
        vitali_cover(s, [2, 4], [Ball(2, 0.5, True), Ball(4, 3.0, True)])
    with pytest.raises(PreconditionError):
        vitali_cover(s, [2], [Ball(5, 0.5, True)])
