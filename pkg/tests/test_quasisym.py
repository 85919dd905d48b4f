import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homspace.harness import stretch_map
from homspace.metrization import chain_metric
from homspace.quasisym import (Eta, PointBijection, distortion_gap, distortion_gap_scan, eta_profile,
                               generalized_jacobian, integral_identity, inverse_duality_check,
                               is_quasisymmetric, jacobian_comparability, pullback_doubling_check,
                               pullback_measure, qs_transfer, qs_transfer_check, reimann_pipeline)
from homspace.space_core import QuasimetricMeasureSpace

from conftest import line


def triple_scan(fmap):
    """Independent envelope: every ordered triple, python loops."""
    src, tgt = fmap.source.dist, fmap.pulled_dist()
    best = {}
    n = len(src)
    for x, a, b in itertools.permutations(range(n), 3):
        th = src[x, a] / src[x, b]
        r = tgt[x, a] / tgt[x, b]
        best[th] = max(best.get(th, 0.0), r)
    th = np.array(sorted(best))
    return th, np.maximum.accumulate(np.array([best[t] for t in th]))


def test_identity_envelope_is_theta():
    prof = eta_profile(PointBijection.identity(line(9)))
    assert np.allclose(prof.envelope, prof.thetas)


def test_reversal_envelope_is_theta():
    s = line(10, centered=True)
    prof = eta_profile(PointBijection(np.arange(10)[::-1], s, s))
    assert np.allclose(prof.envelope, prof.thetas)


def test_small_profiles_empty():
    s = line(2)
    assert len(eta_profile(PointBijection.identity(s))) == 0


@pytest.mark.parametrize("gamma", [1.5, 2.0])
def test_stretch_envelope_matches_triple_scan(gamma):
    fmap = stretch_map(12, gamma)
    prof = eta_profile(fmap)
    th, env = triple_scan(fmap)
    assert np.array_equal(prof.thetas, th)
    assert np.allclose(prof.envelope, env, rtol=1e-15)
    assert np.all(np.isfinite(prof.envelope)) and np.all(np.diff(prof.envelope) >= 0)


def test_envelope_thread_independent(monkeypatch):
    fmap = stretch_map(30, 2.0)
    monkeypatch.setenv("HOMSPACE_THREADS", "1")
    a = eta_profile(fmap)
    monkeypatch.setenv("HOMSPACE_THREADS", "4")
    b = eta_profile(fmap)
    assert np.array_equal(a.envelope, b.envelope) and np.array_equal(a.thetas, b.thetas)


def test_is_quasisymmetric_examples():
    prof = eta_profile(PointBijection.identity(line(8)))
    assert is_quasisymmetric(prof, Eta.power(1.0, 1.0))[0]
    ok, wit = is_quasisymmetric(prof, Eta.power(0.5, 1.0))
    assert not ok and wit[1] > wit[2]
    sprof = eta_profile(stretch_map(20, 2.0))
    assert is_quasisymmetric(sprof, sprof.eta_hat())[0]
    short = Eta.tabulated([0.5, 1.0], [0.5, 1.0])
    with pytest.raises(ValueError):
        is_quasisymmetric(prof, short)


def test_eta_forms():
    e = Eta.tabulated([1.0, 2.0], [1.0, 4.0])
    assert float(e(0.5)) == 0.5 and float(e(1.5)) == 2.5
    assert Eta.from_json(e.to_json()).to_json() == e.to_json()
    p = Eta.power(2.0, 2.0)
    assert float(p(0.5)) == pytest.approx(2 * 0.5 ** 0.5)
    assert float(p(3.0)) == pytest.approx(18.0)
    assert Eta.from_json({"kind": "power", "c": 2.0, "gamma": 2.0}).c == 2.0
    with pytest.raises(ValueError):
        Eta.tabulated([1.0, 0.5], [1.0, 2.0])


def test_pullback_measure():
    s = line(4, mass=np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.array_equal(pullback_measure(PointBijection.identity(s)), s.mass)
    two = line(2, mass=np.array([1.0, 2.0]))
    assert pullback_measure(PointBijection([1, 0], two, two)).tolist() == [2.0, 1.0]


@given(st.permutations(range(7)))
@settings(max_examples=30, deadline=None)
def test_pullback_preserves_total(perm):
    s = line(7, mass=np.arange(1.0, 8.0))
    fmap = PointBijection(np.array(perm), s, s)
    assert pullback_measure(fmap).sum() == s.mass.sum()
    J = generalized_jacobian(fmap).values
    Jinv = generalized_jacobian(fmap.inverse_map()).values
    assert np.allclose(Jinv[fmap.forward] * J, 1.0, rtol=1e-15)


def test_bijection_validation():
    s = line(3)
    with pytest.raises(ValueError):
        PointBijection([0, 0, 1], s, s)


def test_doubling_identity_and_isometry():
    s = line(16, centered=True)
    for fmap in (PointBijection.identity(s), PointBijection(np.arange(16)[::-1], s, s)):
        rep = pullback_doubling_check(fmap, Eta.power(1.0, 1.0))
        assert rep.measured == s.A1
        assert all(c.passed for c in rep.checks)


def test_doubling_stretch64():
    rep = pullback_doubling_check(stretch_map(64, 2.0))
    assert all(c.passed for c in rep.checks)
    assert rep.measured <= rep.bound and rep.k >= 1 / rep.theta


def test_doubling_bound_not_applicable():
    rep = pullback_doubling_check(PointBijection.identity(line(8)), Eta.tabulated(
        [1.0, 7.0], [1.0, 7.0]))
    assert rep.bound is None and rep.measured == line(8).A1


def test_distortion_gap_identity():
    s = line(20)
    fmap = PointBijection.identity(s)
    eta = Eta.power(1.0, 1.0)
    for x in (0, 7, 19):
        for r in (0.5, 1.5, 3.0):
            sv, tv, ok = distortion_gap(fmap, x, r, 4, 1 / 3, eta)
            if math.isfinite(tv):
                assert sv <= r < 4 * r <= tv and ok
    with pytest.raises(ValueError):
        distortion_gap(fmap, 0, 1.0, 2, 0.5, eta)


def test_distortion_gap_scan_stretch():
    fmap = stretch_map(64, 2.0)
    rep = pullback_doubling_check(fmap)
    ok, worst, count = distortion_gap_scan(fmap, rep.k, rep.theta)
    assert ok and worst < 1 and count > 0
    # agree with the single-ball routine at a few balls
    for x, r in ((3, 2.0), (40, 5.5), (63, 0.7)):
        sv, tv, good = distortion_gap(fmap, x, r, rep.k, rep.theta)
        assert good


def test_jacobian_examples():
    s = line(6)
    assert np.array_equal(generalized_jacobian(PointBijection.identity(s)).values, np.ones(6))
    perm = np.array([5, 4, 3, 2, 1, 0])
    assert np.array_equal(generalized_jacobian(PointBijection(perm, s, s)).values, np.ones(6))
    two = line(2, mass=np.array([1.0, 2.0]))
    assert generalized_jacobian(PointBijection([1, 0], two, two)).values.tolist() == [2.0, 0.5]


def test_jacobian_integral_identity():
    small = stretch_map(10, 2.0)
    assert integral_identity(small, generalized_jacobian(small)) <= 1e-12
    big = stretch_map(64, 1.5)
    assert integral_identity(big, generalized_jacobian(big)) <= 1e-12


def test_multiscale_table_shape():
    jf = generalized_jacobian(stretch_map(16, 2.0))
    assert jf.multiscale.shape == (jf.radii.size, 16)
    # the largest radius covers everything: ratio of total masses
    fm = stretch_map(16, 2.0)
    assert jf.multiscale[-1] == pytest.approx(np.full(16, fm.target.mass.sum() / 16))


def test_comparability_identity_and_stretch():
    s = line(12)
    checks, diag = jacobian_comparability(PointBijection.identity(s), chain_metric(s.dist))
    assert all(c.passed for c in checks)
    assert diag["finest_ratio_max"] == 1.0 and diag["matched_scale_ratio_max"] == 1.0
    fm = stretch_map(40, 2.0, beta=2.0)
    checks, diag = jacobian_comparability(fm, chain_metric(fm.source.dist))
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]
    assert diag["finest_ratio_max"] == 1.0


def test_qs_transfer_collapses():
    eta = Eta.power(2.0, 1.5)
    t = np.linspace(0.01, 5, 50)
    assert np.allclose(qs_transfer(eta, 1.0, 1.0)(t), eta(t))
    lin = Eta.power(1.0, 1.0)
    for e in (0.3, 0.7, 1.0):
        assert np.allclose(qs_transfer(lin, 1.0, e)(t), t)
    with pytest.raises(ValueError):
        qs_transfer(eta, 0.5, 1.0)


def test_qs_transfer_stretch():
    fm = stretch_map(30, 2.0, beta=2.0)
    ms, mt = chain_metric(fm.source.dist), chain_metric(fm.target.dist, 0.5)
    eta = eta_profile(fm).eta_hat()
    assert qs_transfer_check(fm, eta, ms, mt, 0.5).passed


def test_inverse_duality():
    for fm in (stretch_map(30, 2.0), stretch_map(25, 1.5)):
        row, sampled = inverse_duality_check(fm)
        assert row.passed and sampled > 0


def test_reimann_identity():
    s = line(12)
    rep = reimann_pipeline(PointBijection.identity(s))
    assert rep.passed and rep.diagnostics["bmo_log_J"] == 0.0


def test_reimann_stretch_line128():
    rep = reimann_pipeline(stretch_map(128, 2.0))
    assert rep.passed, [c for c in rep.checks if not c.passed]
    d = rep.diagnostics
    assert 0 < d["bmo_log_J"] < np.inf
    # additive comparison of the two Jacobian families
    assert abs(d["bmo_log_J_rho"] - d["bmo_log_J_d"]) <= 2 * math.log(d["comparability"]["matched_scale_ratio_max"]) + 1e-12
