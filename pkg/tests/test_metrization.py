import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import shortest_path

from homspace.metrization import (NotAMetricError, ball_sandwich_check, chain_metric, default_epsilon,
                                  floyd_warshall, power_quasimetric, snowflake, triangle_defect)
from homspace.space_core import QuasimetricMeasureSpace

from conftest import brute_A0, cloud_metric, line, metric_tables


def bellman(weights):
    """Exhaustive relaxation until nothing changes."""
    d = np.array(weights, dtype=float)
    n = len(d)
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(n):
                best = min(d[i, k] + d[k, j] for k in range(n))
                if best < d[i, j] - 1e-15:
                    d[i, j] = best
                    changed = True
    return d


def test_snowflake_examples():
    D = line(4).dist
    assert np.array_equal(snowflake(D, 1), D)
    assert snowflake(np.array([[0, 4.0], [4.0, 0]]), 0.5)[0, 1] == 2.0
    with pytest.raises(ValueError):
        snowflake(D, 0)


@given(metric_tables(), st.floats(0.05, 1.0))
@settings(max_examples=30, deadline=None)
def test_snowflake_of_metric_is_metric(D, eps):
    assert triangle_defect(snowflake(D, eps)) <= 1e-12 * D.max()


def test_power_quasimetric_examples():
    D = line(3).dist
    t, a0 = power_quasimetric(D, 1)
    assert np.array_equal(t, D) and a0 == 1.0
    t, a0 = power_quasimetric(D, 2)
    assert a0 == 2.0
    rng = np.random.default_rng(3)
    _, a0 = power_quasimetric(cloud_metric(rng, 32), 3)
    assert a0 <= 4.0


def test_power_quasimetric_rejects_non_metric():
    with pytest.raises(NotAMetricError):
        power_quasimetric(np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0.0]]), 2)


@given(metric_tables(max_n=7), st.sampled_from([1.5, 2.0, 3.0]))
@settings(max_examples=30, deadline=None)
def test_power_a0_matches_brute_and_limit(D, beta):
    t, a0 = power_quasimetric(D, beta)
    assert a0 == pytest.approx(brute_A0(t), rel=1e-12)
    assert a0 <= 2 ** (beta - 1) * (1 + 1e-12)


def test_chain_metric_identity_case():
    D = line(6).dist
    r = chain_metric(D, 1.0)
    assert np.array_equal(r.d_eps, D) and r.C_eps == 1.0


def test_chain_metric_squared_line_recovers_line():
    D = line(3).dist
    r = chain_metric(D ** 2, 0.5)
    assert r.d_eps[0, 2] == 2.0
    assert np.allclose(r.d_eps, D, rtol=1e-12)


@pytest.mark.parametrize("n", [8, 64])
@pytest.mark.parametrize("beta", [1.5, 2.0, 3.0])
def test_exact_recovery(n, beta):
    D = line(n).dist
    r = chain_metric(D ** beta, 1 / beta)
    assert np.max(np.abs(r.d_eps - D)) <= 1e-9 * D.max()


def test_random_quasimetric_against_shortest_path_oracles():
    rng = np.random.default_rng(11)
    D = cloud_metric(rng, 64) ** 2.5
    s = QuasimetricMeasureSpace(D, np.ones(64))
    r = chain_metric(D)
    assert r.epsilon == pytest.approx(default_epsilon(s.A0))
    assert np.allclose(r.d_eps, shortest_path(r.rho_eps, method="D", directed=False), rtol=1e-12)
    assert triangle_defect(r.d_eps) <= 1e-12 * r.d_eps.max()
    assert 1.0 <= r.C_eps < np.inf


@given(metric_tables(max_n=6), st.sampled_from([1.0, 2.0, 3.0]))
@settings(max_examples=20, deadline=None)
def test_floyd_warshall_matches_bellman(D, beta):
    assert np.allclose(floyd_warshall(D ** beta), bellman(D ** beta), rtol=1e-12)


def test_default_epsilon():
    assert default_epsilon(1.0) == 1.0
    assert default_epsilon(2.0) == pytest.approx(0.5)
    assert (2 * 3.0) ** default_epsilon(3.0) == pytest.approx(2.0)


def test_sandwich_examples():
    s = line(10)
    rep = ball_sandwich_check(s, chain_metric(s.dist, 1.0))
    assert rep.passed and rep.checked > 0
    q = s.with_dist(s.dist ** 2)
    assert ball_sandwich_check(q, chain_metric(q.dist)).passed


@given(metric_tables(max_n=9), st.sampled_from([1.0, 1.7, 2.5]))
@settings(max_examples=25, deadline=None)
def test_sandwich_random(D, beta):
    s = QuasimetricMeasureSpace(D ** beta, np.ones(len(D)))
    assert ball_sandwich_check(s, chain_metric(s.dist)).passed


def test_sandwich_detects_wrong_constant():
    s = line(6)
    s = s.with_dist(s.dist ** 2)
    r = chain_metric(s.dist, 0.5)
    r.C_eps = 0.5
    assert not ball_sandwich_check(s, r).passed
