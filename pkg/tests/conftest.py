import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from homspace.dyadic import DyadicSystem
from homspace.space_core import QuasimetricMeasureSpace


def line(n, centered=False, mass=None):
    x = np.arange(n, dtype=float)
    if centered:
        x -= (n - 1) / 2
    D = np.abs(x[:, None] - x[None, :])
    return QuasimetricMeasureSpace(D, np.ones(n) if mass is None else mass)


def cloud_metric(rng, n, dim=2):
    pts = rng.random((n, dim))
    return np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))


def brute_A0(dist):
    n = len(dist)
    best = 1.0
    for x, y, z in itertools.product(range(n), repeat=3):
        if x != z:
            den = dist[x, y] + dist[y, z]
            best = max(best, dist[x, z] / den)
    return best


@pytest.fixture
def tree4():
    """Binary tree on 4 points with counting measure: root, two pairs, leaves."""
    x = np.array([0.0, 1.0, 10.0, 11.0])
    space = QuasimetricMeasureSpace(np.abs(x[:, None] - x[None]), np.ones(4))
    parts = [[(0, [0, 1, 2, 3])], [(0, [0, 1]), (2, [2, 3])], [(i, [i]) for i in range(4)]]
    return DyadicSystem.from_partitions(space, 0.1, parts)


@st.composite
def metric_tables(draw, min_n=3, max_n=9):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2 ** 31 - 1))
    rng = np.random.default_rng(seed)
    return cloud_metric(rng, n, draw(st.integers(1, 3)))


@st.composite
def spaces(draw, min_n=2, max_n=10, beta=None):
    D = draw(metric_tables(min_n, max_n))
    b = draw(st.sampled_from([1.0, 1.5, 2.0])) if beta is None else beta
    seed = draw(st.integers(0, 2 ** 31 - 1))
    mass = np.random.default_rng(seed).uniform(0.2, 3.0, len(D))
    return QuasimetricMeasureSpace(D ** b, mass)
