"""Snowflakes, power quasimetrics and the epsilon-chain metric."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .space_core import compute_A0

SLACK = 1e-12


class NotAMetricError(ValueError):
    pass


def snowflake(dist, epsilon):
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    d = np.asarray(dist, dtype=float)
    return d.copy() if epsilon == 1 else d ** epsilon


def triangle_defect(dist):
    """max over (x,y,z) of d(x,z) - d(x,y) - d(y,z); <= 0 for a metric."""
    d = np.asarray(dist, dtype=float)
    worst = -math.inf
    for y in range(d.shape[0]):
        worst = max(worst, float(np.max(d - d[:, y][:, None] - d[y, :][None, :])))
    return worst


def power_quasimetric(metric, beta):
    """D**beta together with its measured quasitriangle constant."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    d = np.asarray(metric, dtype=float)
    scale = max(float(d.max()), 1e-300)
    if triangle_defect(d) > 1e-12 * scale:
        raise NotAMetricError("input table violates the triangle inequality")
    table = d.copy() if beta == 1 else d ** beta
    a0 = compute_A0(None, table)
    limit = 2.0 ** (beta - 1)
    if a0 > limit * (1 + SLACK):
        raise AssertionError(f"A0 = {a0} exceeds 2^(beta-1) = {limit}")
    return table, a0


def default_epsilon(a0):
    # (2 A0)^eps = 2
    return 1.0 / math.log2(2.0 * a0)


def floyd_warshall(weights):
    d = np.array(weights, dtype=float)
    for k in range(d.shape[0]):
        np.minimum(d, d[:, k][:, None] + d[k, :][None, :], out=d)
    return d


@dataclass
class MetrizationResult:
    epsilon: float
    d_eps: np.ndarray
    C_eps: float
    rho_eps: np.ndarray


def chain_metric(quasi, epsilon=None):
    """Infimal chain sums of rho**eps, i.e. all-pairs shortest paths."""
    q = np.asarray(quasi, dtype=float)
    if epsilon is None:
        epsilon = default_epsilon(compute_A0(None, q))
    rho_eps = snowflake(q, epsilon)
    d = floyd_warshall(rho_eps)
    n = q.shape[0]
    off = ~np.eye(n, dtype=bool)
    if n > 1:
        c = float(np.max(rho_eps[off] / d[off]))
        c = max(1.0, c, float(np.max(d[off] / rho_eps[off])))
    else:
        c = 1.0
    return MetrizationResult(float(epsilon), d, c, rho_eps)


@dataclass
class SandwichReport:
    passed: bool
    checked: int
    witnesses: list


def ball_sandwich_check(space_rho, result: MetrizationResult, max_witnesses=5):
    """B_d(x, r^e / C) in B_rho(x, r) in B_d(x, C r^e), open and closed.

    Radii: every distinct rho-distance from x, a hair above and below it,
    which hits every distinct rho-ball.  Inclusions are tested on member
    sets with the reported C_eps inflated by the 1e-12 slack.
    """
    rho = np.asarray(space_rho.dist)
    d = result.d_eps
    e, c = result.epsilon, result.C_eps * (1 + SLACK)
    wit, checked, failed = [], 0, 0
    for x in range(rho.shape[0]):
        u = np.unique(rho[x])
        u = u[u > 0]
        probes = np.concatenate([u, u * (1 - 1e-9), u * (1 + 1e-9), [np.min(u) / 2 if u.size else 1.0]])
        for closed in (False, True):
            cmp = np.less_equal if closed else np.less
            mid = cmp(rho[x][None, :], probes[:, None])
            inner = cmp(d[x][None, :], (probes ** e / c)[:, None])
            outer = cmp(d[x][None, :], (c * probes ** e)[:, None])
            bad = np.any(inner & ~mid, axis=1) | np.any(mid & ~outer, axis=1)
            checked += probes.size
            failed += int(bad.sum())
            for i in np.flatnonzero(bad)[:max(0, max_witnesses - len(wit))]:
                wit.append({"center": x, "radius": float(probes[i]), "closed": closed})
    return SandwichReport(failed == 0, checked, wit)
