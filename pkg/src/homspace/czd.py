"""Calderon-Zygmund decompositions and the covering theorems."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checks import Check, flag, leq
from .space_core import Ball

CZ_RTOL = 1e-12


class PreconditionError(ValueError):
    pass


def level_averages(f, system, measure=None):
    """avg of |f| over the level-k cube of each point, shape (levels, n)."""
    meas = system.space.mass if measure is None else np.asarray(measure, dtype=float)
    af = np.abs(np.asarray(f, dtype=float))
    rows = []
    for k in system.levels:
        lab = system.labels[k - system.k_min]
        num = np.bincount(lab, weights=af * meas)
        den = np.bincount(lab, weights=meas)
        rows.append((num / den)[lab])
    return np.array(rows)


def _locate(system, q0):
    """(level index, member mask) of a cube given as Cube or (k, index)."""
    if q0 is None:
        return 0, np.ones(system.space.n, dtype=bool)
    k, i = (q0.level, q0.index) if hasattr(q0, "level") else q0
    li = k - system.k_min
    return li, system.labels[li] == i


def dyadic_maximal(f, system, Q0=None, measure=None):
    """Dyadic maximal function; local to Q0 when given, zero outside it."""
    avg = level_averages(f, system, measure)
    li, mask = _locate(system, Q0)
    mf = avg[li:].max(axis=0)
    return np.where(mask, mf, 0.0)


@dataclass
class CZDecomposition:
    alpha: float
    cubes: list            # (level, index, members)
    omega: np.ndarray
    variant: str
    checks: list = field(default_factory=list)

    @property
    def member_sets(self):
        return [set(m) for _, _, m in self.cubes]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_json(self):
        return {"alpha": self.alpha, "variant": self.variant,
                "cubes": [{"level": k, "index": i, "members": list(m)} for k, i, m in self.cubes],
                "omega": [int(v) for v in self.omega]}


def _select(avg, li0, mask, alpha, system):
    """Coarsest cube (at or below level li0) whose average exceeds alpha."""
    sub = avg[li0:] > alpha
    hit = sub.any(axis=0) & mask
    first = np.argmax(sub, axis=0) + li0
    chosen = {}
    for x in np.flatnonzero(hit):
        li = int(first[x])
        i = int(system.labels[li][x])
        chosen.setdefault((li, i), []).append(int(x))
    cubes = []
    for (li, i), mem in sorted(chosen.items()):
        cubes.append((li + system.k_min, i, tuple(sorted(mem))))
    return cubes


def _decompose(f, system, alpha, Q0, measure, variant, upper_const):
    meas = system.space.mass if measure is None else np.asarray(measure, dtype=float)
    af = np.abs(np.asarray(f, dtype=float))
    avg = level_averages(f, system, meas)
    li0, mask = _locate(system, Q0)
    cubes = _select(avg, li0, mask, alpha, system)
    omega = np.array(sorted(x for _, _, m in cubes for x in m), dtype=int)
    checks = []
    # disjointness and maximality
    seen = np.zeros(system.space.n, dtype=int)
    for _, _, m in cubes:
        seen[list(m)] += 1
    checks.append(flag("cz.disjoint", bool(np.all(seen <= 1))))
    mf = avg[li0:].max(axis=0)
    for k, i, m in cubes:
        m = np.array(m)
        a = float(np.sum(af[m] * meas[m]) / np.sum(meas[m]))
        checks.append(leq("cz.i.lower", alpha, a, rtol=0.0, level=k, cube=i) if a > alpha
                      else Check("cz.i.lower", alpha, a, False, {"level": k, "cube": i}))
        li = k - system.k_min
        if li > li0:
            checks.append(leq("cz.i.upper", a, upper_const * alpha, rtol=CZ_RTOL, level=k, cube=i))
            par = int(system.parents[li][i])
            pm = system.labels[li - 1] == par
            pa = float(np.sum(af[pm] * meas[pm]) / np.sum(meas[pm]))
            checks.append(leq("cz.maximal", pa, alpha, rtol=0.0, level=k, cube=i))
        else:
            checks.append(flag("cz.i.upper", True, level=k, cube=i, note="top cube: no parent, bound not applicable"))
    # (ii) M f <= alpha off the union
    off = mask.copy()
    off[omega] = False
    worst = float(mf[off].max()) if off.any() else 0.0
    checks.append(leq("cz.ii", worst, alpha, rtol=0.0))
    # (iii) alpha * mu(Omega) <= ||f||_1
    total = math.fsum(af[mask] * meas[mask])
    checks.append(leq("cz.iii", alpha * math.fsum(meas[omega]), total, rtol=CZ_RTOL))
    return CZDecomposition(float(alpha), cubes, omega, variant, checks)


def cz_local(f, system, Q0, alpha, measure=None, dydbl=None):
    """Local decomposition inside Q0 (requires alpha > avg over Q0)."""
    li0, mask = _locate(system, Q0)
    meas = system.space.mass if measure is None else np.asarray(measure, dtype=float)
    af = np.abs(np.asarray(f, dtype=float))
    if np.any(af[~mask] != 0):
        raise PreconditionError("supp f must lie in Q0")
    a0 = float(np.sum(af[mask] * meas[mask]) / np.sum(meas[mask]))
    if not alpha > a0:
        raise PreconditionError(f"alpha = {alpha} must exceed the Q0 average {a0}")
    if dydbl is None:
        measured = system.dyadic_doubling(meas)
        upper = min(system.space.A1 ** system.N, measured) if measure is None else measured
    else:
        upper = dydbl
    return _decompose(f, system, alpha, Q0, measure, "local" if measure is None else "weighted", upper)


def cz_global(f, system, alpha):
    if not alpha > 0:
        raise PreconditionError("alpha must be positive")
    upper = min(system.space.A1 ** system.N, system.dyadic_doubling())
    return _decompose(f, system, alpha, None, None, "global", upper)


def cz_weighted(f, system, Q0, alpha, w):
    """Decomposition under w*mu; property (i) uses C_dydbl of w."""
    wm = np.asarray(w, dtype=float) * system.space.mass
    return cz_local(f, system, Q0, alpha, measure=wm, dydbl=system.dyadic_doubling(wm))


def refines(fine: CZDecomposition, coarse: CZDecomposition):
    """Every cube of `fine` sits inside some cube of `coarse`."""
    coarse_sets = coarse.member_sets
    return all(any(s <= c for c in coarse_sets) for s in fine.member_sets)


def adjacent_pointwise_diagnostic(f, systems, Q0_members, alpha, A1, A0, delta):
    """Maximal function over all T systems restricted to cubes inside Q0.

    Returns max |f(x)|/alpha off the exceptional set next to A1^m.
    """
    q0 = np.zeros(systems[0].space.n, dtype=bool)
    q0[list(Q0_members)] = True
    af = np.abs(np.asarray(f, dtype=float))
    mf = np.zeros_like(af)
    for sysm in systems:
        avg = level_averages(af, sysm)
        for li, k in enumerate(sysm.levels):
            lab = sysm.labels[li]
            inside = np.bincount(lab, weights=(~q0).astype(float), minlength=len(sysm.centers[li])) == 0
            ok = inside[lab] & q0
            mf = np.where(ok, np.maximum(mf, avg[li]), mf)
    off = q0 & ~(mf > alpha)
    ratio = float(af[off].max() / alpha) if off.any() else 0.0
    m = 1 + math.log2(8 * A0 ** 3 * delta ** -3)
    return leq("cz.adjacent_pointwise", ratio, A1 ** m, rtol=CZ_RTOL, m=m)


# ---- covering -----------------------------------------------------------

@dataclass
class CoverResult:
    selected: list
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def _members(space, b):
    return set(int(v) for v in Ball(b.center, b.radius, b.closed).members(space.dist))


def _greedy(space, balls):
    order = sorted(range(len(balls)), key=lambda i: (-balls[i].radius, balls[i].center, i))
    taken, used = [], set()
    for i in order:
        m = _members(space, balls[i])
        if not (m & used):
            taken.append(i)
            used |= m
    return taken


def basic_cover(space, balls):
    """Greedy disjoint subfamily; union of F inside union of C*B, C = A0 + 4A0^2."""
    a0 = space.A0
    taken = _greedy(space, balls)
    checks = []
    mem = [_members(space, b) for b in balls]
    sel = [balls[i] for i in taken]
    disjoint = all(not (mem[a] & mem[b]) for ai, a in enumerate(taken) for b in taken[ai + 1:])
    checks.append(flag("cover.disjoint", disjoint))
    half_ok = True
    for j, b in enumerate(balls):
        if not any(mem[j] & mem[i] and balls[i].radius >= b.radius / 2 for i in taken):
            half_ok = False
            break
    checks.append(flag("cover.half_radius", half_ok))
    C = a0 + 4 * a0 ** 2
    covered = set()
    for b in sel:
        covered |= _members(space, Ball(b.center, C * b.radius, b.closed))
    union_f = set().union(*mem) if mem else set()
    checks.append(flag("cover.dilation", union_f <= covered, C=C, missing=sorted(union_f - covered)[:5]))
    return CoverResult(sel, checks)


def vitali_cover(space, A, balls):
    """Disjoint subfamily covering A exactly; needs fine balls at every atom of A."""
    A = set(int(a) for a in A)
    sep = space.min_positive_dist
    for b in balls:
        if b.center not in A:
            raise PreconditionError(f"ball centred at {b.center} outside A")
        if not b.closed:
            raise PreconditionError("Vitali families consist of closed balls")
    fine = {b.center for b in balls if b.radius < sep}
    for a in sorted(A):
        if a not in fine:
            raise PreconditionError(f"no sub-separation ball at atom {a}")
    taken = _greedy(space, balls)
    sel = [balls[i] for i in taken]
    covered = set().union(*(_members(space, b) for b in sel)) if sel else set()
    # greedy may leave atoms uncovered only if a fine ball there was blocked,
    # which cannot happen: a singleton meets the union only when covered
    checks = [flag("vitali.disjoint", sum(len(_members(space, b)) for b in sel) == len(covered)),
              flag("vitali.covers", A <= covered, missing=sorted(A - covered)[:5])]
    return CoverResult(sel, checks)
