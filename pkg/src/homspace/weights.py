"""Weight-class constants, BMO norms and the log-BMO implication chain.

All averages are mu-weighted.  A collection is stored as a flat index array
with offsets, one slice per set, so every class constant is a handful of
vectorised reductions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checks import Check, TheoremViolation, flag, leq
from .czd import level_averages
from .dyadic import build_adjacent_systems
from .space_core import BallIndex, compute_A1

SUBSET_EXHAUSTIVE = 12


@dataclass(frozen=True, eq=False)
class Collection:
    kind: str
    indices: np.ndarray
    offsets: np.ndarray
    mass: np.ndarray

    @classmethod
    def from_sets(cls, kind, sets, mass):
        sets = [np.asarray(s, dtype=int) for s in sets]
        if not sets:
            raise ValueError("empty collection")
        if any(s.size == 0 for s in sets):
            raise ValueError("collection contains an empty set")
        return cls(kind, *_pack(sets), np.asarray(mass, dtype=float))

    def __len__(self):
        return len(self.offsets) - 1

    def sets(self):
        for a, b in zip(self.offsets[:-1], self.offsets[1:]):
            yield self.indices[a:b]

    @property
    def lengths(self):
        return np.diff(self.offsets)

    def sums(self, values):
        return np.add.reduceat(np.asarray(values, dtype=float)[self.indices], self.offsets[:-1])

    def averages(self, values):
        return self.sums(np.asarray(values) * self.mass) / self.sums(self.mass)


def ball_collection(space, dist=None):
    """Every distinct ball (open and closed balls give the same sets)."""
    idx = space.index if dist is None else BallIndex.build(np.asarray(dist, dtype=float))
    seen, sets = set(), []
    for x in range(space.n):
        row = idx.sorted_d[x]
        for cnt in np.searchsorted(row, np.unique(row), side="right"):
            s = np.sort(idx.order[x, :cnt])
            key = s.tobytes()
            if key not in seen:
                seen.add(key)
                sets.append(s)
    return Collection("balls", *_pack(sets), space.mass)


def _pack(sets):
    lens = np.array([s.size for s in sets])
    return np.concatenate(sets), np.concatenate([[0], np.cumsum(lens)])


def dyadic_collection(system):
    return Collection("dyadic", *_pack(system.distinct_sets()), system.space.mass)


def adjacent_collection(systems):
    seen, sets = set(), []
    for s in systems:
        for m in s.distinct_sets():
            if m.tobytes() not in seen:
                seen.add(m.tobytes())
                sets.append(m)
    return Collection("adjacent", *_pack(sets), systems[0].space.mass)


def _check_weight(w):
    w = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and strictly positive")
    return w


def _argmax(vals):
    i = int(np.argmax(vals))
    return max(1.0, float(vals[i])), i


def ap_constant(w, collection, p, witness=False):
    if p <= 1:
        raise ValueError("p must exceed 1")
    w = _check_weight(w)
    vals = collection.averages(w) * collection.averages(w ** (-1.0 / (p - 1))) ** (p - 1)
    c, i = _argmax(vals)
    return (c, i) if witness else c


def rh_constant(w, collection, q, witness=False):
    if q <= 1:
        raise ValueError("q must exceed 1")
    w = _check_weight(w)
    # scale out the max so w**q cannot overflow
    ws = w / w.max()
    vals = collection.averages(ws ** q) ** (1.0 / q) / collection.averages(ws)
    c, i = _argmax(vals)
    return (c, i) if witness else c


def bmo_norm(f, collection):
    f = np.asarray(f, dtype=float)
    mass = collection.mass
    avg = collection.averages(f)
    dev = np.abs(f[collection.indices] - np.repeat(avg, collection.lengths)) * mass[collection.indices]
    osc = np.add.reduceat(dev, collection.offsets[:-1]) / collection.sums(mass)
    return float(osc.max())


def weight_doubling(space, w):
    return compute_A1(space, np.asarray(w) * space.mass, lambdas=()).A1


@dataclass
class WeightClassReport:
    Ap: dict = field(default_factory=dict)
    RHq: dict = field(default_factory=dict)
    C_dbl: float = 1.0
    C_dydbl: dict = field(default_factory=dict)
    bmo: dict = field(default_factory=dict)


# ---- set absolute continuity ---------------------------------------------

def _subset_matrix(size, count, rng):
    if size <= SUBSET_EXHAUSTIVE:
        bits = np.arange(1, 1 << size)
        return ((bits[:, None] >> np.arange(size)[None, :]) & 1).astype(bool)
    probs = rng.random(count)[:, None]
    return rng.random((count, size)) < probs


def _adversarial(wq):
    """Prefixes by descending and ascending w: extreme w(E) for given mu(E)."""
    order = np.argsort(-wq, kind="stable")
    size = wq.size
    mats = []
    for o in (order, order[::-1]):
        m = np.zeros((size, size), dtype=bool)
        for j in range(size):
            m[j, o[: j + 1]] = True
        mats.append(m)
    return np.vstack(mats)


@dataclass
class AbsContinuity:
    eps: float
    rh: float
    gamma: float
    lam: float
    M: int
    C_dydbl: float
    checks: list

    def gamma_of(self, lam):
        return 1.0 - self.rh * (1.0 - lam) ** self.eps


def _choose_lambda(rh, eps, C, grid=400):
    """lambda in (1 - rh^(-1/eps), 1) maximising log(1/lambda)/(M log C)."""
    lo = 1.0 - rh ** (-1.0 / eps)
    best = None
    for s in (np.arange(1, grid) / grid):
        lam = lo + s * (1.0 - lo)
        gamma = 1.0 - rh * (1.0 - lam) ** eps
        if not 0 < gamma < 1 or not 0 < lam < 1:
            continue
        M = _smallest_M(C, gamma)
        span = math.log(1.0 / lam) / (M * math.log(C))
        if best is None or span > best[0]:
            best = (span, lam, gamma, M)
    return best


def _smallest_M(C, gamma):
    # C^(1-M) <= gamma; M = 1 only works when gamma >= 1
    M = max(1, math.ceil(1 + math.log(1.0 / gamma) / math.log(C)))
    while C ** (1 - M) > gamma:
        M += 1
    while M > 1 and C ** (2 - M) <= gamma:
        M -= 1
    return M


def rh_absolute_continuity(w, system, q, seed=0, n_random=10_000):
    """Derive eps = 1/q' and verify set continuity and one-step decay on subsets of cubes.

    Hoelder on E inside Q gives w(E)/w(Q) <= [w] (mu(E)/mu(Q))^(1/q'); the
    complement then yields the one-step decay with gamma = 1 - [w](1 - lambda)^eps for
    any lambda in (1 - [w]^(-1/eps), 1).
    """
    w = _check_weight(w)
    mass = system.space.mass
    coll = dyadic_collection(system)
    rh = rh_constant(w, coll, q)
    eps = 1.0 - 1.0 / q
    wm = w * mass
    C = system.dyadic_doubling(wm)
    if C <= 1 + 1e-15:
        lam, gamma, M = 0.5, 1.0 - rh * 0.5 ** eps, 1
    else:
        _, lam, gamma, M = _choose_lambda(rh, eps, C)
    rng = np.random.default_rng(seed)
    worst22, worst23, tested = 0.0, 0.0, 0
    checks = []
    for s in coll.sets():
        E = _subset_matrix(s.size, n_random, rng)
        if s.size > SUBSET_EXHAUSTIVE:
            E = np.vstack([E, _adversarial(w[s])])
        wE, mE = E @ wm[s], E @ mass[s]
        wQ, mQ = wm[s].sum(), mass[s].sum()
        live = mE > 0
        worst22 = max(worst22, float(np.max((wE[live] / wQ) / (rh * (mE[live] / mQ) ** eps), initial=0.0)))
        trig = wE < gamma * wQ
        if trig.any():
            worst23 = max(worst23, float(np.max(mE[trig] / (lam * mQ))))
        tested += E.shape[0]
    checks.append(leq("rh.set_continuity", worst22, 1.0, subsets=tested, eps=eps))
    checks.append(Check("rh.one_step_decay", worst23, 1.0, worst23 < 1.0, {"gamma": gamma, "lambda": lam}))
    return AbsContinuity(eps, rh, gamma, lam, M, C, checks)


# ---- RH to dyadic RH to A_p to log-BMO ---------------------------------

def rh_to_dyadic_rh(w, systems, q, rh_balls=None, c_dbl=None):
    w = _check_weight(w)
    space = systems[0].space
    mass = space.mass
    if rh_balls is None:
        rh_balls = rh_constant(w, ball_collection(space), q)
    if c_dbl is None:
        c_dbl = weight_doubling(space, w)
    rows = []
    for t, sysm in enumerate(systems):
        m = 1 + math.log2(sysm.C1 / sysm.c1)
        bound = rh_balls * space.A1 ** (m / q) * c_dbl ** m
        measured = rh_constant(w, dyadic_collection(sysm), q)
        rows.append(leq("rh.dyadic_from_balls", measured, bound, system=t, m=m))
    return rows


@dataclass
class ApReport:
    q_bar: float
    p: float
    c: float
    Ap_dyadic: float
    cont: AbsContinuity
    checks: list


def _decay_sets(w, system, lam, C, M, max_steps=400):
    """mu(E^s) <= lambda^s mu(Q0) for the weighted stopping sets of 1/w."""
    mass = system.space.mass
    wm = w * mass
    avg = level_averages(1.0 / w, system, wm)
    suffix = np.maximum.accumulate(avg[::-1], axis=0)[::-1]
    worst = 0.0
    for li, k in enumerate(system.levels):
        lab = system.labels[li]
        for i in range(len(system.centers[li])):
            q0 = lab == i
            a0 = mass[q0].sum() / wm[q0].sum()
            mf = suffix[li][q0]
            mq = mass[q0]
            for s in range(1, max_steps):
                alpha = _safe_pow(C, M * s) * a0
                e = mf > alpha
                if not e.any():
                    break
                worst = max(worst, float(mq[e].sum() / (lam ** s * mq.sum())))
    return worst


def rh_to_ap(w, system, q, seed=0, cont=None):
    """Dyadic RH_q implies dyadic A_p; checks the level-set bound on every cube.

    The stopping levels are alpha_s = C^(Ms) alpha_0 with C the dyadic
    doubling constant of w.  The one-step decay needs C^(1-M) <= gamma, so M is
    the smallest integer with that property.  Summing the level sets gives
    c^qbar = 1 + C^(M qbar) / (1 - C^(M(qbar-1)) lambda).
    """
    w = _check_weight(w)
    mass = system.space.mass
    cont = cont or rh_absolute_continuity(w, system, q, seed=seed)
    C, lam, M = cont.C_dydbl, cont.lam, cont.M
    checks = list(cont.checks)
    coll = dyadic_collection(system)
    if C <= 1 + 1e-15:
        q_bar, c = 2.0, 1.0
    else:
        span = math.log(1.0 / lam) / (M * math.log(C))
        q_bar = 1.0 + span / 2
        r = C ** (M * (q_bar - 1)) * lam
        c = float((1.0 + C ** (M * q_bar) / (1.0 - r)) ** (1.0 / q_bar))
        checks.append(leq("ap.series", r, 1.0, rtol=0.0, q_bar=q_bar, M=M))
        checks.append(leq("ap.decay", _decay_sets(w, system, lam, C, M), 1.0, lam=lam))
    p = q_bar / (q_bar - 1.0)
    wm = w * mass
    worst = -math.inf
    for s in coll.sets():
        wq, mq = wm[s].sum(), mass[s].sum()
        lhs = (np.sum(w[s] ** (1.0 - q_bar) * mass[s]) / wq) ** (1.0 / q_bar)
        worst = max(worst, lhs / (c * mq / wq))
    checks.append(leq("ap.cube_bound", worst, 1.0, q_bar=q_bar, c=c, c_needed=worst * c))
    ap = ap_constant(w, coll, p)
    checks.append(leq("ap.dyadic_constant", ap, _safe_pow(c, p), p=p))
    return ApReport(q_bar, p, c, ap, cont, checks)


def _safe_pow(base, expo):
    try:
        return base ** expo
    except OverflowError:
        return math.inf


def ap_log_bmo(w, system, p, ap=None):
    """Exponential averages of log w and the resulting dyadic log-BMO bound."""
    w = _check_weight(w)
    mass = system.space.mass
    coll = dyadic_collection(system)
    if ap is None:
        ap = ap_constant(w, coll, p)
    lw = np.log(w)
    lq = coll.averages(lw)
    rep = np.repeat(lq, coll.lengths)
    diff = lw[coll.indices] - rep
    mi = mass[coll.indices]
    e1 = np.add.reduceat(np.exp(diff) * mi, coll.offsets[:-1]) / coll.sums(mass)
    e2 = np.add.reduceat(np.exp(-diff / (p - 1)) * mi, coll.offsets[:-1]) / coll.sums(mass)
    bmo = bmo_norm(lw, coll)
    return [leq("bmo.exp_plus", float(e1.max()), ap),
            leq("bmo.exp_minus", float(e2.max()), ap ** (1.0 / (p - 1))),
            leq("bmo.log_bound", bmo, ap + (p - 1) * ap ** (1.0 / (p - 1)), p=p, Ap=ap)]


@dataclass
class PipelineReport:
    checks: list
    bmo_balls: float
    bmo_dyadic: list
    step5_C: float
    adjacent: object = None

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def log_bmo_pipeline(w, space, q, T=3, delta=None, seeds=None, override=False,
                     adjacent=None, seed=0, n_random=10_000, strict=True):
    """Steps 1-5 of the RH => log BMO chain over adjacent dyadic systems."""
    w = _check_weight(w)
    mass = space.mass
    if adjacent is None:
        adjacent = build_adjacent_systems(space, T, delta=delta, seeds=seeds, override=override)
    systems = adjacent.systems
    balls = ball_collection(space)
    rh_b = rh_constant(w, balls, q)
    c_dbl = weight_doubling(space, w)
    checks = rh_to_dyadic_rh(w, systems, q, rh_b, c_dbl)
    bmo_d = []
    for t, sysm in enumerate(systems):
        ar = rh_to_ap(w, sysm, q, seed=seed + t,
                      cont=rh_absolute_continuity(w, sysm, q, seed=seed + t, n_random=n_random))
        for c in ar.checks:
            c.detail.setdefault("system", t)
        checks.extend(ar.checks)
        for c in ap_log_bmo(w, sysm, ar.p, ar.Ap_dyadic):
            c.detail["system"] = t
            checks.append(c)
        bmo_d.append(bmo_norm(np.log(w), dyadic_collection(sysm)))
    bmo_b = bmo_norm(np.log(w), balls)
    total = sum(bmo_d)
    step5 = 0.0 if bmo_b == 0 else (bmo_b / total if total > 0 else math.inf)
    checks.append(flag("bmo.finite", math.isfinite(bmo_b), bmo=bmo_b, step5_C=step5))
    if strict:
        for c in checks:
            if not c.passed:
                raise TheoremViolation(c)
    return PipelineReport(checks, bmo_b, bmo_d, step5, adjacent)


def bmo_equivalence_check(f, space_rho, d_eps, C_eps):
    """BMO over rho-balls and d_eps-balls agree up to 2 A1^(1 + log2 C^2).

    A1 is the doubling constant of mu over d_eps-balls, the family used in
    the comparison of averages.
    """
    mass = space_rho.mass
    b_rho = bmo_norm(f, ball_collection(space_rho))
    b_d = bmo_norm(f, ball_collection(space_rho, d_eps))
    a1_d = _doubling_on(space_rho, d_eps)
    K = 2 * a1_d ** (1 + math.log2(C_eps ** 2))
    return [leq("bmo_equiv.rho_by_d", b_rho, K * b_d, K=K),
            leq("bmo_equiv.d_by_rho", b_d, K * b_rho, K=K)], b_rho, b_d


def _doubling_on(space, dist):
    from .space_core import QuasimetricMeasureSpace
    return QuasimetricMeasureSpace(dist, space.mass).A1


def bmo_additive_check(g, h, collection):
    """||h||_BMO <= 2C + ||g||_BMO whenever |g - h| <= C."""
    C = float(np.max(np.abs(np.asarray(g) - np.asarray(h))))
    bg, bh = bmo_norm(g, collection), bmo_norm(h, collection)
    return leq("bmo_additive", bh, 2 * C + bg, C=C)
