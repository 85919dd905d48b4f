"""Systems and adjacent systems of dyadic cubes on a finite space.

Nets are greedy over a seeded shuffle and nested across levels.  Each
level-(k+1) centre is linked to its nearest level-k centre (lowest index on
ties, and a centre that survives from level k is its own parent); a cube is
the set of points whose ancestor chain passes through its centre.  Nesting
therefore holds by construction and the ball sandwich is measured.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

ROUND = 1e-12


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class Cube:
    level: int
    index: int
    center: int
    members: tuple
    parent: int | None
    children: tuple


def level_range(space, delta):
    """(k_min, k_max): delta^k_min > diam X and delta^k_max < min separation."""
    if space.n == 1:
        return 0, 0
    diam, sep = space.max_dist, space.min_positive_dist
    lg = math.log(delta)
    k_min = math.ceil(math.log(diam) / lg) - 1
    while delta ** k_min <= diam:
        k_min -= 1
    while delta ** (k_min + 1) > diam:
        k_min += 1
    k_max = math.floor(math.log(sep) / lg) + 1
    while delta ** (k_max - 1) < sep:
        k_max -= 1
    while delta ** k_max >= sep:
        k_max += 1
    return k_min, k_max


def system_delta_limit(a0):
    return 1.0 / (12 * a0 ** 3)


def adjacent_delta_limit(a0):
    return 1.0 / (96 * a0 ** 6)


def build_nets(space, delta, k_range=None, seed=0, override=False):
    """Nested greedy nets: level k is delta^k-separated and delta^k-dense."""
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    if delta > system_delta_limit(space.A0) * (1 + ROUND) and not override:
        raise ParameterError(f"delta {delta} exceeds (12 A0^3)^-1 = {system_delta_limit(space.A0)}")
    k_min, k_max = k_range or level_range(space, delta)
    order = np.random.default_rng(seed).permutation(space.n)
    dist = space.dist
    nets, current = {}, []
    for k in range(k_min, k_max + 1):
        thr = delta ** k
        if current:
            mind = dist[current].min(axis=0)
        else:
            mind = np.full(space.n, np.inf)
        chosen = list(current)
        for p in order:
            if mind[p] >= thr:
                chosen.append(int(p))
                mind = np.minimum(mind, dist[p])
        current = sorted(chosen)
        nets[k] = np.array(current, dtype=int)
    return nets


@dataclass(frozen=True, eq=False)
class DyadicSystem:
    space: object
    delta: float
    k_min: int
    k_max: int
    centers: tuple          # per level: sorted centre ids
    labels: tuple           # per level: point -> cube index
    parents: tuple          # per level: cube -> parent cube index (level 0: empty)
    c1: float
    C1: float
    c1_target: float
    C1_target: float
    meets_target: bool
    seed: int | None = None
    seed_used: int | None = None
    notes: tuple = ()

    @property
    def levels(self):
        return list(range(self.k_min, self.k_max + 1))

    def _li(self, k):
        if not self.k_min <= k <= self.k_max:
            raise IndexError(f"level {k} outside [{self.k_min}, {self.k_max}]")
        return k - self.k_min

    def n_cubes(self, k):
        return len(self.centers[self._li(k)])

    def members(self, k, i):
        return np.flatnonzero(self.labels[self._li(k)] == i)

    def children(self, k, i):
        if k == self.k_max:
            return np.array([], dtype=int)
        return np.flatnonzero(self.parents[self._li(k) + 1] == i)

    def cube(self, k, i):
        li = self._li(k)
        parent = int(self.parents[li][i]) if li > 0 else None
        return Cube(k, i, int(self.centers[li][i]), tuple(int(v) for v in self.members(k, i)),
                    parent, tuple(int(v) for v in self.children(k, i)))

    def cubes(self, k):
        return [self.cube(k, i) for i in range(self.n_cubes(k))]

    def all_cubes(self):
        return [c for k in self.levels for c in self.cubes(k)]

    def cube_containing(self, x, k):
        return self.cube(k, int(self.labels[self._li(k)][x]))

    @property
    def M(self):
        best = 1
        for li in range(1, len(self.parents)):
            best = max(best, int(np.bincount(self.parents[li]).max()))
        return best

    def distinct_sets(self):
        """Member sets of all cubes with repeats across levels dropped."""
        seen, out = set(), []
        for k in self.levels:
            lab = self.labels[self._li(k)]
            order = np.argsort(lab, kind="stable")
            cuts = np.flatnonzero(np.diff(lab[order])) + 1
            for grp in np.split(order, cuts):
                key = grp.tobytes()
                if key not in seen:
                    seen.add(key)
                    out.append(np.sort(grp))
        return out

    def measures(self, k, measure):
        li = self._li(k)
        return np.bincount(self.labels[li], weights=measure, minlength=len(self.centers[li]))

    def dyadic_doubling(self, measure=None):
        """max w(parent)/w(child); 1 for a single level."""
        meas = self.space.mass if measure is None else np.asarray(measure, dtype=float)
        best = 1.0
        for k in self.levels[1:]:
            li = self._li(k)
            child = self.measures(k, meas)
            par = self.measures(k - 1, meas)[self.parents[li]]
            with np.errstate(divide="ignore"):
                best = max(best, float(np.max(par / child)))
        return best

    @property
    def N(self):
        return 1 + math.log2(2 * self.space.A0 * self.C1 / (self.c1 * self.delta))

    def to_json(self):
        levels = []
        for k in self.levels:
            li = self._li(k)
            cubes = []
            for i, c in enumerate(self.centers[li]):
                cubes.append({"center": int(c),
                              "members": [int(v) for v in self.members(k, i)],
                              "parent": int(self.parents[li][i]) if li else None})
            levels.append({"k": k, "cubes": cubes})
        return {"delta": self.delta, "k_min": self.k_min, "k_max": self.k_max,
                "c1": self.c1, "C1": self.C1, "seed": self.seed, "levels": levels}

    @classmethod
    def from_partitions(cls, space, delta, partitions, k_min=0, c1_target=None, C1_target=None):
        """Build from explicit nested partitions, coarsest first.

        `partitions` is a list of levels, each a list of (center, members).
        Parents are inferred from membership; a partition that does not nest
        is rejected.
        """
        n = space.n
        centers, labels, parents = [], [], []
        for li, level in enumerate(partitions):
            level = sorted(level, key=lambda cm: cm[0])
            lab = np.full(n, -1, dtype=int)
            for i, (c, mem) in enumerate(level):
                mem = np.asarray(mem, dtype=int)
                if np.any(lab[mem] >= 0):
                    raise ParameterError(f"level {li}: overlapping cubes")
                lab[mem] = i
                if lab[c] != i:
                    raise ParameterError(f"centre {c} not in its cube")
            if np.any(lab < 0):
                raise ParameterError(f"level {li} does not cover the space")
            cen = np.array([c for c, _ in level], dtype=int)
            if li:
                par = labels[-1][cen]
                for i in range(len(cen)):
                    if np.unique(labels[-1][lab == i]).size != 1:
                        raise ParameterError(f"level {li} cube {i} straddles parents")
            else:
                par = np.array([], dtype=int)
            centers.append(cen)
            labels.append(lab)
            parents.append(par)
        a0 = space.A0
        c1_t = c1_target if c1_target is not None else 1 / (3 * a0 ** 2)
        C1_t = C1_target if C1_target is not None else 2 * a0
        sysm = cls(space, delta, k_min, k_min + len(partitions) - 1, tuple(centers),
                   tuple(labels), tuple(parents), c1_t, C1_t, c1_t, C1_t, True)
        return _with_effective(sysm)

    @classmethod
    def from_json(cls, space, doc):
        parts = [[(c["center"], c["members"]) for c in lvl["cubes"]] for lvl in doc["levels"]]
        return cls.from_partitions(space, doc["delta"], parts, doc["k_min"])

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _raw_constants(sysm):
    """Unrounded (min outside distance, max inside distance) / delta^k."""
    dist = sysm.space.dist
    lo, hi = math.inf, 0.0
    for k in sysm.levels:
        li = k - sysm.k_min
        cen = sysm.centers[li]
        same = sysm.labels[li][None, :] == np.arange(len(cen))[:, None]
        dc = dist[cen]
        scale = sysm.delta ** k
        outside = np.where(same, np.inf, dc).min(axis=1)
        inside = np.where(same, dc, 0.0).max(axis=1)
        lo = min(lo, float(outside.min()) / scale)
        hi = max(hi, float(inside.max()) / scale)
    return lo, hi


def _with_effective(sysm):
    lo, hi = _raw_constants(sysm)
    meets = lo >= sysm.c1_target and hi < sysm.C1_target
    notes = list(sysm.notes)
    c1 = lo * (1 - ROUND) if math.isfinite(lo) else sysm.c1_target
    C1 = hi * (1 + ROUND) if hi > 0 else sysm.C1_target
    if not math.isfinite(lo):
        notes.append("c1 undefined (every cube is the whole space); target used")
    if hi == 0:
        notes.append("C1 undefined (every cube is a singleton); target used")
    if c1 >= C1:
        C1 = c1 * (1 + 1e-9)
        notes.append("C1 raised above c1 so that c1 < C1")
    return replace(sysm, c1=c1, C1=C1, meets_target=meets, notes=tuple(notes))


def _construct(space, delta, seed, c1_t, C1_t, k_range=None):
    k_min, k_max = k_range or level_range(space, delta)
    nets = build_nets(space, delta, (k_min, k_max), seed, override=True)
    dist = space.dist
    finest = nets[k_max]
    if finest.size != space.n:
        raise ParameterError("finest level does not contain every point")
    # parent centre of each level-(k+1) centre, stored as a point map
    anc = np.arange(space.n)
    labels = [None] * (k_max - k_min + 1)
    labels[-1] = np.searchsorted(finest, anc)
    for k in range(k_max - 1, k_min - 1, -1):
        coarse, fine = nets[k], nets[k + 1]
        pc = coarse[np.argmin(dist[np.ix_(fine, coarse)], axis=1)]
        up = np.empty(space.n, dtype=int)
        up[fine] = pc
        anc = up[anc]
        labels[k - k_min] = np.searchsorted(coarse, anc)
    parents = [np.array([], dtype=int)]
    for k in range(k_min + 1, k_max + 1):
        cen = nets[k]
        parents.append(labels[k - 1 - k_min][cen])
    centers = tuple(nets[k] for k in range(k_min, k_max + 1))
    sysm = DyadicSystem(space, delta, k_min, k_max, centers, tuple(labels), tuple(parents),
                        c1_t, C1_t, c1_t, C1_t, False, seed, seed)
    return _with_effective(sysm)


def build_system(space, delta, seed=0, retries=8, override=False, c1_target=None, C1_target=None):
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    if delta > system_delta_limit(space.A0) * (1 + ROUND) and not override:
        raise ParameterError(f"delta {delta} exceeds (12 A0^3)^-1 = {system_delta_limit(space.A0)}")
    a0 = space.A0
    c1_t = c1_target if c1_target is not None else 1 / (3 * a0 ** 2)
    C1_t = C1_target if C1_target is not None else 2 * a0
    best = None
    for s in range(seed, seed + max(1, retries)):
        sysm = _construct(space, delta, s, c1_t, C1_t)
        if sysm.meets_target:
            best = sysm
            break
        if best is None or sysm.c1 > best.c1:
            best = sysm
    notes = best.notes
    if not best.meets_target:
        notes = notes + ("target c1 not met within the retry budget; effective constants reported",)
    return replace(best, seed=seed, notes=notes)


def verify_system(sysm, max_witnesses=5):
    """Exhaustive property check; returns a dict of booleans and witnesses."""
    space = sysm.space
    n, dist = space.n, space.dist
    rep = {"a1": True, "a2": True, "a3": True, "a4": True, "a5": True, "a6": True,
           "a5_target": True, "witnesses": []}

    def fail(prop, what):
        rep[prop] = False
        if len(rep["witnesses"]) < max_witnesses:
            rep["witnesses"].append({"property": prop, **what})

    levels = sysm.levels
    member_sets = {}
    for k in levels:
        sets = [sysm.members(k, i) for i in range(sysm.n_cubes(k))]
        member_sets[k] = sets
        allm = np.sort(np.concatenate(sets)) if sets else np.array([], dtype=int)
        if allm.size != n or np.any(allm != np.arange(n)):
            fail("a1", {"level": k})
        for i, s in enumerate(sets):
            if s.size == 0 or sysm.centers[k - sysm.k_min][i] not in s:
                fail("a1", {"level": k, "cube": i, "reason": "empty or centre missing"})
    # (a2): every finer cube lies in exactly one coarser cube
    for a, k in enumerate(levels):
        lab_k = sysm.labels[k - sysm.k_min]
        for l in levels[a + 1:]:
            for i, s in enumerate(member_sets[l]):
                if np.unique(lab_k[s]).size != 1:
                    fail("a2", {"level": l, "cube": i, "coarser": k})
    # (a3): chains through each point are nested
    for x in range(n):
        for k in levels[:-1]:
            q = member_sets[k][sysm.labels[k - sysm.k_min][x]]
            qc = member_sets[k + 1][sysm.labels[k + 1 - sysm.k_min][x]]
            if not np.all(np.isin(qc, q)):
                fail("a3", {"point": x, "level": k})
    # (a4): 1..M children whose union is the parent
    M = sysm.M
    for k in levels[:-1]:
        li = k - sysm.k_min
        for i, s in enumerate(member_sets[k]):
            ch = np.flatnonzero(sysm.parents[li + 1] == i)
            union = np.sort(np.concatenate([member_sets[k + 1][j] for j in ch])) if ch.size else []
            if not 1 <= ch.size <= M or len(union) != s.size or np.any(union != s):
                fail("a4", {"level": k, "cube": i, "children": int(ch.size)})
    # (a5): open-ball sandwich with effective and with target constants
    for k in levels:
        li = k - sysm.k_min
        scale = sysm.delta ** k
        for i, s in enumerate(member_sets[k]):
            z = sysm.centers[li][i]
            inq = np.zeros(n, dtype=bool)
            inq[s] = True
            for prop, c1, C1 in (("a5", sysm.c1, sysm.C1), ("a5_target", sysm.c1_target, sysm.C1_target)):
                inner = dist[z] < c1 * scale
                outer = dist[z] < C1 * scale
                if np.any(inner & ~inq) or np.any(inq & ~outer):
                    fail(prop, {"level": k, "cube": i})
    # (a6): B(Q^l) inside B(Q^k) whenever Q^l inside Q^k
    for k in levels:
        li = k - sysm.k_min
        bk = dist[sysm.centers[li]] < sysm.C1 * sysm.delta ** k
        for l in levels[levels.index(k):]:
            lj = l - sysm.k_min
            bl = dist[sysm.centers[lj]] < sysm.C1 * sysm.delta ** l
            anc = sysm.labels[li][sysm.centers[lj]]
            bad = np.any(bl & ~bk[anc], axis=1)
            for i in np.flatnonzero(bad):
                fail("a6", {"level": l, "cube": int(i), "coarser": k})
    c_dyd = sysm.dyadic_doubling()
    bound = space.A1 ** sysm.N
    rep.update({"c1": sysm.c1, "C1": sysm.C1, "c1_target": sysm.c1_target, "C1_target": sysm.C1_target,
                "M": M, "C_dydbl": c_dyd, "A1^N": bound, "N": sysm.N,
                "dydbl_ok": c_dyd <= bound * (1 + 1e-9)})
    rep["required_ok"] = all(rep[p] for p in ("a1", "a2", "a3", "a4", "a5")) and rep["dydbl_ok"]
    return rep


@dataclass(frozen=True, eq=False)
class AdjacentDyadicSystems:
    systems: tuple
    delta: float
    c1_target: float
    C1_target: float
    C_target: float
    C_adj: float
    coverage: float
    total_balls: int
    uncovered: tuple = ()
    over_budget: tuple = field(default=())

    @property
    def T(self):
        return len(self.systems)


def _level_tables(sysm, k):
    """Per point: min distance to outside its cube, max distance inside it,
    and distance to its cube's centre.  Levels outside the built range are
    the whole space (coarse) or singletons (fine)."""
    dist = sysm.space.dist
    n = sysm.space.n
    if k < sysm.k_min:
        root = sysm.centers[0][0]
        return np.full(n, np.inf), dist.max(axis=1), dist[:, root]
    if k > sysm.k_max:
        d = dist + np.diag(np.full(n, np.inf))
        return d.min(axis=1) if n > 1 else np.full(n, np.inf), np.zeros(n), np.zeros(n)
    lab = sysm.labels[k - sysm.k_min]
    same = lab[:, None] == lab[None, :]
    out_min = np.where(same, np.inf, dist).min(axis=1)
    in_max = np.where(same, dist, 0.0).max(axis=1)
    cdist = dist[np.arange(n), sysm.centers[k - sysm.k_min][lab]]
    return out_min, in_max, cdist


def adjacent_cover_scan(space, systems, delta, C_target, max_list=50):
    """Exact scan of every distinct open ball against every generation.

    On the radius window (delta^(k+3), delta^(k+2)] the open ball around x
    changes only at distances from x, so each (x, k, distinct ball) is one
    case, tested at the largest radius in its interval.
    """
    a0 = space.A0
    k_lo = min(s.k_min for s in systems) - 3
    k_hi = max(s.k_max for s in systems)
    n = space.n
    total, good = 0, 0
    c_adj = 1.0
    uncovered, over = [], []
    for k in range(k_lo, k_hi + 1):
        L, H = delta ** (k + 3), delta ** (k + 2)
        tabs = [_level_tables(s, k) for s in systems]
        for x in range(n):
            u = np.unique(space.index.sorted_d[x])
            j_lo = int(np.searchsorted(u, L, side="right")) - 1
            j_hi = int(np.searchsorted(u, H, side="left")) - 1
            if j_hi < j_lo:
                continue
            js = np.arange(j_lo, j_hi + 1)
            radius = u[js]
            upper = np.append(u, np.inf)[js + 1]
            hi = np.minimum(upper, H)
            best = np.full(js.size, np.inf)
            for out_min, in_max, cdist in tabs:
                ok = (out_min[x] > radius) & (cdist[x] < 2 * a0 * delta ** k)
                need = np.maximum(1.0, in_max[x] / hi)
                best = np.where(ok, np.minimum(best, need), best)
            total += js.size
            finite = np.isfinite(best)
            if finite.any():
                c_adj = max(c_adj, float(best[finite].max()))
            within = finite & (best < C_target)
            good += int(within.sum())
            for i in np.flatnonzero(~finite)[:max(0, max_list - len(uncovered))]:
                uncovered.append({"x": x, "k": k, "radius": float(hi[i])})
            for i in np.flatnonzero(finite & ~within)[:max(0, max_list - len(over))]:
                over.append({"x": x, "k": k, "radius": float(hi[i]), "C": float(best[i])})
    frac = good / total if total else 1.0
    return frac, total, c_adj, tuple(uncovered), tuple(over)


def build_adjacent_systems(space, T, delta=None, seeds=None, override=False, retries=4):
    a0 = space.A0
    limit = adjacent_delta_limit(a0)
    if delta is None:
        delta = limit
    if delta > limit * (1 + ROUND) and not override:
        raise ParameterError(f"delta {delta} exceeds (96 A0^6)^-1 = {limit}")
    if T < 1:
        raise ParameterError("T must be at least 1")
    seeds = list(seeds) if seeds is not None else [1000 * t for t in range(T)]
    if len(seeds) != T or len(set(seeds)) != T:
        raise ParameterError("need T distinct seeds")
    c1_t, C1_t = 1 / (12 * a0 ** 4), 4 * a0 ** 2
    systems = tuple(build_system(space, delta, s, retries=retries, override=True,
                                 c1_target=c1_t, C1_target=C1_t) for s in seeds)
    C_target = 8 * a0 ** 3 * delta ** -3
    frac, total, c_adj, unc, over = adjacent_cover_scan(space, systems, delta, C_target)
    return AdjacentDyadicSystems(systems, delta, c1_t, C1_t, C_target, c_adj, frac, total, unc, over)
