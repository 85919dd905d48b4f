"""Finite quasimetric measure spaces and their structural constants.

A space is a symmetric distance table with positive atoms.  Every "for all
r > 0" quantifier is discharged exactly: ball membership is piecewise
constant in r, so it is enough to evaluate one radius inside each interval
between consecutive breakpoints.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._parallel import pmap


class InvalidSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float
    closed: bool = False

    def members(self, dist):
        row = np.asarray(dist)[self.center]
        mask = row <= self.radius if self.closed else row < self.radius
        return np.flatnonzero(mask)


@dataclass(frozen=True)
class BallIndex:
    """Per-centre sorted distances; ball masses become prefix sums."""
    order: np.ndarray      # (n, n) argsort of each row
    sorted_d: np.ndarray   # (n, n) row-sorted distances

    @classmethod
    def build(cls, dist):
        order = np.argsort(dist, axis=1, kind="stable")
        return cls(order, np.take_along_axis(dist, order, axis=1))

    def cumulative(self, measure):
        n = self.order.shape[0]
        cum = np.zeros((n, n + 1))
        np.cumsum(np.asarray(measure, dtype=float)[self.order], axis=1, out=cum[:, 1:])
        return cum

    def count(self, x, r, closed=False):
        side = "right" if closed else "left"
        return np.searchsorted(self.sorted_d[x], r, side=side)


def _validate(dist, mass):
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise InvalidSpaceError("dist must be a square table")
    n = dist.shape[0]
    if mass.shape != (n,):
        raise InvalidSpaceError(f"mass has length {mass.shape}, expected {n}")
    if n == 0:
        raise InvalidSpaceError("empty space")
    if not (np.all(np.isfinite(dist)) and np.all(np.isfinite(mass))):
        raise InvalidSpaceError("NaN or Inf in input")
    if np.any(np.diag(dist) != 0):
        raise InvalidSpaceError("nonzero diagonal")
    if np.any(dist != dist.T):
        i, j = np.argwhere(dist != dist.T)[0]
        raise InvalidSpaceError(f"asymmetric entry at ({i}, {j})")
    off = ~np.eye(n, dtype=bool)
    if np.any(dist[off] <= 0):
        i, j = np.argwhere((dist <= 0) & off)[0]
        raise InvalidSpaceError(f"zero distance between distinct points {i} and {j}")
    if np.any(mass <= 0):
        raise InvalidSpaceError(f"nonpositive mass at {int(np.argmin(mass))}")


@dataclass(frozen=True, eq=False)
class QuasimetricMeasureSpace:
    dist: np.ndarray
    mass: np.ndarray
    points: tuple = ()
    assumed_poincare: dict | None = None
    index: BallIndex = field(init=False, repr=False)
    A0: float = field(init=False)
    A1: float = field(init=False)

    def __post_init__(self):
        dist = np.array(self.dist, dtype=float)
        mass = np.array(self.mass, dtype=float)
        _validate(dist, mass)
        dist.setflags(write=False)
        mass.setflags(write=False)
        pts = tuple(str(p) for p in self.points) or tuple(str(i) for i in range(len(mass)))
        if len(pts) != len(mass):
            raise InvalidSpaceError("points and mass differ in length")
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "index", BallIndex.build(dist))
        object.__setattr__(self, "A0", compute_A0(self))
        object.__setattr__(self, "A1", compute_A1(self).A1)

    @property
    def n(self):
        return len(self.mass)

    @property
    def min_positive_dist(self):
        if self.n == 1:
            return math.inf
        return float(np.min(self.dist[~np.eye(self.n, dtype=bool)]))

    @property
    def max_dist(self):
        return float(self.dist.max())

    def ball(self, x, r, closed=False):
        return Ball(x, r, closed).members(self.dist)

    def measure(self, members, measure=None):
        m = self.mass if measure is None else measure
        return float(np.sum(np.asarray(m)[members]))

    def with_dist(self, dist):
        return QuasimetricMeasureSpace(dist, self.mass, self.points, self.assumed_poincare)

    def with_mass(self, mass):
        return QuasimetricMeasureSpace(self.dist, mass, self.points, self.assumed_poincare)

    def to_json(self):
        doc = {"points": list(self.points),
               "dist": [float(v) for v in self.dist.ravel()],
               "mass": [float(v) for v in self.mass]}
        if self.assumed_poincare is not None:
            doc["assumed_poincare"] = self.assumed_poincare
        return doc

    @classmethod
    def from_json(cls, doc):
        for key in ("points", "dist", "mass"):
            if key not in doc:
                raise InvalidSpaceError(f"missing field {key!r}")
        pts = list(doc["points"])
        n = len(pts)
        flat = np.asarray(doc["dist"], dtype=float)
        if flat.shape != (n * n,):
            raise InvalidSpaceError(f"dist must hold {n * n} numbers, got {flat.size}")
        poinc = doc.get("assumed_poincare")
        if poinc is not None and set(poinc) - {"p", "alpha"}:
            raise InvalidSpaceError("assumed_poincare accepts only p and alpha")
        return cls(flat.reshape(n, n), np.asarray(doc["mass"], dtype=float), tuple(pts), poinc)

    @classmethod
    def load(cls, path):
        # json accepts NaN/Infinity literals; refuse them here
        def bad(tok):
            raise InvalidSpaceError(f"non-finite literal {tok} in {path}")
        return cls.from_json(json.loads(Path(path).read_text(), parse_constant=bad))


def compute_A0(space, dist=None):
    """Smallest quasitriangle constant of the table, clamped below at 1."""
    d = np.asarray(space.dist if dist is None else dist, dtype=float)
    n = d.shape[0]
    if n < 3:
        return 1.0
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        raise InvalidSpaceError("zero off-diagonal distance")
    best = 1.0
    block = max(1, 4_000_000 // (n * n))
    for y0 in range(0, n, block):
        ys = np.arange(y0, min(n, y0 + block))
        denom = d[:, ys].T[:, :, None] + d[ys, :][:, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = d[None, :, :] / denom
        ratio[:, ~off] = 0.0
        best = max(best, float(ratio.max()))
    return best


def a0_witness(dist):
    """Return (A0, (x, y, z)) by a full scan; used in reports."""
    d = np.asarray(dist, dtype=float)
    n = d.shape[0]
    best, arg = 1.0, None
    for y in range(n):
        denom = d[:, y][:, None] + d[y, :][None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(denom > 0, d / np.where(denom > 0, denom, 1.0), 0.0)
        np.fill_diagonal(ratio, 0.0)
        k = int(np.argmax(ratio))
        if ratio.flat[k] > best:
            best, arg = float(ratio.flat[k]), (k // n, y, k % n)
    return best, arg


@dataclass
class DoublingResult:
    A1: float
    witness: tuple | None
    violations: list


def _radius_probes(breaks):
    """One radius inside every interval cut out by the breakpoints."""
    b = np.unique(breaks[breaks > 0])
    if b.size == 0:
        return np.array([1.0])
    mids = (b[:-1] + b[1:]) / 2
    return np.concatenate([[b[0] / 2], mids, [b[-1] * 2]])


def compute_A1(space, measure=None, lambdas=(2, 3, 4, 8)):
    """Exact doubling constant of a measure over open balls.

    `measure` defaults to the space's own atoms; passing w*mass gives the
    doubling constant of a weight.  The iterated bound mu(B(x, lam r)) <= A1^(1+log2 lam) mu(B(x, r)) is
    checked for each lambda and any failure is listed.
    """
    idx = space.index
    meas = space.mass if measure is None else np.asarray(measure, dtype=float)
    cum = idx.cumulative(meas)
    n = space.n
    if n == 1:
        return DoublingResult(1.0, None, [])

    def scan(x):
        row = idx.sorted_d[x]
        r = _radius_probes(np.concatenate([row, row / 2]))
        num = cum[x, np.searchsorted(row, 2 * r, side="left")]
        den = cum[x, np.searchsorted(row, r, side="left")]
        ratio = num / den
        k = int(np.argmax(ratio))
        return float(ratio[k]), (x, float(r[k]))

    results = pmap(scan, range(n))
    a1, wit = max(results, key=lambda t: t[0])
    a1 = max(1.0, a1)
    violations = []
    for lam in lambdas:
        bound = a1 ** (1 + math.log2(lam))
        for x in range(n):
            row = idx.sorted_d[x]
            r = _radius_probes(np.concatenate([row, row / lam]))
            num = cum[x, np.searchsorted(row, lam * r, side="left")]
            den = cum[x, np.searchsorted(row, r, side="left")]
            bad = np.flatnonzero(num > bound * den * (1 + 1e-12))
            violations.extend((x, float(r[i]), lam) for i in bad)
    return DoublingResult(a1, wit, violations)


@dataclass
class AlphaRegularity:
    alpha: float
    kappa: float
    upper_witness: tuple | None
    lower_witness: tuple | None


def check_alpha_regular(space, alpha):
    """Smallest kappa with kappa^-1 r^a <= mu(B(x,r)) <= kappa r^a.

    Radii range over [min_positive_dist, diam X): below the separation every
    open ball is one atom and r^a -> 0, so no finite kappa could exist.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = space.n
    if n == 1:
        return AlphaRegularity(alpha, 1.0, None, None)
    lo, diam = space.min_positive_dist, space.max_dist
    idx = space.index
    cum = idx.cumulative(space.mass)
    kappa, up_w, low_w = 1.0, None, None
    for x in range(n):
        row = idx.sorted_d[x]
        uniq = np.unique(row)
        # on (u[j], u[j+1]] the open ball is {rho <= u[j]}
        left = uniq
        right = np.append(uniq[1:], np.inf)
        m = cum[x, np.searchsorted(row, uniq, side="right")]
        r_left = np.maximum(left, lo)
        r_right = np.minimum(right, diam)
        ok = r_left < r_right
        if not ok.any():
            continue
        up = m[ok] / r_left[ok] ** alpha
        low = r_right[ok] ** alpha / m[ok]
        i, j = int(np.argmax(up)), int(np.argmax(low))
        if up[i] > kappa:
            kappa, up_w = float(up[i]), (x, float(r_left[ok][i]))
        if low[j] > kappa:
            kappa, low_w = float(low[j]), (x, float(r_right[ok][j]))
    return AlphaRegularity(alpha, kappa, up_w, low_w)


@dataclass
class TauAnnuli:
    tau: float
    holds: bool
    witness: tuple | None
    implication_ok: bool | None = None

    def __bool__(self):
        return self.holds


def check_tau_annuli(space, tau, alpha_reg: AlphaRegularity | None = None):
    """Nonempty tau-annuli over all resolved balls.

    A ball B(x,r) counts when it is neither {x} (below the resolution of the
    finite set) nor all of X.  Around x the good radii form the union of
    (d, d/tau] over the distances d from x, so the property reduces to a gap
    test on consecutive distinct distances.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    holds, witness = True, None
    for x in range(space.n):
        u = np.unique(space.index.sorted_d[x])[1:]
        if u.size < 2:
            continue
        gaps = u[1:] > u[:-1] / tau
        if gaps.any():
            j = int(np.argmax(gaps))
            holds, witness = False, (x, float(u[j] / tau), float(u[j]), float(u[j + 1]))
            break
    implied = None
    if alpha_reg is not None:
        implied = True
        if tau < alpha_reg.kappa ** (-2.0 / alpha_reg.alpha):
            implied = holds
    return TauAnnuli(tau, holds, witness, implied)


def radon_nikodym(space, nu):
    """Density of nu against mu; exact at every atom."""
    nu = np.asarray(nu, dtype=float)
    if nu.shape != space.mass.shape or np.any(nu < 0):
        raise ValueError("nu must be a nonnegative vector of length n")
    return nu / space.mass


def integral_identity_gap(space, density, nu, subsets):
    """Largest relative gap |nu(S) - sum_S D*mu| over the given subsets."""
    dm = np.asarray(density) * space.mass
    nu = np.asarray(nu, dtype=float)
    worst = 0.0
    for s in subsets:
        s = np.asarray(s, dtype=int)
        lhs = math.fsum(nu[s])
        rhs = math.fsum(dm[s])
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale if s.size else 0.0)
    return worst


def random_subsets(n, count, seed):
    rng = np.random.default_rng(seed)
    return [np.flatnonzero(rng.random(n) < 0.5) for _ in range(count)]


def all_subsets(n):
    for bits in range(1 << n):
        yield np.array([i for i in range(n) if bits >> i & 1], dtype=int)


@dataclass
class StructureReport:
    A0: float
    A1: float
    min_positive_dist: float
    max_dist: float
    alpha_reg: AlphaRegularity | None = None
    tau_annuli: TauAnnuli | None = None
    doubling_violations: list = field(default_factory=list)


def structure_report(space, alpha=None, tau=None):
    dbl = compute_A1(space)
    areg = check_alpha_regular(space, alpha) if alpha else None
    ann = check_tau_annuli(space, tau, areg) if tau else None
    return StructureReport(space.A0, dbl.A1, space.min_positive_dist, space.max_dist,
                           areg, ann, dbl.violations)
