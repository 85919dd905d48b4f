"""Quasisymmetric bijections of finite spaces and their Jacobians.

A bijection carries a source space and a target space over the same point
ids; `forward[x]` is the id of f(x) in the target.  Distances and masses on
the target side are looked up through the permutation, so the map is
measured exactly as a self-map f : X -> X once both sides coincide.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .checks import Check, flag, leq
from .metrization import ball_sandwich_check, chain_metric, default_epsilon
from .space_core import QuasimetricMeasureSpace, all_subsets, check_tau_annuli, compute_A1, random_subsets
from .weights import ball_collection, bmo_norm, log_bmo_pipeline, bmo_additive_check, bmo_equivalence_check, rh_constant


@dataclass(frozen=True, eq=False)
class PointBijection:
    forward: np.ndarray
    source: QuasimetricMeasureSpace
    target: QuasimetricMeasureSpace

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=int)
        n = self.source.n
        if self.target.n != n or fwd.shape != (n,) or not np.array_equal(np.sort(fwd), np.arange(n)):
            raise ValueError("forward must be a permutation of the point ids")
        object.__setattr__(self, "forward", fwd)

    @property
    def inverse(self):
        inv = np.empty_like(self.forward)
        inv[self.forward] = np.arange(len(self.forward))
        return inv

    def inverse_map(self):
        return PointBijection(self.inverse, self.target, self.source)

    def pulled_dist(self):
        """Target distances between images: T[x, y] = rho'(f(x), f(y))."""
        return self.target.dist[np.ix_(self.forward, self.forward)]

    @classmethod
    def identity(cls, space):
        return cls(np.arange(space.n), space, space)

    @classmethod
    def from_json(cls, doc, source, target=None):
        return cls(np.asarray(doc["perm"], dtype=int), source, target or source)


# ---- eta functions -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Eta:
    """Increasing gauge: tabulated (linear between knots, through (0,0)) or power."""
    kind: str
    thetas: np.ndarray = field(default_factory=lambda: np.array([]))
    values: np.ndarray = field(default_factory=lambda: np.array([]))
    c: float = 1.0
    gamma: float = 1.0
    extend: bool = False      # constant continuation past the last knot

    @classmethod
    def power(cls, c=1.0, gamma=1.0):
        if c <= 0 or gamma < 1:
            raise ValueError("power eta needs c > 0 and gamma >= 1")
        return cls("power", c=float(c), gamma=float(gamma))

    @classmethod
    def tabulated(cls, thetas, values, extend=False):
        t = np.asarray(thetas, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("thetas and values must be equal-length 1d arrays")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(v) < 0) or t[0] <= 0:
            raise ValueError("eta must be tabulated on increasing positive thetas with nondecreasing values")
        return cls("table", t, v, extend=extend)

    @classmethod
    def from_json(cls, doc):
        if doc.get("kind") == "power":
            return cls.power(doc.get("c", 1.0), doc.get("gamma", 1.0))
        return cls.tabulated(doc["thetas"], doc["values"], doc.get("extend", False))

    def to_json(self):
        if self.kind == "power":
            return {"kind": "power", "c": self.c, "gamma": self.gamma}
        return {"thetas": [float(v) for v in self.thetas], "values": [float(v) for v in self.values],
                "extend": self.extend}

    @property
    def domain_max(self):
        return math.inf if self.kind == "power" or self.extend else float(self.thetas[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "power":
            return self.c * np.maximum(t ** self.gamma, t ** (1.0 / self.gamma))
        if np.any(t > self.domain_max) or np.any(t < 0):
            raise ValueError(f"eta undefined beyond theta = {self.domain_max}")
        return np.interp(t, np.concatenate([[0.0], self.thetas]), np.concatenate([[0.0], self.values]))

    def admissible_theta(self, level=1.0 / 3):
        """Largest tabulated theta with eta(theta) <= level (power: solved)."""
        if self.kind == "power":
            # eta(t) = c t^gamma on (0, 1]
            t = (level / self.c) ** (1.0 / self.gamma)
            return min(t, 1.0) if self.c * min(t, 1.0) ** self.gamma <= level else None
        ok = np.flatnonzero(self.values <= level)
        return float(self.thetas[ok[-1]]) if ok.size else None


@dataclass
class DistortionProfile:
    thetas: np.ndarray      # distinct quotients, increasing
    ratios: np.ndarray      # max image ratio at each quotient
    envelope: np.ndarray    # running max of ratios

    def eta_hat(self):
        return Eta.tabulated(self.thetas, self.envelope, extend=True)

    def __len__(self):
        return self.thetas.size


def _reduce_max(theta, ratio):
    order = np.lexsort((ratio, theta))
    th, ra = theta[order], ratio[order]
    last = np.append(np.flatnonzero(np.diff(th)), th.size - 1)
    return th[last], ra[last]


def eta_profile(fmap, dist_src=None, dist_tgt=None):
    """Exact envelope over all n(n-1)(n-2) ordered triples; O(n^3)."""
    src = np.asarray(fmap.source.dist if dist_src is None else dist_src)
    tgt = fmap.pulled_dist() if dist_tgt is None else np.asarray(dist_tgt)[np.ix_(fmap.forward, fmap.forward)]
    n = src.shape[0]
    if n < 3:
        return DistortionProfile(np.array([]), np.array([]), np.array([]))

    def per_point(x):
        others = np.delete(np.arange(n), x)
        ds, dt = src[x, others], tgt[x, others]
        th = ds[:, None] / ds[None, :]
        ra = dt[:, None] / dt[None, :]
        off = ~np.eye(n - 1, dtype=bool)
        return _reduce_max(th[off], ra[off])

    parts = pmap(per_point, range(n))
    th, ra = _reduce_max(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    return DistortionProfile(th, ra, np.maximum.accumulate(ra))


def is_quasisymmetric(profile, eta, rtol=1e-12):
    """(holds, worst witness (theta, ratio, eta(theta)))."""
    if len(profile) == 0:
        return True, None
    if profile.thetas[-1] > eta.domain_max:
        raise ValueError(f"eta undefined at theta = {profile.thetas[-1]}")
    bound = eta(profile.thetas)
    with np.errstate(divide="ignore"):
        excess = profile.ratios / np.where(bound > 0, bound, 1e-300)
    i = int(np.argmax(excess))
    ok = bool(np.all(profile.ratios <= bound * (1 + rtol)))
    return ok, (float(profile.thetas[i]), float(profile.ratios[i]), float(bound[i]))


def inverse_duality_check(fmap):
    """envelope(f^-1)(t) <= 1 / eta_hat^-1(1/t) wherever the inverse is defined.

    eta_hat^-1(s) is the least sampled theta whose envelope reaches s; the
    inequality is exact on sampled points because every inverse triple
    reverses to a forward triple.
    """
    fwd = eta_profile(fmap)
    inv = eta_profile(fmap.inverse_map())
    if len(fwd) == 0:
        return leq("qs.inverse_duality", 0.0, 1.0), 0
    need = 1.0 / inv.thetas
    pos = np.searchsorted(fwd.envelope, need * (1 - 1e-12), side="left")
    ok = pos < len(fwd)
    bound = 1.0 / fwd.thetas[pos[ok]]
    worst = float(np.max(inv.ratios[ok] / bound)) if ok.any() else 0.0
    return leq("qs.inverse_duality", worst, 1.0, rtol=1e-12, sampled=int(ok.sum())), int(ok.sum())


def pullback_measure(fmap, space=None):
    target = fmap.target if space is None else space
    return np.asarray(target.mass)[fmap.forward]


def best_tau(space):
    """Largest tau with nonempty tau-annuli (min consecutive distance ratio)."""
    best = 1.0
    for x in range(space.n):
        u = np.unique(space.index.sorted_d[x])[1:]
        if u.size >= 2:
            best = min(best, float(np.min(u[:-1] / u[1:])))
    return best


def auto_parameters(eta, tau):
    theta = eta.admissible_theta()
    if theta is None:
        return None, None
    return theta, int(math.ceil(max(1.0 / theta, 1.0 / tau) - 1e-12))


@dataclass
class DoublingCheck:
    measured: float
    bound: float | None
    theta: float | None
    k: int | None
    tau: float
    checks: list


def pullback_doubling_check(fmap, eta=None, tau=None):
    """Measured doubling constant of mu_f against A1^(1 + log2(eta(2k^3) eta(k^2)))."""
    prof = eta_profile(fmap)
    eta = eta or prof.eta_hat()
    qs_ok, wit = is_quasisymmetric(prof, eta)
    tau = best_tau(fmap.source) if tau is None else tau
    ann = check_tau_annuli(fmap.source, min(tau, 1 - 1e-12))
    pull = pullback_measure(fmap)
    measured = compute_A1(fmap.source, pull, lambdas=()).A1
    checks = [flag("pullback.quasisymmetric", qs_ok, witness=wit),
              flag("pullback.tau_annuli", ann.holds, tau=tau, witness=ann.witness)]
    theta, k = auto_parameters(eta, tau)
    if theta is None:
        checks.append(flag("pullback.doubling", True, note="bound not applicable: eta never <= 1/3",
                           measured=measured))
        return DoublingCheck(measured, None, None, None, tau, checks)
    expo = 1 + math.log2(float(eta(2.0 * k ** 3)) * float(eta(float(k * k))))
    bound = fmap.target.A1 ** expo
    checks.append(leq("pullback.doubling", measured, bound, theta=theta, k=k, exponent=expo,
                      A1=fmap.target.A1))
    return DoublingCheck(measured, bound, theta, k, tau, checks)


def distortion_gap(fmap, x, r, k, theta, eta=None):
    """(s, t, s < t) for one ball; t = inf when X minus B(x, kr) is empty."""
    if eta is not None and (float(eta(theta)) > 1 / 3 or k < 1 / theta - 1e-12):
        raise ValueError("need eta(theta) <= 1/3 and k >= 1/theta")
    row = fmap.source.dist[x]
    T = fmap.pulled_dist()[x]
    inner = row < r
    outer = ~(row < k * r)
    s = float(T[inner].max())
    t = float(T[outer].min()) if outer.any() else math.inf
    return s, t, s < t


def distortion_gap_scan(fmap, k, theta):
    """s < t at every distinct ball; returns (all passed, worst s/t, count)."""
    src = fmap.source
    T = fmap.pulled_dist()
    worst, count = 0.0, 0
    for x in range(src.n):
        order = src.index.order[x]
        row = src.index.sorted_d[x]
        tx = T[x, order]
        smax = np.maximum.accumulate(tx)
        tmin = np.append(np.minimum.accumulate(tx[::-1])[::-1], np.inf)
        u = row[row > 0]
        b = np.unique(np.concatenate([u, u / k]))
        if b.size == 0:
            continue
        r = np.concatenate([[b[0] / 2], (b[:-1] + b[1:]) / 2, [b[-1] * 2]])
        ni = np.searchsorted(row, r, side="left")
        no = np.searchsorted(row, k * r, side="left")
        s, t = smax[ni - 1], tmin[no]
        count += r.size
        worst = max(worst, float(np.max(s / t)))
    return worst < 1.0, worst, count


@dataclass
class JacobianField:
    values: np.ndarray
    radii: np.ndarray
    multiscale: np.ndarray   # (len(radii), n)


def generalized_jacobian(fmap, dist=None, max_levels=None):
    """Finest-scale Jacobian (atom ratio) plus closed-ball ratios per radius.

    `dist` selects the ball family (rho by default, d_eps for the metric
    variant); the finest scale does not depend on it.
    """
    d = np.asarray(fmap.source.dist if dist is None else dist)
    mass = fmap.source.mass
    pull = pullback_measure(fmap)
    values = pull / mass
    radii = np.unique(d[d > 0])
    if max_levels and radii.size > max_levels:
        radii = radii[np.linspace(0, radii.size - 1, max_levels).astype(int)]
    ms = np.empty((radii.size, d.shape[0]))
    for i, r in enumerate(radii):
        inside = d <= r
        ms[i] = (inside @ pull) / (inside @ mass)
    return JacobianField(values, radii, ms)


def integral_identity(fmap, jac, seed=0):
    """max relative gap of mu_f(S) = sum_S J mu over all or sampled subsets."""
    n = fmap.source.n
    subsets = list(all_subsets(n)) if n <= 12 else random_subsets(n, 10_000, seed)
    pull = pullback_measure(fmap)
    dm = jac.values * fmap.source.mass
    worst = 0.0
    for s in subsets:
        if s.size:
            a, b = math.fsum(pull[s]), math.fsum(dm[s])
            worst = max(worst, abs(a - b) / max(a, b))
    return worst


def _ball_mass(dist, measure, r, closed):
    inside = dist <= r[:, None, None] if closed else dist < r[:, None, None]
    return inside @ measure


def jacobian_comparability(fmap, metriz, rho_space=None):
    """Compare the d_eps and rho Jacobians scale by scale.

    Finest scale: both are the atom ratio, so the ratio is exactly 1.  At
    every d_eps radius s (with t = s^(1/eps)) the chain of inclusions gives
        J_d(s) <= (C_f A1)^(2 + log2 C^(1/eps)) mu_f(B(t)) / mu(B(2t))
    over open rho-balls, and symmetrically in the other direction with the
    doubling constants of d_eps-balls and exponent 2 + log2 C.
    """
    src = rho_space or fmap.source
    rho, d = src.dist, metriz.d_eps
    e, C = metriz.epsilon, metriz.C_eps * (1 + 1e-12)
    mass = src.mass
    pull = pullback_measure(fmap)
    d_space = QuasimetricMeasureSpace(d, mass)
    cf_rho = compute_A1(src, pull, lambdas=()).A1
    cf_d = compute_A1(d_space, pull, lambdas=()).A1
    a1_rho, a1_d = src.A1, d_space.A1
    L1, L2 = math.log2(C) / e, math.log2(C)
    K1 = (cf_rho * a1_rho) ** (2 + L1)
    K2 = (cf_d * a1_d) ** (2 + L2)
    disp1 = cf_rho ** (2 + L1) / a1_rho ** L1
    disp2 = cf_d ** (2 + L2) / a1_d ** L2
    # sub-separation closed balls are singletons in both families
    s0 = np.array([0.5 * np.min(d[d > 0])]) if src.n > 1 else np.array([1.0])
    t0 = np.array([0.5 * np.min(rho[rho > 0])]) if src.n > 1 else np.array([1.0])
    fine_d = _ball_mass(d, pull, s0, True)[0] / _ball_mass(d, mass, s0, True)[0]
    fine_r = _ball_mass(rho, pull, t0, True)[0] / _ball_mass(rho, mass, t0, True)[0]
    fine_ratio = float(np.max(np.maximum(fine_d / fine_r, fine_r / fine_d)))
    checks = [leq("jacobian.finest_ratio", fine_ratio, 1.0, rtol=0.0)]
    # d-radius s against rho-radius t = s^(1/e)
    s = np.unique(d[d > 0])
    s = np.concatenate([[s[0] / 2], s]) if s.size else np.array([1.0])
    t = s ** (1.0 / e)
    jd = _ball_mass(d, pull, s, True) / _ball_mass(d, mass, s, True)
    rhs1 = _ball_mass(rho, pull, t, False) / _ball_mass(rho, mass, 2 * t, False)
    w1 = float(np.max(jd / rhs1))
    tr = np.unique(rho[rho > 0])
    tr = np.concatenate([[tr[0] / 2], tr]) if tr.size else np.array([1.0])
    sr = tr ** e
    jr = _ball_mass(rho, pull, tr, True) / _ball_mass(rho, mass, tr, True)
    rhs2 = _ball_mass(d, pull, sr, False) / _ball_mass(d, mass, 2 * sr, False)
    w2 = float(np.max(jr / rhs2))
    checks.append(leq("jacobian.chain_d_to_rho", w1, K1, K=K1))
    checks.append(leq("jacobian.chain_rho_to_d", w2, K2, K=K2))
    jt = _ball_mass(rho, pull, t, True) / _ball_mass(rho, mass, t, True)
    up, down = float(np.max(jd / jt)), float(np.max(jt / jd))
    checks.append(leq("jacobian.matched_scales_d_over_rho", up, disp1))
    checks.append(leq("jacobian.matched_scales_rho_over_d", down, disp2))
    diag = {"display_d_to_rho": disp1, "display_rho_to_d": disp2,
            "derived_d_to_rho": K1, "derived_rho_to_d": K2,
            "chain_d_to_rho": w1, "chain_rho_to_d": w2,
            "finest_ratio_max": fine_ratio, "matched_scale_ratio_max": max(up, down)}
    return checks, diag


def qs_transfer(eta, C_eps, epsilon):
    """zeta(t) = C^2 eta((C^2 t)^(1/eps))^eps as a callable gauge."""
    if C_eps < 1 or not 0 < epsilon <= 1:
        raise ValueError("need C_eps >= 1 and eps in (0, 1]")
    c2 = C_eps ** 2

    def zeta(t):
        return c2 * np.asarray(eta((c2 * np.asarray(t, dtype=float)) ** (1.0 / epsilon))) ** epsilon
    return zeta


def qs_transfer_check(fmap, eta, m_src, m_tgt, epsilon):
    C = max(m_src.C_eps, m_tgt.C_eps) * (1 + 1e-12)
    zeta = qs_transfer(eta, C, epsilon)
    prof = eta_profile(fmap, m_src.d_eps, m_tgt.d_eps)
    if len(prof) == 0:
        return leq("qs_transfer.zeta", 0.0, 1.0)
    ratio = float(np.max(prof.ratios / zeta(prof.thetas)))
    return leq("qs_transfer.zeta", ratio, 1.0, C=C)


def a_infty_delta(mu, nu, space, lam=0.5, max_ball=12):
    """Largest delta with mu(E) < delta mu(B) => nu(E) < lam nu(B) on small balls."""
    coll = ball_collection(space)
    best = 1.0
    for s in coll.sets():
        if s.size > max_ball:
            continue
        bits = np.arange(1, 1 << s.size)
        E = ((bits[:, None] >> np.arange(s.size)[None, :]) & 1).astype(bool)
        me, ne = E @ mu[s], E @ nu[s]
        bad = ne >= lam * nu[s].sum()
        if bad.any():
            best = min(best, float(np.min(me[bad]) / mu[s].sum()))
    return best


@dataclass
class ReimannReport:
    checks: list
    diagnostics: dict

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def reimann_pipeline(fmap, which="metric", eta=None, eps_grid=None, rh_threshold=10.0,
                     T=3, delta=None, override=False, seed=0, n_random=2000):
    """End-to-end: QS checks, Jacobians, RH membership and the log-BMO chain."""
    src, tgt = fmap.source, fmap.target
    diag = {}
    prof = eta_profile(fmap)
    eta = eta or prof.eta_hat()
    qs_ok, wit = is_quasisymmetric(prof, eta)
    checks = [flag("qs.eta", qs_ok, witness=wit), inverse_duality_check(fmap)[0]]
    dbl = pullback_doubling_check(fmap, eta)
    checks.extend(dbl.checks)
    diag.update({"C_muf": dbl.measured, "C_muf_bound": dbl.bound, "theta": dbl.theta, "k": dbl.k,
                 "tau": dbl.tau})
    if dbl.k is not None:
        ok, worst, count = distortion_gap_scan(fmap, dbl.k, dbl.theta)
        checks.append(leq("distortion.gap", worst, 1.0, rtol=0.0, balls=count) if ok
                      else Check("distortion.gap", worst, 1.0, False, {"balls": count}))
    eps = min(default_epsilon(src.A0), default_epsilon(tgt.A0))
    m_src, m_tgt = chain_metric(src.dist, eps), chain_metric(tgt.dist, eps)
    sw = ball_sandwich_check(src, m_src)
    checks.append(flag("metrization.sandwich", sw.passed, checked=sw.checked))
    comp, cdiag = jacobian_comparability(fmap, m_src)
    checks.extend(comp)
    diag["comparability"] = cdiag
    checks.append(qs_transfer_check(fmap, eta, m_src, m_tgt, eps))
    jf = generalized_jacobian(fmap)
    gap = integral_identity(fmap, jf, seed)
    checks.append(leq("jacobian.integral_identity", gap, 1e-12, rtol=0.0))
    J = jf.values
    J_inv = generalized_jacobian(fmap.inverse_map()).values
    chain = float(np.max(np.abs(J_inv[fmap.forward] * J - 1.0)))
    checks.append(leq("jacobian.chain_rule", chain, 1e-12, rtol=0.0))
    work = src if which == "quasimetric" else QuasimetricMeasureSpace(m_src.d_eps, src.mass)
    balls = ball_collection(work)
    eps_grid = eps_grid or [0.05 * i for i in range(1, 21)]
    rh_table = {round(e, 6): rh_constant(J, balls, 1 + e) for e in eps_grid}
    good = [e for e, c in rh_table.items() if c <= rh_threshold]
    e_star = max(good) if good else min(eps_grid)
    diag.update({"epsilon": eps, "C_eps": m_src.C_eps, "rh_table": rh_table, "rh_eps": e_star})
    pipe = log_bmo_pipeline(J, work, 1 + e_star, T=T, delta=delta, override=override, seed=seed,
                            n_random=n_random, strict=False)
    checks.extend(pipe.checks)
    logJ = np.log(J)
    p69, b_rho, b_d = bmo_equivalence_check(logJ, src, m_src.d_eps, m_src.C_eps)
    checks.extend(p69)
    checks.append(bmo_additive_check(logJ, logJ, balls))
    ms = generalized_jacobian(fmap, m_src.d_eps, max_levels=16)
    worst67 = []
    for row in ms.multiscale:
        c = bmo_additive_check(logJ, np.log(row), balls)
        worst67.append(c)
    checks.append(Check("bmo_additive.multiscale", max(c.measured - c.bound for c in worst67), 0.0,
                        all(c.passed for c in worst67), {"levels": len(worst67)}))
    diag.update({"bmo_log_J_rho": b_rho, "bmo_log_J_d": b_d, "bmo_log_J": pipe.bmo_balls,
                 "a_infty_delta": a_infty_delta(src.mass, pullback_measure(fmap), src)})
    checks.append(flag("jacobian.log_bmo_finite", math.isfinite(pipe.bmo_balls), bmo=pipe.bmo_balls))
    return ReimannReport(checks, diag)
