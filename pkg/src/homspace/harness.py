"""Scenario generators, end-to-end verification runs and report emission."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import pmap
from .checks import Check, flag, leq
from .czd import PreconditionError, basic_cover, cz_global, cz_local, cz_weighted, refines, vitali_cover
from .dyadic import build_adjacent_systems, build_system, system_delta_limit, verify_system
from .metrization import ball_sandwich_check, chain_metric, floyd_warshall, power_quasimetric
from .quasisym import PointBijection, reimann_pipeline
from .space_core import (Ball, QuasimetricMeasureSpace, all_subsets, check_alpha_regular, check_tau_annuli,
                         compute_A1, integral_identity_gap, radon_nikodym, random_subsets)
from .weights import ap_constant, ball_collection, bmo_norm, log_bmo_pipeline, rh_constant

PACK_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    pass


# ---- spaces --------------------------------------------------------------

def _line(n, centered):
    x = np.arange(n, dtype=float)
    return x - (n - 1) / 2 if centered else x


def _masses(params, n, rng):
    kind = params.get("mass", "counting")
    if isinstance(kind, list):
        m = np.asarray(kind, dtype=float)
        if m.shape != (n,):
            raise ScenarioError(f"supplied mass has {m.size} entries, need {n}")
        return m
    if kind == "counting":
        return np.ones(n)
    if kind == "random":
        return rng.uniform(0.5, 2.0, n)
    raise ScenarioError(f"unknown mass kind {kind!r}")


def _coords(kind, params, rng):
    if kind == "grid1d":
        return _line(int(params["n"]), params.get("centered", False))[:, None]
    if kind == "grid2d":
        s = int(params["n"])
        g = np.arange(s, dtype=float)
        return np.array([(a, b) for a in g for b in g])
    if kind == "cantor":
        level, ratio = int(params["level"]), float(params.get("ratio", 1 / 3))
        if not 0 < ratio < 0.5:
            raise ScenarioError("cantor ratio must lie in (0, 1/2)")
        bits = (np.arange(2 ** level)[:, None] >> np.arange(level)[None, :]) & 1
        return (bits * (1 - ratio) * ratio ** np.arange(level)[None, :]).sum(axis=1)[:, None]
    if kind == "random_doubling":
        n, dim = int(params["n"]), int(params.get("dim", 2))
        pts = np.unique(np.round(rng.random((n, dim)), 12), axis=0)
        return pts
    raise ScenarioError(f"unknown space kind {kind!r}")


def _metric(kind, params, pts):
    diff = pts[:, None, :] - pts[None, :, :]
    if kind == "grid2d" and params.get("metric", "sup") == "sup":
        return np.abs(diff).max(axis=2)
    if kind == "grid2d" and params.get("metric") not in (None, "sup", "euclid"):
        raise ScenarioError("grid2d metric must be sup or euclid")
    return np.sqrt((diff ** 2).sum(axis=2))


def gen_space(kind, params=None, seed=0):
    """Build a space from a generator name; see the README for the kinds."""
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "snowflake":
        base = params.get("base", {"kind": "grid1d", "params": {"n": 8}})
        inner = gen_space(base["kind"], base.get("params"), seed)
        beta = float(params.get("beta", 2.0))
        table, _ = power_quasimetric(inner.dist, beta)
        return QuasimetricMeasureSpace(table, inner.mass, inner.points)
    pts = _coords(kind, params, rng)
    d = _metric(kind, params, pts)
    beta = float(params.get("beta", 1.0))
    if beta != 1.0:
        d, _ = power_quasimetric(d, beta)
    return QuasimetricMeasureSpace(d, _masses(params, len(pts), rng))


def expected_a0(kind, params):
    if kind == "snowflake":
        return 2.0 ** (float(params.get("beta", 2.0)) - 1)
    beta = float((params or {}).get("beta", 1.0))
    return 2.0 ** (beta - 1) if beta != 1.0 else None


def space_pack(count=50, seed=0, max_n=512):
    """Deterministic mix of lines, grids, Cantor sets and random clouds."""
    specs = []
    for n in (8, 16, 32, 64, 100, 128, 200, 256, 384, 512):
        specs.append(("grid1d", {"n": n}))
    for s in (3, 4, 6, 8, 10, 12, 16, 20):
        specs.append(("grid2d", {"n": s, "metric": "sup"}))
        specs.append(("grid2d", {"n": s, "metric": "euclid"}))
    for level, ratio in ((3, 1 / 3), (4, 1 / 3), (5, 1 / 3), (6, 1 / 4), (7, 1 / 3), (8, 1 / 5), (9, 1 / 3)):
        specs.append(("cantor", {"level": level, "ratio": ratio}))
    for i, (n, dim) in enumerate(((20, 1), (40, 2), (60, 2), (80, 3), (120, 2), (150, 1), (200, 2),
                                  (256, 3), (300, 2), (400, 2), (512, 2), (64, 2), (96, 3), (180, 1),
                                  (32, 2), (48, 1), (240, 2), (350, 3))):
        specs.append(("random_doubling", {"n": n, "dim": dim}))
    specs = [s for s in specs if _size(*s) <= max_n][:count]
    return [(f"{k}-{i}", k, p, seed + i) for i, (k, p) in enumerate(specs)]


def _size(kind, params):
    return {"grid1d": lambda: params["n"], "grid2d": lambda: params["n"] ** 2,
            "cantor": lambda: 2 ** params["level"], "random_doubling": lambda: params["n"]}[kind]()


# ---- weights and maps ----------------------------------------------------

def gen_weight(spec, space, coords=None):
    spec = spec or {"kind": "one"}
    kind = spec.get("kind", "one")
    if kind == "one":
        return np.ones(space.n)
    if kind == "power":
        x = _line(space.n, True) if coords is None else coords
        return (np.abs(x) + float(spec.get("h", 1.0))) ** float(spec["a"])
    if kind == "values":
        return np.asarray(spec["values"], dtype=float)
    raise ScenarioError(f"unknown weight kind {kind!r}")


def stretch_map(n, gamma, beta=1.0):
    """f(x) = sign(x)|x|^gamma on the symmetric line, image carries Lebesgue cell masses."""
    x = _line(n, True)
    f = lambda t: np.sign(t) * np.abs(t) ** gamma
    D = np.abs(x[:, None] - x[None, :])
    src = QuasimetricMeasureSpace(D ** beta, np.ones(n))
    fx = f(x)
    cells = np.abs(f(x + 0.5) - f(x - 0.5))
    tgt = QuasimetricMeasureSpace(np.abs(fx[:, None] - fx[None, :]) ** beta, cells)
    return PointBijection(np.arange(n), src, tgt)


def gen_map(spec, space):
    kind = (spec or {}).get("kind", "identity")
    if kind == "identity":
        return PointBijection.identity(space)
    if kind == "reversal":
        return PointBijection(np.arange(space.n)[::-1], space, space)
    if kind == "perm":
        return PointBijection.from_json(spec, space)
    if kind == "stretch":
        return stretch_map(space.n, float(spec.get("gamma", 2.0)), float(spec.get("beta", 1.0)))
    raise ScenarioError(f"unknown map kind {kind!r}")


# ---- scenarios and reports -----------------------------------------------

@dataclass
class Scenario:
    name: str
    space: dict = field(default_factory=lambda: {"kind": "grid1d", "params": {"n": 8}})
    weight: dict = field(default_factory=lambda: {"kind": "one"})
    map: dict = field(default_factory=lambda: {"kind": "identity"})
    steps: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_json(cls, doc):
        unknown = set(doc) - {"name", "space", "weight", "map", "steps", "expect", "seed", "description"}
        if unknown:
            raise ScenarioError(f"unknown scenario fields {sorted(unknown)}")
        for step in doc.get("steps", {}):
            if step not in STEPS:
                raise ScenarioError(f"unknown step {step!r}")
        return cls(doc["name"], doc.get("space", cls.__dataclass_fields__["space"].default_factory()),
                   doc.get("weight", {"kind": "one"}), doc.get("map", {"kind": "identity"}),
                   doc.get("steps", {}), doc.get("expect", {}), int(doc.get("seed", 0)))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self):
        return {"name": self.name, "seed": self.seed, "space": self.space, "weight": self.weight,
                "map": self.map, "steps": self.steps, "expect": self.expect}

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass
class RunReport:
    scenario: str
    rows: list
    environment: dict
    input_hash: str

    @property
    def passed(self):
        return all(r["pass"] == r["expected"] for r in self.rows)

    def failures(self):
        return [r for r in self.rows if r["pass"] != r["expected"]]

    def payload(self, runtime=True):
        rows = self.rows if runtime else [{k: v for k, v in r.items() if k != "runtime_s"} for r in self.rows]
        return {"scenario": self.scenario, "input_hash": self.input_hash, "environment": self.environment,
                "passed": self.passed, "checks": rows}


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return v if v is None or isinstance(v, str) else str(v)


def _row(check, step, runtime, expected=True):
    return {"name": f"{step}.{check.name}" if not check.name.startswith(step + ".") else check.name,
            "measured": _num(check.measured), "bound": _num(check.bound), "slack": _num(check.slack),
            "pass": bool(check.passed), "expected": bool(expected), "runtime_s": round(runtime, 6),
            "witnesses": _jsonable(check.detail)}


# ---- steps ---------------------------------------------------------------
# Each step receives (ctx, params) and returns a list of Checks.

def _step_diag(ctx, p):
    space = ctx["space"]
    out = []
    exp = expected_a0(ctx["scenario"].space["kind"], ctx["scenario"].space.get("params", {}))
    if exp is not None:
        out.append(leq("A0_upper", space.A0, exp, A0=space.A0))
        out.append(leq("A0_lower", exp, space.A0))
    if "A0_equals" in p:
        out.append(leq("A0_equals", abs(space.A0 - p["A0_equals"]), 0.0, rtol=0.0, A0=space.A0))
    dbl = compute_A1(space)
    out.append(flag("A1_finite", math.isfinite(dbl.A1), A1=dbl.A1))
    out.append(flag("A1_iterated", not dbl.violations, violations=dbl.violations[:5]))
    if "alpha" in p:
        reg = check_alpha_regular(space, p["alpha"])
        out.append(leq("alpha_regular", reg.kappa, p.get("kappa_max", math.inf), kappa=reg.kappa))
    if "tau" in p:
        ann = check_tau_annuli(space, p["tau"])
        out.append(flag("tau_annuli", ann.holds, witness=ann.witness))
    return out


def _system_rows(rep, prefix=""):
    out = [flag(f"{prefix}{k}", rep[k]) for k in ("a1", "a2", "a3", "a4", "a5")]
    out.append(leq(f"{prefix}dyadic_doubling", rep["C_dydbl"], rep["A1^N"], N=rep["N"]))
    return out


def _step_dyadic(ctx, p):
    space = ctx["space"]
    delta = p.get("delta") or system_delta_limit(space.A0)
    sysm = build_system(space, delta, seed=ctx["seed"], override=p.get("override", False))
    ctx["system"] = sysm
    rep = verify_system(sysm)
    out = _system_rows(rep)
    T = p.get("adjacent")
    if T:
        adj = build_adjacent_systems(space, T, delta=p.get("adjacent_delta"), override=p.get("override", False),
                                     seeds=[ctx["seed"] + 1000 * t for t in range(T)])
        ctx["adjacent"] = adj
        need = p.get("min_coverage", 1.0)
        out.append(leq("adjacent_uncovered", 1 - adj.coverage, 1 - need, rtol=0.0, balls=adj.total_balls,
                       uncovered=list(adj.uncovered)[:10], C_adj=adj.C_adj, C_target=adj.C_target))
    return out


def _step_dyadic_pack(ctx, p):
    pack = space_pack(p.get("count", 50), ctx["seed"], p.get("max_n", 512))
    T = p.get("adjacent", 8)

    def one(item):
        name, kind, params, seed = item
        space = gen_space(kind, params, seed)
        sysm = build_system(space, system_delta_limit(space.A0), seed=seed)
        rep = verify_system(sysm)
        rows = _system_rows(rep, f"{name}.")
        if T:
            adj = build_adjacent_systems(space, T, seeds=[seed + 1000 * t for t in range(T)])
            rows.append(Check(f"{name}.adjacent_coverage", adj.coverage, 1.0, True,
                              {"balls": adj.total_balls, "uncovered": list(adj.uncovered)[:10],
                               "line": kind == "grid1d"}))
        return rows

    rows = [r for part in pmap(one, pack) for r in part]
    out = [r for r in rows if not r.name.endswith("adjacent_coverage")]
    cov = [r for r in rows if r.name.endswith("adjacent_coverage")]
    if cov:
        total = sum(r.detail["balls"] for r in cov)
        covered = sum(r.measured * r.detail["balls"] for r in cov)
        frac = covered / total if total else 1.0
        out.append(leq("adjacent_uncovered_pack", 1 - frac, 1 - p.get("min_coverage", 0.99), rtol=0.0,
                       coverage=frac, balls=total))
        lines = [r for r in cov if r.detail["line"]]
        worst = min((r.measured for r in lines), default=1.0)
        out.append(leq("adjacent_uncovered_lines", 1 - worst, 0.0, rtol=0.0,
                       per_space={r.name: r.measured for r in cov}))
    return out


def _step_metrization(ctx, p):
    space = ctx["space"]
    res = chain_metric(space.dist, p.get("epsilon"))
    ctx["metrization"] = res
    sw = ball_sandwich_check(space, res)
    out = [flag("sandwich", sw.passed, checked=sw.checked, witnesses=sw.witnesses),
           flag("C_eps_finite", math.isfinite(res.C_eps), C_eps=res.C_eps, epsilon=res.epsilon)]
    if p.get("recover_base"):
        base = space.dist ** (1.0 / float(p["recover_base"]))
        gap = float(np.max(np.abs(res.d_eps - base) / np.where(base > 0, base, 1.0)))
        out.append(leq("exact_recovery", gap, 1e-9, rtol=0.0))
        # quasiballs of radius r are the base balls of radius r^(1/beta)
        beta = float(p["recover_base"])
        radii = np.unique(space.dist)[1:]
        bad = 0
        for r in radii:
            bad += int(np.sum((space.dist < r) != (base < r ** (1 / beta))))
        out.append(leq("ball_identity", bad, 0, rtol=0.0, radii=int(radii.size)))
    return out


def _weight_rows(w, space, p, seed):
    coll = ball_collection(space)
    q = p.get("q", 2.0)
    out = []
    if p.get("exact_one"):
        out.append(leq("rh_balls_is_one", abs(rh_constant(w, coll, q) - 1), 0.0, rtol=0.0))
        out.append(leq("ap_balls_is_one", abs(ap_constant(w, coll, p.get("p", 2.0)) - 1), 0.0, rtol=0.0))
        out.append(leq("bmo_log_is_zero", bmo_norm(np.log(w), coll), 0.0, rtol=0.0))
    pipe = log_bmo_pipeline(w, space, q, T=p.get("T", 3), delta=p.get("delta"), override=p.get("override", False),
                            seed=seed, n_random=p.get("n_random", 10_000), strict=False)
    seen = {}
    for c in pipe.checks:
        i = seen[c.name] = seen.get(c.name, 0) + 1
        out.append(Check(f"{c.name}#{i}", c.measured, c.bound, c.passed, c.detail))
    return out


def _step_weights(ctx, p):
    return _weight_rows(gen_weight(ctx["scenario"].weight, ctx["space"]), ctx["space"], p, ctx["seed"])


def _step_weight_chain(ctx, p):
    """Power weights (|x|+h)^a over several exponents on one line."""
    n = p.get("n", 64)
    space = gen_space("grid1d", {"n": n})
    out = []
    for a in p.get("exponents", [0.5, 1, 2]):
        w = gen_weight({"kind": "power", "a": a, "h": p.get("h", 1.0)}, space)
        for c in _weight_rows(w, space, p, ctx["seed"]):
            c.name = f"a={a}.{c.name}"
            out.append(c)
    return out


def _random_f(rng, n, support=None):
    f = np.zeros(n)
    idx = np.arange(n) if support is None else np.asarray(support)
    k = rng.integers(1, max(2, idx.size // 3) + 1)
    pick = rng.choice(idx, size=min(k, idx.size), replace=False)
    f[pick] = rng.exponential(1.0, pick.size) * rng.choice([1, 10, 100], pick.size)
    return f


def _cz_instances(space, sysm, w, rng, instances, counts, worst):
    def tally(dec):
        for c in dec.checks:
            name = c.name.split(".", 1)[1]
            counts[name] = counts.get(name, 0) + (not c.passed)
            worst[name] = max(worst.get(name, -math.inf), c.measured - c.bound)

    nest_fail = 0
    for _ in range(instances):
        k = int(rng.integers(sysm.k_min, sysm.k_max + 1))
        i = int(rng.integers(sysm.n_cubes(k)))
        q0 = sysm.members(k, i)
        f = _random_f(rng, space.n, q0)
        avg = float(np.sum(f[q0] * space.mass[q0]) / np.sum(space.mass[q0]))
        alphas = np.sort(avg * (1 + rng.exponential(2.0, 3)))
        decs = [cz_local(f, sysm, (k, i), a) for a in alphas]
        for d in decs:
            tally(d)
        nest_fail += sum(not refines(decs[j + 1], decs[j]) for j in range(len(decs) - 1))
        tally(cz_global(f, sysm, float(alphas[0])))
        wavg = float(np.sum(f[q0] * w[q0] * space.mass[q0]) / np.sum(w[q0] * space.mass[q0]))
        tally(cz_weighted(f, sysm, (k, i), wavg * (1 + rng.exponential(2.0)), w))
    return nest_fail


def _step_cz(ctx, p):
    """Random (f, alpha) instances: local chains, global and weighted variants."""
    counts, worst = {}, {}
    if p.get("pack"):
        spaces = [(gen_space(k, prm, s), s) for _, k, prm, s in space_pack(p.get("count", 50), ctx["seed"],
                                                                            p.get("max_n", 512))]
    else:
        spaces = [(ctx["space"], ctx["seed"])]
    nest_fail = 0
    for space, seed in spaces:
        sysm = ctx.get("system") if not p.get("pack") and "system" in ctx else build_system(
            space, p.get("delta") or system_delta_limit(space.A0), seed=seed, override=p.get("override", False))
        rng = np.random.default_rng(seed)
        x = np.arange(space.n, dtype=float)
        w = gen_weight(ctx["scenario"].weight, space, x - x.mean())
        nest_fail += _cz_instances(space, sysm, w, rng, p.get("instances", 200), counts, worst)
    out = [leq(f"failures.{name}", counts[name], 0, rtol=0.0, worst_excess=worst[name]) for name in sorted(counts)]
    out.append(leq("failures.refinement", nest_fail, 0, rtol=0.0, spaces=len(spaces)))
    return out


def _random_balls(rng, space, count, closed=None):
    radii = np.unique(space.dist)
    out = []
    for _ in range(count):
        c = int(rng.integers(space.n))
        r = float(rng.choice(radii[1:] if radii.size > 1 else radii)) * float(rng.uniform(0.5, 1.5))
        out.append(Ball(c, r, bool(rng.integers(2)) if closed is None else closed))
    return out


def _step_cover(ctx, p):
    space = ctx["space"]
    rng = np.random.default_rng(ctx["seed"])
    fails = {}
    precond = 0
    sep = space.min_positive_dist
    for _ in range(p.get("families", 1000)):
        balls = _random_balls(rng, space, int(rng.integers(1, p.get("max_balls", 12) + 1)))
        for c in basic_cover(space, balls).checks:
            fails[c.name] = fails.get(c.name, 0) + (not c.passed)
        A = sorted(set(int(v) for v in rng.choice(space.n, size=int(rng.integers(1, min(space.n, 10) + 1)),
                                                    replace=False)))
        vb = [Ball(a, sep / 2, True) for a in A]
        vb += [Ball(int(rng.choice(A)), b.radius, True) for b in _random_balls(rng, space, 4)]
        try:
            for c in vitali_cover(space, A, vb).checks:
                fails[c.name] = fails.get(c.name, 0) + (not c.passed)
        except PreconditionError:
            precond += 1
    out = [leq(f"failures.{k}", v, 0, rtol=0.0) for k, v in sorted(fails.items())]
    out.append(leq("vitali_precondition_errors", precond, 0, rtol=0.0))
    return out


def _step_quasisym(ctx, p):
    fmap = gen_map(ctx["scenario"].map, ctx["space"])
    rep = reimann_pipeline(fmap, which=p.get("which", "metric"), T=p.get("T", 3), delta=p.get("delta"),
                           override=p.get("override", False), seed=ctx["seed"],
                           n_random=p.get("n_random", 2000))
    out, seen = [], {}
    for c in rep.checks:
        i = seen[c.name] = seen.get(c.name, 0) + 1
        out.append(Check(f"{c.name}#{i}", c.measured, c.bound, c.passed, c.detail))
    d = rep.diagnostics
    out.append(Check("log_J_bmo", d["bmo_log_J"], math.inf, math.isfinite(d["bmo_log_J"]),
                     {"rh_eps": d["rh_eps"], "C_muf": d["C_muf"], "theta": d["theta"], "k": d["k"]}))
    if p.get("exact_identity"):
        J = fmap.target.mass[fmap.forward] / fmap.source.mass
        out.append(leq("J_is_one", float(np.max(np.abs(J - 1))), 0.0, rtol=0.0))
        out.append(leq("bmo_is_zero", d["bmo_log_J"], 0.0, rtol=0.0))
    return out


def _step_power_quasimetric(ctx, p):
    rng = np.random.default_rng(ctx["seed"])
    out = []
    for beta in p.get("betas", [1.5, 2, 3]):
        for n in p.get("line_sizes", [3, 8, 32]):
            _, a0 = power_quasimetric(np.abs(_line(n, False)[:, None] - _line(n, False)[None, :]), beta)
            out.append(leq(f"collinear.beta={beta}.n={n}", abs(a0 - 2 ** (beta - 1)), 1e-9 * 2 ** (beta - 1),
                           rtol=0.0, A0=a0))
    worst = 0.0
    for _ in range(p.get("random_metrics", 1000)):
        n = p.get("random_n", 32)
        w = rng.uniform(0.1, 1.0, (n, n))
        w = np.minimum(w, w.T)
        np.fill_diagonal(w, 0)
        m = floyd_warshall(w)
        beta = float(rng.choice(p.get("betas", [1.5, 2, 3])))
        _, a0 = power_quasimetric(m, beta)
        worst = max(worst, a0 / 2 ** (beta - 1))
    out.append(leq("random_metrics_ratio", worst, 1.0, rtol=1e-12, count=int(p.get("random_metrics", 1000))))
    return out


def _step_exact_recovery(ctx, p):
    out = []
    for n in p.get("sizes", [8, 64, 256]):
        D = np.abs(_line(n, False)[:, None] - _line(n, False)[None, :])
        for beta in p.get("betas", [1.5, 2, 3]):
            t = time.perf_counter()
            res = chain_metric(D ** beta, 1 / beta)
            dt = time.perf_counter() - t
            gap = float(np.max(np.abs(res.d_eps - D) / np.where(D > 0, D, 1.0)))
            out.append(leq(f"n={n}.beta={beta}", gap, 1e-9, rtol=0.0, seconds=dt))
    return out


def _step_radon_nikodym(ctx, p):
    space = ctx["space"]
    rng = np.random.default_rng(ctx["seed"])
    nu = rng.uniform(0.1, 5.0, space.n)
    dens = radon_nikodym(space, nu)
    subs = all_subsets(space.n) if space.n <= 12 else random_subsets(space.n, p.get("subsets", 10_000), ctx["seed"])
    gap = integral_identity_gap(space, dens, nu, subs)
    return [leq("integral_identity", gap, p.get("rtol", 1e-12), rtol=0.0, n=space.n)]


STEPS = {"diag": _step_diag, "dyadic": _step_dyadic, "dyadic_pack": _step_dyadic_pack,
         "metrization": _step_metrization, "weights": _step_weights, "weight_chain": _step_weight_chain,
         "cz": _step_cz, "cover": _step_cover, "quasisym": _step_quasisym,
         "power_quasimetric": _step_power_quasimetric, "exact_recovery": _step_exact_recovery,
         "radon_nikodym": _step_radon_nikodym}
ORDER = ["diag", "power_quasimetric", "exact_recovery", "dyadic", "dyadic_pack", "metrization",
         "weights", "weight_chain", "cz", "cover", "radon_nikodym", "quasisym"]


def environment_stamp():
    return {"homspace": __version__, "numpy": np.__version__, "python": platform.python_version()}


def run_scenario(scenario, seed=None):
    if isinstance(scenario, dict):
        scenario = Scenario.from_json(scenario)
    seed = scenario.seed if seed is None else seed
    sp = scenario.space
    try:
        space = gen_space(sp["kind"], sp.get("params"), seed)
    except Exception as exc:
        raise ScenarioError(f"space generation failed: {exc}") from exc
    ctx = {"scenario": scenario, "space": space, "seed": seed}
    rows, names = [], set()
    for step in ORDER:
        if step not in scenario.steps:
            continue
        t0 = time.perf_counter()
        try:
            checks = STEPS[step](ctx, scenario.steps[step] or {})
        except Exception as exc:
            checks = [Check("error", math.nan, math.nan, False, {"error": f"{type(exc).__name__}: {exc}"})]
        dt = time.perf_counter() - t0
        for c in checks:
            # a check may carry its own timing; it belongs in the runtime field, not the witnesses
            own = c.detail.pop("seconds", None)
            row = _row(c, step, dt if own is None else own, scenario.expect.get(f"{step}.{c.name}", True))
            if row["name"] in names:
                raise ScenarioError(f"duplicate check {row['name']}")
            names.add(row["name"])
            rows.append(row)
    return RunReport(scenario.name, rows, environment_stamp(), scenario.digest())


CSV_FIELDS = ["name", "measured", "bound", "slack", "pass", "expected", "runtime_s"]


def report_csv(report):
    buf = io.StringIO()
    wr = csv.DictWriter(buf, CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    wr.writeheader()
    for r in report.rows:
        wr.writerow(r)
    return buf.getvalue()


def report_json(report, runtime=True):
    return json.dumps(report.payload(runtime), indent=2, sort_keys=False, allow_nan=False) + "\n"


def emit_report(report, formats=("csv", "json"), out_dir="."):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            path, text = out / f"{report.scenario}.csv", report_csv(report)
        elif fmt == "json":
            path, text = out / f"{report.scenario}.json", report_json(report)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        path.write_text(text)
        written.append(path)
    return written


def scenario_pack(directory=PACK_DIR):
    return [Scenario.load(p) for p in sorted(Path(directory).glob("*.json"))]
