"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion is driven by a scenario in the shipped pack; a few add
direct measurements (runtimes, the worked CZ example, pack coverage).
Run with `pytest tests/test_acceptance.py -v` or `python3 tests/test_acceptance.py`.
"""
import time
from functools import lru_cache

import numpy as np
import pytest

from homspace.czd import cz_local
from homspace.dyadic import DyadicSystem
from homspace.harness import report_json, run_scenario, scenario_pack
from homspace.metrization import chain_metric
from homspace.space_core import QuasimetricMeasureSpace

PACK = {s.name: s for s in scenario_pack()}


@lru_cache(maxsize=None)
def run(name):
    t = time.perf_counter()
    rep = run_scenario(PACK[name])
    return rep, time.perf_counter() - t


def rows(name):
    return {r["name"]: r for r in run(name)[0].rows}


def announce(number, title, ok, info=""):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{info}]" if info else "")
    print("\n" + line)
    return ok


def _all_met(*names):
    bad = [f"{n}:{r['name']}" for n in names for r in run(n)[0].failures()]
    return not bad, bad


def test_exact_recovery(capsys):
    ok, bad = _all_met("exact-recovery")
    times = []
    for n in (8, 64, 256):
        D = np.abs(np.arange(n, dtype=float)[:, None] - np.arange(n, dtype=float)[None, :])
        for beta in (1.5, 2.0, 3.0):
            t = time.perf_counter()
            res = chain_metric(D ** beta, 1 / beta)
            times.append(time.perf_counter() - t)
            ok &= bool(np.allclose(res.d_eps, D, rtol=1e-9, atol=0.0))
    ok &= max(times) < 5.0
    with capsys.disabled():
        announce(1, "chain metric of D^beta at eps = 1/beta recovers D", ok,
                 f"max runtime {max(times):.2f}s" + (f"; {bad}" if bad else ""))
    assert ok


def test_power_quasimetric_constant(capsys):
    ok, bad = _all_met("power-quasimetric")
    r = rows("power-quasimetric")
    ok &= r["power_quasimetric.random_metrics_ratio"]["witnesses"]["count"] >= 1000
    with capsys.disabled():
        announce(2, "A0(D^beta) = 2^(beta-1) on lines, never above on 1000 random metrics", ok,
                 f"worst ratio {r['power_quasimetric.random_metrics_ratio']['measured']}")
    assert ok, bad


def test_dyadic_soundness(capsys):
    ok, bad = _all_met("dyadic-pack")
    r = rows("dyadic-pack")
    spaces = {k.split(".")[1] for k in r if k.endswith(".dyadic_doubling")}
    ok &= len(spaces) == 50
    worst = max(v["measured"] / v["bound"] for k, v in r.items() if k.endswith(".dyadic_doubling"))
    with capsys.disabled():
        announce(3, "(a1)-(a4), ball sandwich and dyadic doubling on 50 spaces", ok,
                 f"{len(spaces)} spaces, worst doubling/bound {worst:.3g}")
    assert ok, bad


def test_adjacent_cover(capsys):
    r = rows("dyadic-pack")
    pack = r["dyadic_pack.adjacent_uncovered_pack"]
    lines = r["dyadic_pack.adjacent_uncovered_lines"]
    ok = pack["pass"] and lines["pass"] and lines["measured"] == 0.0
    with capsys.disabled():
        announce(4, "T = 8 adjacent systems: coverage >= 0.99 on the pack, 1.00 on lines", ok,
                 f"uncovered fraction pack {pack['measured']}, lines {lines['measured']}")
    assert ok


def test_cz_decomposition(capsys):
    ok, bad = _all_met("cz-pack")
    x = np.array([0.0, 1.0, 10.0, 11.0])
    space = QuasimetricMeasureSpace(np.abs(x[:, None] - x[None]), np.ones(4))
    tree = DyadicSystem.from_partitions(
        space, 0.1, [[(0, [0, 1, 2, 3])], [(0, [0, 1]), (2, [2, 3])], [(i, [i]) for i in range(4)]])
    dec = cz_local(np.array([8.0, 0, 0, 0]), tree, (0, 0), 3.0)
    ok &= dec.member_sets == [{0, 1}] and dec.passed
    with capsys.disabled():
        announce(5, "CZ (i)-(iii) and refinement on 200 instances per space; 4-point example", ok,
                 f"worked example cubes {dec.member_sets}" + (f"; {bad}" if bad else ""))
    assert ok


def test_weight_chain(capsys):
    ok, bad = _all_met("identity-sanity", "weight-chain", "weight-chain-coarse")
    r = rows("identity-sanity")
    ok &= all(r[k]["measured"] == 0.0 for k in
              ("weights.rh_balls_is_one", "weights.ap_balls_is_one", "weights.bmo_log_is_zero"))
    secs = run("weight-chain")[1]
    ok &= secs < 60.0
    with capsys.disabled():
        announce(6, "weight chain: w = 1 exact, power weights with nonnegative slack", ok,
                 f"{secs:.1f}s" + (f"; {bad}" if bad else ""))
    assert ok


def test_covering(capsys):
    ok, bad = _all_met("covering", "covering-quasimetric")
    with capsys.disabled():
        announce(7, "basic cover dilation and half-radius, Vitali disjoint exact covers", ok,
                 "; ".join(bad))
    assert ok


def test_quasisymmetric_pipeline(capsys):
    ok, bad = _all_met("identity-sanity", "isometry-reversal", "reimann-line", "reimann-line-1.5")
    for name in ("identity-sanity", "isometry-reversal"):
        r = rows(name)
        ok &= r["quasisym.J_is_one"]["measured"] == 0.0 and r["quasisym.bmo_is_zero"]["measured"] == 0.0
    secs = max(run("reimann-line")[1], run("reimann-line-1.5")[1])
    ok &= secs < 120.0
    norms = [rows(n)["quasisym.log_J_bmo"]["measured"] for n in ("reimann-line", "reimann-line-1.5")]
    with capsys.disabled():
        announce(8, "quasisymmetric pipeline on identity, reversal and stretch maps", ok,
                 f"||log J||_BMO = {norms[0]:.4f} (gamma 2), {norms[1]:.4f} (gamma 1.5); {secs:.1f}s"
                 + (f"; {bad}" if bad else ""))
    assert ok


def test_radon_nikodym(capsys):
    ok, bad = _all_met("radon-nikodym-small", "radon-nikodym-large")
    gaps = [rows(n)["radon_nikodym.integral_identity"]["measured"]
            for n in ("radon-nikodym-small", "radon-nikodym-large")]
    with capsys.disabled():
        announce(9, "nu(S) = integral of D over S, all 2^12 subsets and 10^4 random ones", ok,
                 f"max relative gaps {gaps}")
    assert ok


@pytest.mark.slow
def test_determinism(capsys):
    first = {n: report_json(run(n)[0], runtime=False) for n in PACK}
    second = {n: report_json(run_scenario(s), runtime=False) for n, s in PACK.items()}
    differ = [n for n in PACK if first[n] != second[n]]
    all_met = all(run(n)[0].passed for n in PACK)
    with capsys.disabled():
        announce(10, "rerunning the full pack gives byte-identical JSON", not differ,
                 f"{len(PACK)} scenarios, all expectations met: {all_met}"
                 + (f"; differing {differ}" if differ else ""))
    assert not differ


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
