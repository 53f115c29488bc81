"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run on its own with ``python3 tests/test_acceptance.py`` or
``pytest tests/test_acceptance.py -s``.
"""

import math
import sys
import time

import numpy as np
import pytest

from conftest import random_game, toy_game, visible_of
from test_planner import enumerate_semi_mdp
from test_solvers import asw_by_enumeration
from hypergame_deception.detection import (DetectorConfig, Observation, batch_discrimination,
                                           build_hypotheses, log_likelihood_ratio,
                                           update_discrimination)
from hypergame_deception.experiments import (sensitivity_sweep, strong_opponent_report,
                                             vod_heatmap)
from hypergame_deception.game import make_game
from hypergame_deception.matrix_game import duality_gap, solve_matrix_game
from hypergame_deception.perception import (adversarial_menu, build_hypergame,
                                            derive_perceptual_game, perceptual_p2)
from hypergame_deception.planner import (KEEP, SWITCH, build_semi_mdp, solve_semi_mdp,
                                         vod_vector)
from hypergame_deception.simulate import make_completion, mean_and_half_width, simulate_batch
from hypergame_deception.soccer import BASIC, BOUNCING_APPROX, build_soccer_game
from hypergame_deception.solvers import check_asw_containment, compute_asw

REF_MAX_VOD = 72.289
REF_STRONG_MAX = 46.564
REF_SENSITIVITY = {1: (2.235, 92.61), 5: (3.529, 94.00), 8: (3.464, 94.00), 12: (3.403, 94.00)}


# 1 ------------------------------------------------------------------------

def test_criterion_1_cusum_equivalence(soccer_bundle, acceptance):
    start = time.perf_counter()
    b = soccer_bundle
    mc0, mc1 = build_hypotheses(b)
    p2 = perceptual_p2(b)
    rng = np.random.default_rng(101)
    starts = b.initial_states()
    worst, checked = 0.0, 0
    mismatch = None
    for k in range(1000):
        chain = mc1 if k % 2 else mc0
        s = int(rng.choice(starts))
        trace = []
        for _ in range(int(rng.integers(1, 26))):
            bb = int(rng.choice(len(p2[s]), p=p2[s]))
            t = int(rng.choice(b.game.n_states, p=chain.kernel[s, bb]))
            trace.append(Observation(s, bb, t))
            s = t
        phi = 0.0
        for n, obs in enumerate(trace, start=1):
            phi = update_discrimination(phi, log_likelihood_ratio(mc0, mc1, obs))
            ref = batch_discrimination(mc0, mc1, trace[:n])
            checked += 1
            if math.isinf(ref) or math.isinf(phi):
                if phi != ref:
                    mismatch = (k, n, phi, ref)
            else:
                worst = max(worst, abs(phi - ref))
    elapsed = time.perf_counter() - start
    ok = mismatch is None and worst <= 1e-9 and elapsed < 10
    acceptance(1, "CUSUM incremental == batch", ok,
               f"1000 traces, {checked} prefixes, max |diff| {worst:.2e}, {elapsed:.1f}s")
    assert ok, mismatch


# 2 ------------------------------------------------------------------------

def test_criterion_2_matrix_games(acceptance):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        m, k = rng.integers(2, 6, size=2)
        M = rng.uniform(-10, 10, size=(m, k))
        v, x, y = solve_matrix_game(M)
        worst = max(worst, duality_gap(M, x, y))
    closed = {((2, 0), (1, 3)): 1.5, ((3, -1), (-2, 1)): 1 / 7, ((1, -1), (-1, 1)): 0.0,
              ((4, 2), (1, 3)): 2.5}
    err = max(abs(solve_matrix_game(np.array(M, float))[0] - v) for M, v in closed.items())
    ok = worst <= 1e-6 and err <= 1e-6
    acceptance(2, "matrix-game correctness", ok,
               f"max duality gap {worst:.2e} on 1000 games, closed-form error {err:.2e}")
    assert ok


# 3 ------------------------------------------------------------------------

def test_criterion_3_asw_oracles(acceptance):
    results = {}
    rng = np.random.default_rng(303)
    g = random_game(rng)
    results["targets contained"] = all(
        compute_asw(g, p)[0].members[g.targets(p)].all() for p in (1, 2))

    tr = {(s, 0, 0): {s + 1: 1.0} for s in range(4)}
    ladder = make_game([f"r{i}" for i in range(5)], ["up"], ["wait"], tr, targets1=[4])
    results["ladder positive"] = bool(compute_asw(ladder, 1)[0].members.all())

    tr = {(0, 0, 0): {0: 1.0}, (0, 0, 1): {1: 1.0}, (0, 1, 0): {1: 1.0}, (0, 1, 1): {2: 1.0}}
    hide = make_game(["home", "safe", "wet"], ["hide", "run"], ["wait", "throw"], tr,
                     targets1=[1], targets2=[2])
    results["hide-and-run negative"] = 0 not in compute_asw(hide, 1)[0]

    soccer_ok = True
    for cfg in (BASIC, BOUNCING_APPROX):
        game, hidden = build_soccer_game(cfg)
        perc = derive_perceptual_game(game, visible_of(game, hidden))
        soccer_ok &= check_asw_containment(compute_asw(game, 2)[0], compute_asw(perc, 2)[0])
    results["containment on soccer"] = soccer_ok

    random_ok = True
    for _ in range(100):
        game = random_game(rng, n_states=6, n1=4, n2=3, density=rng.uniform(0.2, 0.6))
        vis = sorted(rng.choice(4, size=int(rng.integers(1, 4)), replace=False).tolist())
        perc = derive_perceptual_game(game, vis)
        r_true, r_perc = compute_asw(game, 2)[0], compute_asw(perc, 2)[0]
        random_ok &= check_asw_containment(r_true, r_perc)
        random_ok &= set(r_true.indices()) == asw_by_enumeration(game, 2)
    results["containment on 100 random restrictions"] = random_ok
    ok = all(results.values())
    acceptance(3, "almost-sure winning oracles", ok,
               ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in results.items()))
    assert ok


# 4 ------------------------------------------------------------------------

def test_criterion_4_semi_mdp_structure(soccer_bundle, acceptance):
    start = time.perf_counter()
    m = build_semi_mdp(soccer_bundle, DetectorConfig(), 0.2)
    problems = []
    keep_rows = np.asarray(m.choose[KEEP].sum(axis=1)).ravel()
    switch_rows = np.asarray(m.choose[SWITCH].sum(axis=1)).ravel()
    if not np.allclose(keep_rows[m.available[:, KEEP]], 1.0, atol=1e-9, rtol=0):
        problems.append("keep rows")
    if np.any(keep_rows[~m.available[:, KEEP]] != 0.0):
        problems.append("keep offered after switch")
    if not np.allclose(switch_rows, 1.0, atol=1e-9, rtol=0):
        problems.append("switch rows")
    nat = np.asarray(m.nature.sum(axis=1)).ravel()
    reach = np.asarray((m.choose[KEEP] + m.choose[SWITCH]).sum(axis=0)).ravel() > 0
    if not np.allclose(nat[reach & ~m.to_sink], 1.0, atol=1e-9, rtol=0):
        problems.append("nature rows")
    if np.any(nat[m.to_sink] != 0.0):
        problems.append("sink not absorbing")
    coo = m.nature.tocoo()
    _, _, f_src, _, _ = m.decode_nature(coo.row)
    _, _, f_dst = m.decode_decision(coo.col)
    flag_ok = bool(np.all(f_dst >= f_src))
    for k in (KEEP, SWITCH):
        c = m.choose[k].tocoo()
        flag_ok &= bool(np.all(m.decode_nature(c.col)[2] >= m.decode_decision(c.row)[2]))
    if not flag_ok:
        problems.append("flag reset")
    s, _, _, _, _ = m.decode_nature(np.arange(m.n_nature))
    b = soccer_bundle
    if not (np.all(m.to_sink[b.decided[s]]) and np.all(m.reward[b.asw1.members[s]] == 1)
            and np.all(m.reward[b.asw2.members[s]] == -1)):
        problems.append("region exits")
    elapsed = time.perf_counter() - start
    ok = not problems and m.n_decision == 450 * 11 * 2 and elapsed < 60
    acceptance(4, "semi-MDP structural invariants", ok,
               f"{m.n_decision} decision / {m.n_nature} nature states scanned in {elapsed:.1f}s"
               + (f"; problems: {problems}" if problems else ""))
    assert ok


# 5 ------------------------------------------------------------------------

def test_criterion_5_toy_oracle(acceptance):
    bundle = build_hypergame(toy_game(), ["v"])
    sol = solve_semi_mdp(build_semi_mdp(bundle, DetectorConfig(), 0.2), bellman_tol=1e-6)
    expected = enumerate_semi_mdp(bundle, 0, 0.2, 2.0, horizon=300)
    err = abs(sol.value(0) - expected)
    ok = err <= 1e-3
    acceptance(5, "toy deception game vs finite-horizon enumeration", ok,
               f"semi-MDP {sol.value(0):.6f}, enumeration {expected:.6f}, |diff| {err:.1e}")
    assert ok


# 6 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_lower_bound(soccer_bundle, soccer_solution, acceptance):
    start = time.perf_counter()
    b, sol = soccer_bundle, soccer_solution
    cfg = DetectorConfig()
    vod = vod_vector(sol, b)
    states = np.argsort(-np.nan_to_num(vod, nan=-np.inf), kind="stable")[:20]
    failures, semi_failures, checks = [], 0, 0
    for s0 in states:
        vm = float(sol.value(int(s0)))
        for i, fill in enumerate(adversarial_menu(b)):
            comp = make_completion(b, fill, 3)
            rng = np.random.default_rng(np.random.SeedSequence([6, int(s0), i]))
            res = simulate_batch(b, sol.policy, comp, cfg, int(s0), 200, 10_000, rng)
            est = mean_and_half_width(res.continued_payoff)
            semi = mean_and_half_width(res.payoff)
            checks += 1
            if est.mean < vm - est.half_width:
                failures.append((int(s0), fill.name, est.mean, vm, est.half_width))
            semi_failures += semi.mean < vm - semi.half_width
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 600
    acceptance(6, "Monte Carlo payoff >= planner value - 95% half-width", ok,
               f"{checks} (state, completion) pairs x 10^4 rollouts, {len(failures)} failures "
               f"(semi-MDP accounting: {semi_failures} below), {elapsed:.0f}s")
    assert ok, failures


# 7 ------------------------------------------------------------------------

def test_criterion_7_vod_sanity(soccer_bundle, soccer_full_bundle, soccer_solution, acceptance):
    full = soccer_full_bundle
    sol_full = solve_semi_mdp(build_semi_mdp(full, DetectorConfig(), 0.2))
    vod_full = vod_vector(sol_full, full)
    vod = vod_vector(soccer_solution, soccer_bundle)
    zero_full = float(np.nanmax(np.abs(vod_full)))
    vmin, vmax = float(np.nanmin(vod)), float(np.nanmax(vod))
    exact_zero = int(np.sum(np.abs(vod) <= 1e-9))
    ok = zero_full <= 1e-9 and abs(vmin) <= soccer_bundle.tol and vmax > 0
    acceptance(7, "VoD sanity", ok,
               f"no hidden action: max |VoD| {zero_full:.1e}; hidden action: min {vmin:.2e} "
               f"(equilibrium tol {soccer_bundle.tol:g}, {exact_zero} states at 0), max {vmax:.4f}")
    assert ok


# 8 ------------------------------------------------------------------------

def test_criterion_8_max_vod(soccer_bundle, acceptance):
    start = time.perf_counter()
    b = soccer_bundle
    sol = solve_semi_mdp(build_semi_mdp(b, DetectorConfig(), 0.2, scale=100), bellman_tol=0.1)
    vod = vod_vector(sol, b)
    maps = {ball: vod_heatmap(b, sol, ball) for ball in (0, 1)}
    mean_p2 = float(np.nanmean(maps[0].values))
    mean_p1 = float(np.nanmean(maps[1].values))
    vmax = float(np.nanmax(vod))
    elapsed = time.perf_counter() - start
    ok = 50 <= vmax <= 90 and mean_p2 > mean_p1 and elapsed < 300
    acceptance(8, "maximal VoD (x100)", ok,
               f"max {vmax:.3f} vs reference {REF_MAX_VOD}; mean VoD P2 ball {mean_p2:.2f} "
               f"> P1 ball {mean_p1:.2f}; max per owner {maps[0].maximum:.2f} / "
               f"{maps[1].maximum:.2f}; {elapsed:.1f}s")
    assert ok


# 9 ------------------------------------------------------------------------

def test_criterion_9_strong_opponent(soccer_bundle, acceptance):
    rep = strong_opponent_report(soccer_bundle, 0.2, 2.0, scale=100, tol=0.1)
    d = rep.difference
    ok = d.min() == 0.0 and bool(np.all(d >= 0.0))
    acceptance(9, "strong-opponent comparison (x100)", ok,
               f"min {d.min():.3g}, max {d.max():.3f} vs reference {REF_STRONG_MAX}, "
               f"{int(np.sum(d > 0))} of {d.size} states differ")
    assert ok


# 10 -----------------------------------------------------------------------

def test_criterion_10_sensitivity(soccer_bundle, acceptance):
    b = soccer_bundle
    mdp = build_semi_mdp(b, DetectorConfig(), 0.2, scale=100)
    sol = solve_semi_mdp(mdp, bellman_tol=0.1)
    rows = sensitivity_sweep(b, sol.policy, [1, 5, 8, 12], 0.2, scale=100)
    parts, ok = [], True
    for r in rows:
        ref_diff, ref_val = REF_SENSITIVITY[int(r.threshold)]
        pct = 100 * r.degradation
        ok &= -1e-9 <= pct <= 10
        parts.append(f"c={r.threshold:g}: {r.max_difference:.3f} of {r.reference_value:.2f} "
                     f"({pct:.2f}%) [ref {ref_diff} of {ref_val}]")
    acceptance(10, "threshold sensitivity within [0%, 10%]", ok, "; ".join(parts))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
