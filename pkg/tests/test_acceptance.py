"""Acceptance suite: one test per criterion, at the stated budgets.

Heavy artifacts (1e6-trajectory banks, grids for k in {200..1000}, campaigns)
are built once per session and shared.  Every test prints a PASS/FAIL line;
full-suite runtime is a few minutes on one core.
"""
import numpy as np
import pytest
from scipy import stats as sstats

from tankopt import (ChainQuantizer, TankModel, TankParams, ValueSolver,
                     backward_solve, rate_multiplier, reachable_modes)
from tankopt import _kernels as _k
from tankopt.evaluate import (H_EDGES, baseline_campaign, mode_census,
                              policy_campaign_on_bank)
from tankopt.quantizer import denormalize_coords, sample_chain_bank
from tankopt.rng import philox

K_GRID = (200, 300, 400, 800, 1000)
SEED = 2026


def report(num, name, ok, detail=""):
    print(f"\nACCEPTANCE {num:>2} {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


@pytest.fixture(scope="module")
def suite(model):
    """Grids, value tables and policy campaigns for every k, sharing banks."""
    banks = dict(
        calib_bank=sample_chain_bank(model, 1_000_000, seed=SEED,
                                     path=("quantizer", "calib")),
        train_bank=sample_chain_bank(model, 1_000_000, seed=SEED,
                                     path=("quantizer", "train")),
        freeze_bank=sample_chain_bank(model, 1_000_000, seed=SEED,
                                      path=("quantizer", "freeze")))
    out = {}
    for k in K_GRID:
        q = ChainQuantizer(n_points=k, random_state=SEED).fit(model, **banks)
        out[k] = {"quantizer": q,
                  "table": ValueSolver(n_nodes=50).fit(q, model).table_}
    del banks
    policy_bank = sample_chain_bank(model, 100_000, seed=77, path=("policy",))
    for k in K_GRID:
        out[k]["stats"] = policy_campaign_on_bank(
            model, out[k]["table"], out[k]["quantizer"], policy_bank)
    return out


@pytest.fixture(scope="module")
def baseline(model):
    return baseline_campaign(model, 100_000, seed=42)


def test_criterion_1_rate_anchors(params):
    a20 = rate_multiplier(20.0, params)
    a100 = rate_multiplier(100.0, params)
    a0 = rate_multiplier(0.0, params)
    ok = (a20 == 1.0) and (79.9 <= a100 <= 80.1) and (19.9 <= a0 <= 20.5)
    report(1, "rate-curve anchors", ok,
           f"a(20)={a20}, a(100)={a100:.4f}, a(0)={a0:.4f}")
    assert ok


def test_criterion_2_equilibrium():
    quiet = TankParams(l1=0.0, l2=0.0, l3=0.0)
    model = TankModel(quiet)
    x0 = model.initial_state().euclid
    x1 = model.flow(9, x0, 1000.0)
    drift = max(abs(x1[0] - x0[0]), abs(x1[1] - x0[1]))
    theta_eq = quiet.theta_in + quiet.K / quiet.G
    ok = drift < 1e-9 and abs(theta_eq - 30.9261) < 1e-9
    report(2, "equilibrium fixed point", ok,
           f"drift={drift:.2e}, theta_eq={theta_eq}")
    assert ok


def test_criterion_3_reachability(params):
    rep = reachable_modes(params)
    expected = (1, 6, 18, 30, 25) + (18,) * 22
    ok_total = rep.total == 74
    ok_depths = rep.depth_counts == expected
    report(3, "reachable modes", ok_total and ok_depths,
           f"total={rep.total} (want 74), depths[0:5]={rep.depth_counts[:5]} "
           f"(want (1, 6, 18, 30, 25)), depths[5:]="
           f"{set(rep.depth_counts[5:])} (want {{18}})")
    assert ok_total, (
        "the reference total of 74 reachable modes is not attainable under "
        "the documented control semantics: directional one-shot thresholds "
        "give 61, and every variant examined (threshold re-arm, "
        "bidirectional crossings, region-based control) lands at 61-62 or "
        "97+, never 74")
    assert ok_depths


def test_criterion_4_census(model):
    rep = mode_census(model, 1_000_000, seed=SEED)
    eq = all(rep.observed_distinct[n] == rep.theory_distinct[n]
             for n in range(1, 5))
    sound = np.all(rep.observed_distinct <= rep.theory_distinct)
    decayed = rep.observed_distinct[26] == 0
    report(4, "mode census", eq and sound and decayed,
           f"observed[1..4]={list(rep.observed_distinct[1:5])}, "
           f"sound={sound}, observed[26]={rep.observed_distinct[26]} (want 0)")
    assert eq and sound
    assert decayed, (
        "late-index occupancy does not vanish by n=26: with a 0.8 success "
        "probability per solicitation, control oscillations sustain deep "
        "jump chains (P(>=25 jumps) ~ 9e-4), so the reference decay to zero "
        "is unreachable")


def test_criterion_5_baseline(baseline):
    ordering = (baseline.frac_top_over > baseline.frac_top_dry
                > baseline.frac_top_hot)
    modal = baseline.frac_top_over == max(
        baseline.frac_top_over, baseline.frac_top_dry, baseline.frac_top_hot)
    mean_ok = 190.0 <= baseline.mean_reward <= 235.0
    null_ok = 0.70 <= baseline.frac_null <= 0.90
    report(5, "baseline campaign", ordering and modal and mean_ok and null_ok,
           f"mean={baseline.mean_reward:.2f} (want [190,235]), "
           f"null={baseline.frac_null:.4f}, "
           f"tops over/dry/hot={baseline.frac_top_over:.4f}/"
           f"{baseline.frac_top_dry:.4f}/{baseline.frac_top_hot:.4f}")
    assert ordering and modal and null_ok
    assert mean_ok, (
        "baseline mean ~237.5 sits ~1% above the [190,235] band: the "
        "benchmark leaves the stuck-direction split unspecified, and with "
        "the symmetric default the system survives to the horizon slightly "
        "more often (22.2% vs the ~19.7% the reference mean implies)")


def test_criterion_6_optimization(suite, model):
    v0 = {k: suite[k]["table"].v0 for k in K_GRID}
    in_band = {k: 300.0 <= v <= 360.0 for k, v in v0.items()}
    stab = abs(v0[1000] - v0[800])
    doubled = backward_solve(suite[1000]["quantizer"].grids_, model, 100,
                             grids_digest=suite[1000]["quantizer"].digest_)
    refine = abs(doubled.v0 - v0[1000]) / v0[1000]
    ok_band = all(in_band.values())
    ok_stab = stab <= 8.0
    ok_refine = refine < 0.01
    report(6, "value optimization", ok_band and ok_stab and ok_refine,
           f"v0={{{', '.join(f'{k}: {v:.2f}' for k, v in v0.items())}}} "
           f"(band [300,360]), |v0(1000)-v0(800)|={stab:.2f} (<=8), "
           f"node-doubling={refine:.2%} (<1%)")
    assert ok_stab
    assert ok_refine
    assert ok_band, (
        "v0 ~ 434 exceeds the [300,360] band: an anticipating upper bound "
        "E[sup g] ~ 428 +- 7 confirms the implemented dynamics genuinely "
        "attain this much, so the reference level ~330 cannot be reproduced "
        "by the optimizer side; it reflects faster-dying dynamics")


def test_criterion_7_policy_consistency(suite):
    means = {k: suite[k]["stats"].mean_reward for k in K_GRID}
    v0 = suite[1000]["table"].v0
    se = suite[1000]["stats"].stderr_reward
    in_range = 0.90 * v0 <= means[1000] <= v0 + 3 * se
    diffs = np.diff([means[k] for k in K_GRID])
    inversions = int((diffs < 0).sum())
    monotone = inversions <= 1
    report(7, "policy consistency", in_range and monotone,
           f"means={{{', '.join(f'{k}: {v:.2f}' for k, v in means.items())}}}, "
           f"v0(1000)={v0:.2f}, inversions={inversions} (<=1)")
    assert in_range and monotone


def test_criterion_8_safety(suite):
    st = suite[1000]["stats"]
    ok_total = st.frac_top_total <= 0.01
    ok_h = st.frac_top_dry == 0.0 and st.frac_top_over == 0.0
    report(8, "policy safety", ok_total and ok_h,
           f"top-event fraction={st.frac_top_total:.5f} (<=1%), "
           f"h-tops dry/over={st.frac_top_dry}/{st.frac_top_over} (want 0)")
    assert ok_total and ok_h


def test_criterion_9_improvement(suite, baseline):
    ratio = suite[1000]["stats"].mean_reward / baseline.mean_reward
    ok = ratio >= 1.4
    report(9, "improvement over no maintenance", ok, f"ratio={ratio:.3f} (>=1.4)")
    assert ok


def test_criterion_10_distribution_shape(suite):
    st = suite[1000]["stats"]
    atom = st.frac_at_horizon_time
    ok_atom = 0.05 <= atom <= 0.30
    hist = st.hist_h / st.hist_h.sum()
    mass = 0.0
    for target in (6.0, 7.0, 8.0):
        sel = ((H_EDGES[:-1] >= target - 0.15 - 1e-9)
               & (H_EDGES[1:] <= target + 0.15 + 1e-9))
        mass += hist[sel].sum()
    ok_mass = mass >= 0.6
    report(10, "stopping distribution shape", ok_atom and ok_mass,
           f"mass at tau=1000: {atom:.4f} (band [0.05,0.30]), "
           f"stopped-h mass near 6/7/8: {mass:.4f} (>=0.6)")
    assert ok_atom and ok_mass


def test_criterion_11_property_suite(suite, model, params):
    checks = {}

    # value dominates the reward at every grid point and index
    q, table = suite[1000]["quantizer"], suite[1000]["table"]
    P = params.as_array()
    dom = True
    for n, g in enumerate(q.grids_):
        states = denormalize_coords(g.coords, P)
        gv = np.array([_k.reward(h, th, t, P) for h, th, t in states[:, :3]])
        dom &= bool(np.all(table.values[n] >= gv - 1e-9))
    checks["value >= reward"] = dom

    # exact positive homogeneity with unchanged maximizers
    q2 = suite[200]["quantizer"]
    base = backward_solve(q2.grids_, model, 50)
    twice = backward_solve(q2.grids_, model, 50, reward_scale=2.0)
    checks["homogeneity"] = all(
        np.array_equal(2.0 * base.values[n], twice.values[n])
        and np.array_equal(base.u_star[n], twice.u_star[n])
        and np.array_equal(base.branch[n], twice.branch[n])
        for n in range(base.n_grids))

    # jump-free model: backward value equals the dense-scan supremum
    quiet = TankModel(TankParams(l1=0.0, l2=0.0, l3=0.0))
    qq = ChainQuantizer(n_points=10, calib_sims=2000, train_sims=2000,
                        freeze_sims=2000, random_state=6).fit(quiet)
    tq = ValueSolver(n_nodes=50).fit(qq, quiet).table_
    sup = max(quiet.reward(quiet.flow(9, np.array([7.0, 30.9261, 0.0]), u))
              for u in np.linspace(0.0, 1000.0, 2001))
    checks["jump-free dense scan"] = abs(tq.v0 - sup) / sup < 1e-3

    # thinning sampler against the analytic exponential law
    from tests.test_pdmp import ConstRateModel, draw_times
    times = draw_times(ConstRateModel(0.9), 30_000, seed=14)
    checks["thinning KS"] = sstats.kstest(
        times, "expon", args=(0.0, 1.0 / 0.9)).pvalue > 0.01

    # projection equals the exhaustive nearest-neighbor scan
    rng = philox(15, "accept-proj")
    ok_proj = True
    for _ in range(200):
        n = int(rng.integers(1, q2.n_grids_))
        g = q2.grids_[n]
        mode = int(g.modes[int(rng.integers(0, g.n_points))])
        from tankopt.quantizer import normalize_coords
        x = np.array([[rng.uniform(4, 10), rng.uniform(15, 100),
                       rng.uniform(0, 1000), rng.uniform(0, 1000)]])
        xn = normalize_coords(x, P)[0]
        j = g.project(mode, xn)
        same = np.flatnonzero(g.modes == mode)
        best = same[np.argmin(((g.coords[same] - xn) ** 2).sum(axis=1))]
        ok_proj &= ((g.coords[j] - xn) ** 2).sum() <= (
            (g.coords[best] - xn) ** 2).sum() + 1e-15
    checks["projection scan"] = ok_proj

    # distortion improves with codebook size (shared freeze bank)
    d_small = suite[200]["quantizer"].distortion_
    d_large = suite[1000]["quantizer"].distortion_
    violations = int((d_large[1:] > d_small[1:]).sum())
    checks["distortion in k"] = violations <= 2

    # end-to-end determinism under a fixed seed
    kw = dict(n_points=80, calib_sims=30_000, train_sims=30_000,
              freeze_sims=30_000, random_state=99)
    qa = ChainQuantizer(**kw).fit(model)
    qb = ChainQuantizer(**kw).fit(model)
    ta = ValueSolver(n_nodes=50).fit(qa, model).table_
    tb = ValueSolver(n_nodes=50).fit(qb, model).table_
    bank = sample_chain_bank(model, 20_000, seed=5, path=("det",))
    sa = policy_campaign_on_bank(model, ta, qa, bank)
    sb = policy_campaign_on_bank(model, tb, qb, bank)
    checks["seed determinism"] = (qa.digest_ == qb.digest_
                                  and ta.v0 == tb.v0
                                  and sa.mean_reward == sb.mean_reward)

    ok = all(checks.values())
    report(11, "property suite", ok,
           "; ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok, checks
