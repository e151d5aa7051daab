"""Acceptance criteria, one test each; every test records a PASS/FAIL line."""

import itertools
import time

import numpy as np
import pytest

from gapcore.domains import (
    DEMO_V_STAR, CakeParams, cake_closed_forms, divergence_demo, greedy_value_errors, make_cake_mdp,
    make_corpus,
)
from gapcore.domains.bicycle_experiment import DEFAULT_OPERATORS, make_bicycle_grid_experiment
from gapcore.mdp import action_gaps, state_values
from gapcore.operators import (
    CONDITION_TOL, Kind, OperatorSpec, bellman_backup, compare_to_reference, consistent_backup,
    tabular_backup, theorem1_check,
)
from gapcore.oracle import (
    check_contraction, check_gap_scaling, check_lazy_multiplicity, check_optimality_preserving,
    check_value_bound, converge, exhaustive_policy_search, family_specs, high_precision_vi,
    lazy_fixed_points, random_q_tables,
)
from gapcore.solver import LearningConfig, MdpEnv, q_learning, value_iteration

from .acceptance_log import verdict

ALPHAS = (0.1, 0.5, 0.9)
SPECS = family_specs(ALPHAS, cqvi_samples=4, seed=0)


@pytest.fixture(scope="module")
def corpus():
    return make_corpus(100, seed=0)


@pytest.fixture(scope="module")
def truths(corpus):
    return {i: exhaustive_policy_search(mdp) for i, mdp in corpus}


@pytest.fixture(scope="module")
def family_runs(corpus):
    """Three random starts per (instance, operator), 2000 sweeps, timed as one batch."""
    start = time.perf_counter()
    runs = {}
    for i, mdp in corpus:
        Q0 = random_q_tables(mdp, 3, np.random.default_rng([7, i]))
        for spec in SPECS:
            runs[i, spec.label] = converge(mdp, spec, sweeps=2000, Q0=Q0)
    return runs, time.perf_counter() - start


def test_criterion_01_cake_closed_forms():
    start = time.perf_counter()
    cake = make_cake_mdp(CakeParams(0.5, 0.1))
    Qb, _ = value_iteration(lambda q: bellman_backup(cake, q), np.zeros((2, 2)), tol=1e-12)
    Qc, _ = value_iteration(lambda q: consistent_backup(cake, q), np.zeros((2, 2)), tol=1e-12)
    elapsed = time.perf_counter() - start
    errs = [abs(Qb[0, 0] + 0.1), abs(Qb[0, 1]), abs(action_gaps(Qb)[0] - 0.1),
            abs(Qc[0, 0] + 2 / 15), abs(action_gaps(Qc)[0] - 2 / 15)]
    # the same numbers over the parameter grid, against the formulas and the enumeration oracle
    for g, e in itertools.product((0.1, 0.5, 0.9, 0.99), (0.01, 0.1, 1.0)):
        mdp = make_cake_mdp(CakeParams(g, e))
        Qb_, _ = value_iteration(lambda q: bellman_backup(mdp, q), np.zeros((2, 2)), max_sweeps=100_000,
                                 tol=1e-14)
        Qc_, _ = value_iteration(lambda q: consistent_backup(mdp, q), np.zeros((2, 2)),
                                 max_sweeps=100_000, tol=1e-14)
        truth = exhaustive_policy_search(mdp)
        errs += [abs(Qb_[0, 0] + e), abs(Qb_[0, 1]), abs(Qc_[0, 0] + e / (1 - g / 2)),
                 np.max(np.abs(Qb_ - truth.q_star)),
                 np.max(np.abs(Qc_ - cake_closed_forms(CakeParams(g, e))["q_consistent"]))]
    worst = max(errs)
    ok = worst <= 1e-9 and elapsed < 1.0
    verdict(1, ok, f"worst error {worst:.2e} (tol 1e-9); gamma=0.5 run {elapsed:.3f}s (< 1s)")
    assert ok


def test_criterion_02_sufficient_conditions(corpus):
    start = time.perf_counter()
    violations = {}
    worst = 0.0
    for i, mdp in corpus:
        Qs = random_q_tables(mdp, 5, np.random.default_rng([11, i]))
        for spec in SPECS:
            # sampled CQVI against sampled QVI from the same draws; the rest against T
            r = theorem1_check(mdp, Qs, spec)
            violations[spec.label] = violations.get(spec.label, 0) + r.n_violations
            worst = max(worst, r.cond1_violation, r.cond2_violation)
        # exact-expectation CQVI on the identity embedding against the tabular Bellman backup
        exact = compare_to_reference(bellman_backup(mdp, Qs),
                                     tabular_backup(mdp, OperatorSpec(Kind.CQVI))(Qs), Qs, mdp.discount)
        violations["cqvi(exact)"] = violations.get("cqvi(exact)", 0) + exact.n_violations
        worst = max(worst, exact.cond1_violation, exact.cond2_violation)
    elapsed = time.perf_counter() - start
    total = sum(violations.values())
    ok = total == 0 and elapsed < 30.0
    verdict(2, ok, f"{total} violations over 100 MDPs x 5 Q x {len(violations)} operators "
                   f"(worst excess {worst:.1e}, tol {CONDITION_TOL:g}); {elapsed:.1f}s (< 30s)")
    assert ok, {k: v for k, v in violations.items() if v}


def test_criterion_03_optimality_preservation(corpus, truths, family_runs):
    runs, elapsed = family_runs
    failures = 0
    checked = 0
    for i, mdp in corpus:
        for spec in SPECS:
            rep = check_optimality_preserving(mdp, spec, truth=truths[i], run=runs[i, spec.label], mdp_seed=i)
            checked += sum(r.trial >= 0 for r in rep.rows)
            failures += len(rep.failures)
    ok = failures == 0 and elapsed < 300.0
    verdict(3, ok, f"{failures} failures in {checked} value/suboptimal-action checks; "
                   f"runs took {elapsed:.1f}s (< 300s)")
    assert ok


def test_criterion_04_gap_increase_magnitude(corpus, truths, family_runs):
    runs, _ = family_runs
    worst = 0.0
    for i, mdp in corpus:
        for a in ALPHAS:
            spec = OperatorSpec(Kind.ADVANTAGE_LEARNING, alpha=a)
            rep = check_gap_scaling(mdp, a, truth=truths[i], run=runs[i, spec.label], mdp_seed=i)
            worst = max(worst, max(abs(r.observed - r.expected) for r in rep.rows))
    cake = make_cake_mdp(CakeParams(0.5, 0.1))
    Q, _ = value_iteration(lambda q: consistent_backup(cake, q), np.zeros((2, 2)), tol=1e-14)
    excess = action_gaps(Q)[0] - 0.1
    predicted = 0.1 * 0.25 / 0.75
    cake_err = abs(excess - predicted)
    ok = worst <= 1e-5 and excess > 0 and cake_err <= 1e-9
    verdict(4, ok, f"AL gap vs gap/(1-alpha) worst {worst:.1e} (tol 1e-5); cake excess {excess:.10f} "
                   f"vs {predicted:.10f}")
    assert ok


def test_criterion_05_contraction(corpus):
    worst = -np.inf
    for i, mdp in corpus:
        ratio = check_contraction(mdp, Kind.CONSISTENT, pairs=1000, seed=i)
        worst = max(worst, ratio - mdp.discount)
    ok = worst <= 1e-9
    verdict(5, ok, f"max (ratio - gamma) = {worst:.2e} over 100 MDPs x 1000 pairs (tol 1e-9)")
    assert ok


def test_criterion_06_value_bound(corpus, family_runs):
    runs, _ = family_runs
    failures = 0
    tightest = np.inf
    for i, mdp in corpus:
        for spec in SPECS:
            rep = check_value_bound(mdp, runs[i, spec.label], i)
            failures += len(rep.failures)
            tightest = min(tightest, min(r.expected - r.observed for r in rep.rows))
    ok = failures == 0
    verdict(6, ok, f"{failures} violations; smallest headroom {tightest:.3g}")
    assert ok


def test_criterion_07_divergence():
    over = divergence_demo(overshoot=0.1)
    over_err = abs(over.values[-1][0] - (DEMO_V_STAR + 0.2))
    bad = greedy_value_errors(divergence_demo(alpha_prime=1.5))
    late_floor = float(bad[50:].min())
    control = float(greedy_value_errors(divergence_demo(alpha_prime=0.5))[-1])
    ok = over_err <= 1e-8 and late_floor > 0.1 and control <= 1e-8
    verdict(7, ok, f"overshoot limit error {over_err:.1e}; alpha'=1.5 min error after sweep 50 "
                   f"{late_floor:.3f} (> 0.1); control error {control:.1e}")
    assert ok


def test_criterion_08_lazy_multiplicity():
    cake = make_cake_mdp(CakeParams(0.5, 0.1))
    q1, q2, (x, a) = lazy_fixed_points(cake, 0.5)
    from gapcore.operators import lazy_backup

    r1 = np.max(np.abs(lazy_backup(cake, q1, 0.5) - q1))
    r2 = np.max(np.abs(lazy_backup(cake, q2, 0.5) - q2))
    ok = r1 <= 1e-12 and r2 <= 1e-12 and not np.array_equal(q1, q2)
    ok = ok and check_lazy_multiplicity(cake, 0.5).passed
    verdict(8, ok, f"Q*(x{x + 1},a{a + 1}) = {q1[x, a]:.4f} and {q2[x, a]:.4f} both fixed "
                   f"(residuals {r1:.1e}, {r2:.1e})")
    assert ok


def _median_gap(rule, alpha, seeds=range(10)):
    cake = make_cake_mdp(CakeParams(0.5, 0.1))
    finals = []
    for seed in seeds:
        cfg = LearningConfig(rule, alpha, step_size=0.001, exploration=0.3, episodes=8000, max_steps=30,
                             seed=seed, gap_states=(0,))
        finals.append(q_learning(MdpEnv(cake), cfg)[1].mean_gap[-1])
    return float(np.median(finals))


def test_criterion_09_q_learning_rules():
    start = time.perf_counter()
    bell = _median_gap("bellman", 0.0)
    al = _median_gap("al", 0.5)
    elapsed = time.perf_counter() - start
    ok = abs(bell - 0.1) <= 0.05 and abs(al - 0.2) <= 0.05 and elapsed < 60.0
    verdict(9, ok, f"median gap Bellman {bell:.4f} (0.1 +- 0.05), AL(0.5) {al:.4f} (0.2 +- 0.05); "
                   f"{elapsed:.1f}s (< 60s)")
    assert ok


@pytest.mark.slow
def test_criterion_10_bicycle_desk():
    start = time.perf_counter()
    runs = {}
    for spec in DEFAULT_OPERATORS:
        runs[spec.kind] = make_bicycle_grid_experiment("desk", spec).run()
    final_fall = {k.value: r.checkpoints[-1].fall_frequency for k, r in runs.items()}
    excess = max(c.ordering_excess for r in runs.values() for c in r.checkpoints)
    n_checkpoints = {k.value: len(r.checkpoints) for k, r in runs.items()}
    part_a = final_fall["cqvi"] <= final_fall["bellman"]
    part_b = excess <= CONDITION_TOL and all(n == 3 for n in n_checkpoints.values())
    ok = part_a and part_b
    verdict(10, ok, f"final fall frequency cqvi {final_fall['cqvi']:.2f} <= bellman "
                    f"{final_fall['bellman']:.2f}: {part_a}; max ordering excess over QVI {excess:.1e} "
                    f"at every checkpoint: {part_b}; {time.perf_counter() - start:.0f}s")
    assert ok


def test_criterion_11_delta_rules_cover_large_scale_results():
    # Not reproducible here; coverage is the three online error rules.
    cake = make_cake_mdp(CakeParams(0.5, 0.1))
    env = MdpEnv(cake)
    base = dict(episodes=300, max_steps=30, seed=2)
    bell = q_learning(env, LearningConfig("bellman", **base))[0]
    al0 = q_learning(env, LearningConfig("al", 0.0, **base))[0]
    pal0 = q_learning(env, LearningConfig("pal", 0.0, **base))[0]
    pal = q_learning(env, LearningConfig("pal", 0.5, step_size=0.001, exploration=0.3, episodes=8000,
                                         max_steps=30, seed=0, gap_states=(0,)))[1].mean_gap[-1]
    rules_agree = np.array_equal(bell, al0) and np.array_equal(bell, pal0)
    ok = rules_agree and 0.1 - 0.05 <= pal
    verdict(11, ok, f"not reproducible at scale; Bellman/AL/PAL rules coincide at alpha=0: {rules_agree}; "
                    f"PAL(0.5) learned gap {pal:.4f} >= true gap - 0.05")
    assert ok
