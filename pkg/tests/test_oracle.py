import numpy as np
import pytest
from hypothesis import given, settings

from gapcore.domains import CakeParams, RandomMdpParams, make_cake_mdp, make_random_mdp
from gapcore.mdp import FiniteMdp
from gapcore.operators import Kind, OperatorSpec, bellman_backup, lazy_backup
from gapcore.oracle import (
    REPORT_HEADER, PropertyReport, check_contraction, check_gap_increasing, check_gap_scaling,
    check_lazy_multiplicity, check_optimality_preserving, converge, check_value_bound,
    exact_policy_evaluation, exhaustive_policy_search, global_battery, high_precision_vi,
    instance_battery, family_specs, lazy_fixed_points, lipschitz_ratios,
)

from .strategies import small_mdps


def test_policy_evaluation_on_cake(cake):
    assert exact_policy_evaluation(cake, [1, 0])[0].max() == pytest.approx(0.0, abs=1e-12)
    q = exact_policy_evaluation(cake, [0, 0])
    assert q[0, 0] == pytest.approx(-0.4 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        exact_policy_evaluation(cake, [0, 2])
    with pytest.raises(ValueError):
        exact_policy_evaluation(cake, [0])


def test_policy_evaluation_self_loop():
    mdp = FiniteMdp(np.ones((1, 1, 1)), np.array([[0.7]]), 0.9)
    assert exact_policy_evaluation(mdp, [0])[0, 0] == pytest.approx(7.0, abs=1e-12)


def test_cake_truth_and_oracles_agree(cake):
    enum = exhaustive_policy_search(cake)
    vi = high_precision_vi(cake, tol=1e-10)
    assert enum.q_star[0].tolist() == pytest.approx([-0.1, 0.0], abs=1e-12)
    assert np.max(np.abs(enum.q_star - vi.q_star)) <= 1e-9
    assert enum.method == "policy-enumeration" and vi.method == "high-precision-vi"
    assert enum.optimal_policy[0] == 1


def test_oracles_agree_on_corpus(corpus):
    for _, mdp in corpus:
        enum = exhaustive_policy_search(mdp)
        vi = high_precision_vi(mdp)
        assert np.max(np.abs(enum.q_star - vi.q_star)) <= 1e-8
        # internal consistency: Q* is a fixed point of T
        assert np.max(np.abs(bellman_backup(mdp, enum.q_star) - enum.q_star)) <= 1e-9
        assert np.array_equal(enum.v_star, enum.q_star.max(axis=1))


def test_enumeration_refuses_large_instances():
    big = make_random_mdp(RandomMdpParams(n_states=20, n_actions=3, seed=0, discount=0.9))
    with pytest.raises(ValueError, match="3\\^20"):
        exhaustive_policy_search(big)
    six = make_random_mdp(RandomMdpParams(n_states=6, n_actions=3, seed=0, discount=0.9))
    assert np.array_equal(high_precision_vi(six).optimal_policy, exhaustive_policy_search(six).optimal_policy)
    # the large instance still has a VI truth
    assert high_precision_vi(big).q_star.shape == (20, 3)


def test_zero_discount_vi_returns_rewards():
    mdp = make_random_mdp(RandomMdpParams(seed=2, discount=0.0))
    assert np.array_equal(high_precision_vi(mdp).q_star, mdp.reward)


def test_consistent_preserves_optimality_on_5x3_corpus():
    for i in range(100):
        mdp = make_random_mdp(RandomMdpParams(5, 3, seed=i, discount=0.9))
        rep = check_optimality_preserving(mdp, OperatorSpec(Kind.CONSISTENT), trials=3, seed=i)
        assert rep.passed, rep.failures[:3]


def test_al_preserves_optimality_and_scales_gaps_on_5x3_corpus():
    for i in range(100):
        mdp = make_random_mdp(RandomMdpParams(5, 3, seed=i, discount=0.9))
        spec = OperatorSpec(Kind.ADVANTAGE_LEARNING, alpha=0.7)
        run = converge(mdp, spec, trials=3, seed=i)
        assert check_optimality_preserving(mdp, spec, run=run).passed
        assert check_gap_scaling(mdp, 0.7, run=run).passed


def test_overshoot_fails_at_every_state(cake):
    mdp = make_random_mdp(RandomMdpParams(4, 2, seed=3))
    rep = check_optimality_preserving(mdp, OperatorSpec(Kind.BELLMAN, overshoot=0.1), trials=2)
    failed_states = {(r.trial, r.state) for r in rep.failures if r.check.startswith("optimality_value")}
    assert failed_states == {(t, x) for t in range(2) for x in range(4)}


def test_gap_increase_reports(cake):
    rep = check_gap_increasing(cake, OperatorSpec(Kind.CONSISTENT), trials=2)
    assert rep.passed
    assert {(x, a) for _, x, a in rep.notes["strict"]} == {(0, 0)}
    al = check_gap_increasing(cake, OperatorSpec(Kind.ADVANTAGE_LEARNING, alpha=0.5), trials=1)
    row = next(r for r in al.rows if (r.state, r.action) == (0, 0))
    assert row.observed == pytest.approx(0.2, abs=1e-9) and row.expected == pytest.approx(0.1, abs=1e-12)
    bell = check_gap_increasing(cake, OperatorSpec(Kind.BELLMAN), trials=2)
    assert bell.passed and bell.notes["strict"] == []


@settings(max_examples=20)
@given(small_mdps())
def test_bellman_gap_equality(mdp):
    rep = check_gap_increasing(mdp, OperatorSpec(Kind.BELLMAN), trials=2)
    assert all(abs(r.observed - r.expected) <= 1e-6 for r in rep.rows)


def test_contraction_ratios(cake, corpus):
    assert check_contraction(cake, Kind.CONSISTENT, 1000) <= 0.5 + 1e-9
    for _, mdp in corpus[:20]:
        assert check_contraction(mdp, Kind.BELLMAN, 200) <= mdp.discount + 1e-9
    with pytest.raises(ValueError):
        check_contraction(cake, Kind.ADVANTAGE_LEARNING)


def test_coinciding_pairs_are_skipped(cake):
    Q = np.random.default_rng(0).normal(size=(3, 2, 2))
    ratios = lipschitz_ratios(lambda q: bellman_backup(cake, q), Q, Q.copy())
    assert np.all(np.isnan(ratios))


def test_lazy_backup_has_two_fixed_points(cake):
    q1, q2, (x, a) = lazy_fixed_points(cake, 0.5)
    assert (x, a) == (0, 0)
    assert not np.array_equal(q1, q2)
    for Q in (q1, q2):
        assert np.max(np.abs(lazy_backup(cake, Q, 0.5) - Q)) <= 1e-12
    assert check_lazy_multiplicity(cake, 0.5).passed


def test_value_bound_holds_along_runs(corpus):
    for seed, mdp in corpus[:10]:
        run = converge(mdp, OperatorSpec(Kind.PERSISTENT_AL, alpha=0.9), trials=3, seed=seed)
        assert check_value_bound(mdp, run, seed).passed


def test_instance_battery_row_accounting(corpus):
    specs = family_specs()
    seed, mdp = corpus[0]
    rep = instance_battery(mdp, seed, specs, sweeps=500)
    assert len(rep.rows) == len({r.check for r in rep.rows}) == 71
    assert rep.passed, rep.failures[:3]


def test_global_battery_passes():
    rep = global_battery()
    assert rep.passed, rep.failures
    assert len(rep.rows) == 40


def test_report_csv(tmp_path):
    rep = PropertyReport()
    rep.add("x", 1, 0, 2, 3, 0.5, 0.25, True)
    rep.add("y", 1, 0, 2, 3, 1.0, 0.25, False, -0.75)
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert lines[2] == "y,1,0,2,3,1,0.25,false"
    assert not rep.passed and rep.worst().check == "y"
