"""Ground truth for small MDPs and the property checks built on it.

Two independent routes to ``Q*`` are provided. :func:`exhaustive_policy_search`
enumerates deterministic policies and solves each one's linear system; it
shares no code with the iterative solvers. :func:`high_precision_vi` runs its
own value iteration on ``V`` with a stopping rule that bounds the error.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .mdp import FiniteMdp, action_gaps, greedy_policy, state_values
from .operators import (
    ALPHA_KINDS, Kind, OperatorSpec, lazy_backup, tabular_backup, theorem1_check,
)
from .solver import fmt, value_iteration

MAX_POLICIES = 10**6
SUBOPTIMAL_GAP = 0.01
VALUE_TOL = 1e-6
STRICT_MARGIN = 1e-4
CONTRACTION_SLACK = 1e-9


@dataclass
class GroundTruth:
    q_star: np.ndarray
    v_star: np.ndarray
    gaps: np.ndarray
    optimal_policy: np.ndarray
    method: str


def _truth_from_v(mdp: FiniteMdp, V: np.ndarray, method: str) -> GroundTruth:
    Q = mdp.reward + mdp.discount * mdp.transition @ V
    return GroundTruth(Q, Q.max(axis=1), action_gaps(Q), greedy_policy(Q), method)


def _policy_values(mdp: FiniteMdp, policies: np.ndarray) -> np.ndarray:
    """``V^pi`` for a batch of policies ``(B, S)`` by direct linear solves."""
    S = mdp.n_states
    rows = np.arange(S)
    P_pi = mdp.transition[rows, policies]  # (B, S, S)
    R_pi = mdp.reward[rows, policies]  # (B, S)
    A = np.eye(S) - mdp.discount * P_pi
    return np.linalg.solve(A, R_pi[..., None])[..., 0]


def exact_policy_evaluation(mdp: FiniteMdp, pi) -> np.ndarray:
    """``Q^pi`` for a deterministic policy, via one direct solve for ``V^pi``."""
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (mdp.n_states,) or pi.min() < 0 or pi.max() >= mdp.n_actions:
        raise ValueError(f"policy must map each of {mdp.n_states} states to an action "
                         f"in 0..{mdp.n_actions - 1}")
    V = _policy_values(mdp, pi[None])[0]
    Q = mdp.reward + mdp.discount * mdp.transition @ V
    residual = np.max(np.abs(Q - (mdp.reward + mdp.discount * mdp.transition @ Q[np.arange(mdp.n_states), pi])))
    if not residual <= 1e-10 * max(1.0, np.max(np.abs(Q))):
        raise FloatingPointError(f"policy evaluation residual {residual:.3g} exceeds 1e-10")
    return Q


def exhaustive_policy_search(mdp: FiniteMdp, chunk: int = 4096) -> GroundTruth:
    """Evaluate every deterministic policy; ``V*`` is the pointwise maximum."""
    S, A = mdp.n_states, mdp.n_actions
    count = A**S
    if count > MAX_POLICIES:
        raise ValueError(f"{A}^{S} = {count} policies exceeds the enumeration bound {MAX_POLICIES}")
    best = np.full(S, -np.inf)
    it = itertools.product(range(A), repeat=S)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        best = np.maximum(best, _policy_values(mdp, block).max(axis=0))
    return _truth_from_v(mdp, best, "policy-enumeration")


def high_precision_vi(mdp: FiniteMdp, tol: float = 1e-12, max_sweeps: int = 1_000_000) -> GroundTruth:
    """Value iteration on ``V`` stopped once ``|V_k - V_{k-1}| <= tol (1 - gamma) / gamma``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    g = mdp.discount
    V = np.zeros(mdp.n_states)
    stop = np.inf if g == 0 else tol * (1.0 - g) / g
    for _ in range(max_sweeps):
        V_next = (mdp.reward + g * mdp.transition @ V).max(axis=1)
        delta = np.max(np.abs(V_next - V))
        V = V_next
        if delta <= stop or delta == 0.0:
            break
    return _truth_from_v(mdp, V, "high-precision-vi")


def ground_truth(mdp: FiniteMdp) -> GroundTruth:
    """Enumeration where it is affordable, tight value iteration otherwise."""
    if mdp.n_actions**mdp.n_states <= MAX_POLICIES:
        return exhaustive_policy_search(mdp)
    return high_precision_vi(mdp)


# --------------------------------------------------------------------------- reports

@dataclass
class ReportRow:
    check: str
    mdp_seed: int
    trial: int
    state: int
    action: int
    observed: float
    expected: float
    passed: bool
    margin: float = 0.0  # slack of the comparison; negative on failure

    def as_csv(self):
        return [self.check, self.mdp_seed, self.trial, self.state, self.action,
                fmt(self.observed), fmt(self.expected), "true" if self.passed else "false"]


REPORT_HEADER = ["check", "mdp_seed", "trial", "state", "action", "observed", "expected", "pass"]


@dataclass
class PropertyReport:
    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]

    def add(self, *args, **kw):
        self.rows.append(ReportRow(*args, **kw))

    def extend(self, other: "PropertyReport"):
        self.rows.extend(other.rows)
        return self

    def worst(self) -> ReportRow | None:
        if not self.rows:
            return None
        return min(self.rows, key=lambda r: (r.passed, r.margin))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow(r.as_csv())


def _value_envelope(mdp: FiniteMdp) -> float:
    return max(mdp.reward_bound, 1e-3) / (1.0 - mdp.discount)


def random_q_tables(mdp: FiniteMdp, n: int, rng) -> np.ndarray:
    """``n`` tables uniform in ``±R_max / (1 - gamma)``."""
    b = _value_envelope(mdp)
    return rng.uniform(-b, b, size=(n, mdp.n_states, mdp.n_actions))


@dataclass
class ConvergedRun:
    spec: OperatorSpec
    Q0: np.ndarray
    Q: np.ndarray
    trace: object


def converge(mdp: FiniteMdp, spec: OperatorSpec, trials=3, sweeps=2000, seed=0, Q0=None) -> ConvergedRun:
    """Run ``trials`` independent starts (batched) for up to ``sweeps`` sweeps.

    A run stops early only once an iterate reproduces itself exactly.
    """
    if Q0 is None:
        Q0 = random_q_tables(mdp, trials, np.random.default_rng(seed))
    backup = tabular_backup(mdp, spec)
    Q, trace = value_iteration(backup, Q0, max_sweeps=sweeps, tol=None,
                               callback=lambda k, Q, t: t.supnorm_delta[-1] == 0.0)
    return ConvergedRun(spec, np.asarray(Q0), Q, trace)


def check_optimality_preserving(mdp, spec, trials=3, sweeps=2000, seed=0, truth=None, run=None,
                                mdp_seed=0) -> PropertyReport:
    """Converged values match ``V*`` and clearly suboptimal actions stay at or below ``Q*``."""
    truth = truth or ground_truth(mdp)
    run = run or converge(mdp, spec, trials, sweeps, seed)
    rep = PropertyReport()
    tag = spec.label
    V = state_values(run.Q)
    sub_gap = truth.v_star[:, None] - truth.q_star
    for t in range(run.Q.shape[0]):
        for x in range(mdp.n_states):
            err = abs(V[t, x] - truth.v_star[x])
            rep.add(f"optimality_value[{tag}]", mdp_seed, t, x, -1, V[t, x], truth.v_star[x],
                    bool(err <= VALUE_TOL), VALUE_TOL - err)
            for a in range(mdp.n_actions):
                if sub_gap[x, a] >= SUBOPTIMAL_GAP:
                    slack = truth.q_star[x, a] + VALUE_TOL - run.Q[t, x, a]
                    rep.add(f"optimality_suboptimal[{tag}]", mdp_seed, t, x, a, run.Q[t, x, a],
                            truth.q_star[x, a], bool(slack >= 0), slack)
    if not np.any(sub_gap >= SUBOPTIMAL_GAP):
        # nothing to test; keep the row so every instance reports the same checks
        rep.add(f"optimality_suboptimal[{tag}]", mdp_seed, -1, -1, -1, 0.0, 0.0, True, np.inf)
    return rep


def check_gap_increasing(mdp, spec, trials=3, sweeps=2000, seed=0, truth=None, run=None,
                         mdp_seed=0) -> PropertyReport:
    """Converged ``V - Q`` is at least ``V* - Q*`` everywhere.

    ``report.notes["strict"]`` lists the ``(trial, state, action)`` triples where
    the excess is above ``1e-4``.
    """
    truth = truth or ground_truth(mdp)
    run = run or converge(mdp, spec, trials, sweeps, seed)
    rep = PropertyReport()
    tag = spec.label
    gap = state_values(run.Q)[..., None] - run.Q
    true_gap = truth.v_star[:, None] - truth.q_star
    strict = []
    for t, x, a in np.ndindex(gap.shape):
        slack = gap[t, x, a] - true_gap[x, a] + VALUE_TOL
        rep.add(f"gap_increase[{tag}]", mdp_seed, t, x, a, gap[t, x, a], true_gap[x, a],
                bool(slack >= 0), slack)
        if gap[t, x, a] - true_gap[x, a] > STRICT_MARGIN:
            strict.append((t, x, a))
    rep.notes["strict"] = strict
    return rep


def check_gap_scaling(mdp, alpha, trials=3, sweeps=2000, seed=0, truth=None, run=None,
                      mdp_seed=0, tol=1e-5) -> PropertyReport:
    """Advantage learning converges to action gaps equal to the true gaps divided by ``1 - alpha``."""
    truth = truth or ground_truth(mdp)
    spec = OperatorSpec(Kind.ADVANTAGE_LEARNING, alpha=alpha)
    run = run or converge(mdp, spec, trials, sweeps, seed)
    rep = PropertyReport()
    gaps = action_gaps(run.Q)
    target = truth.gaps / (1.0 - alpha)
    for t, x in np.ndindex(gaps.shape):
        err = abs(gaps[t, x] - target[x])
        rep.add(f"al_gap_scaling[alpha={alpha:g}]", mdp_seed, t, x, -1, gaps[t, x], target[x],
                bool(err <= tol), tol - err)
    return rep


def check_value_bound(mdp, run: ConvergedRun, mdp_seed=0) -> PropertyReport:
    """Every recorded ``|V_k(x)|`` stays within ``(2 sup|V_0| + sup|R|) / (1 - gamma)``."""
    rep = PropertyReport()
    V0 = state_values(run.Q0)
    bound = (2.0 * np.max(np.abs(V0), axis=-1) + mdp.reward_bound) / (1.0 - mdp.discount)
    hist = np.abs(np.stack(run.trace.values))  # (sweeps + 1, trials, S)
    peak = hist.max(axis=(0, 2))
    for t in range(peak.shape[0]):
        slack = bound[t] * (1 + 1e-12) - peak[t]
        rep.add(f"value_bound[{run.spec.label}]", mdp_seed, t, -1, -1, peak[t], bound[t],
                bool(slack >= 0), slack)
    return rep


def lipschitz_ratios(backup, Q1, Q2) -> np.ndarray:
    """``|T'Q1 - T'Q2| / |Q1 - Q2|`` per pair (sup-norms); ``nan`` where the pair coincides."""
    num = np.max(np.abs(backup(Q1) - backup(Q2)), axis=(-2, -1))
    den = np.max(np.abs(Q1 - Q2), axis=(-2, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.nan)


def check_contraction(mdp, spec, pairs=1000, seed=0) -> float:
    """Largest observed Lipschitz ratio over random pairs; half of them are near-duplicates."""
    spec = spec if isinstance(spec, OperatorSpec) else OperatorSpec(spec)
    if spec.kind not in (Kind.BELLMAN, Kind.CONSISTENT):
        raise ValueError("contraction is only claimed for the Bellman and consistent operators")
    rng = np.random.default_rng(seed)
    Q1 = random_q_tables(mdp, pairs, rng)
    Q2 = random_q_tables(mdp, pairs, rng)
    near = pairs // 2
    Q2[:near] = Q1[:near] + rng.normal(scale=1e-3, size=Q1[:near].shape) * _value_envelope(mdp)
    ratios = lipschitz_ratios(tabular_backup(mdp, spec), Q1, Q2)
    return float(np.nanmax(ratios)) if np.any(np.isfinite(ratios)) else 0.0


def lazy_fixed_points(mdp: FiniteMdp, alpha: float, truth=None):
    """``Q*`` and a second fixed point of the lazy backup.

    The second table lowers one clearly suboptimal entry of ``Q*`` by half of
    the room the lazy guard allows, ``alpha * gap / (1 - alpha)``.
    """
    truth = truth or ground_truth(mdp)
    sub = truth.v_star[:, None] - truth.q_star
    x, a = np.unravel_index(np.argmax(sub), sub.shape)
    if sub[x, a] < SUBOPTIMAL_GAP or alpha <= 0:
        raise ValueError("needs alpha > 0 and a suboptimal action")
    Q2 = truth.q_star.copy()
    Q2[x, a] -= 0.5 * alpha * sub[x, a] / (1.0 - alpha)
    return truth.q_star.copy(), Q2, (int(x), int(a))


def check_lazy_multiplicity(mdp, alpha=0.5, tol=1e-12, mdp_seed=-1) -> PropertyReport:
    rep = PropertyReport()
    Q1, Q2, (x, a) = lazy_fixed_points(mdp, alpha)
    r1 = float(np.max(np.abs(lazy_backup(mdp, Q1, alpha) - Q1)))
    r2 = float(np.max(np.abs(lazy_backup(mdp, Q2, alpha) - Q2)))
    distinct = float(np.max(np.abs(Q1 - Q2)))
    ok = r1 <= tol and r2 <= tol and distinct > tol
    rep.add(f"lazy_fixed_points[alpha={alpha:g}]", mdp_seed, -1, x, a, max(r1, r2), distinct,
            bool(ok), min(tol - r1, tol - r2, distinct - tol))
    return rep


def theorem1_rows(mdp, spec, Qs, mdp_seed=0) -> PropertyReport:
    """Worst pointwise slack of each condition over a batch of tables."""
    rep = PropertyReport()
    r = theorem1_check(mdp, Qs, spec)
    for name, viol, mask, worst in (("cond1", r.cond1_violation, r.cond1, r.worst_cond1),
                                    ("cond2", r.cond2_violation, r.cond2, r.worst_cond2)):
        t, x, a = worst if len(worst) == 3 else (-1, *worst)
        rep.add(f"theorem1_{name}[{spec.label}]", mdp_seed, int(t), int(x), int(a), viol, 0.0,
                bool(mask.all()), -viol)
    return rep


# --------------------------------------------------------------------------- battery

ALPHAS = (0.1, 0.5, 0.9)


def family_specs(alphas=ALPHAS, cqvi_samples=4, seed=0) -> list[OperatorSpec]:
    specs = [OperatorSpec(Kind.CONSISTENT)]
    for kind in ALPHA_KINDS:
        specs += [OperatorSpec(kind, alpha=a) for a in alphas]
    specs.append(OperatorSpec(Kind.CQVI, sample_count=cqvi_samples, seed=seed))
    return specs


def _collapse(report: PropertyReport) -> PropertyReport:
    """One row per check name: the first failure, else the tightest pass."""
    out = PropertyReport(notes=report.notes)
    order = []
    groups = {}
    for r in report.rows:
        if r.check not in groups:
            order.append(r.check)
            groups[r.check] = []
        groups[r.check].append(r)
    for name in order:
        out.rows.append(min(groups[name], key=lambda r: (r.passed, r.margin)))
    return out


def instance_battery(mdp, mdp_seed, specs, trials=3, sweeps=2000, q_samples=5, seed=0,
                     contraction_pairs=1000, detail=False) -> PropertyReport:
    """Every per-MDP check for one instance; rows collapsed to one per check unless ``detail``."""
    rng = np.random.default_rng([seed, mdp_seed])
    truth = exhaustive_policy_search(mdp)
    rep = PropertyReport()
    Qs = random_q_tables(mdp, q_samples, rng)
    for spec in specs:
        rep.extend(theorem1_rows(mdp, spec, Qs, mdp_seed))
    Q0 = random_q_tables(mdp, trials, rng)
    for spec in specs:
        run_spec = OperatorSpec(spec.kind, spec.alpha, overshoot=spec.overshoot)  # exact-model CQVI
        run = converge(mdp, run_spec, sweeps=sweeps, Q0=Q0)
        rep.extend(check_optimality_preserving(mdp, spec, truth=truth, run=run, mdp_seed=mdp_seed))
        rep.extend(check_gap_increasing(mdp, spec, truth=truth, run=run, mdp_seed=mdp_seed))
        rep.extend(check_value_bound(mdp, run, mdp_seed))
        if spec.kind is Kind.ADVANTAGE_LEARNING and not spec.overshoot:
            rep.extend(check_gap_scaling(mdp, spec.alpha, truth=truth, run=run, mdp_seed=mdp_seed))
    for kind in (Kind.BELLMAN, Kind.CONSISTENT):
        ratio = check_contraction(mdp, kind, contraction_pairs, seed=int(rng.integers(2**32)))
        slack = mdp.discount + CONTRACTION_SLACK - ratio
        rep.add(f"contraction[{kind.value}]", mdp_seed, -1, -1, -1, ratio, mdp.discount,
                bool(slack >= 0), slack)
    return rep if detail else _collapse(rep)


def global_battery(tol=1e-9) -> PropertyReport:
    """Checks on fixed instances: cake closed forms, the counterexamples, lazy fixed points."""
    from .domains.cake import CakeParams, cake_closed_forms, make_cake_mdp
    from .domains.divergence import DEMO_V_STAR, divergence_demo, greedy_value_errors
    from .operators import bellman_backup, consistent_backup

    rep = PropertyReport()
    for i, (g, e) in enumerate(itertools.product((0.1, 0.5, 0.9, 0.99), (0.01, 0.1, 1.0))):
        p = CakeParams(g, e)
        mdp = make_cake_mdp(p)
        forms = cake_closed_forms(p)
        for name, backup, target in (("bellman", bellman_backup, forms["q_star"]),
                                     ("consistent", consistent_backup, forms["q_consistent"])):
            Q, _ = value_iteration(lambda Q: backup(mdp, Q), np.zeros((2, 2)), max_sweeps=100_000,
                                   tol=1e-14)
            err = float(np.max(np.abs(Q - target)))
            rep.add(f"cake_closed_form[{name},gamma={g:g},eps={e:g}]", -1, i, -1, -1, err, 0.0,
                    bool(err <= tol), tol - err)
        gap = float(action_gaps(Q)[0])
        excess = e * (g / 2) / (1 - g / 2)
        err = abs(gap - e - excess)
        rep.add(f"cake_gap_excess[gamma={g:g},eps={e:g}]", -1, i, 0, -1, gap - e, excess,
                bool(err <= tol and gap > e), tol - err)

    tr = divergence_demo(overshoot=0.1)
    err = abs(tr.values[-1][0] - (DEMO_V_STAR + 0.2))
    rep.add("divergence[overshoot=0.1]", -1, -1, 0, -1, tr.values[-1][0], DEMO_V_STAR + 0.2,
            bool(err <= 1e-8), 1e-8 - err)
    tr = divergence_demo(alpha_prime=1.5)
    late = greedy_value_errors(tr)[50:]
    floor = float(late.min()) if late.size else 0.0
    rep.add("divergence[alpha_prime=1.5]", -1, -1, 0, -1, floor, 0.1,
            bool(late.size and floor > 0.1), floor - 0.1)
    tr = divergence_demo(alpha_prime=0.5)
    err = float(greedy_value_errors(tr)[-1])
    rep.add("divergence[alpha_prime=0.5]", -1, -1, 0, -1, tr.values[-1][0], DEMO_V_STAR,
            bool(err <= 1e-8), 1e-8 - err)

    rep.extend(check_lazy_multiplicity(make_cake_mdp(CakeParams(0.5, 0.1)), 0.5))
    return rep


def property_battery(corpus, specs=None, trials=3, sweeps=2000, q_samples=5, seed=0,
                     contraction_pairs=1000, include_global=True, progress=None) -> PropertyReport:
    """Per-instance checks over ``corpus`` (pairs ``(mdp_seed, mdp)``) plus the global ones.

    The report holds one row per (check, instance), followed by the global rows.
    """
    specs = family_specs(seed=seed) if specs is None else specs
    rep = PropertyReport()
    for mdp_seed, mdp in corpus:
        rep.extend(instance_battery(mdp, mdp_seed, specs, trials, sweeps, q_samples, seed,
                                    contraction_pairs))
        if progress is not None:
            progress(mdp_seed)
    if include_global:
        rep.extend(global_battery())
    return rep
