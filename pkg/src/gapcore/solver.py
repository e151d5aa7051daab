"""Synchronous value iteration (plain and averaged) and tabular Q-learning.

Backups are callables ``Q -> T'Q``. A backup that sets ``wants_sweep = True``
(the sample-based grid operators) is called as ``backup(Q, sweep=k)`` so its
sample stream can depend on the sweep index.
"""

from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .mdp import FiniteMdp, action_gaps, state_values
from .utils.validation import check_alpha, check_positive_int

MAX_TRACED_STATES = 10_000


class NumericalAbort(RuntimeError):
    def __init__(self, sweep, entry, value):
        self.sweep, self.entry, self.value = sweep, entry, value
        super().__init__(f"non-finite value {value!r} at sweep {sweep}, entry {entry}")


@dataclass
class IterationTrace:
    """Per-sweep record of a run.

    ``values`` and ``gaps`` hold one array per sweep, restricted to
    ``traced_states`` when the table is too large to keep in full. Gap
    statistics cover all states unless ``gap_states`` narrows them.
    Index 0 is the initial table; index ``k`` is the table after sweep ``k``.
    """

    supnorm_delta: list = field(default_factory=list)
    mean_gap: list = field(default_factory=list)
    min_gap: list = field(default_factory=list)
    values: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    traced_states: np.ndarray | None = None
    gap_states: np.ndarray | None = None
    wall_time: float = 0.0
    converged: bool = False

    @property
    def sweeps(self) -> int:
        return len(self.supnorm_delta)

    def record(self, Q, delta=None):
        gaps = action_gaps(Q)
        pool = gaps if self.gap_states is None else gaps[..., self.gap_states]
        finite = pool[np.isfinite(pool)]
        V = state_values(Q)
        if self.traced_states is not None:
            V = V[..., self.traced_states]
            gaps = gaps[..., self.traced_states]
        self.values.append(np.array(V, copy=True))
        self.gaps.append(np.array(gaps, copy=True))
        self.mean_gap.append(float(finite.mean()) if finite.size else float("nan"))
        self.min_gap.append(float(finite.min()) if finite.size else float("nan"))
        if delta is not None:
            self.supnorm_delta.append(float(delta))

    def add_metric(self, name, sweep, value):
        self.metrics.setdefault(name, []).append((int(sweep), float(value)))

    def summary_rows(self):
        """``(sweep, supnorm_delta, mean_gap, min_gap)`` for sweeps 1..K."""
        for k, delta in enumerate(self.supnorm_delta, start=1):
            yield k, delta, self.mean_gap[k], self.min_gap[k]

    def long_rows(self):
        """One row per (sweep, traced state); batch axes are flattened into the state index."""
        for k, delta in enumerate(self.supnorm_delta, start=1):
            V = np.ravel(self.values[k])
            G = np.ravel(self.gaps[k])
            states = (np.arange(V.size) if self.traced_states is None or np.ndim(self.values[k]) > 1
                      else self.traced_states)
            for s, v, g in zip(states, V, G):
                yield k, delta, self.mean_gap[k], self.min_gap[k], int(s), v, g

    def write_csv(self, path, summary_path=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "supnorm_delta", "mean_gap", "min_gap", "state", "value", "gap"])
            for row in self.long_rows():
                w.writerow([row[0], fmt(row[1]), fmt(row[2]), fmt(row[3]), row[4],
                            fmt(row[5]), fmt(row[6])])
        if summary_path is not None:
            with open(summary_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["sweep", "supnorm_delta", "mean_gap", "min_gap"])
                for k, d, mg, ng in self.summary_rows():
                    w.writerow([k, fmt(d), fmt(mg), fmt(ng)])


def fmt(x) -> str:
    """17 significant digits: lossless for float64."""
    return format(float(x), ".17g")


def _apply(backup, Q, sweep):
    if getattr(backup, "wants_sweep", False):
        return backup(Q, sweep=sweep)
    return backup(Q)


def _check_finite(Q, sweep):
    if not np.all(np.isfinite(Q)):
        bad = np.argwhere(~np.isfinite(Q))[0]
        raise NumericalAbort(sweep, tuple(int(i) for i in bad), Q[tuple(bad)])


def averaged_value_iteration(backup, Q0, eta=0.1, max_sweeps=1000, tol=1e-10,
                             traced_states=None, callback=None):
    """Damped iteration ``Q <- (1 - eta) Q + eta T'Q`` until the sup-norm step is ``<= tol``.

    ``callback(sweep, Q, trace)`` runs after every sweep; returning ``True``
    stops the run early. ``tol=None`` runs all ``max_sweeps`` sweeps.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if tol is not None and not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    Q = np.array(Q0, dtype=np.float64, copy=True)
    _check_finite(Q, 0)
    n_states = Q.shape[-2]
    if traced_states is None and n_states > MAX_TRACED_STATES:
        traced_states = np.linspace(0, n_states - 1, MAX_TRACED_STATES).astype(np.int64)
    trace = IterationTrace(traced_states=None if traced_states is None
                           else np.asarray(traced_states, dtype=np.int64))
    trace.record(Q)
    start = time.perf_counter()
    for sweep in range(1, max_sweeps + 1):
        TQ = _apply(backup, Q, sweep)
        Q_next = TQ if eta == 1.0 else (1.0 - eta) * Q + eta * TQ
        _check_finite(Q_next, sweep)
        delta = float(np.max(np.abs(Q_next - Q))) if Q.size else 0.0
        Q = Q_next
        trace.record(Q, delta)
        if callback is not None and callback(sweep, Q, trace):
            break
        if tol is not None and delta <= tol:
            trace.converged = True
            break
    trace.wall_time = time.perf_counter() - start
    return Q, trace


def value_iteration(backup, Q0, max_sweeps=10_000, tol=1e-10, traced_states=None, callback=None):
    """Iterate ``Q_{k+1} = T'Q_k`` until successive iterates differ by at most ``tol``."""
    return averaged_value_iteration(backup, Q0, 1.0, max_sweeps, tol, traced_states, callback)


class Rule(str, enum.Enum):
    BELLMAN = "bellman"
    AL = "al"
    PAL = "pal"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-δ", "").replace("-delta", "").replace("_delta", "")
        return cls(key)


@dataclass(frozen=True)
class LearningConfig:
    """Online tabular learning with one of the three error rules.

    ``gap_states`` restricts the reported mean action gap to those states
    (all states when ``None``).
    """

    rule: Rule = Rule.BELLMAN
    alpha: float = 0.0
    step_size: float = 0.1
    exploration: float = 0.1
    episodes: int = 1000
    max_steps: int = 100
    seed: int = 0
    gap_states: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule.parse(self.rule))
        check_alpha(self.alpha)
        if not 0.0 < self.step_size <= 1.0:
            raise ValueError(f"step_size must lie in (0, 1], got {self.step_size}")
        if not 0.0 <= self.exploration <= 1.0:
            raise ValueError(f"exploration must lie in [0, 1], got {self.exploration}")
        check_positive_int(self.episodes, "episodes")
        check_positive_int(self.max_steps, "max_steps")


class MdpEnv:
    """Episodic sampler over a :class:`FiniteMdp`.

    Episodes start in ``start_state`` and end after ``max_steps`` or on
    entering a state listed in ``terminal_states``.
    """

    def __init__(self, mdp: FiniteMdp, start_state=0, terminal_states=()):
        self.mdp = mdp
        self.start_state = int(start_state)
        self.terminal_states = frozenset(int(s) for s in terminal_states)
        self._cdf = np.cumsum(mdp.transition, axis=2).tolist()
        self._reward = mdp.reward.tolist()

    @property
    def n_states(self):
        return self.mdp.n_states

    @property
    def n_actions(self):
        return self.mdp.n_actions

    @property
    def discount(self):
        return self.mdp.discount

    def reset(self, u):
        return self.start_state

    def step(self, x, a, u):
        row = self._cdf[x][a]
        y = 0
        last = len(row) - 1
        while y < last and u >= row[y]:
            y += 1
        return y, self._reward[x][a], y in self.terminal_states


def q_learning(env, cfg: LearningConfig, Q0=None):
    """Online learning ``Q(x,a) += step_size * error`` with epsilon-greedy behaviour.

    The errors are ``Δ = r + γV(x') - Q(x,a)``, ``Δ_AL = Δ - α[V(x) - Q(x,a)]`` and
    ``Δ_PAL = max{Δ_AL, Δ - α[V(x') - Q(x',a)]}``; on terminal transitions
    ``V(x') = Q(x',a) = 0``.

    The returned trace has one entry per episode; its ``metrics`` hold the
    episode return under ``"return"``.
    """
    rng = np.random.default_rng(cfg.seed)
    nS, nA = env.n_states, env.n_actions
    Q = [[0.0] * nA for _ in range(nS)] if Q0 is None else np.asarray(Q0, float).tolist()
    gamma = env.discount
    rule, alpha, lr, eps = cfg.rule, cfg.alpha, cfg.step_size, cfg.exploration
    gap_states = None if cfg.gap_states is None else np.asarray(cfg.gap_states, dtype=np.int64)
    trace = IterationTrace(gap_states=gap_states)
    trace.record(np.asarray(Q))
    start = time.perf_counter()

    def vmax(row):
        return max(row)

    def greedy(row):
        best = 0
        for b in range(1, nA):
            if row[b] > row[best]:
                best = b
        return best

    for episode in range(1, cfg.episodes + 1):
        draws = rng.random((cfg.max_steps + 1, 3)).tolist()
        x = env.reset(draws[0][0])
        ret, disc, delta_max = 0.0, 1.0, 0.0
        for t in range(cfg.max_steps):
            u_explore, u_action, u_next = draws[t + 1]
            row = Q[x]
            a = min(int(u_action * nA), nA - 1) if u_explore < eps else greedy(row)
            y, r, terminal = env.step(x, a, u_next)
            ret += disc * r
            disc *= gamma
            v_next = 0.0 if terminal else vmax(Q[y])
            err = r + gamma * v_next - row[a]
            if rule is not Rule.BELLMAN:
                err_al = err - alpha * (vmax(row) - row[a])
                if rule is Rule.PAL:
                    q_next_same = 0.0 if terminal else Q[y][a]
                    err = max(err_al, err - alpha * (v_next - q_next_same))
                else:
                    err = err_al
            row[a] += lr * err
            delta_max = max(delta_max, abs(lr * err))
            if terminal:
                break
            x = y
        trace.record(np.asarray(Q), delta_max)
        trace.add_metric("return", episode, ret)
    trace.wall_time = time.perf_counter() - start
    return np.asarray(Q), trace
