"""Estimator façade over the solvers, following scikit-learn conventions.

``fit`` takes the problem (an MDP, or a grid with a sampler) rather than a
data matrix; ``predict`` maps states or points to greedy actions and
``decision_function`` to Q-values. Fitted attributes end in an underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .aggregation import GridOperator, GridScheme, interpolate_table
from .mdp import FiniteMdp, action_gaps, greedy_policy, state_values, validate_mdp
from .operators import OperatorSpec
from .solver import LearningConfig, MdpEnv, averaged_value_iteration, q_learning
from .utils.validation import check_points


def _check_mdp(mdp):
    if not isinstance(mdp, FiniteMdp):
        raise TypeError(f"expected a FiniteMdp, got {type(mdp).__name__}")
    problems = validate_mdp(mdp)
    if problems:
        raise ValueError(f"invalid MDP: {problems[0]}")
    return mdp


def _check_states(X, n_states):
    X = np.asarray(X)
    if X.ndim != 1 or not np.issubdtype(X.dtype, np.integer):
        raise ValueError("states must be a 1-D array of integer indices")
    if X.size and (X.min() < 0 or X.max() >= n_states):
        raise ValueError(f"state indices must lie in 0..{n_states - 1}")
    return X


class _TabularMixin:
    def decision_function(self, X):
        check_is_fitted(self, "q_")
        return self.q_[_check_states(X, self.q_.shape[0])]

    def predict(self, X):
        check_is_fitted(self, "q_")
        return greedy_policy(self.q_)[_check_states(X, self.q_.shape[0])]

    @property
    def values_(self):
        check_is_fitted(self, "q_")
        return state_values(self.q_)

    @property
    def gaps_(self):
        check_is_fitted(self, "q_")
        return action_gaps(self.q_)


class TabularValueIteration(_TabularMixin, BaseEstimator):
    """Value iteration with any tabular family member.

    Parameters
    ----------
    operator : str
        Operator kind (``"bellman"``, ``"consistent"``, ``"al"``, ``"pal"``,
        ``"lazy"`` or ``"cqvi"``).
    alpha : float
        Gap parameter for AL, PAL and lazy.
    eta : float
        Averaging step; 1 gives plain value iteration.
    max_sweeps, tol : int, float
        Stopping rule on the successive-iterate sup-norm.
    """

    def __init__(self, operator="bellman", alpha=0.0, eta=1.0, max_sweeps=10_000, tol=1e-10):
        self.operator = operator
        self.alpha = alpha
        self.eta = eta
        self.max_sweeps = max_sweeps
        self.tol = tol

    def fit(self, mdp, Q0=None):
        from .operators import tabular_backup

        mdp = _check_mdp(mdp)
        spec = OperatorSpec(self.operator, alpha=self.alpha)
        Q0 = np.zeros((mdp.n_states, mdp.n_actions)) if Q0 is None else Q0
        self.q_, self.trace_ = averaged_value_iteration(tabular_backup(mdp, spec), Q0, self.eta,
                                                        self.max_sweeps, self.tol)
        self.n_sweeps_ = self.trace_.sweeps
        return self


class TabularQLearner(_TabularMixin, BaseEstimator):
    """Online Q-learning with the Bellman, AL or PAL error."""

    def __init__(self, rule="bellman", alpha=0.0, step_size=0.1, exploration=0.1, episodes=1000,
                 max_steps=100, seed=0, start_state=0):
        self.rule = rule
        self.alpha = alpha
        self.step_size = step_size
        self.exploration = exploration
        self.episodes = episodes
        self.max_steps = max_steps
        self.seed = seed
        self.start_state = start_state

    def fit(self, mdp, terminal_states=()):
        mdp = _check_mdp(mdp)
        cfg = LearningConfig(self.rule, self.alpha, self.step_size, self.exploration,
                             self.episodes, self.max_steps, self.seed)
        env = MdpEnv(mdp, self.start_state, terminal_states)
        self.q_, self.trace_ = q_learning(env, cfg)
        return self


class GridQValueIteration(BaseEstimator):
    """Averaged value iteration over grid nodes with sample-based backups.

    ``fit(grid, sampler, n_actions)`` learns node Q-values; ``predict`` and
    ``decision_function`` take continuous points and interpolate.
    """

    def __init__(self, operator="cqvi", alpha=0.0, eta=0.1, max_sweeps=100, tol=1e-10,
                 chunk_nodes=16384):
        self.operator = operator
        self.alpha = alpha
        self.eta = eta
        self.max_sweeps = max_sweeps
        self.tol = tol
        self.chunk_nodes = chunk_nodes

    def fit(self, grid: GridScheme, sampler, n_actions: int, Q0=None):
        if not isinstance(grid, GridScheme):
            raise TypeError("grid must be a GridScheme")
        backup = GridOperator(grid, sampler, OperatorSpec(self.operator, alpha=self.alpha),
                              self.chunk_nodes)
        Q0 = np.zeros((grid.node_count, int(n_actions))) if Q0 is None else Q0
        self.q_, self.trace_ = averaged_value_iteration(backup, Q0, self.eta, self.max_sweeps,
                                                        self.tol)
        self.grid_ = grid
        return self

    def decision_function(self, X):
        check_is_fitted(self, "q_")
        return interpolate_table(self.grid_, self.q_, check_points(X, self.grid_.dims))[0]

    def predict(self, X):
        return greedy_policy(self.decision_function(X))

