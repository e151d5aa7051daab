"""Single-state counterexamples: operators that break one of the two conditions.

The MDP has one state and two actions with rewards 0 and 1 and discount 0.5,
so ``V* = 2``. ``overshoot`` iterates ``TQ + c`` (breaks the upper
condition); ``alpha_prime`` iterates ``TQ - alpha'(V - Q)`` (breaks the lower
condition once ``alpha' > 1``).
"""

import numpy as np

from ..mdp import FiniteMdp, state_values
from ..operators import bellman_backup
from ..solver import value_iteration

DEMO_GAMMA = 0.5
DEMO_V_STAR = 1.0 / (1.0 - DEMO_GAMMA)


def single_state_mdp(gamma=DEMO_GAMMA) -> FiniteMdp:
    return FiniteMdp(np.ones((1, 2, 1)), np.array([[0.0, 1.0]]), gamma)


def divergence_demo(alpha_prime=None, overshoot=None, Q0=None, sweeps=200):
    """Iterate the chosen operator and return its trace.

    Exactly one of ``alpha_prime`` and ``overshoot`` must be given. All
    ``sweeps`` sweeps are run so late-sweep behaviour is always on record. The default
    start for the ``alpha_prime`` mode overvalues the worse action:
    ``Q0 = (1 / (alpha' - 1), 0)`` when ``alpha' > 1``, else ``(2, 0)``.
    """
    if (alpha_prime is None) == (overshoot is None):
        raise ValueError("give exactly one of alpha_prime and overshoot")
    mdp = single_state_mdp()
    if overshoot is not None:
        backup = lambda Q: bellman_backup(mdp, Q) + overshoot  # noqa: E731
        start = np.zeros((1, 2))
    else:
        def backup(Q):
            V = state_values(Q)[..., None]
            return bellman_backup(mdp, Q) - alpha_prime * (V - Q)

        worse = 1.0 / (alpha_prime - 1.0) if alpha_prime > 1.0 else 2.0
        start = np.array([[worse, 0.0]])
    if Q0 is not None:
        start = np.asarray(Q0, dtype=np.float64).reshape(1, 2)
    _, trace = value_iteration(backup, start, max_sweeps=sweeps, tol=None)
    trace.metrics["v_star"] = [(0, DEMO_V_STAR)]
    return trace


def greedy_value_errors(trace) -> np.ndarray:
    """``|max_a Q_k - V*|`` for every recorded sweep (index 0 is the start)."""
    return np.abs(np.array([v[0] for v in trace.values]) - DEMO_V_STAR)
