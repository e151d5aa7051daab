"""The two-state "cake" MDP.

State 0 (x1) offers cake (action 0, reward 1, then half the time the bad
state) or abstention (action 1, reward 0, stay). State 1 (x2) is the bad
state: absorbing, with a constant per-step reward that fixes its value at
``-2 (1 + eps) / gamma`` under every policy.
"""

from dataclasses import dataclass

import numpy as np

from ..mdp import FiniteMdp


@dataclass(frozen=True)
class CakeParams:
    gamma: float = 0.5
    epsilon: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def bad_state_reward(self) -> float:
        return -2.0 * (1.0 + self.epsilon) * (1.0 - self.gamma) / self.gamma

    @property
    def bad_state_value(self) -> float:
        return -2.0 * (1.0 + self.epsilon) / self.gamma


def make_cake_mdp(p: CakeParams = CakeParams()) -> FiniteMdp:
    P = np.zeros((2, 2, 2))
    P[0, 0] = [0.5, 0.5]
    P[0, 1] = [1.0, 0.0]
    P[1, :, 1] = 1.0
    R = np.array([[1.0, 0.0], [p.bad_state_reward, p.bad_state_reward]])
    return FiniteMdp(P, R, p.gamma)


def cake_closed_forms(p: CakeParams = CakeParams()) -> dict:
    """Hand-derived fixed points of the Bellman, consistent and AL operators."""
    g, e = p.gamma, p.epsilon
    consistent_cake = -e / (1.0 - g / 2.0)
    return {
        "q_star": np.array([[-e, 0.0], [p.bad_state_value] * 2]),
        "gap_star": e,
        "q_consistent": np.array([[consistent_cake, 0.0], [p.bad_state_value] * 2]),
        "gap_consistent": -consistent_cake,
        "v_eat_forever": consistent_cake,
    }
