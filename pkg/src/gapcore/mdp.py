"""Tabular MDPs and the Q-table primitives shared by every other module.

A Q-table is a plain ``float64`` array whose last two axes are
``(state, action)``. Leading axes are allowed and are treated as a batch,
which lets the backups and solvers run several independent tables at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Explicit tabular MDP ``(X, A, P, R, gamma)``.

    ``transition[x, a, y]`` is the probability of moving to ``y`` after taking
    ``a`` in ``x``; ``reward[x, a]`` is the expected immediate reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        P = np.array(self.transition, dtype=np.float64)
        R = np.array(self.reward, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape}")
        P.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def self_loop(self) -> np.ndarray:
        """``P(x | x, a)`` as an ``(S, A)`` array."""
        idx = np.arange(self.n_states)
        return self.transition[idx, :, idx]

    @property
    def reward_bound(self) -> float:
        return float(np.max(np.abs(self.reward))) if self.reward.size else 0.0

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteMdp":
        mdp = cls(
            transition=np.asarray(data["transition"], dtype=np.float64),
            reward=np.asarray(data["reward"], dtype=np.float64),
            discount=float(data["discount"]),
        )
        for key, actual in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
            if key in data and int(data[key]) != actual:
                raise ValueError(f"{key}={data[key]} disagrees with array shapes ({actual})")
        return mdp


@dataclass(frozen=True)
class Violation:
    check: str
    state: int | None = None
    action: int | None = None
    detail: str = ""

    def __str__(self):
        where = "" if self.state is None else f" at (state={self.state}, action={self.action})"
        return f"{self.check}{where}: {self.detail}" if self.detail else f"{self.check}{where}"


def validate_mdp(mdp: FiniteMdp) -> list[Violation]:
    """Return every broken invariant of ``mdp``; an empty list means valid."""
    out = []
    P, R = mdp.transition, mdp.reward
    if mdp.n_states < 1 or mdp.n_actions < 1:
        out.append(Violation("empty state or action set"))
    for x, a in zip(*np.nonzero(np.any(P < 0, axis=2))):
        out.append(Violation("negative transition probability", int(x), int(a)))
    sums = P.sum(axis=2)
    for x, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
        out.append(Violation("transition row must sum to 1", int(x), int(a),
                             f"sum={sums[x, a]!r}"))
    for x, a in zip(*np.nonzero(~np.isfinite(R))):
        out.append(Violation("reward must be finite", int(x), int(a)))
    if not (0.0 <= mdp.discount < 1.0):
        out.append(Violation("discount must be < 1" if mdp.discount >= 1.0
                             else "discount must be >= 0", detail=f"discount={mdp.discount!r}"))
    return out


def load_mdp(path) -> FiniteMdp:
    with open(path) as fh:
        return FiniteMdp.from_dict(json.load(fh))


def save_mdp(mdp: FiniteMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def state_values(Q: np.ndarray) -> np.ndarray:
    return np.max(Q, axis=-1)


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    """Greedy action per state. ``np.argmax`` already breaks ties toward the lowest index."""
    return np.argmax(Q, axis=-1)


def action_gaps(Q: np.ndarray) -> np.ndarray:
    """Action gap at every state: best value minus the runner-up.

    Tied maxima give 0. States with a single action get ``+inf``.
    """
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape[-1] < 2:
        return np.full(Q.shape[:-1], np.inf)
    top2 = np.partition(Q, Q.shape[-1] - 2, axis=-1)[..., -2:]
    return top2[..., 1] - top2[..., 0]


def action_gap(Q: np.ndarray, x: int) -> float:
    return float(action_gaps(np.asarray(Q)[x][None, :])[0])
