"""Seeded random MDPs for property sweeps."""

from dataclasses import dataclass

import numpy as np

from ..mdp import FiniteMdp


@dataclass(frozen=True)
class RandomMdpParams:
    n_states: int = 5
    n_actions: int = 3
    seed: int = 0
    branching: int = 2
    self_loop_bias: float = 0.2
    reward_low: float = -1.0
    reward_high: float = 1.0
    discount: float = 0.9

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        if not 1 <= self.branching <= self.n_states:
            raise ValueError(f"branching must lie in [1, n_states], got {self.branching}")
        if not 0.0 <= self.self_loop_bias <= 1.0:
            raise ValueError(f"self_loop_bias must lie in [0, 1], got {self.self_loop_bias}")
        if not self.reward_low <= self.reward_high:
            raise ValueError("reward_low must not exceed reward_high")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")


def make_random_mdp(p: RandomMdpParams) -> FiniteMdp:
    """Each row spreads ``1 - self_loop_bias`` over ``branching`` random successors
    with Dirichlet(1) weights and puts ``self_loop_bias`` on the diagonal."""
    rng = np.random.default_rng(p.seed)
    S, A = p.n_states, p.n_actions
    P = np.zeros((S, A, S))
    for x in range(S):
        for a in range(A):
            succ = rng.choice(S, size=p.branching, replace=False)
            P[x, a, succ] = (1.0 - p.self_loop_bias) * rng.dirichlet(np.ones(p.branching))
            P[x, a, x] += p.self_loop_bias
            P[x, a] /= P[x, a].sum()
    R = rng.uniform(p.reward_low, p.reward_high, size=(S, A))
    return FiniteMdp(P, R, p.discount)


CORPUS_DISCOUNTS = (0.5, 0.9, 0.95)


def make_corpus(n=100, seed=0, max_states=6, max_actions=4, discounts=CORPUS_DISCOUNTS):
    """``n`` small MDPs keyed by instance id: 2..max_states states, 2..max_actions actions."""
    corpus = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        S = int(rng.integers(2, max_states + 1))
        corpus.append((i, make_random_mdp(RandomMdpParams(
            n_states=S,
            n_actions=int(rng.integers(2, max_actions + 1)),
            seed=int(rng.integers(2**32)),
            branching=int(rng.integers(1, S + 1)),
            self_loop_bias=float(rng.uniform(0.0, 0.6)),
            discount=discounts[i % len(discounts)],
        ))))
    return corpus
