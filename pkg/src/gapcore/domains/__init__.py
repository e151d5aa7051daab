"""Benchmark problems: cake, random corpora, the single-state counterexamples and the bicycle."""

from .cake import CakeParams, cake_closed_forms, make_cake_mdp
from .divergence import DEMO_V_STAR, divergence_demo, greedy_value_errors, single_state_mdp
from .random_mdp import RandomMdpParams, make_corpus, make_random_mdp
