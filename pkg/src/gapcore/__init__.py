"""Gap-increasing Bellman operators: tabular, aggregated and sample-based forms."""

import os

# numba otherwise warns about an outdated TBB on import
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .aggregation import (
    ExpectationModel, GridOperator, GridScheme, SamplerHandle, aggregated_backup, cqvi_backup,
    identity_embedding, induce_node_mdp, interpolation_weights, q_interpolate, qvi_backup,
    qvi_consistent_term,
)
from .estimators import GridQValueIteration, TabularQLearner, TabularValueIteration
from .mdp import FiniteMdp, Violation, action_gap, action_gaps, greedy_policy, load_mdp, save_mdp, \
    state_values, validate_mdp
from .operators import (
    Kind, OperatorSpec, advantage_learning_backup, bellman_backup, consistent_backup,
    lazy_backup, persistent_al_backup, tabular_backup, theorem1_check,
)
from .solver import (
    IterationTrace, LearningConfig, MdpEnv, NumericalAbort, Rule, averaged_value_iteration,
    q_learning, value_iteration,
)

__version__ = "0.1.0"
