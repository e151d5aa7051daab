"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np


def check_alpha(alpha, name="alpha"):
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"{name} must lie in [0, 1), got {alpha!r}")
    return alpha


def check_q_table(Q, mdp=None, n_states=None, n_actions=None):
    """Coerce ``Q`` to float64 and check its trailing ``(S, A)`` shape."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim < 2:
        raise ValueError(f"Q-table needs at least 2 dimensions, got shape {Q.shape}")
    if mdp is not None:
        n_states, n_actions = mdp.n_states, mdp.n_actions
    if n_states is not None and Q.shape[-2] != n_states:
        raise ValueError(f"Q-table has {Q.shape[-2]} states, expected {n_states}")
    if n_actions is not None and Q.shape[-1] != n_actions:
        raise ValueError(f"Q-table has {Q.shape[-1]} actions, expected {n_actions}")
    return Q


def check_points(X, n_dims):
    """Coerce a batch of points to a C-contiguous ``(n, n_dims)`` float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.shape[0] == n_dims else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != n_dims:
        raise ValueError(f"expected points with {n_dims} coordinates, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return np.ascontiguousarray(X)


def check_positive_int(value, name):
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
