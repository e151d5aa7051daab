"""The tabular operator family and the pointwise check of its two sufficient conditions.

Every backup maps a Q-table to a new Q-table and accepts leading batch axes
on ``Q``: an array of shape ``(..., S, A)`` is backed up table by table.

Condition 1 (upper):  T'Q(x, a) <= TQ(x, a)
Condition 2 (lower):  T'Q(x, a) >= TQ(x, a) - alpha * [V(x) - Q(x, a)]
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .mdp import FiniteMdp, state_values
from .utils.validation import check_alpha, check_q_table

CONDITION_TOL = 1e-12


class Kind(str, enum.Enum):
    BELLMAN = "bellman"
    CONSISTENT = "consistent"
    ADVANTAGE_LEARNING = "al"
    PERSISTENT_AL = "pal"
    LAZY = "lazy"
    AGGREGATED = "aggregated"
    QVI = "qvi"
    CQVI = "cqvi"

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "advantage_learning": "al", "advantagelearning": "al",
            "persistent_al": "pal", "persistental": "pal",
            "persistent_advantage_learning": "pal",
        }
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown operator kind {value!r}; "
                             f"expected one of {[k.value for k in cls]}") from None


ALPHA_KINDS = (Kind.ADVANTAGE_LEARNING, Kind.PERSISTENT_AL, Kind.LAZY)
SAMPLED_KINDS = (Kind.QVI, Kind.CQVI)


@dataclass(frozen=True)
class OperatorSpec:
    """Selects one member of the operator family.

    ``overshoot`` adds a constant to the backup output. It exists to inject
    deliberately broken operators (``TQ + c``) into checks and demos; leave it
    at 0 for the real operators.
    """

    kind: Kind = Kind.BELLMAN
    alpha: float = 0.0
    sample_count: int = 1
    seed: int = 0
    overshoot: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if self.kind in ALPHA_KINDS:
            check_alpha(self.alpha)
        if self.sample_count < 1:
            raise ValueError(f"sample_count must be positive, got {self.sample_count}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    @property
    def label(self) -> str:
        name = self.kind.value
        if self.kind in ALPHA_KINDS:
            name += f"(alpha={self.alpha:g})"
        if self.overshoot:
            name += f"+{self.overshoot:g}"
        return name


def _expect(mdp: FiniteMdp, W: np.ndarray) -> np.ndarray:
    """``E_P W(x')`` for every (x, a); ``W`` has shape ``(..., S)``."""
    return np.einsum("xay,...y->...xa", mdp.transition, W)


def bellman_backup(mdp: FiniteMdp, Q: np.ndarray) -> np.ndarray:
    Q = check_q_table(Q, mdp)
    return mdp.reward + mdp.discount * _expect(mdp, state_values(Q))


def consistent_backup(mdp: FiniteMdp, Q: np.ndarray) -> np.ndarray:
    """Consistent Bellman backup: on a self-transition, keep the taken action's value.

    Computed as ``TQ - gamma * P(x|x,a) * [V(x) - Q(x,a)]``.
    """
    Q = check_q_table(Q, mdp)
    V = state_values(Q)
    TQ = mdp.reward + mdp.discount * _expect(mdp, V)
    return TQ - mdp.discount * mdp.self_loop * (V[..., None] - Q)


def consistent_backup_indicator(mdp: FiniteMdp, Q: np.ndarray) -> np.ndarray:
    """Same operator, evaluated literally with the ``1[x' = x]`` split."""
    Q = check_q_table(Q, mdp)
    V = state_values(Q)
    off_diag = mdp.transition.copy()
    idx = np.arange(mdp.n_states)
    off_diag[idx, :, idx] = 0.0
    elsewhere = np.einsum("xay,...y->...xa", off_diag, V)
    return mdp.reward + mdp.discount * (elsewhere + mdp.self_loop * Q)


def advantage_learning_backup(mdp: FiniteMdp, Q: np.ndarray, alpha: float) -> np.ndarray:
    check_alpha(alpha)
    Q = check_q_table(Q, mdp)
    V = state_values(Q)
    return bellman_backup(mdp, Q) - alpha * (V[..., None] - Q)


def persistent_al_backup(mdp: FiniteMdp, Q: np.ndarray, alpha: float) -> np.ndarray:
    """Elementwise max of the AL backup and the repeat-the-same-action backup."""
    check_alpha(alpha)
    Q = check_q_table(Q, mdp)
    repeat = mdp.reward + mdp.discount * np.einsum("xay,...ya->...xa", mdp.transition, Q)
    return np.maximum(advantage_learning_backup(mdp, Q, alpha), repeat)


def lazy_backup(mdp: FiniteMdp, Q: np.ndarray, alpha: float) -> np.ndarray:
    """Keep ``Q(x,a)`` whenever ``Q <= TQ <= alpha*V + (1-alpha)*Q``; otherwise take ``TQ``."""
    check_alpha(alpha)
    Q = check_q_table(Q, mdp)
    TQ = bellman_backup(mdp, Q)
    V = state_values(Q)[..., None]
    keep = (Q <= TQ) & (TQ <= alpha * V + (1.0 - alpha) * Q)
    return np.where(keep, Q, TQ)


def tabular_backup(mdp: FiniteMdp, spec: OperatorSpec):
    """Closure ``Q -> T'Q`` for a tabular-capable spec."""
    kind = spec.kind
    if kind in (Kind.BELLMAN, Kind.QVI):
        fn = lambda Q: bellman_backup(mdp, Q)  # noqa: E731
    elif kind in (Kind.CONSISTENT, Kind.AGGREGATED):
        fn = lambda Q: consistent_backup(mdp, Q)  # noqa: E731
    elif kind is Kind.ADVANTAGE_LEARNING:
        fn = lambda Q: advantage_learning_backup(mdp, Q, spec.alpha)  # noqa: E731
    elif kind is Kind.PERSISTENT_AL:
        fn = lambda Q: persistent_al_backup(mdp, Q, spec.alpha)  # noqa: E731
    elif kind is Kind.LAZY:
        fn = lambda Q: lazy_backup(mdp, Q, spec.alpha)  # noqa: E731
    elif kind is Kind.CQVI:
        from .aggregation import identity_embedding
        grid, model = identity_embedding(mdp)
        from .aggregation import cqvi_backup
        fn = lambda Q: cqvi_backup(grid, Q, model)  # noqa: E731
    else:
        raise ValueError(f"operator kind {kind.value!r} has no tabular backup")
    if spec.overshoot:
        base = fn
        fn = lambda Q: base(Q) + spec.overshoot  # noqa: E731
    return fn


def effective_alpha(mdp: FiniteMdp, spec: OperatorSpec) -> float:
    """The alpha that Condition 2 is checked with for ``spec``."""
    if spec.kind in ALPHA_KINDS:
        return float(spec.alpha)
    if spec.kind in (Kind.CONSISTENT, Kind.AGGREGATED):
        return float(mdp.discount * mdp.self_loop.max())
    if spec.kind is Kind.CQVI:
        return float(mdp.discount)
    return 0.0


@dataclass
class Theorem1Report:
    cond1: np.ndarray
    cond2: np.ndarray
    cond1_violation: float
    cond2_violation: float
    alpha: float
    reference: str = "bellman"
    worst_cond1: tuple = field(default=())
    worst_cond2: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return bool(self.cond1.all() and self.cond2.all())

    @property
    def n_violations(self) -> int:
        return int((~self.cond1).sum() + (~self.cond2).sum())


def compare_to_reference(TQ, TpQ, Q, alpha, reference="bellman", tol=CONDITION_TOL) -> Theorem1Report:
    """Evaluate both conditions pointwise for ``T'Q`` against the reference ``TQ``."""
    V = state_values(Q)[..., None]
    upper_excess = TpQ - TQ
    lower_deficit = (TQ - alpha * (V - Q)) - TpQ
    cond1 = upper_excess <= tol
    cond2 = lower_deficit <= tol
    return Theorem1Report(
        cond1=cond1,
        cond2=cond2,
        cond1_violation=float(max(upper_excess.max(), 0.0)),
        cond2_violation=float(max(lower_deficit.max(), 0.0)),
        alpha=float(alpha),
        reference=reference,
        worst_cond1=np.unravel_index(np.argmax(upper_excess), upper_excess.shape),
        worst_cond2=np.unravel_index(np.argmax(lower_deficit), lower_deficit.shape),
    )


def theorem1_check(mdp: FiniteMdp, Q: np.ndarray, spec: OperatorSpec) -> Theorem1Report:
    """Check both sufficient conditions pointwise at ``Q``.

    Tabular kinds are compared against :func:`bellman_backup`. ``cqvi`` runs on the
    identity-weight grid embedding of ``mdp`` with ``spec.sample_count`` sampled
    next states per pair, and is compared against the sampled QVI backup built
    from the very same draws.
    """
    Q = check_q_table(Q, mdp)
    alpha = effective_alpha(mdp, spec)
    if spec.kind is Kind.CQVI:
        from .aggregation import identity_embedding, qvi_pair
        grid, sampler = identity_embedding(mdp, sample_count=spec.sample_count, seed=spec.seed)
        batch = Q.reshape((-1,) + Q.shape[-2:])
        pairs = [qvi_pair(grid, q, sampler) for q in batch]
        TQ = np.stack([p[0] for p in pairs]).reshape(Q.shape)
        TpQ = np.stack([np.minimum(*p) for p in pairs]).reshape(Q.shape) + spec.overshoot
        return compare_to_reference(TQ, TpQ, Q, alpha, reference="qvi")
    TQ = bellman_backup(mdp, Q)
    TpQ = tabular_backup(mdp, spec)(Q)
    return compare_to_reference(TQ, TpQ, Q, alpha)
