"""Aggregation over uniform grids and the interpolated operator family.

Grid nodes play the role of aggregate states ``z``; the aggregate-to-state
map is the identity on nodes and the state-to-aggregate map is multilinear
interpolation. Two operator routes are provided:

* model-based: :func:`induce_node_mdp` builds the finite MDP over nodes and
  :func:`aggregated_backup` runs a tabular backup on it;
* sample-based (Q-value interpolation): :func:`qvi_backup`,
  :func:`qvi_consistent_term` and :func:`cqvi_backup` back up interpolated
  Q-values at next states drawn from a sampler.

Sample-based backups draw ``k`` next states per ``(node, action)``; the
noise for draw ``i`` is a pure function of ``(seed, node, action, sweep, i)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .mdp import FiniteMdp, state_values
from .operators import Kind, OperatorSpec, bellman_backup, consistent_backup
from .utils.validation import check_points, check_positive_int, check_q_table

DEFAULT_CHUNK_NODES = 16384


@dataclass(frozen=True, eq=False)
class GridScheme:
    """Uniform tensor grid; nodes are numbered in C order (last dimension fastest)."""

    lower: np.ndarray
    upper: np.ndarray
    resolution: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        res = np.atleast_1d(np.asarray(self.resolution, dtype=np.int64))
        if not (lo.shape == hi.shape == res.shape) or lo.ndim != 1:
            raise ValueError("lower, upper and resolution must be 1-D and of equal length")
        if np.any(~(lo < hi)):
            raise ValueError("lower < upper required in every dimension")
        if np.any(res < 2):
            raise ValueError("each dimension needs at least 2 nodes")
        for name, arr in (("lower", lo), ("upper", hi), ("resolution", res)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_blocks(cls, blocks) -> "GridScheme":
        """Build from config blocks ``[{"lower": .., "upper": .., "nodes": ..}, ...]``."""
        return cls([b["lower"] for b in blocks], [b["upper"] for b in blocks],
                   [b["nodes"] for b in blocks])

    def to_blocks(self) -> list[dict]:
        return [{"lower": float(lo), "upper": float(hi), "nodes": int(n)}
                for lo, hi, n in zip(self.lower, self.upper, self.resolution)]

    @property
    def dims(self) -> int:
        return self.lower.shape[0]

    @property
    def node_count(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def step(self) -> np.ndarray:
        return (self.upper - self.lower) / (self.resolution - 1)

    @property
    def strides(self) -> np.ndarray:
        s = np.ones(self.dims, dtype=np.int64)
        for k in range(self.dims - 2, -1, -1):
            s[k] = s[k + 1] * self.resolution[k + 1]
        return s

    def axis(self, k: int) -> np.ndarray:
        return np.linspace(self.lower[k], self.upper[k], int(self.resolution[k]))

    def node_points(self, nodes=None) -> np.ndarray:
        """Coordinates of the given nodes (all nodes by default), shape ``(n, dims)``."""
        if nodes is None:
            nodes = np.arange(self.node_count)
        multi = np.unravel_index(np.asarray(nodes), tuple(self.resolution))
        return np.stack([self.axis(k)[m] for k, m in enumerate(multi)], axis=-1)

    def clamp(self, X) -> np.ndarray:
        return np.clip(check_points(X, self.dims), self.lower, self.upper)

    def _kernel_args(self):
        return (self.lower, 1.0 / self.step, self.resolution, self.strides)


def interpolation_weights(grid: GridScheme, x) -> list[tuple[int, float]]:
    """Nonzero multilinear weights ``(node, weight)`` for one point, clamped to the grid."""
    x = np.clip(np.asarray(x, dtype=np.float64).reshape(-1), grid.lower, grid.upper)
    if x.shape[0] != grid.dims:
        raise ValueError(f"point has {x.shape[0]} coordinates, grid has {grid.dims}")
    per_dim = []
    for k in range(grid.dims):
        n = int(grid.resolution[k])
        u = (x[k] - grid.lower[k]) / grid.step[k]
        if abs(u - round(u)) <= _kernels.SNAP:
            u = float(round(u))
        i = min(int(np.floor(u)), n - 2)
        t = u - i
        per_dim.append([(i, 1.0 - t), (i + 1, t)])
    out = []
    for corner in itertools.product(*per_dim):
        w = 1.0
        for _, c in corner:
            w *= c
        if w != 0.0:
            node = int(np.ravel_multi_index([i for i, _ in corner], tuple(grid.resolution)))
            out.append((node, w))
    return out


def q_interpolate(grid: GridScheme, Qz, x, a: int) -> float:
    Qz = check_q_table(Qz, n_states=grid.node_count)
    return float(sum(w * Qz[node, a] for node, w in interpolation_weights(grid, x)))


def interpolate_table(grid: GridScheme, Qz, X, self_nodes=None):
    """Interpolate every column of ``Qz`` at each row of ``X``.

    Returns ``(values, self_weight)`` where ``self_weight[i]`` is the weight
    of node ``self_nodes[i]`` in the interpolation of ``X[i]``.
    """
    Qz = np.ascontiguousarray(check_q_table(Qz, n_states=grid.node_count))
    X = check_points(X, grid.dims)
    if self_nodes is None:
        self_nodes = np.full(X.shape[0], -1, dtype=np.int64)
    return _kernels.interpolate_rows(X, *grid._kernel_args(), Qz,
                                     np.ascontiguousarray(self_nodes, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class SamplerHandle:
    """Seeded next-state sampler over continuous points.

    ``step(points, actions, uniforms)`` receives ``uniforms`` of shape
    ``(n, n_uniforms)`` and returns ``(next_points, rewards, terminal)``.
    """

    step: Callable
    discount: float
    sample_count: int = 1
    seed: int = 0
    n_uniforms: int = 1

    def __post_init__(self):
        check_positive_int(self.sample_count, "sample_count")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")

    def uniforms(self, nodes, actions, sweep, draw):
        n = len(nodes)
        keys = np.empty((n, 5), dtype=np.uint64)
        keys[:, 0] = np.asarray(nodes, dtype=np.uint64)
        keys[:, 1] = np.asarray(actions, dtype=np.uint64)
        keys[:, 2] = np.uint64(sweep)
        keys[:, 3] = np.uint64(draw)
        out = np.empty((n, self.n_uniforms))
        for j in range(self.n_uniforms):
            keys[:, 4] = np.uint64(j)
            out[:, j] = _kernels.hash_uniforms(np.uint64(self.seed), keys)
        return out

    def draws(self, points, actions, nodes, sweep):
        weight = np.full(len(nodes), 1.0 / self.sample_count)
        for i in range(self.sample_count):
            nxt, rew, term = self.step(points, actions, self.uniforms(nodes, actions, sweep, i))
            yield weight, nxt, rew, term


@dataclass(frozen=True, eq=False)
class ExpectationModel:
    """Exact next-state distribution, used where samples would add noise.

    ``outcomes(points, actions)`` yields ``(prob, next_points, rewards, terminal)``
    tuples whose ``prob`` columns sum to 1 per row.
    """

    outcomes: Callable
    discount: float

    def draws(self, points, actions, nodes, sweep):
        yield from self.outcomes(points, actions)


@dataclass
class SampleTerms:
    """Per-(node, action) pieces of the sample-based backups for one sweep."""

    reward: np.ndarray
    qvi: np.ndarray
    qvi_prime: np.ndarray
    repeat: np.ndarray


def sample_terms(grid: GridScheme, Qz, sampler, sweep: int = 0,
                 chunk_nodes: int = DEFAULT_CHUNK_NODES) -> SampleTerms:
    """Evaluate QVI, its consistent correction and the repeat-action term on shared draws."""
    Qz = np.ascontiguousarray(check_q_table(Qz, n_states=grid.node_count))
    if Qz.ndim != 2:
        raise ValueError("sample_terms works on a single (nodes, actions) table")
    n_nodes, n_actions = Qz.shape
    gamma = sampler.discount
    out = {k: np.empty((n_nodes, n_actions)) for k in ("reward", "qvi", "qvi_prime", "repeat")}
    kargs = grid._kernel_args()
    for start in range(0, n_nodes, chunk_nodes):
        stop = min(start + chunk_nodes, n_nodes)
        nodes = np.repeat(np.arange(start, stop, dtype=np.int64), n_actions)
        actions = np.tile(np.arange(n_actions, dtype=np.int64), stop - start)
        points = grid.node_points(nodes)
        rew = np.zeros(len(nodes))
        cont = np.zeros(len(nodes))
        cont_prime = np.zeros(len(nodes))
        cont_repeat = np.zeros(len(nodes))
        for weight, nxt, r, term in sampler.draws(points, actions, nodes, sweep):
            nxt = np.ascontiguousarray(nxt, dtype=np.float64).reshape(len(nodes), grid.dims)
            live = np.ascontiguousarray(weight * ~np.asarray(term, dtype=bool), dtype=np.float64)
            rew += weight * r
            _kernels.continuation_terms(nxt, live, nodes, actions, *kargs, Qz,
                                        cont, cont_prime, cont_repeat)
        sl = slice(start, stop)
        out["reward"][sl] = rew.reshape(-1, n_actions)
        out["qvi"][sl] = (rew + gamma * cont).reshape(-1, n_actions)
        out["qvi_prime"][sl] = (rew + gamma * cont_prime).reshape(-1, n_actions)
        out["repeat"][sl] = (rew + gamma * cont_repeat).reshape(-1, n_actions)
    return SampleTerms(**out)


def _per_table(fn, Qz):
    Qz = np.asarray(Qz, dtype=np.float64)
    if Qz.ndim == 2:
        return fn(Qz)
    flat = Qz.reshape((-1,) + Qz.shape[-2:])
    return np.stack([fn(q) for q in flat]).reshape(Qz.shape)


def qvi_backup(grid, Qz, sampler, sweep=0, chunk_nodes=DEFAULT_CHUNK_NODES):
    return _per_table(lambda q: sample_terms(grid, q, sampler, sweep, chunk_nodes).qvi, Qz)


def qvi_consistent_term(grid, Qz, sampler, sweep=0, chunk_nodes=DEFAULT_CHUNK_NODES):
    return _per_table(lambda q: sample_terms(grid, q, sampler, sweep, chunk_nodes).qvi_prime, Qz)


def qvi_pair(grid, Qz, sampler, sweep=0, chunk_nodes=DEFAULT_CHUNK_NODES):
    """``(T_QVI Q, T'_QVI Q)`` computed from one shared set of draws."""
    t = sample_terms(grid, Qz, sampler, sweep, chunk_nodes)
    return t.qvi, t.qvi_prime


def cqvi_backup(grid, Qz, sampler, sweep=0, chunk_nodes=DEFAULT_CHUNK_NODES):
    """Elementwise min of the QVI backup and its consistent correction, on shared draws."""
    return _per_table(lambda q: np.minimum(*qvi_pair(grid, q, sampler, sweep, chunk_nodes)), Qz)


def grid_family_backup(grid, Qz, sampler, spec: OperatorSpec, sweep=0,
                       chunk_nodes=DEFAULT_CHUNK_NODES, terms: SampleTerms | None = None):
    """Apply any family member on the grid, with QVI in the role of the Bellman backup."""
    spec = spec if isinstance(spec, OperatorSpec) else OperatorSpec(spec)

    def one(q):
        t = terms if terms is not None else sample_terms(grid, q, sampler, sweep, chunk_nodes)
        V = state_values(q)[:, None]
        kind = spec.kind
        if kind in (Kind.BELLMAN, Kind.QVI):
            out = t.qvi
        elif kind in (Kind.CONSISTENT, Kind.CQVI):
            out = np.minimum(t.qvi, t.qvi_prime)
        elif kind is Kind.ADVANTAGE_LEARNING:
            out = t.qvi - spec.alpha * (V - q)
        elif kind is Kind.PERSISTENT_AL:
            out = np.maximum(t.qvi - spec.alpha * (V - q), t.repeat)
        elif kind is Kind.LAZY:
            keep = (q <= t.qvi) & (t.qvi <= spec.alpha * V + (1.0 - spec.alpha) * q)
            out = np.where(keep, q, t.qvi)
        else:
            raise ValueError(f"operator kind {kind.value!r} has no grid form")
        return out + spec.overshoot if spec.overshoot else out

    return _per_table(one, Qz)


class GridOperator:
    """Sweep-aware backup closure for the solvers: ``op(Q, sweep=k)``."""

    wants_sweep = True

    def __init__(self, grid, sampler, spec, chunk_nodes=DEFAULT_CHUNK_NODES):
        self.grid = grid
        self.sampler = sampler
        self.spec = spec if isinstance(spec, OperatorSpec) else OperatorSpec(spec)
        self.chunk_nodes = chunk_nodes

    def __call__(self, Qz, sweep=0):
        return grid_family_backup(self.grid, Qz, self.sampler, self.spec, sweep, self.chunk_nodes)


def aggregated_backup(node_mdp: FiniteMdp, Qz, consistent: bool = False):
    """Tabular backup over the MDP induced on the grid nodes."""
    return consistent_backup(node_mdp, Qz) if consistent else bellman_backup(node_mdp, Qz)


def induce_node_mdp(grid: GridScheme, n_actions: int, model: ExpectationModel) -> FiniteMdp:
    """Finite MDP over nodes: ``P'(z''|z,a) = E_P E_A 1[z'' = z']`` and ``R'(z,a) = R(z,a)``.

    Terminal outcomes are not representable in the induced MDP and raise.
    """
    n = grid.node_count
    nodes = np.repeat(np.arange(n, dtype=np.int64), n_actions)
    actions = np.tile(np.arange(n_actions, dtype=np.int64), n)
    points = grid.node_points(nodes)
    P = np.zeros((n * n_actions, n))
    R = np.zeros(n * n_actions)
    rows = np.arange(n * n_actions)[:, None]
    for prob, nxt, rew, term in model.draws(points, actions, nodes, 0):
        if np.any(term):
            raise ValueError("induced node MDPs cannot represent terminal transitions")
        nxt = np.clip(check_points(nxt, grid.dims), grid.lower, grid.upper)
        idx, wts = _kernels.corner_weights(nxt, *grid._kernel_args())
        np.add.at(P, (np.broadcast_to(rows, idx.shape), idx), prob[:, None] * wts)
        R += prob * rew
    return FiniteMdp(P.reshape(n, n_actions, n), R.reshape(n, n_actions), model.discount)


def identity_embedding(mdp: FiniteMdp, sample_count: int | None = None, seed: int = 0):
    """Place the states of ``mdp`` on a 1-D grid so every next state is exactly a node.

    With ``sample_count=None`` the returned model enumerates next states
    exactly; otherwise it draws ``sample_count`` next states per pair.
    """
    S = mdp.n_states
    if S < 2:
        raise ValueError("identity embedding needs at least 2 states")
    grid = GridScheme([0.0], [float(S - 1)], [S])
    P, R = mdp.transition, mdp.reward

    def _states(points):
        return np.rint(points[:, 0]).astype(np.int64)

    if sample_count is None:
        def outcomes(points, actions):
            s = _states(points)
            n = len(s)
            for y in range(S):
                yield P[s, actions, y], np.full((n, 1), float(y)), R[s, actions], np.zeros(n, bool)

        return grid, ExpectationModel(outcomes, mdp.discount)

    cdf = np.cumsum(P, axis=2)

    def step(points, actions, u):
        s = _states(points)
        nxt = (u[:, :1] >= cdf[s, actions]).sum(axis=1)
        nxt = np.minimum(nxt, S - 1)
        return nxt[:, None].astype(np.float64), R[s, actions], np.zeros(len(s), bool)

    return grid, SamplerHandle(step, mdp.discount, sample_count, seed)
