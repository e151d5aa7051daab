"""Grid value iteration on the bicycle with periodic greedy-policy evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ..aggregation import GridOperator, GridScheme, SamplerHandle, grid_family_backup, sample_terms
from ..operators import Kind, OperatorSpec
from ..solver import averaged_value_iteration, fmt
from . import bicycle as bk


@dataclass(frozen=True)
class BicycleConfig:
    resolution: int = 10
    sweeps: int = 1000
    checkpoint_every: int = 100
    eta: float = 0.1
    sample_count: int = 1
    episodes: int = 50
    max_steps: int = 72_000
    seed: int = 0
    angle_bounds: str = "appendix"
    chunk_nodes: int = 16384

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError(f"resolution must be at least 2, got {self.resolution}")
        for name in ("sweeps", "checkpoint_every", "sample_count", "episodes", "max_steps", "chunk_nodes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        bk.grid_bounds(self.angle_bounds)

    @property
    def checkpoints(self) -> list[int]:
        return list(range(self.checkpoint_every, self.sweeps + 1, self.checkpoint_every))


PRESETS = {
    "paper-10": BicycleConfig(resolution=10, sweeps=1000),
    "paper-8": BicycleConfig(resolution=8, sweeps=1000),
    "desk": BicycleConfig(resolution=6, sweeps=300),
}

# Operators compared on the bicycle, with the alpha used for AL and PAL.
DEFAULT_OPERATORS = (
    OperatorSpec(Kind.BELLMAN),
    OperatorSpec(Kind.CQVI),
    OperatorSpec(Kind.ADVANTAGE_LEARNING, alpha=0.1),
    OperatorSpec(Kind.PERSISTENT_AL, alpha=0.1),
)


def preset(name: str, **overrides) -> BicycleConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown bicycle preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return replace(cfg, **overrides)


@dataclass
class Checkpoint:
    sweep: int
    fall_frequency: float
    goal_frequency: float
    ordering_excess: float  # max over nodes and actions of T'Q - T_QVI Q on shared draws


@dataclass
class BicycleRun:
    spec: OperatorSpec
    config: BicycleConfig
    Q: np.ndarray
    trace: object
    checkpoints: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)

    def write_frequencies(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["checkpoint", "fall_frequency", "goal_frequency"])
            for c in self.checkpoints:
                w.writerow([c.sweep, fmt(c.fall_frequency), fmt(c.goal_frequency)])

    def write_trajectories(self, path, sweep):
        """Trajectories recorded at checkpoint ``sweep``, one row per simulator step."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "step", "x_pos", "y_pos", "psi", "d"])
            for (at, episode), rows in sorted(self.trajectories.items()):
                if at != sweep:
                    continue
                for t, (x, y, psi, d) in enumerate(rows):
                    w.writerow([episode, t, fmt(x), fmt(y), fmt(psi), fmt(d)])


class BicycleExperiment:
    """One operator on one grid; :meth:`run` performs the sweeps and checkpoints."""

    def __init__(self, config: BicycleConfig, spec: OperatorSpec, trajectory_episodes=0):
        self.config = config
        self.spec = spec if isinstance(spec, OperatorSpec) else OperatorSpec(spec)
        lower, upper = bk.grid_bounds(config.angle_bounds)
        self.grid = GridScheme(lower, upper, [config.resolution] * 6)
        self.sampler = SamplerHandle(bk.node_sampler_step, bk.DISCOUNT, config.sample_count, config.seed)
        self.trajectory_episodes = int(trajectory_episodes)

    @property
    def node_count(self) -> int:
        return self.grid.node_count

    def ordering_excess(self, Q, sweep) -> float:
        """Largest ``T'Q - T_QVI Q`` over all pairs, both built from the same draws."""
        terms = sample_terms(self.grid, Q, self.sampler, sweep, self.config.chunk_nodes)
        out = grid_family_backup(self.grid, Q, self.sampler, self.spec, sweep, terms=terms)
        return float(np.max(out - terms.qvi))

    def evaluate(self, Q):
        return bk.evaluate_greedy(self.grid, Q, self.config.episodes, self.config.max_steps,
                                  self.config.seed)

    def run(self, progress=None) -> BicycleRun:
        cfg = self.config
        backup = GridOperator(self.grid, self.sampler, self.spec, cfg.chunk_nodes)
        marks = set(cfg.checkpoints)
        run = BicycleRun(self.spec, cfg, None, None)

        def at_sweep(sweep, Q, trace):
            if sweep in marks:
                summary = self.evaluate(Q)
                cp = Checkpoint(sweep, summary.fall_frequency, summary.goal_frequency,
                                self.ordering_excess(Q, sweep))
                run.checkpoints.append(cp)
                trace.add_metric("fall_frequency", sweep, cp.fall_frequency)
                trace.add_metric("goal_frequency", sweep, cp.goal_frequency)
                for e in range(self.trajectory_episodes):
                    run.trajectories[(sweep, e)] = bk.greedy_trajectory(
                        self.grid, Q, e, cfg.max_steps, cfg.seed)
                if progress is not None:
                    progress(self.spec, cp)
            return False

        Q0 = np.zeros((self.grid.node_count, bk.N_ACTIONS))
        run.Q, run.trace = averaged_value_iteration(backup, Q0, cfg.eta, cfg.sweeps, tol=None,
                                                    callback=at_sweep)
        return run


def make_bicycle_grid_experiment(resolution=10, spec=OperatorSpec(Kind.CQVI), sweeps=None,
                                 **overrides) -> BicycleExperiment:
    """Experiment handle for one operator. ``resolution`` may be an int or a preset name."""
    trajectory_episodes = overrides.pop("trajectory_episodes", 0)
    if isinstance(resolution, str):
        cfg = preset(resolution, **overrides)
    else:
        cfg = BicycleConfig(resolution=int(resolution), **overrides)
    if sweeps is not None:
        cfg = replace(cfg, sweeps=int(sweeps))
    return BicycleExperiment(cfg, spec, trajectory_episodes)
