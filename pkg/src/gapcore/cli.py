"""Command-line runner: ``gapcore solve|verify|bicycle|qlearn``.

Each command reads an optional JSON config, applies flag overrides, writes
its CSVs plus ``manifest.json`` into ``--out``, and exits with

* 0 on success,
* 1 on a configuration error,
* 2 on a numerical abort,
* 3 when ``verify`` finds a property failure.
"""

from __future__ import annotations

import copy
import csv
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .solver import NumericalAbort, fmt

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROPERTY = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "mdp": {"source": "cake", "gamma": 0.5, "epsilon": 0.1},
    "operator": {"kind": "bellman", "alpha": 0.0, "sample_count": 1, "overshoot": 0.0},
    "solver": {"eta": 1.0, "max_sweeps": 10000, "tol": 1e-10},
    "verify": {"corpus_size": 100, "trials": 3, "sweeps": 2000, "q_samples": 5,
               "alphas": [0.1, 0.5, 0.9], "cqvi_samples": 4, "contraction_pairs": 1000,
               "inject_overshoot": None},
    "bicycle": {"preset": "desk", "operators": ["bellman", "cqvi", "al", "pal"], "alpha": 0.1,
                "trajectory_episodes": 1},
    "qlearning": {"rule": "bellman", "alpha": 0.0, "step_size": 0.001, "exploration": 0.3,
                  "episodes": 8000, "max_steps": 30, "start_state": 0, "terminal_states": [],
                  "gap_states": None},
}


class ConfigError(ValueError):
    pass


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, overrides) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            cfg = _merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    return _merge(cfg, overrides)


def build_mdp(block, seed):
    from .domains.cake import CakeParams, make_cake_mdp
    from .domains.random_mdp import RandomMdpParams, make_random_mdp
    from .mdp import load_mdp, validate_mdp

    source = block.get("source", "cake")
    if source == "cake":
        return make_cake_mdp(CakeParams(block.get("gamma", 0.5), block.get("epsilon", 0.1)))
    if source == "random":
        fields = {k: block[k] for k in ("n_states", "n_actions", "branching", "self_loop_bias",
                                        "reward_low", "reward_high", "discount") if k in block}
        return make_random_mdp(RandomMdpParams(seed=block.get("seed", seed), **fields))
    if source == "file":
        path = block.get("path")
        if not path or not Path(path).is_file():
            raise ConfigError(f"MDP file not found: {path}")
        mdp = load_mdp(path)
        problems = validate_mdp(mdp)
        if problems:
            raise ConfigError(f"MDP file {path} is invalid: {problems[0]}")
        return mdp
    raise ConfigError(f"unknown mdp source {source!r}; expected cake, random or file")


def _resolve_threads(threads):
    threads = threads if threads is not None else os.environ.get("GAPCORE_THREADS")
    if threads is None:
        return None
    import numba

    n = int(threads)
    if not 1 <= n <= numba.config.NUMBA_NUM_THREADS:
        raise ConfigError(f"threads must lie in 1..{numba.config.NUMBA_NUM_THREADS}, got {n}")
    numba.set_num_threads(n)
    return n


def _write_manifest(out: Path, command, cfg, outputs, threads, extra=None):
    manifest = {"command": command, "version": __version__, "seed": cfg["seed"], "threads": threads,
                "config": cfg, "outputs": sorted(outputs)}
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def _prepare(ctx_obj, command, overrides):
    cfg = load_config(ctx_obj["config"], overrides)
    if ctx_obj["seed"] is not None:
        cfg["seed"] = ctx_obj["seed"]
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {cfg['seed']}")
    threads = _resolve_threads(ctx_obj["threads"])
    out = Path(ctx_obj["out"])
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out, threads


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


# --------------------------------------------------------------------------- commands

def run_solve(cfg, out: Path):
    from .operators import OperatorSpec, tabular_backup
    from .solver import averaged_value_iteration

    mdp = build_mdp(cfg["mdp"], cfg["seed"])
    op = cfg["operator"]
    spec = OperatorSpec(op.get("kind", "bellman"), alpha=op.get("alpha", 0.0),
                        overshoot=op.get("overshoot", 0.0))
    s = cfg["solver"]
    Q0 = np.zeros((mdp.n_states, mdp.n_actions))
    Q, trace = averaged_value_iteration(tabular_backup(mdp, spec), Q0, s.get("eta", 1.0),
                                        int(s.get("max_sweeps", 10000)), s.get("tol", 1e-10))
    with open(out / "q_final.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "action", "value"])
        for x, a in np.ndindex(Q.shape):
            w.writerow([x, a, fmt(Q[x, a])])
    trace.write_csv(out / "trace.csv", out / "trace_summary.csv")
    return ["q_final.csv", "trace.csv", "trace_summary.csv"], {"converged": trace.converged,
                                                               "sweeps": trace.sweeps}


def run_verify(cfg, out: Path):
    from .domains.random_mdp import make_corpus
    from .operators import Kind, OperatorSpec
    from .oracle import family_specs, property_battery

    v = cfg["verify"]
    specs = family_specs(tuple(v["alphas"]), int(v["cqvi_samples"]), cfg["seed"])
    if v.get("inject_overshoot"):
        specs.append(OperatorSpec(Kind.BELLMAN, overshoot=float(v["inject_overshoot"])))
    corpus = make_corpus(int(v["corpus_size"]), cfg["seed"])
    report = property_battery(corpus, specs, int(v["trials"]), int(v["sweeps"]),
                              int(v["q_samples"]), cfg["seed"], int(v["contraction_pairs"]))
    report.write_csv(out / "verify_report.csv")
    n_fail = len(report.failures)
    for r in report.failures[:20]:
        click.echo(f"FAIL {r.check} mdp={r.mdp_seed} trial={r.trial} state={r.state} "
                   f"action={r.action} observed={r.observed:.6g} expected={r.expected:.6g}", err=True)
    click.echo(f"{len(report.rows)} checks, {n_fail} failures")
    return ["verify_report.csv"], {"rows": len(report.rows), "failures": n_fail}


def _bicycle_spec(name, alpha):
    from .operators import ALPHA_KINDS, Kind, OperatorSpec

    kind = Kind.parse(name)
    if kind is Kind.CONSISTENT:
        kind = Kind.CQVI
    return OperatorSpec(kind, alpha=alpha if kind in ALPHA_KINDS else 0.0)


def run_bicycle(cfg, out: Path):
    from .domains.bicycle_experiment import BicycleConfig, make_bicycle_grid_experiment

    b = dict(cfg["bicycle"])
    preset = b.pop("preset", "desk")
    names = b.pop("operators")
    alpha = b.pop("alpha", 0.1)
    traj = int(b.pop("trajectory_episodes", 0))
    unknown = set(b) - set(BicycleConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown bicycle settings: {sorted(unknown)}")
    b.setdefault("seed", cfg["seed"])
    resolution = b.pop("resolution", None)
    outputs = []
    for name in names:
        spec = _bicycle_spec(name, alpha)
        target = preset if resolution is None else int(resolution)
        exp = make_bicycle_grid_experiment(target, spec, trajectory_episodes=traj, **b)
        run = exp.run(progress=lambda s, c: click.echo(
            f"{s.label} sweep {c.sweep}: fall {c.fall_frequency:.3f} goal {c.goal_frequency:.3f}"))
        tag = spec.kind.value
        run.write_frequencies(out / f"frequency_{tag}.csv")
        outputs.append(f"frequency_{tag}.csv")
        for c in run.checkpoints:
            if traj:
                run.write_trajectories(out / f"trajectory_{tag}_{c.sweep}.csv", c.sweep)
                outputs.append(f"trajectory_{tag}_{c.sweep}.csv")
        with open(out / f"ordering_{tag}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["checkpoint", "max_excess_over_qvi"])
            for c in run.checkpoints:
                w.writerow([c.sweep, fmt(c.ordering_excess)])
        outputs.append(f"ordering_{tag}.csv")
    return outputs, {}


def run_qlearn(cfg, out: Path):
    from .solver import LearningConfig, MdpEnv, q_learning

    mdp = build_mdp(cfg["mdp"], cfg["seed"])
    q = cfg["qlearning"]
    gap_states = q.get("gap_states")
    if gap_states is None and cfg["mdp"].get("source", "cake") == "cake":
        gap_states = [0]  # the absorbing state has no gap to learn
    lc = LearningConfig(q["rule"], q["alpha"], q["step_size"], q["exploration"], int(q["episodes"]),
                        int(q["max_steps"]), int(cfg["seed"]),
                        None if gap_states is None else tuple(gap_states))
    env = MdpEnv(mdp, q.get("start_state", 0), q.get("terminal_states", ()))
    _, trace = q_learning(env, lc)
    returns = dict(trace.metrics["return"])
    with open(out / "learning_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "mean_gap"])
        for ep in range(1, trace.sweeps + 1):
            w.writerow([ep, fmt(returns[ep]), fmt(trace.mean_gap[ep])])
    click.echo(f"final mean gap {trace.mean_gap[-1]:.6g}")
    return ["learning_curve.csv"], {"final_mean_gap": trace.mean_gap[-1]}


RUNNERS = {"solve": run_solve, "verify": run_verify, "bicycle": run_bicycle, "qlearn": run_qlearn}


def _execute(ctx, command, overrides):
    cfg, out, threads = _prepare(ctx.obj, command, overrides)
    outputs, extra = RUNNERS[command](cfg, out)
    _write_manifest(out, command, cfg, outputs + ["manifest.json"], threads, extra)
    if command == "verify" and extra["failures"]:
        ctx.exit(EXIT_PROPERTY)


# --------------------------------------------------------------------------- click wiring

@click.group()
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
              help="JSON config file; flags override its values.")
@click.option("--out", "out", type=click.Path(file_okay=False), default="out", show_default=True,
              help="Output directory.")
@click.option("--seed", type=int, default=None, help="Master seed (unsigned 64-bit).")
@click.option("--threads", type=int, default=None, help="Worker threads (env GAPCORE_THREADS).")
@click.version_option(__version__)
@click.pass_context
def cli(ctx, config, out, seed, threads):
    """Run gap-increasing operator experiments and property checks."""
    ctx.obj = {"config": config, "out": out, "seed": seed, "threads": threads}


@cli.command()
@click.option("--mdp", "mdp_source", default=None, help="cake, random, or a path to an MDP JSON file.")
@click.option("--operator", default=None, help="Operator kind.")
@click.option("--alpha", type=float, default=None)
@click.option("--eta", type=float, default=None, help="Averaging step (1 = plain iteration).")
@click.option("--max-sweeps", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.pass_context
def solve(ctx, mdp_source, operator, alpha, eta, max_sweeps, tol):
    """Iterate one operator to convergence on a tabular MDP."""
    overrides = {"operator": _drop_none({"kind": operator, "alpha": alpha}),
                 "solver": _drop_none({"eta": eta, "max_sweeps": max_sweeps, "tol": tol})}
    if mdp_source is not None:
        overrides["mdp"] = ({"source": mdp_source} if mdp_source in ("cake", "random")
                            else {"source": "file", "path": mdp_source})
    _execute(ctx, "solve", overrides)


@cli.command()
@click.option("--corpus-size", type=int, default=None)
@click.option("--sweeps", type=int, default=None)
@click.option("--inject-overshoot", type=float, default=None,
              help="Add the broken operator TQ + c to the battery.")
@click.pass_context
def verify(ctx, corpus_size, sweeps, inject_overshoot):
    """Run the property battery over a seeded corpus of random MDPs."""
    _execute(ctx, "verify", {"verify": _drop_none({"corpus_size": corpus_size, "sweeps": sweeps,
                                                   "inject_overshoot": inject_overshoot})})


@cli.command()
@click.option("--preset", default=None, help="paper-10, paper-8 or desk.")
@click.option("--sweeps", type=int, default=None)
@click.option("--operators", default=None, help="Comma-separated operator kinds.")
@click.option("--episodes", type=int, default=None, help="Evaluation episodes per checkpoint.")
@click.option("--max-steps", type=int, default=None, help="Step cap per evaluation episode.")
@click.pass_context
def bicycle(ctx, preset, sweeps, operators, episodes, max_steps):
    """Grid value iteration on the bicycle with periodic greedy rollouts."""
    block = _drop_none({"preset": preset, "sweeps": sweeps, "episodes": episodes,
                        "max_steps": max_steps})
    if operators:
        block["operators"] = [s.strip() for s in operators.split(",") if s.strip()]
    _execute(ctx, "bicycle", {"bicycle": block})


@cli.command()
@click.option("--mdp", "mdp_source", default=None, help="cake, random, or a path to an MDP JSON file.")
@click.option("--rule", default=None, help="bellman, al or pal.")
@click.option("--alpha", type=float, default=None)
@click.option("--episodes", type=int, default=None)
@click.pass_context
def qlearn(ctx, mdp_source, rule, alpha, episodes):
    """Tabular Q-learning with one of the three error rules."""
    overrides = {"qlearning": _drop_none({"rule": rule, "alpha": alpha, "episodes": episodes})}
    if mdp_source is not None:
        overrides["mdp"] = ({"source": mdp_source} if mdp_source in ("cake", "random")
                            else {"source": "file", "path": mdp_source})
    _execute(ctx, "qlearn", overrides)


def main(argv=None) -> int:
    """Entry point; returns the process exit code instead of raising ``SystemExit``."""
    try:
        rv = cli.main(args=argv, prog_name="gapcore", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except click.Abort:
        return EXIT_CONFIG
    except NumericalAbort as exc:
        click.echo(f"numerical abort: {exc}", err=True)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
