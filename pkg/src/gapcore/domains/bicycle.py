"""Randløv–Alstrøm bicycle: balance the bike and ride it to a goal 1 km north.

The simulator state is a flat float64 vector (see :data:`STATE_FIELDS`):
tilt and handlebar angles with their rates, back and front wheel contact
points, and the goal centre. The learner only sees the six features
``(omega, omega_dot, theta, theta_dot, psi, d)`` where ``psi`` is the heading
relative to the goal direction and ``d`` the back wheel's distance to it.

All per-step kernels are compiled with numba. Noise enters through a single
uniform ``u`` per step that perturbs the rider displacement by
``NOISE * (2u - 1)``; ``u = 0.5`` is the noiseless step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .._kernels import interp_one, uniform_from_key

# Physical constants of the reference simulator (SI units).
GRAVITY = 9.82
SPEED = 10.0 / 3.6
DT = 0.01
MASS_CYCLE = 15.0
MASS_TYRE = 1.7
MASS_PERSON = 60.0
MASS_TOTAL = MASS_CYCLE + MASS_PERSON
HEIGHT_CM = 0.94
WHEELBASE = 1.11
FRONT_OFFSET = 0.66
PERSON_CM = 0.30
TYRE_RADIUS = 0.34
SPIN_RATE = SPEED / TYRE_RADIUS
I_BIKE = 13.0 / 3.0 * MASS_CYCLE * HEIGHT_CM**2 + MASS_PERSON * (HEIGHT_CM + PERSON_CM) ** 2
I_DC = MASS_TYRE * TYRE_RADIUS**2
I_DV = 1.5 * MASS_TYRE * TYRE_RADIUS**2
I_DL = 0.5 * MASS_TYRE * TYRE_RADIUS**2

FALL_ANGLE = math.pi / 15.0
HANDLEBAR_LIMIT = 4.0 * math.pi / 9.0
NOISE = 0.02
GOAL_RADIUS = 10.0
GOAL_DISTANCE = 1000.0

N_ACTIONS = 9
TORQUES = (-2.0, 0.0, 2.0)
DISPLACEMENTS = (-0.02, 0.0, 0.02)
#: torque 0, displacement 0
IDLE_ACTION = 4

FALL_PENALTY = (0.75 * math.pi**2 - 1.0) * 0.001
GOAL_REWARD = 1.0
DISCOUNT = 0.99

STATE_FIELDS = ("omega", "omega_dot", "theta", "theta_dot", "xb", "yb", "xf", "yf", "goal_x", "goal_y")
STATE_SIZE = len(STATE_FIELDS)
FEATURE_NAMES = ("omega", "omega_dot", "theta", "theta_dot", "psi", "d")

# Outcome codes returned by the compiled step and rollout kernels.
RUNNING, FALLEN, AT_GOAL = 0, 1, 2

GRID_LOWER = np.array([-HANDLEBAR_LIMIT, -2.0, -FALL_ANGLE, -0.5, -math.pi, 10.0])
GRID_UPPER = np.array([HANDLEBAR_LIMIT, 2.0, FALL_ANGLE, 0.5, math.pi, 1200.0])


def grid_bounds(angle_bounds="appendix"):
    """Feature-clamping bounds for the grid.

    ``"appendix"`` pairs the tilt with ±4π/9 and the handlebar with ±π/15;
    ``"swapped"`` exchanges the two ranges, matching the roles those limits
    play in the simulator (tilt falls at π/15, handlebars clamp at 4π/9).
    """
    lower, upper = GRID_LOWER.copy(), GRID_UPPER.copy()
    if angle_bounds == "swapped":
        lower[[0, 2]] = lower[[2, 0]]
        upper[[0, 2]] = upper[[2, 0]]
    elif angle_bounds != "appendix":
        raise ValueError(f"angle_bounds must be 'appendix' or 'swapped', got {angle_bounds!r}")
    return lower, upper


@njit(cache=True)
def _sign(x):
    return (x > 0.0) - (x < 0.0)


@njit(cache=True)
def _wrap(angle):
    return math.atan2(math.sin(angle), math.cos(angle))


@njit(cache=True)
def _features(s, out):
    dx = s[6] - s[4]
    dy = s[7] - s[5]
    heading = math.atan2(-dx, dy)
    gx = s[8] - s[4]
    gy = s[9] - s[5]
    goal_dir = math.atan2(-gx, gy)
    out[0] = s[0]
    out[1] = s[1]
    out[2] = s[2]
    out[3] = s[3]
    out[4] = _wrap(heading - goal_dir)
    out[5] = math.sqrt(gx * gx + gy * gy)


@njit(cache=True)
def shaping_reward(psi):
    return (math.pi**2 / 4.0 - psi * psi - 1.0) * 0.001


@njit(cache=True)
def _physics(s, action, u, out):
    """One Euler step of the bicycle; writes the next state into ``out``, returns the outcome code."""
    torque = 2.0 * (action // 3 - 1)
    disp = 0.02 * (action % 3 - 1) + NOISE * (2.0 * u - 1.0)
    omega, omega_dot, theta, theta_dot = s[0], s[1], s[2], s[3]
    xb, yb, xf, yf = s[4], s[5], s[6], s[7]

    if theta == 0.0:
        inv_rf = 0.0
        inv_rb = 0.0
        inv_rcm = 0.0
    else:
        inv_rf = abs(math.sin(theta)) / WHEELBASE
        inv_rb = abs(math.tan(theta)) / WHEELBASE
        tan_t = abs(math.tan(theta))
        # multiplied through by tan so tiny angles do not divide by an underflowed square
        inv_rcm = tan_t / math.sqrt(((WHEELBASE - FRONT_OFFSET) * tan_t) ** 2 + WHEELBASE**2)

    phi = omega + math.atan(disp / HEIGHT_CM)
    omega_ddot = (MASS_TOTAL * HEIGHT_CM * GRAVITY * math.sin(phi)
                  - math.cos(phi) * (I_DC * SPIN_RATE * theta_dot
                                     + _sign(theta) * SPEED**2
                                     * (MASS_TYRE * TYRE_RADIUS * (inv_rf + inv_rb)
                                        + MASS_TOTAL * HEIGHT_CM * inv_rcm))) / I_BIKE
    theta_ddot = (torque - I_DV * SPIN_RATE * omega_dot) / I_DL

    omega_dot = omega_dot + omega_ddot * DT
    omega = omega + omega_dot * DT
    theta_dot = theta_dot + theta_ddot * DT
    theta = theta + theta_dot * DT
    if abs(theta) > HANDLEBAR_LIMIT:
        theta = _sign(theta) * HANDLEBAR_LIMIT

    heading = math.atan2(-(xf - xb), yf - yb)
    step = SPEED * DT
    turn_f = 0.0
    turn_b = 0.0
    if inv_rf > 0.0:
        t = 0.5 * step * inv_rf
        turn_f = _sign(theta) * (0.5 * math.pi if t > 1.0 else math.asin(t))
    if inv_rb > 0.0:
        t = 0.5 * step * inv_rb
        turn_b = _sign(theta) * (0.5 * math.pi if t > 1.0 else math.asin(t))
    dir_f = heading + theta + turn_f
    dir_b = heading + turn_b
    xf = xf - step * math.sin(dir_f)
    yf = yf + step * math.cos(dir_f)
    xb = xb - step * math.sin(dir_b)
    yb = yb + step * math.cos(dir_b)
    # Keep the wheel separation at the wheelbase against round-off drift.
    length = math.sqrt((xf - xb) ** 2 + (yf - yb) ** 2)
    xb = xf + (xb - xf) * WHEELBASE / length
    yb = yf + (yb - yf) * WHEELBASE / length

    out[0] = omega
    out[1] = omega_dot
    out[2] = theta
    out[3] = theta_dot
    out[4] = xb
    out[5] = yb
    out[6] = xf
    out[7] = yf
    out[8] = s[8]
    out[9] = s[9]
    if abs(omega) > FALL_ANGLE:
        return FALLEN
    gx = s[8] - xb
    gy = s[9] - yb
    if gx * gx + gy * gy <= GOAL_RADIUS * GOAL_RADIUS:
        return AT_GOAL
    return RUNNING


@njit(cache=True)
def _reward(outcome, psi):
    if outcome == FALLEN:
        return -FALL_PENALTY
    if outcome == AT_GOAL:
        return GOAL_REWARD
    return shaping_reward(psi)


@njit(cache=True)
def _state_from_features(f, s):
    """Simulator state with the back wheel at the origin, heading north, matching features ``f``."""
    s[0] = f[0]
    s[1] = f[1]
    s[2] = f[2]
    s[3] = f[3]
    s[4] = 0.0
    s[5] = 0.0
    s[6] = 0.0
    s[7] = WHEELBASE
    # heading 0 and psi = heading - goal_dir, so the goal lies in direction -psi
    s[8] = f[5] * math.sin(f[4])
    s[9] = f[5] * math.cos(f[4])


@njit(cache=True, parallel=True)
def step_states(states, actions, uniforms):
    n = states.shape[0]
    nxt = np.empty_like(states)
    rewards = np.empty(n)
    outcomes = np.empty(n, np.int64)
    for i in prange(n):
        feat = np.empty(6)
        outcomes[i] = _physics(states[i], actions[i], uniforms[i], nxt[i])
        _features(nxt[i], feat)
        rewards[i] = _reward(outcomes[i], feat[4])
    return nxt, rewards, outcomes


@njit(cache=True, parallel=True)
def step_features(points, actions, uniforms):
    """Step from states synthesized at feature points; returns next features, rewards, terminal flags."""
    n = points.shape[0]
    nxt = np.empty((n, 6))
    rewards = np.empty(n)
    terminal = np.empty(n, np.bool_)
    for i in prange(n):
        s = np.empty(STATE_SIZE)
        s2 = np.empty(STATE_SIZE)
        _state_from_features(points[i], s)
        outcome = _physics(s, actions[i], uniforms[i], s2)
        _features(s2, nxt[i])
        rewards[i] = _reward(outcome, nxt[i, 4])
        terminal[i] = outcome != RUNNING
    return nxt, rewards, terminal


def node_sampler_step(points, actions, uniforms):
    """:class:`~gapcore.aggregation.SamplerHandle` step over the six features."""
    return step_features(np.ascontiguousarray(points, dtype=np.float64),
                         np.ascontiguousarray(actions, dtype=np.int64),
                         np.ascontiguousarray(uniforms[:, 0], dtype=np.float64))


@dataclass
class BicycleState:
    omega: float = 0.0
    omega_dot: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0
    xb: float = 0.0
    yb: float = 0.0
    xf: float = 0.0
    yf: float = WHEELBASE
    goal_x: float = 0.0
    goal_y: float = GOAL_DISTANCE
    fallen: bool = False
    at_goal: bool = False

    @property
    def terminal(self) -> bool:
        return self.fallen or self.at_goal

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in STATE_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, arr, outcome=RUNNING) -> "BicycleState":
        return cls(*map(float, arr), fallen=outcome == FALLEN, at_goal=outcome == AT_GOAL)

    def features(self) -> np.ndarray:
        out = np.empty(6)
        _features(self.to_array(), out)
        return out

    @property
    def psi(self) -> float:
        return float(self.features()[4])

    @property
    def d(self) -> float:
        return float(self.features()[5])


def start_state(u=0.5, tilt_noise=0.01) -> BicycleState:
    """Upright at the origin facing the goal, tilt perturbed by ``tilt_noise * (2u - 1)``."""
    return BicycleState(omega=tilt_noise * (2.0 * u - 1.0))


def bicycle_reward(psi, fallen=False, at_goal=False) -> float:
    if fallen:
        return -FALL_PENALTY
    if at_goal:
        return GOAL_REWARD
    return float(shaping_reward(float(psi)))


def bicycle_step(state: BicycleState, action: int, seed=None, noise=None):
    """Advance one 10 ms step.

    ``noise`` is the displacement perturbation in metres (must lie within
    ``±NOISE``); if it is omitted it is drawn uniformly from
    ``np.random.default_rng(seed)``. Returns ``(next_state, reward, terminal)``.
    """
    if state.terminal:
        raise ValueError("cannot step a terminal bicycle state")
    if not 0 <= int(action) < N_ACTIONS:
        raise ValueError(f"action must lie in 0..{N_ACTIONS - 1}, got {action}")
    if noise is None:
        u = float(np.random.default_rng(seed).random())
    else:
        if abs(noise) > NOISE:
            raise ValueError(f"noise must lie within ±{NOISE}, got {noise}")
        u = 0.5 * (noise / NOISE + 1.0)
    nxt, rew, outcome = step_states(state.to_array()[None, :], np.array([int(action)]), np.array([u]))
    nxt_state = BicycleState.from_array(nxt[0], int(outcome[0]))
    return nxt_state, float(rew[0]), nxt_state.terminal


@njit(cache=True)
def _greedy(q, n):
    best = 0
    for b in range(1, n):
        if q[b] > q[best]:
            best = b
    return best


@njit(cache=True)
def _run_episode(start, seed, episode, max_steps, lower, inv_step, res, strides, table, record):
    s = start.copy()
    s2 = np.empty(STATE_SIZE)
    feat = np.empty(6)
    q = np.empty(table.shape[1])
    base = np.empty(6, np.int64)
    frac = np.empty(6)
    idx = np.empty(64, np.int64)
    wts = np.empty(64)
    outcome = RUNNING
    steps = 0
    for t in range(max_steps):
        _features(s, feat)
        if record.shape[0] > 0:
            record[t, 0] = s[4]
            record[t, 1] = s[5]
            record[t, 2] = feat[4]
            record[t, 3] = feat[5]
        interp_one(feat, lower, inv_step, res, strides, table, -1, q, base, frac, idx, wts)
        a = _greedy(q, table.shape[1])
        u = uniform_from_key(seed, np.uint64(episode), np.uint64(t), np.uint64(1), np.uint64(0), np.uint64(0))
        outcome = _physics(s, a, u, s2)
        s[:] = s2
        steps = t + 1
        if outcome != RUNNING:
            break
    if record.shape[0] > 0:
        _features(s, feat)
        record[steps, 0] = s[4]
        record[steps, 1] = s[5]
        record[steps, 2] = feat[4]
        record[steps, 3] = feat[5]
    return outcome, steps


@njit(cache=True, parallel=True)
def _rollouts(starts, seed, max_steps, lower, inv_step, res, strides, table):
    n = starts.shape[0]
    outcomes = np.empty(n, np.int64)
    steps = np.empty(n, np.int64)
    empty = np.empty((0, 4))
    for e in prange(n):
        o, k = _run_episode(starts[e], seed, e, max_steps, lower, inv_step, res, strides, table, empty)
        outcomes[e] = o
        steps[e] = k
    return outcomes, steps


def _episode_starts(n_episodes, seed):
    keys = np.zeros((n_episodes, 5), dtype=np.uint64)
    keys[:, 0] = np.arange(n_episodes, dtype=np.uint64)
    keys[:, 2] = np.uint64(2)
    from .._kernels import hash_uniforms
    u = hash_uniforms(np.uint64(seed), keys)
    return np.stack([start_state(float(ui)).to_array() for ui in u])


@dataclass
class RolloutSummary:
    outcomes: np.ndarray
    steps: np.ndarray

    @property
    def fall_frequency(self) -> float:
        return float(np.mean(self.outcomes == FALLEN))

    @property
    def goal_frequency(self) -> float:
        return float(np.mean(self.outcomes == AT_GOAL))


def evaluate_greedy(grid, Qz, n_episodes=50, max_steps=72_000, seed=0) -> RolloutSummary:
    """Run the greedy policy of the interpolated Q-function from perturbed starts."""
    table = np.ascontiguousarray(Qz, dtype=np.float64)
    starts = _episode_starts(n_episodes, seed)
    outcomes, steps = _rollouts(starts, np.uint64(seed), int(max_steps), *grid._kernel_args(), table)
    return RolloutSummary(outcomes, steps)


def greedy_trajectory(grid, Qz, episode=0, max_steps=72_000, seed=0) -> np.ndarray:
    """``(steps + 1, 4)`` array of ``(x_pos, y_pos, psi, d)`` along one greedy episode."""
    table = np.ascontiguousarray(Qz, dtype=np.float64)
    start = _episode_starts(episode + 1, seed)[episode]
    record = np.zeros((max_steps + 1, 4))
    _, steps = _run_episode(start, np.uint64(seed), episode, int(max_steps),
                            *grid._kernel_args(), table, record)
    return record[: steps + 1]


def fixed_action_episode(action=IDLE_ACTION, max_steps=1000, seed=0, u=0.5):
    """Hold one action from a perturbed start; returns ``(outcome, steps)``."""
    s = start_state(u)
    rng = np.random.default_rng(seed)
    for t in range(max_steps):
        s, _, done = bicycle_step(s, action, noise=NOISE * (2.0 * rng.random() - 1.0))
        if done:
            return (FALLEN if s.fallen else AT_GOAL), t + 1
    return RUNNING, max_steps
