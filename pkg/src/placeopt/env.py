"""The sensor-relocation MDP: states, swap transitions, best-so-far rewards,
and episode rollouts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RolloutError
from .spatial import ProblemInstance, _as_generator, score_network

# Tolerance on how far a policy's distribution may drift from summing to 1.
PROB_SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PlacementState:
    """An ordering of all n+m location indices; the first n hold sensors."""

    order: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.order, dtype=np.intp).copy()
        if arr.ndim != 1:
            raise DomainError("state order must be a 1-D index sequence")
        size = len(arr)
        if size < 2:
            raise DomainError("state needs at least two positions")
        counts = np.bincount(arr, minlength=size) if arr.min() >= 0 else None
        if counts is None or len(counts) != size or not np.all(counts == 1):
            raise DomainError("state order must be a permutation of 0..n+m-1")
        arr.setflags(write=False)
        object.__setattr__(self, "order", arr)

    def placed(self, n):
        """Location indices currently holding sensors."""
        return self.order[:n]

    def same_as(self, other):
        return np.array_equal(self.order, other.order)


@dataclass(frozen=True)
class MoveAction:
    """Exchange the contents of two sequence positions a and b."""

    a: int
    b: int

    def __post_init__(self):
        if self.a == self.b:
            raise DomainError("move action needs two distinct positions")
        if self.a < 0 or self.b < 0:
            raise DomainError("move positions must be non-negative")


@dataclass(frozen=True)
class EnvConfig:
    """Episode horizon, discount, and the training-side reward multiplier."""

    horizon: int
    discount: float = 0.99
    reward_scale: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise DomainError("discount must lie in (0, 1]")
        if self.reward_scale <= 0.0:
            raise DomainError("reward_scale must be positive")


@dataclass
class TraceStep:
    """One transition: the state acted from, the action, and its outcome."""

    state: PlacementState
    action: MoveAction
    reward: float          # raw reward times the configured reward_scale
    raw_reward: float      # best-so-far MAE improvement, unscaled
    mae: float             # MAE of the state reached by the action
    value_estimate: float
    log_prob: float


@dataclass
class EpisodeTrace:
    """Per-step records plus the best placement seen over the episode."""

    initial_state: PlacementState
    initial_mae: float
    steps: list[TraceStep] = field(default_factory=list)
    best_state: PlacementState = None
    best_mae: float = math.inf
    final_state: PlacementState = None

    def total_raw_reward(self):
        return sum(s.raw_reward for s in self.steps)

    def mean_mae(self):
        """Mean MAE over every visited state, the initial one included."""
        return (self.initial_mae + sum(s.mae for s in self.steps)) / (len(self.steps) + 1)

    def dump_rows(self):
        """Trace table rows: step, action a, action b, raw reward, MAE, best MAE."""
        rows = []
        best = self.initial_mae
        for t, s in enumerate(self.steps):
            best = min(best, s.mae)
            rows.append((t, s.action.a, s.action.b, s.raw_reward, s.mae, best))
        return rows


def write_trace(trace: EpisodeTrace, path):
    with open(path, "w") as fh:
        fh.write("step,a,b,raw_reward,mae,best_mae\n")
        for step, a, b, raw, m, best in trace.dump_rows():
            fh.write(f"{step},{a},{b},{raw!r},{m!r},{best!r}\n")


def initial_state(instance: ProblemInstance, rng_seed) -> PlacementState:
    """Uniformly random permutation of all location indices."""
    rng = _as_generator(rng_seed)
    return PlacementState(rng.permutation(instance.size))


def apply_action(state: PlacementState, action: MoveAction) -> PlacementState:
    """Swap two sequence positions, returning a new state."""
    size = len(state.order)
    if action.a >= size or action.b >= size:
        raise DomainError(f"move positions must lie in [0, {size})")
    order = state.order.copy()
    order[action.a], order[action.b] = order[action.b], order[action.a]
    return PlacementState(order)


def step_reward(instance: ProblemInstance, best_mae_so_far: float,
                next_state: PlacementState):
    """Best-so-far improvement reward: positive only when `next_state` beats
    the best MAE seen so far. Returns (reward, new_best)."""
    if best_mae_so_far < 0.0:
        raise DomainError("best MAE so far cannot be negative")
    next_mae = score_network(instance, next_state.placed(instance.n))
    new_best = min(best_mae_so_far, next_mae)
    return best_mae_so_far - new_best, new_best


def validate_action_probs(pr, size=None):
    """Check a policy output is a proper distribution over position pairs."""
    pr = np.asarray(pr, dtype=np.float64)
    if size is not None and pr.shape != (size, size):
        raise RolloutError(f"expected a {size}x{size} action matrix, got {pr.shape}")
    if not np.all(np.isfinite(pr)):
        raise RolloutError("action distribution contains non-finite entries")
    if pr.min() < 0.0:
        raise RolloutError("action distribution contains negative entries")
    total = pr.sum()
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise RolloutError(f"action distribution sums to {total}, not 1")
    return pr


def _sample_flat_index(flat, rng):
    """Categorical draw over a flattened probability vector."""
    nz = np.flatnonzero(flat > 0.0)
    cum = np.cumsum(flat[nz])
    u = rng.random() * cum[-1]
    return int(nz[min(np.searchsorted(cum, u, side="right"), len(nz) - 1)])


def sample_action(pr, rng) -> tuple[MoveAction, float]:
    """Draw a position pair from a probability matrix; returns the action and
    the log-probability of the drawn entry."""
    pr = validate_action_probs(pr)
    rng = _as_generator(rng)
    size = pr.shape[0]
    idx = _sample_flat_index(pr.ravel(), rng)
    a, b = divmod(idx, size)
    return MoveAction(a, b), float(np.log(pr[a, b]))


def _rollout_streams(rng_seed):
    """Derive the (initial-state, action-sampling) RNG pair for one episode.

    Stateless: the same seed always yields the same two streams, unlike
    SeedSequence.spawn, which advances the parent."""
    if isinstance(rng_seed, np.random.SeedSequence):
        ss = rng_seed
    else:
        ss = np.random.SeedSequence(rng_seed)
    init_ss = np.random.SeedSequence(entropy=ss.entropy,
                                     spawn_key=ss.spawn_key + (0,))
    action_ss = np.random.SeedSequence(entropy=ss.entropy,
                                       spawn_key=ss.spawn_key + (1,))
    return np.random.default_rng(init_ss), np.random.default_rng(action_ss)


def rollout(instance: ProblemInstance, policy, config: EnvConfig, rng_seed,
            value_fn=None) -> EpisodeTrace:
    """Run one episode: sample actions from `policy(state, instance)` for
    `config.horizon` steps, tracking best-so-far rewards.

    `policy` must return an (n+m)x(n+m) probability matrix for any state.
    `value_fn(state, instance)`, when given, fills the value estimates.
    """
    init_rng, action_rng = _rollout_streams(rng_seed)
    state = initial_state(instance, init_rng)
    init_mae = score_network(instance, state.placed(instance.n))
    trace = EpisodeTrace(initial_state=state, initial_mae=init_mae,
                         best_state=state, best_mae=init_mae)
    best = init_mae
    for _ in range(config.horizon):
        pr = validate_action_probs(policy(state, instance), instance.size)
        action, log_prob = sample_action(pr, action_rng)
        nxt = apply_action(state, action)
        next_mae = score_network(instance, nxt.placed(instance.n))
        raw = best - min(best, next_mae)
        if next_mae < best:
            best = next_mae
            trace.best_state = nxt
            trace.best_mae = next_mae
        value = float(value_fn(state, instance)) if value_fn is not None else 0.0
        trace.steps.append(TraceStep(
            state=state, action=action, reward=raw * config.reward_scale,
            raw_reward=raw, mae=next_mae, value_estimate=value,
            log_prob=log_prob))
        state = nxt
    trace.final_state = state
    return trace


def uniform_swap_policy(state, instance):
    """Uniform distribution over all ordered off-diagonal position pairs."""
    size = instance.size
    pr = np.full((size, size), 1.0 / (size * (size - 1)))
    np.fill_diagonal(pr, 0.0)
    return pr


def uniform_mixed_swap_policy(state, instance):
    """Uniform distribution over (placed, candidate) pairs, both orders."""
    size, n = instance.size, instance.n
    pr = np.zeros((size, size))
    pr[:n, n:] = 1.0
    pr[n:, :n] = 1.0
    return pr / pr.sum()
