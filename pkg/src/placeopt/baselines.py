"""Comparison heuristics: stochastic pair search and greedy
distance-maximizing search, sharing the environment's scoring."""
from __future__ import annotations

from itertools import combinations

import numpy as np

from .env import MoveAction, PlacementState, apply_action
from .errors import DomainError
from .spatial import ProblemInstance, _as_generator, score_network

# Exhaustive enumeration over C(n+m, n) placements is only allowed at toy sizes.
EXHAUSTIVE_LIMIT = 12


def stochastic_search(instance: ProblemInstance, initial: PlacementState,
                      iterations: int = 1000, rng_seed=0,
                      return_trace: bool = False):
    """Random walk over (placed, candidate) swaps, tracking the best MAE ever
    seen. The walk continues from each moved state. Returns (best_state,
    best_mae), plus the list of visited MAEs (initial included) when
    `return_trace` is set."""
    if iterations < 0:
        raise DomainError("iterations must be >= 0")
    rng = _as_generator(rng_seed)
    n, size = instance.n, instance.size
    state = initial
    best_state = initial
    best = score_network(instance, initial.placed(n))
    maes = [best]
    for _ in range(iterations):
        a = int(rng.integers(n))
        b = int(n + rng.integers(size - n))
        state = apply_action(state, MoveAction(a, b))
        mae_t = score_network(instance, state.placed(n))
        maes.append(mae_t)
        if mae_t < best:
            best = mae_t
            best_state = state
    if return_trace:
        return best_state, best, maes
    return best_state, best


def _pairwise_distance_sum(coords):
    d = coords[:, None, :] - coords[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).sum() / 2.0)


def context_distance_search(instance: ProblemInstance, initial: PlacementState,
                            max_steps: int = 1000, return_trace: bool = False):
    """Greedy best-improvement search maximizing the summed pairwise distance
    among placed sensors; each step applies the (placed, candidate) move that
    most increases that sum, stopping at a local maximum or `max_steps`.
    Returns the visited state with the lowest MAE.

    With `return_trace`, also returns the list of (separation, mae) values for
    every visited state, the initial one included.
    """
    if max_steps < 0:
        raise DomainError("max_steps must be >= 0")
    n, size = instance.n, instance.size
    state = initial
    best_state = initial
    best = score_network(instance, initial.placed(n))
    separation = _pairwise_distance_sum(instance.coords[initial.placed(n)])
    trace = [(separation, best)]
    for _ in range(max_steps):
        placed = state.placed(n)
        placed_xy = instance.coords[placed]
        # dist_to_placed[j, i]: distance of placed sensor i to placed sensor j
        diffs = placed_xy[:, None, :] - placed_xy[None, :, :]
        dist_placed = np.sqrt((diffs * diffs).sum(-1))
        loss_per_removal = dist_placed.sum(axis=0)
        cand_xy = instance.coords[state.order[n:]]
        cd = cand_xy[:, None, :] - placed_xy[None, :, :]
        dist_cand = np.sqrt((cd * cd).sum(-1))  # (m, n)
        # Moving sensor at placed slot a to candidate slot b changes the sum by
        # gain[b, a] = sum_i!=a d(cand_b, placed_i) - sum_i!=a d(placed_a, placed_i)
        gain = (dist_cand.sum(axis=1)[:, None] - dist_cand) - loss_per_removal[None, :]
        b_off, a = np.unravel_index(int(np.argmax(gain)), gain.shape)
        if gain[b_off, a] <= 0.0:
            break
        state = apply_action(state, MoveAction(int(a), int(n + b_off)))
        separation += float(gain[b_off, a])
        mae_t = score_network(instance, state.placed(n))
        trace.append((separation, mae_t))
        if mae_t < best:
            best = mae_t
            best_state = state
    if return_trace:
        return best_state, best, trace
    return best_state, best


def exhaustive_best_placement(instance: ProblemInstance):
    """Enumerate every C(n+m, n) placement and return (indices, mae) of the
    lowest-MAE one. Gated to n+m <= EXHAUSTIVE_LIMIT."""
    if instance.size > EXHAUSTIVE_LIMIT:
        raise DomainError(
            f"exhaustive enumeration is limited to n+m <= {EXHAUSTIVE_LIMIT}")
    best_idx, best = None, np.inf
    for combo in combinations(range(instance.size), instance.n):
        mae_c = score_network(instance, list(combo))
        if mae_c < best:
            best, best_idx = mae_c, combo
    return best_idx, best


def context_distance_exhaustive(instance: ProblemInstance):
    """True exhaustive variant of the distance heuristic: over every possible
    placement, pick the one maximizing the summed pairwise sensor distance;
    returns (indices, separation, mae). Gated to n+m <= EXHAUSTIVE_LIMIT."""
    if instance.size > EXHAUSTIVE_LIMIT:
        raise DomainError(
            f"exhaustive enumeration is limited to n+m <= {EXHAUSTIVE_LIMIT}")
    best_idx, best_sep = None, -np.inf
    for combo in combinations(range(instance.size), instance.n):
        sep = _pairwise_distance_sum(instance.coords[list(combo)])
        if sep > best_sep:
            best_sep, best_idx = sep, combo
    return best_idx, best_sep, score_network(instance, list(best_idx))
