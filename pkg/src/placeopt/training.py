"""Continuous n-step actor-critic training of the swap policy.

The loop follows the batched scheme: every instance in a batch rolls out
synchronously; every `n_step` steps the bootstrapped targets and TD-errors
are computed, gradients are averaged over batch x segment, and both
networks are updated before the episodes continue. Per-instance RNG
streams make the whole process deterministic for a fixed seed.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .env import _rollout_streams, _sample_flat_index, initial_state
from .errors import DomainError, ParseError, TrainingError
from .policy import (NetConfig, backward_action_logits, critic_backward,
                     critic_values, forward_action_probs, init_critic_params,
                     init_policy_params, load_checkpoint, save_checkpoint,
                     zeros_like_params)
from .spatial import EPS_DIST, FieldModel, Polygon, ProblemInstance, \
    generate_instance, score_network

logger = logging.getLogger("placeopt.training")

# Seed-stream tags hung off TrainConfig.rng_seed; changing these breaks
# reproducibility of existing runs.
_TAG_ACTOR_INIT = 0
_TAG_CRITIC_INIT = 1
_TAG_PROBE_GEN = 2
_TAG_PROBE_ROLLOUT = 3
_TAG_EPOCH_GEN = 4
_TAG_EPISODE = 5


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the training loop. `n_step` doubles as the update
    interval, exactly as the n-step return is consumed."""

    epochs: int
    n: int
    m: int
    q: int
    instances_per_epoch: int = 5120
    batch_count: int = 10
    horizon: int = 200
    n_step: int = 4
    discount: float = 0.99
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    lr_decay: float = 0.99
    reward_scale: float = 10.0
    rng_seed: int = 0
    probe_count: int = 100
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if min(self.n, self.m, self.q) < 1:
            raise DomainError("n, m and q must all be >= 1")
        if self.horizon < 1 or self.n_step < 1 or self.n_step > self.horizon:
            raise DomainError("need 1 <= n_step <= horizon")
        if self.instances_per_epoch < 1 or self.batch_count < 1:
            raise DomainError("instances_per_epoch and batch_count must be >= 1")
        if self.batch_count > self.instances_per_epoch:
            raise DomainError("batch_count cannot exceed instances_per_epoch")
        if not 0.0 < self.lr_decay <= 1.0:
            raise DomainError("lr_decay must lie in (0, 1]")
        if not 0.0 < self.discount <= 1.0:
            raise DomainError("discount must lie in (0, 1]")
        if self.lr_actor <= 0.0 or self.lr_critic <= 0.0:
            raise DomainError("learning rates must be positive")
        if self.reward_scale <= 0.0:
            raise DomainError("reward_scale must be positive")
        if self.rng_seed < 0:
            raise DomainError("rng_seed must be non-negative")


@dataclass
class EpochStats:
    epoch: int
    mean_reward: float
    mean_mae: float
    mean_best_mae: float
    lr: float
    wall_clock: float = 0.0
    checkpoint_path: str | None = None


@dataclass
class TrainReport:
    rows: list[EpochStats] = field(default_factory=list)


_REPORT_HEADER = "epoch,mean_reward,mean_mae,mean_best_mae,lr"


def write_report(report: TrainReport, path):
    with open(path, "w") as fh:
        fh.write(_REPORT_HEADER + "\n")
        for r in report.rows:
            fh.write(f"{r.epoch},{r.mean_reward!r},{r.mean_mae!r},"
                     f"{r.mean_best_mae!r},{r.lr!r}\n")


def read_report(path) -> TrainReport:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0] != _REPORT_HEADER:
        raise ParseError(f"not a train report (expected header {_REPORT_HEADER!r})", 1)
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise ParseError("expected 5 comma-separated values", line_no)
        rows.append(EpochStats(int(parts[0]), float(parts[1]), float(parts[2]),
                               float(parts[3]), float(parts[4])))
    return TrainReport(rows)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive-moment optimizer with standard defaults."""

    def __init__(self, params_like, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = zeros_like_params(params_like)
        self.v = zeros_like_params(params_like)

    def step(self, params, grads, lr, maximize=False):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if maximize:
                g = -g
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state_arrays(self):
        return {"m": self.m, "v": self.v}

    def load_state(self, arrays, t):
        self.m = {k: np.array(a) for k, a in arrays["m"].items()}
        self.v = {k: np.array(a) for k, a in arrays["v"].items()}
        self.t = int(t)


def clip_gradient_norm(grads, max_norm):
    """Scale the gradient set so its global L2 norm is at most max_norm.
    Accumulates in sorted name order so the result does not depend on dict
    insertion order (checkpoints restore parameters alphabetically)."""
    total = math.sqrt(sum(float((grads[name] * grads[name]).sum())
                          for name in sorted(grads)))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


# ---------------------------------------------------------------------------
# n-step returns
# ---------------------------------------------------------------------------

def n_step_targets(rewards, bootstrap, discount) -> np.ndarray:
    """Bootstrapped returns for one segment, newest-to-oldest accumulation:
    target_i = reward_i + discount * target_{i+1}, seeded by `bootstrap` at the
    segment end. Returned in time order, aligned with `rewards`."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise DomainError("rewards must be a non-empty 1-D sequence")
    out = np.empty_like(r)
    acc = float(bootstrap)
    for i in range(len(r) - 1, -1, -1):
        acc = r[i] + discount * acc
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# Batched scoring and rollouts
# ---------------------------------------------------------------------------

def _check_homogeneous(instances):
    first = instances[0]
    for inst in instances[1:]:
        if inst.n != first.n or inst.m != first.m:
            raise DomainError("instances in a batch must share n and m")
    return all(inst.q == first.q for inst in instances)


def _stack_instances(instances):
    return (np.stack([i.coords for i in instances]),
            np.stack([i.truth for i in instances]),
            np.stack([i.eval_xy for i in instances]),
            np.stack([i.eval_values for i in instances]))


def _batch_placed_scores(coords, truth, eval_xy, eval_values, placed):
    """MAE for a batch of placements; mirrors score_network per instance.
    placed: (B, n) location indices."""
    sx = np.take_along_axis(coords[:, :, 0], placed, axis=1)
    sy = np.take_along_axis(coords[:, :, 1], placed, axis=1)
    sz = np.take_along_axis(truth, placed, axis=1)
    d = np.hypot(eval_xy[:, :, 0:1] - sx[:, None, :],
                 eval_xy[:, :, 1:2] - sy[:, None, :])
    nearest = d.argmin(axis=-1)
    coincident = np.take_along_axis(d, nearest[:, :, None], axis=-1)[:, :, 0] < EPS_DIST
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = 1.0 / d
        est = (w * sz[:, None, :]).sum(axis=-1) / w.sum(axis=-1)
    est = np.where(coincident, np.take_along_axis(sz, nearest, axis=1), est)
    return np.abs(est - eval_values).mean(axis=-1)


def _gather_coords(coords, orders):
    return np.take_along_axis(coords, orders[:, :, None], axis=1)


@dataclass
class RolloutStats:
    initial_mae: float
    mean_mae: float
    best_mae: float
    total_raw_reward: float
    mean_step_raw_reward: float


def evaluate_policy_rollouts(instances, params, net_config: NetConfig,
                             horizon: int, seeds) -> list[RolloutStats]:
    """Roll the policy out once per instance with stochastic action sampling.

    Each instance gets its own RNG stream derived from its seed, so results
    are independent of batching and identical to `env.rollout` run
    sequentially with the same seeds (up to float summation order).
    """
    if len(seeds) != len(instances):
        raise DomainError("need one seed per instance")
    if not instances:
        return []
    if not _check_homogeneous(instances):
        raise DomainError("instances must share q for batched evaluation")
    batch = len(instances)
    n = instances[0].n
    coords, truth, eval_xy, eval_values = _stack_instances(instances)
    rngs = []
    orders = np.empty((batch, instances[0].size), dtype=np.intp)
    for b, seed in enumerate(seeds):
        init_rng, action_rng = _rollout_streams(seed)
        rngs.append(action_rng)
        orders[b] = initial_state(instances[b], init_rng).order
    init_mae = _batch_placed_scores(coords, truth, eval_xy, eval_values, orders[:, :n])
    best = init_mae.copy()
    mae_sum = init_mae.copy()
    reward_sum = np.zeros(batch)
    rows = np.arange(batch)
    for _ in range(horizon):
        xy = _gather_coords(coords, orders)
        pr, _ = forward_action_probs(xy, params, net_config, n)
        acts_a = np.empty(batch, dtype=np.intp)
        acts_b = np.empty(batch, dtype=np.intp)
        for b in range(batch):
            idx = _sample_flat_index(pr[b].ravel(), rngs[b])
            acts_a[b], acts_b[b] = divmod(idx, orders.shape[1])
        tmp = orders[rows, acts_a].copy()
        orders[rows, acts_a] = orders[rows, acts_b]
        orders[rows, acts_b] = tmp
        mae_t = _batch_placed_scores(coords, truth, eval_xy, eval_values, orders[:, :n])
        reward_sum += best - np.minimum(best, mae_t)
        best = np.minimum(best, mae_t)
        mae_sum += mae_t
    return [RolloutStats(
        initial_mae=float(init_mae[b]),
        mean_mae=float(mae_sum[b] / (horizon + 1)),
        best_mae=float(best[b]),
        total_raw_reward=float(reward_sum[b]),
        mean_step_raw_reward=float(reward_sum[b] / horizon),
    ) for b in range(batch)]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class BatchStats:
    mean_step_raw_reward: float
    mean_mae: float
    mean_best_mae: float
    mean_initial_mae: float
    updates: int


def train_batch(instances, params, critic_params, train_config: TrainConfig,
                net_config: NetConfig, actor_opt: Adam, critic_opt: Adam,
                lr_actor: float, lr_critic: float, seeds) -> BatchStats:
    """One synchronized episode over a batch of instances, updating both
    networks every `n_step` steps. Mutates params and optimizer state."""
    batch = len(instances)
    if batch == 0:
        raise DomainError("empty batch")
    if len(seeds) != batch:
        raise DomainError("need one rollout seed per instance")
    _check_homogeneous(instances)
    n = instances[0].n
    size = instances[0].size
    coords, truth, eval_xy, eval_values = _stack_instances(instances)

    rngs = []
    orders = np.empty((batch, size), dtype=np.intp)
    for b, seed in enumerate(seeds):
        init_rng, action_rng = _rollout_streams(seed)
        rngs.append(action_rng)
        orders[b] = initial_state(instances[b], init_rng).order
    best = _batch_placed_scores(coords, truth, eval_xy, eval_values, orders[:, :n])
    init_mae = best.copy()
    mae_sum = best.copy()
    reward_sum = np.zeros(batch)

    rows = np.arange(batch)
    t_n = train_config.n_step
    seg_orders = np.empty((t_n, batch, size), dtype=np.intp)
    seg_a = np.empty((t_n, batch), dtype=np.intp)
    seg_b = np.empty((t_n, batch), dtype=np.intp)
    seg_rewards = np.empty((t_n, batch))
    updates = 0

    for t in range(train_config.horizon):
        i = t % t_n
        seg_orders[i] = orders
        xy = _gather_coords(coords, orders)
        pr, _ = forward_action_probs(xy, params, net_config, n)
        for b in range(batch):
            idx = _sample_flat_index(pr[b].ravel(), rngs[b])
            seg_a[i, b], seg_b[i, b] = divmod(idx, size)
        tmp = orders[rows, seg_a[i]].copy()
        orders[rows, seg_a[i]] = orders[rows, seg_b[i]]
        orders[rows, seg_b[i]] = tmp
        mae_t = _batch_placed_scores(coords, truth, eval_xy, eval_values, orders[:, :n])
        seg_rewards[i] = best - np.minimum(best, mae_t)
        best = np.minimum(best, mae_t)
        reward_sum += seg_rewards[i]
        mae_sum += mae_t

        if i == t_n - 1:
            # Bootstrap from the post-action states, then walk the segment
            # newest-to-oldest building targets.
            v_end, _ = critic_values(_gather_coords(coords, orders), critic_params)
            targets = np.empty((t_n, batch))
            acc = v_end.copy()
            for j in range(t_n - 1, -1, -1):
                acc = seg_rewards[j] * train_config.reward_scale + train_config.discount * acc
                targets[j] = acc
            seg_xy = np.concatenate(
                [_gather_coords(coords, seg_orders[j]) for j in range(t_n)])
            vals, v_cache = critic_values(seg_xy, critic_params)
            delta = targets.reshape(-1) - vals

            pr_seg, cache = forward_action_probs(seg_xy, params, net_config, n)
            dz = -delta[:, None, None] * pr_seg
            dz[np.arange(t_n * batch), seg_a.reshape(-1), seg_b.reshape(-1)] += delta
            actor_grads = backward_action_logits(dz, cache, params, net_config)
            critic_grads = critic_backward(-delta, v_cache, critic_params)

            denom = batch * t_n
            for g in actor_grads.values():
                g /= denom
            for g in critic_grads.values():
                g /= denom
            for label, grads in (("actor", actor_grads), ("critic", critic_grads)):
                for name, g in grads.items():
                    if not np.all(np.isfinite(g)):
                        raise TrainingError(
                            f"non-finite {label} gradient in {name!r} at step {t}")
            clip_gradient_norm(actor_grads, train_config.grad_clip)
            clip_gradient_norm(critic_grads, train_config.grad_clip)
            actor_opt.step(params, actor_grads, lr_actor, maximize=True)
            critic_opt.step(critic_params, critic_grads, lr_critic, maximize=False)
            updates += 1

    steps = train_config.horizon
    return BatchStats(
        mean_step_raw_reward=float(reward_sum.mean() / steps),
        mean_mae=float(mae_sum.mean() / (steps + 1)),
        mean_best_mae=float(best.mean()),
        mean_initial_mae=float(init_mae.mean()),
        updates=updates,
    )


def _episode_seed(root_seed, epoch, index):
    return np.random.SeedSequence([root_seed, _TAG_EPISODE, epoch, index])


def train(train_config: TrainConfig, net_config: NetConfig, field: FieldModel,
          poly: Polygon, out_dir=None, resume=False):
    """Full training run: per epoch, generate fresh instances, train over
    batches, evaluate on the fixed probe set, decay learning rates, and
    checkpoint. Deterministic for a fixed config."""
    seed = train_config.rng_seed
    params = init_policy_params(net_config, np.random.SeedSequence([seed, _TAG_ACTOR_INIT]))
    critic_params = init_critic_params(net_config, np.random.SeedSequence([seed, _TAG_CRITIC_INIT]))
    actor_opt = Adam(params)
    critic_opt = Adam(critic_params)
    report = TrainReport()
    start_epoch = 0

    checkpoint_path = None
    report_path = None
    if out_dir is not None:
        from pathlib import Path
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / "checkpoint.json"
        report_path = out_dir / "report.csv"

    if resume:
        if checkpoint_path is None or not checkpoint_path.exists():
            raise TrainingError("resume requested but no checkpoint found")
        ckpt = load_checkpoint(checkpoint_path)
        if ckpt.config != net_config:
            raise TrainingError("checkpoint network config does not match")
        params = ckpt.params
        critic_params = ckpt.critic_params
        actor_opt = Adam(params)
        critic_opt = Adam(critic_params)
        actor_opt.load_state(
            {"m": ckpt.extras["actor_m"], "v": ckpt.extras["actor_v"]},
            ckpt.meta["adam_t_actor"])
        critic_opt.load_state(
            {"m": ckpt.extras["critic_m"], "v": ckpt.extras["critic_v"]},
            ckpt.meta["adam_t_critic"])
        start_epoch = int(ckpt.meta["epochs_completed"])
        if report_path.exists():
            report = read_report(report_path)
            report.rows = report.rows[:start_epoch]

    probe_instances = [
        generate_instance(field, poly, train_config.n, train_config.m, train_config.q,
                          np.random.SeedSequence([seed, _TAG_PROBE_GEN, i]))
        for i in range(train_config.probe_count)]
    probe_seeds = [np.random.SeedSequence([seed, _TAG_PROBE_ROLLOUT, i])
                   for i in range(train_config.probe_count)]

    for epoch in range(start_epoch, train_config.epochs):
        started = time.perf_counter()
        lr_a = train_config.lr_actor * train_config.lr_decay ** epoch
        lr_c = train_config.lr_critic * train_config.lr_decay ** epoch
        instances = [
            generate_instance(field, poly, train_config.n, train_config.m,
                              train_config.q,
                              np.random.SeedSequence([seed, _TAG_EPOCH_GEN, epoch, i]))
            for i in range(train_config.instances_per_epoch)]
        for batch_idx in np.array_split(np.arange(train_config.instances_per_epoch),
                                        train_config.batch_count):
            batch = [instances[int(j)] for j in batch_idx]
            seeds = [_episode_seed(seed, epoch, int(j)) for j in batch_idx]
            train_batch(batch, params, critic_params, train_config, net_config,
                        actor_opt, critic_opt, lr_a, lr_c, seeds)
        probe = evaluate_policy_rollouts(probe_instances, params, net_config,
                                         train_config.horizon, probe_seeds)
        row = EpochStats(
            epoch=epoch,
            mean_reward=float(np.mean([s.mean_step_raw_reward for s in probe])),
            mean_mae=float(np.mean([s.mean_mae for s in probe])),
            mean_best_mae=float(np.mean([s.best_mae for s in probe])),
            lr=lr_a,
            wall_clock=time.perf_counter() - started,
        )
        report.rows.append(row)
        if out_dir is not None:
            save_checkpoint(
                checkpoint_path, net_config, params, critic_params,
                extras={"actor_m": actor_opt.m, "actor_v": actor_opt.v,
                        "critic_m": critic_opt.m, "critic_v": critic_opt.v},
                meta={"epochs_completed": epoch + 1,
                      "adam_t_actor": actor_opt.t,
                      "adam_t_critic": critic_opt.t,
                      "train_seed": seed})
            row.checkpoint_path = str(checkpoint_path)
            write_report(report, report_path)
        logger.info("epoch %d: mean_reward=%.6f mean_mae=%.6f best_mae=%.6f lr=%.3g (%.1fs)",
                    epoch, row.mean_reward, row.mean_mae, row.mean_best_mae,
                    row.lr, row.wall_clock)
    return params, critic_params, report
