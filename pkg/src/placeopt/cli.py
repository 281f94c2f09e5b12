"""Command-line interface: gen-data, train, evaluate, baseline, explain.

Exit codes: 0 success, 2 usage/config-key errors, 1 runtime/data errors.
Set PLACEOPT_LOG=DEBUG|INFO|WARNING for verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines
from .env import _rollout_streams, initial_state
from .errors import ConfigKeyError, ParseError, PlaceoptError
from .policy import NetConfig, action_probs, load_checkpoint
from .spatial import generate_instance, read_instance, read_polygon, \
    read_seed_readings, write_instance
from .training import TrainConfig, evaluate_policy_rollouts, train

logger = logging.getLogger("placeopt.cli")

DEFAULT_SUBSETS = (20, 40, 60, 80, 100)


def _setup_logging():
    level = os.environ.get("PLACEOPT_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# Tables: '#'-prefixed metadata lines, one header row, comma-separated rows.
# ---------------------------------------------------------------------------

def write_table(path, meta, header, rows):
    lines = [f"# {key}={value}" for key, value in meta.items()]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def read_table(path):
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        if header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return meta, header, rows


# ---------------------------------------------------------------------------
# Flat "key = value" config files
# ---------------------------------------------------------------------------

_TRAIN_KEYS = {
    "epochs": int, "n": int, "m": int, "q": int,
    "instances_per_epoch": int, "batch_count": int, "horizon": int,
    "n_step": int, "discount": float, "lr_actor": float, "lr_critic": float,
    "lr_decay": float, "reward_scale": float, "rng_seed": int,
    "probe_count": int, "grad_clip": float,
}
_NET_KEYS = {"d_h": int, "d_ff": int, "num_layers": int, "clip_c": float,
             "variant": str}
_PATH_KEYS = {"readings": str, "polygon": str, "out_dir": str}
_ALIASES = {"update_interval": "n_step", "L": "num_layers", "C": "clip_c"}


def parse_config_file(path):
    values = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ParseError(f"expected 'key = value', got {text!r}", line_no)
            key, _, value = text.partition("=")
            values[key.strip()] = value.strip()
    return values


def build_train_setup(values):
    """Turn a parsed config mapping into (TrainConfig, NetConfig, paths)."""
    train_kwargs, net_kwargs, paths = {}, {}, {}
    for key, raw in values.items():
        key = _ALIASES.get(key, key)
        for table, target in ((_TRAIN_KEYS, train_kwargs),
                              (_NET_KEYS, net_kwargs), (_PATH_KEYS, paths)):
            if key in table:
                try:
                    target[key] = table[key](raw)
                except ValueError:
                    raise ConfigKeyError(
                        key, f"bad value for config key {key!r}: {raw!r}") from None
                break
        else:
            raise ConfigKeyError(key)
    for required in ("epochs", "n", "m", "q"):
        if required not in train_kwargs:
            raise ConfigKeyError(required, f"missing required config key {required!r}")
    for required in ("readings", "polygon", "out_dir"):
        if required not in paths:
            raise ConfigKeyError(required, f"missing required config key {required!r}")
    return TrainConfig(**train_kwargs), NetConfig(**net_kwargs), paths


# ---------------------------------------------------------------------------
# Shared evaluation helpers
# ---------------------------------------------------------------------------

def _load_instance_dir(path):
    files = sorted(Path(path).glob("*.txt"))
    if not files:
        raise ParseError(f"no instance files (*.txt) under {path}")
    return [read_instance(f) for f in files]


def _subset_counts(percents, total):
    counts = []
    for pct in percents:
        if not 1 <= pct <= 100:
            raise ParseError(f"subset percent {pct} outside [1, 100]")
        counts.append(max(1, (pct * total) // 100))
    return counts


def _aggregate_rows(percents, mean_maes, best_maes):
    rows = []
    for pct, count in zip(percents, _subset_counts(percents, len(mean_maes))):
        mm = np.asarray(mean_maes[:count])
        bb = np.asarray(best_maes[:count])
        rows.append([pct, count,
                     float(mm.mean()), float(mm.std()),
                     float(bb.mean()), float(bb.std())])
    return rows


_AGG_HEADER = ["subset_percent", "instance_count", "mean_of_mean_mae",
               "std_of_mean_mae", "mean_of_best_mae", "std_of_best_mae"]


def _eval_chunk(payload):
    instances, params, config, steps, seeds = payload
    return evaluate_policy_rollouts(instances, params, config, steps, seeds)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    field = read_seed_readings(args.readings)
    poly = read_polygon(args.polygon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        inst = generate_instance(field, poly, args.n, args.m, args.q,
                                 np.random.SeedSequence([args.seed, i]))
        write_instance(inst, out / f"instance_{i:05d}.txt")
    logger.info("wrote %d instances to %s", args.count, out)
    return 0


def cmd_train(args):
    values = parse_config_file(args.config)
    train_config, net_config, paths = build_train_setup(values)
    for key in ("readings", "polygon"):
        if not Path(paths[key]).exists():
            raise ParseError(f"config key {key!r} points to a missing file: {paths[key]}")
    field = read_seed_readings(paths["readings"])
    poly = read_polygon(paths["polygon"])
    out_dir = args.out or paths["out_dir"]
    _, _, report = train(train_config, net_config, field, poly,
                         out_dir=out_dir, resume=args.resume)
    if report.rows:
        last = report.rows[-1]
        logger.info("finished epoch %d: mean_best_mae=%.6f", last.epoch,
                    last.mean_best_mae)
    return 0


def cmd_evaluate(args):
    ckpt = load_checkpoint(args.checkpoint)
    instances = _load_instance_dir(args.instances)
    seeds = [np.random.SeedSequence([args.seed, i]) for i in range(len(instances))]
    percents = [int(p) for p in args.subsets.split(",")]
    if args.workers > 1:
        chunks = np.array_split(np.arange(len(instances)), args.workers)
        payloads = [([instances[int(i)] for i in chunk], ckpt.params,
                     ckpt.config, args.steps, [seeds[int(i)] for i in chunk])
                    for chunk in chunks if len(chunk)]
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = []
            for part in pool.map(_eval_chunk, payloads):
                results.extend(part)
    else:
        results = evaluate_policy_rollouts(instances, ckpt.params, ckpt.config,
                                           args.steps, seeds)
    rows = _aggregate_rows(percents, [s.mean_mae for s in results],
                           [s.best_mae for s in results])
    meta = {"command": "evaluate", "checkpoint": args.checkpoint,
            "instances": args.instances, "steps": args.steps,
            "seed": args.seed, "sampling": "stochastic",
            "subset_rule": "prefix-of-sorted-instance-files",
            "variant": ckpt.config.variant}
    write_table(args.out, meta, _AGG_HEADER, rows)
    return 0


def cmd_baseline(args):
    instances = _load_instance_dir(args.instances)
    percents = [int(p) for p in args.subsets.split(",")]
    mean_maes, best_maes = [], []
    for i, inst in enumerate(instances):
        init_rng, search_rng = _rollout_streams(np.random.SeedSequence([args.seed, i]))
        init = initial_state(inst, init_rng)
        if args.which == "stochastic":
            _, best, maes = baselines.stochastic_search(
                inst, init, iterations=args.budget, rng_seed=search_rng,
                return_trace=True)
        else:
            _, best, trace = baselines.context_distance_search(
                inst, init, max_steps=args.budget, return_trace=True)
            maes = [m for _, m in trace]
        mean_maes.append(float(np.mean(maes)))
        best_maes.append(best)
    rows = _aggregate_rows(percents, mean_maes, best_maes)
    meta = {"command": "baseline", "which": args.which,
            "instances": args.instances, "budget": args.budget,
            "seed": args.seed,
            "subset_rule": "prefix-of-sorted-instance-files"}
    write_table(args.out, meta, _AGG_HEADER, rows)
    return 0


def cmd_explain(args):
    ckpt = load_checkpoint(args.checkpoint)
    instance = read_instance(args.instance)
    state = initial_state(instance, np.random.SeedSequence([args.state_seed]))
    pr = action_probs(state, instance, ckpt.params, ckpt.config)
    flat_idx = int(np.argmax(pr))
    a, b = divmod(flat_idx, instance.size)
    loc_ids = [int(i) for i in state.order]
    meta = {"command": "explain", "checkpoint": args.checkpoint,
            "instance": args.instance, "state_seed": args.state_seed,
            "variant": ckpt.config.variant,
            "argmax_from_loc": loc_ids[a], "argmax_to_loc": loc_ids[b],
            "argmax_prob": repr(float(pr[a, b]))}
    header = ["from_loc"] + [str(i) for i in loc_ids]
    rows = [[loc_ids[r]] + [float(pr[r, c]) for c in range(instance.size)]
            for r in range(instance.size)]
    write_table(args.out, meta, header, rows)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="placeopt",
        description="Learned improvement heuristics for climate sensor placement.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate problem instance files")
    p.add_argument("--readings", required=True, help="seed-readings file (lat,lon,value)")
    p.add_argument("--polygon", required=True, help="polygon file (lat,lon per line)")
    p.add_argument("--count", type=int, required=True, help="number of instances")
    p.add_argument("--n", type=int, required=True, help="sensors to place")
    p.add_argument("--m", type=int, required=True, help="candidate locations")
    p.add_argument("--q", type=int, required=True, help="evaluation points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a policy from a config file")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--resume", action="store_true",
                   help="continue from the last checkpoint in out_dir")
    p.add_argument("--out", default=None, help="override config out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="roll out a checkpoint over instances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instances", required=True, help="instance directory")
    p.add_argument("--steps", type=int, default=1000, help="rollout length")
    p.add_argument("--subsets", default=",".join(str(p) for p in DEFAULT_SUBSETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="output table (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="run a comparison heuristic over instances")
    p.add_argument("--instances", required=True, help="instance directory")
    p.add_argument("--which", required=True, choices=["stochastic", "context"])
    p.add_argument("--budget", type=int, default=1000,
                   help="iterations (stochastic) or max steps (context)")
    p.add_argument("--subsets", default=",".join(str(p) for p in DEFAULT_SUBSETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output table (default: stdout)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("explain", help="dump the action table for one state")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance", required=True, help="instance file")
    p.add_argument("--state-seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output table (default: stdout)")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigKeyError as exc:
        print(f"placeopt: error: {exc}", file=sys.stderr)
        return 2
    except PlaceoptError as exc:
        print(f"placeopt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
