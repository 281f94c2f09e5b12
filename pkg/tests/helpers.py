"""Shared test utilities: independent reference implementations (plain
Python loops, no shared code with the package) and a finite-difference
gradient checker."""
from __future__ import annotations

import math

import numpy as np

from placeopt import Location, ProblemInstance, SensorReading


# ---------------------------------------------------------------------------
# Brute-force references for the interpolation pipeline (Eq.-level rewrites)
# ---------------------------------------------------------------------------

def ref_idw(sensor_points, sensor_values, query):
    """Plain-loop inverse-distance weighting; assumes no coincident query."""
    num = 0.0
    den = 0.0
    for (x, y), z in zip(sensor_points, sensor_values):
        d = math.sqrt((x - query[0]) ** 2 + (y - query[1]) ** 2)
        w = 1.0 / d
        num += w * z
        den += w
    return num / den


def ref_mae(truth, predicted):
    total = 0.0
    for t, p in zip(truth, predicted):
        total += abs(t - p)
    return total / len(truth)


def ref_score(instance: ProblemInstance, placed_indices):
    points = [(instance.all_locations[i].x, instance.all_locations[i].y)
              for i in placed_indices]
    values = [float(instance.truth[i]) for i in placed_indices]
    preds = [ref_idw(points, values, (r.location.x, r.location.y))
             for r in instance.eval_points]
    return ref_mae([r.value for r in instance.eval_points], preds)


def ref_n_step_targets(rewards, bootstrap, discount):
    """Hand transcription of the newest-to-oldest accumulation."""
    acc = bootstrap
    out = [None] * len(rewards)
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + discount * acc
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# Loop-based reference of the full policy forward pass
# ---------------------------------------------------------------------------

_REF_NORM_EPS = 1e-12


def _ref_pfe(i, d, d_h):
    angle = i / 10000.0 ** ((d // 2) / d_h)
    return math.sin(angle) if d % 2 == 0 else math.cos(angle)


def _ref_norm(mat, scale, shift):
    size = len(mat)
    width = len(mat[0])
    out = [[0.0] * width for _ in range(size)]
    for d in range(width):
        mu = sum(mat[s][d] for s in range(size)) / size
        var = sum((mat[s][d] - mu) ** 2 for s in range(size)) / size
        inv = 1.0 / math.sqrt(var + _REF_NORM_EPS)
        for s in range(size):
            out[s][d] = (mat[s][d] - mu) * inv * scale[d] + shift[d]
    return out


def ref_action_probs(coords, params, d_h, d_ff, num_layers, clip_c, variant,
                     n_placed):
    """Action-probability matrix from explicit loops over every index.

    `coords` is the list of (x, y) pairs in state order; `params` is the
    package's parameter dict, only ever read elementwise.
    """
    size = len(coords)
    h = [[sum(coords[s][i] * params["nfe_w"][i, d] for i in range(2))
          + params["nfe_b"][d] + _ref_pfe(s, d, d_h)
          for d in range(d_h)] for s in range(size)]

    for layer in range(num_layers):
        p = f"enc{layer}_"
        wq, wk, wv = params[p + "wq"], params[p + "wk"], params[p + "wv"]
        q = [[sum(h[s][e] * wq[e, d] for e in range(d_h)) for d in range(d_h)]
             for s in range(size)]
        k = [[sum(h[s][e] * wk[e, d] for e in range(d_h)) for d in range(d_h)]
             for s in range(size)]
        v = [[sum(h[s][e] * wv[e, d] for e in range(d_h)) for d in range(d_h)]
             for s in range(size)]
        att = [[0.0] * d_h for _ in range(size)]
        for j in range(size):
            scores = [sum(q[j][d] * k[i][d] for d in range(d_h)) / math.sqrt(d_h)
                      for i in range(size)]
            peak = max(scores)
            weights = [math.exp(s - peak) for s in scores]
            total = sum(weights)
            for d in range(d_h):
                att[j][d] = sum(weights[i] / total * v[i][d] for i in range(size))
        scale, shift = params[p + "bn_scale"], params[p + "bn_shift"]
        y1 = [[h[s][d] + att[s][d] for d in range(d_h)] for s in range(size)]
        h1 = _ref_norm(y1, scale, shift)
        w1, b1 = params[p + "ff_w1"], params[p + "ff_b1"]
        w2, b2 = params[p + "ff_w2"], params[p + "ff_b2"]
        f2 = [[0.0] * d_h for _ in range(size)]
        for s in range(size):
            hidden = [math.tanh(sum(h1[s][d] * w1[d, f] for d in range(d_h)) + b1[f])
                      for f in range(d_ff)]
            for d in range(d_h):
                f2[s][d] = sum(hidden[f] * w2[f, d] for f in range(d_ff)) + b2[d]
        y2 = [[h1[s][d] + f2[s][d] for d in range(d_h)] for s in range(size)]
        h = _ref_norm(y2, scale, shift)

    pooled = [max(h[s][d] for s in range(size)) for d in range(d_h)]
    pool_w, loc_w = params["dec_pool_w"], params["dec_loc_w"]
    hc = [[sum(pooled[e] * pool_w[e, d] for e in range(d_h))
           + sum(h[s][e] * loc_w[e, d] for e in range(d_h))
           for d in range(d_h)] for s in range(size)]
    dwq, dwk = params["dec_wq"], params["dec_wk"]
    qc = [[sum(hc[s][e] * dwq[e, d] for e in range(d_h)) for d in range(d_h)]
          for s in range(size)]
    kc = [[sum(hc[s][e] * dwk[e, d] for e in range(d_h)) for d in range(d_h)]
          for s in range(size)]

    def allowed(a, b):
        if a == b:
            return False
        if variant == "mask-swap":
            return (a < n_placed) != (b < n_placed)
        return True

    logits = {}
    for a in range(size):
        for b in range(size):
            if allowed(a, b):
                raw = sum(kc[a][d] * qc[b][d] for d in range(d_h))
                logits[(a, b)] = clip_c * math.tanh(raw)
    peak = max(logits.values())
    total = sum(math.exp(val - peak) for val in logits.values())
    pr = [[0.0] * size for _ in range(size)]
    for (a, b), val in logits.items():
        pr[a][b] = math.exp(val - peak) / total
    return np.array(pr)


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def finite_difference_grads(f, params, step=1e-5, keys=None):
    """Central finite differences of the scalar f() w.r.t. every entry of the
    given parameter arrays, perturbing them in place."""
    grads = {}
    for name in (keys if keys is not None else params):
        arr = params[name]
        grad = np.zeros_like(arr)
        flat, gflat = arr.ravel(), grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f()
            flat[i] = orig - step
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads[name] = grad
    return grads


def max_rel_err(analytic, numeric, floor):
    """Max over all entries of |a-n| / max(|a|, |n|, floor). The floor keeps
    near-zero components on an absolute scale where FD noise dominates."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


# ---------------------------------------------------------------------------
# Instance builders
# ---------------------------------------------------------------------------

def make_instance(rng, n, m, q, box=10.0, value_lo=0.0, value_hi=10.0):
    """Random instance in a box, no polygon involved; coordinates distinct."""
    total = n + m + q
    seen = set()
    points = []
    while len(points) < total:
        x = float(rng.uniform(0.0, box))
        y = float(rng.uniform(0.0, box))
        if (x, y) in seen:
            continue
        seen.add((x, y))
        points.append((x, y))
    truth = rng.uniform(value_lo, value_hi, size=total)
    locs = tuple(Location(x, y) for x, y in points[: n + m])
    evals = tuple(SensorReading(Location(x, y), float(z))
                  for (x, y), z in zip(points[n + m:], truth[n + m:]))
    return ProblemInstance(locs, truth[: n + m], evals, n, m)
