"""Geometric and interpolation primitives for sensor-placement problems.

Coordinates are latitude/longitude pairs treated as planar Euclidean
units (no great-circle correction). All arithmetic is 64-bit float.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, GenerationError, ParseError

# Queries closer than this to a sensor take that sensor's value exactly,
# avoiding the 1/d singularity.
EPS_DIST = 1e-9

# Rejection-sampling attempt budget, per requested point.
RETRY_FACTOR = 10_000

# Max distance from a point to a polygon edge to count as "on the boundary".
_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class Location:
    """A geographic point; x is latitude, y is longitude, in degrees."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite coordinates ({self.x}, {self.y})")


@dataclass(frozen=True)
class SensorReading:
    """An observed value of an environmental variable at a location."""

    location: Location
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DomainError(f"non-finite sensor value {self.value}")


@dataclass(frozen=True, eq=False)
class FieldModel:
    """A fitted IDW ground-truth model: interpolates its seed readings."""

    seed_readings: tuple[SensorReading, ...]

    def __post_init__(self):
        readings = tuple(self.seed_readings)
        if not readings:
            raise DomainError("field model needs at least one seed reading")
        coords = {(r.location.x, r.location.y) for r in readings}
        if len(coords) != len(readings):
            raise DomainError("field model has duplicate seed coordinates")
        object.__setattr__(self, "seed_readings", readings)
        xy = np.array([[r.location.x, r.location.y] for r in readings], dtype=np.float64)
        z = np.array([r.value for r in readings], dtype=np.float64)
        xy.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "values", z)

    def estimate(self, x, y):
        """IDW estimate of the field at a single point."""
        return float(_idw_batch(self.xy, self.values, np.array([[x, y]], dtype=np.float64))[0])


@dataclass(frozen=True, eq=False)
class Polygon:
    """A simple closed ring of vertices; the last edge closes back to the first."""

    vertices: tuple[Location, ...]

    def __post_init__(self):
        verts = tuple(self.vertices)
        if len(verts) < 3:
            raise DomainError("polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", verts)
        vx = np.array([v.x for v in verts], dtype=np.float64)
        vy = np.array([v.y for v in verts], dtype=np.float64)
        vx.setflags(write=False)
        vy.setflags(write=False)
        object.__setattr__(self, "vx", vx)
        object.__setattr__(self, "vy", vy)
        self._validate()

    def _validate(self):
        n = len(self.vertices)
        vx, vy = self.vx, self.vy
        for i in range(n):
            j = (i + 1) % n
            if vx[i] == vx[j] and vy[i] == vy[j]:
                raise DomainError(f"degenerate polygon: repeated consecutive vertex {i}")
        # Shoelace area; zero means the ring is collapsed.
        area = 0.5 * float(np.sum(vx * np.roll(vy, -1) - np.roll(vx, -1) * vy))
        if area == 0.0:
            raise DomainError("degenerate polygon: zero area")
        for i in range(n):
            for j in range(i + 1, n):
                # Skip edges sharing a vertex (adjacent in the ring).
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(
                    vx[i], vy[i], vx[(i + 1) % n], vy[(i + 1) % n],
                    vx[j], vy[j], vx[(j + 1) % n], vy[(j + 1) % n],
                ):
                    raise DomainError(f"degenerate polygon: edges {i} and {j} intersect")

    def bounds(self):
        return (self.vx.min(), self.vx.max(), self.vy.min(), self.vy.max())


def _segments_intersect(ax, ay, bx, by, cx, cy, dx, dy):
    """True if segment AB intersects CD, including touching endpoints."""

    def orient(px, py, qx, qy, rx, ry):
        v = (qx - px) * (ry - py) - (qy - py) * (rx - px)
        return int(v > 0) - int(v < 0)

    def on_segment(px, py, qx, qy, rx, ry):
        return min(px, qx) <= rx <= max(px, qx) and min(py, qy) <= ry <= max(py, qy)

    o1 = orient(ax, ay, bx, by, cx, cy)
    o2 = orient(ax, ay, bx, by, dx, dy)
    o3 = orient(cx, cy, dx, dy, ax, ay)
    o4 = orient(cx, cy, dx, dy, bx, by)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(ax, ay, bx, by, cx, cy):
        return True
    if o2 == 0 and on_segment(ax, ay, bx, by, dx, dy):
        return True
    if o3 == 0 and on_segment(cx, cy, dx, dy, ax, ay):
        return True
    if o4 == 0 and on_segment(cx, cy, dx, dy, bx, by):
        return True
    return False


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A full location pool with ground truth, plus held-out evaluation points.

    `all_locations` holds the n+m candidate pool; which of them carry
    sensors is decided by a placement, not by the instance itself.
    """

    all_locations: tuple[Location, ...]
    truth: np.ndarray
    eval_points: tuple[SensorReading, ...]
    n: int
    m: int

    def __post_init__(self):
        locs = tuple(self.all_locations)
        evals = tuple(self.eval_points)
        object.__setattr__(self, "all_locations", locs)
        object.__setattr__(self, "eval_points", evals)
        if self.n < 1 or self.m < 1:
            raise DomainError("instance needs n >= 1 placed and m >= 1 candidate locations")
        if len(locs) != self.n + self.m:
            raise DomainError(f"expected {self.n + self.m} locations, got {len(locs)}")
        if not evals:
            raise DomainError("instance needs at least one evaluation point")
        truth = np.asarray(self.truth, dtype=np.float64)
        if truth.shape != (len(locs),):
            raise DomainError("truth must hold one value per location")
        if not np.all(np.isfinite(truth)):
            raise DomainError("truth values must be finite")
        seen = {(p.x, p.y) for p in locs}
        if len(seen) != len(locs):
            raise DomainError("locations are not pairwise distinct")
        for r in evals:
            if (r.location.x, r.location.y) in seen:
                raise DomainError("eval points must be disjoint from the location pool")
        coords = np.array([[p.x, p.y] for p in locs], dtype=np.float64)
        eval_xy = np.array([[r.location.x, r.location.y] for r in evals], dtype=np.float64)
        eval_values = np.array([r.value for r in evals], dtype=np.float64)
        for arr in (truth, coords, eval_xy, eval_values):
            arr.setflags(write=False)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "eval_xy", eval_xy)
        object.__setattr__(self, "eval_values", eval_values)

    @property
    def q(self):
        return len(self.eval_points)

    @property
    def size(self):
        return self.n + self.m


def _idw_batch(sensor_xy, sensor_z, query_xy):
    """IDW estimates at each query row; queries within EPS_DIST of a sensor
    take that sensor's value exactly."""
    d = np.hypot(
        query_xy[:, 0:1] - sensor_xy[None, :, 0],
        query_xy[:, 1:2] - sensor_xy[None, :, 1],
    )
    est = np.empty(len(query_xy), dtype=np.float64)
    nearest = np.argmin(d, axis=1)
    coincident = d[np.arange(len(query_xy)), nearest] < EPS_DIST
    est[coincident] = sensor_z[nearest[coincident]]
    free = ~coincident
    if free.any():
        w = 1.0 / d[free]
        est[free] = (w @ sensor_z) / w.sum(axis=1)
    return est


def idw_estimate(sensors: Sequence[SensorReading], query: Location) -> float:
    """Inverse-distance-weighted estimate at `query` from sensor readings."""
    if not sensors:
        raise DomainError("idw_estimate needs at least one sensor")
    xy = np.array([[s.location.x, s.location.y] for s in sensors], dtype=np.float64)
    z = np.array([s.value for s in sensors], dtype=np.float64)
    return float(_idw_batch(xy, z, np.array([[query.x, query.y]]))[0])


def mae(truth: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute error between ground truth and predictions."""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if t.ndim != 1 or p.ndim != 1 or t.shape != p.shape:
        raise DomainError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise DomainError("mae needs at least one value")
    return float(np.mean(np.abs(t - p)))


def score_network(instance: ProblemInstance, placed_indices) -> float:
    """MAE over the instance's eval points when sensors sit at `placed_indices`."""
    idx = np.asarray(placed_indices)
    if idx.shape != (instance.n,):
        raise DomainError(f"expected {instance.n} placed indices, got shape {idx.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        idx = idx.astype(np.intp)
        if not np.array_equal(idx, np.asarray(placed_indices)):
            raise DomainError("placed indices must be integers")
    if idx.min() < 0 or idx.max() >= instance.size:
        raise DomainError("placed index out of range")
    if len(np.unique(idx)) != len(idx):
        raise DomainError("placed indices must be distinct")
    est = _idw_batch(instance.coords[idx], instance.truth[idx], instance.eval_xy)
    return float(np.mean(np.abs(est - instance.eval_values)))


def _point_on_boundary(poly: Polygon, x, y):
    vx, vy = poly.vx, poly.vy
    n = len(vx)
    for i in range(n):
        j = (i + 1) % n
        ex, ey = vx[j] - vx[i], vy[j] - vy[i]
        px, py = x - vx[i], y - vy[i]
        seg_len2 = ex * ex + ey * ey
        t = (px * ex + py * ey) / seg_len2
        t = min(1.0, max(0.0, t))
        ddx, ddy = px - t * ex, py - t * ey
        if math.hypot(ddx, ddy) <= _BOUNDARY_TOL:
            return True
    return False


def _point_in_polygon_xy(poly: Polygon, x, y):
    if _point_on_boundary(poly, x, y):
        return True
    vx, vy = poly.vx, poly.vy
    n = len(vx)
    inside = False
    j = n - 1
    for i in range(n):
        if (vy[i] > y) != (vy[j] > y):
            x_cross = vx[i] + (y - vy[i]) * (vx[j] - vx[i]) / (vy[j] - vy[i])
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def point_in_polygon(poly: Polygon, pt: Location) -> bool:
    """Even-odd ray-casting test; points on the boundary count as inside."""
    return _point_in_polygon_xy(poly, pt.x, pt.y)


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_instance(field: FieldModel, poly: Polygon, n: int, m: int, q: int,
                      rng_seed) -> ProblemInstance:
    """Rejection-sample a random problem instance inside `poly`.

    Draws n+m+q distinct uniform points in the polygon, assigns ground
    truth from the field model, and reserves the last q points as the
    held-out evaluation set. Deterministic for a fixed seed.
    """
    if n < 1 or m < 1 or q < 1:
        raise DomainError("n, m and q must all be >= 1")
    rng = _as_generator(rng_seed)
    total = n + m + q
    min_x, max_x, min_y, max_y = poly.bounds()
    points = []
    seen = set()
    attempts = 0
    cap = RETRY_FACTOR * total
    while len(points) < total:
        attempts += 1
        if attempts > cap:
            raise GenerationError(
                f"rejection sampling exceeded {cap} attempts "
                f"({len(points)}/{total} points placed)")
        x = rng.uniform(min_x, max_x)
        y = rng.uniform(min_y, max_y)
        if not _point_in_polygon_xy(poly, x, y):
            continue
        if (x, y) in seen:
            continue
        seen.add((x, y))
        points.append((x, y))
    pts = np.array(points, dtype=np.float64)
    truth = _idw_batch(field.xy, field.values, pts)
    locs = tuple(Location(x, y) for x, y in points[: n + m])
    evals = tuple(
        SensorReading(Location(x, y), float(z))
        for (x, y), z in zip(points[n + m:], truth[n + m:])
    )
    return ProblemInstance(locs, truth[: n + m], evals, n, m)


# ---------------------------------------------------------------------------
# File I/O
#
# Instance file: header "n,m,q", then n+m lines "lat,lon,truth" for the
# location pool, then q lines "lat,lon,truth" for eval points.
# Seed-readings file: lines "lat,lon,value".
# Polygon file: lines "lat,lon", ring implicitly closed.
# ---------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def _parse_floats(text, count, line_no):
    parts = text.split(",")
    if len(parts) != count:
        raise ParseError(f"expected {count} comma-separated values, got {len(parts)}", line_no)
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(str(exc), line_no) from None


def write_instance(instance: ProblemInstance, path):
    with open(path, "w") as fh:
        fh.write(f"{instance.n},{instance.m},{instance.q}\n")
        for loc, z in zip(instance.all_locations, instance.truth):
            fh.write(f"{_fmt(loc.x)},{_fmt(loc.y)},{_fmt(z)}\n")
        for r in instance.eval_points:
            fh.write(f"{_fmt(r.location.x)},{_fmt(r.location.y)},{_fmt(r.value)}\n")


def read_instance(path) -> ProblemInstance:
    with open(path) as fh:
        lines = fh.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ParseError("empty instance file", 1)
    header = lines[0].split(",")
    if len(header) != 3:
        raise ParseError("header must be 'n,m,q'", 1)
    try:
        n, m, q = (int(h) for h in header)
    except ValueError as exc:
        raise ParseError(str(exc), 1) from None
    expected = 1 + n + m + q
    if len(lines) != expected:
        raise ParseError(f"expected {expected} lines for n={n}, m={m}, q={q}, "
                         f"got {len(lines)}", len(lines))
    locs, truth = [], []
    for i in range(n + m):
        x, y, z = _parse_floats(lines[1 + i], 3, 2 + i)
        locs.append(Location(x, y))
        truth.append(z)
    evals = []
    for i in range(q):
        x, y, z = _parse_floats(lines[1 + n + m + i], 3, 2 + n + m + i)
        evals.append(SensorReading(Location(x, y), z))
    return ProblemInstance(tuple(locs), np.array(truth), tuple(evals), n, m)


def read_seed_readings(path) -> FieldModel:
    readings = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            x, y, z = _parse_floats(text, 3, line_no)
            readings.append(SensorReading(Location(x, y), z))
    if not readings:
        raise ParseError("no seed readings in file", 1)
    return FieldModel(tuple(readings))


def write_seed_readings(readings: Sequence[SensorReading], path):
    with open(path, "w") as fh:
        for r in readings:
            fh.write(f"{_fmt(r.location.x)},{_fmt(r.location.y)},{_fmt(r.value)}\n")


def read_polygon(path) -> Polygon:
    verts = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            x, y = _parse_floats(text, 2, line_no)
            verts.append(Location(x, y))
    if len(verts) < 3:
        raise ParseError("polygon file needs at least 3 vertices", 1)
    return Polygon(tuple(verts))


def write_polygon(poly: Polygon, path):
    with open(path, "w") as fh:
        for v in poly.vertices:
            fh.write(f"{_fmt(v.x)},{_fmt(v.y)}\n")
