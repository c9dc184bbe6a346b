"""
Metric primitives shared by every filtration.

Euclidean space and the flat torus [0,1)^d, smallest enclosing balls,
circumspheres and the 3^d tiling used to lift torus clouds into the plane.
"""

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from errors import InvalidInputError, NotEmbeddableError
from settings import BALL_TOL, DEGENERACY_TOL, MAX_DIMENSION, MEB_SHUFFLE_SEED

EUCLIDEAN = "euclidean"
TORUS = "torus"


@dataclass(frozen=True)
class Metric:
    kind: str
    dimension: int
    period: float = 1.0

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, TORUS):
            raise InvalidInputError(f"❌ Unknown metric kind: {self.kind}")
        if not 1 <= int(self.dimension) <= MAX_DIMENSION:
            raise InvalidInputError(f"❌ Dimension must be in [1, {MAX_DIMENSION}], got {self.dimension}")
        if self.period <= 0:
            raise InvalidInputError("❌ Torus period must be positive")

    @classmethod
    def euclidean(cls, dimension: int) -> "Metric":
        return cls(EUCLIDEAN, dimension)

    @classmethod
    def torus(cls, dimension: int, period: float = 1.0) -> "Metric":
        return cls(TORUS, dimension, period)

    @property
    def is_torus(self) -> bool:
        return self.kind == TORUS


@dataclass(frozen=True)
class Ball:
    center: Tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise InvalidInputError("❌ Ball radius must be nonnegative")

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def contains(self, point: Sequence[float], tol: float = BALL_TOL) -> bool:
        """Closed-ball membership with an absolute tolerance on squared radii."""
        delta = np.asarray(point, dtype=float) - self.center_array
        return float(np.dot(delta, delta)) <= self.radius ** 2 + tol


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable (n, d) array of points with the metric they live in."""

    points: np.ndarray
    metric: Metric

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, self.metric.dimension)
        if pts.ndim != 2 or pts.shape[1] != self.metric.dimension:
            raise InvalidInputError(
                f"❌ Expected points of shape (n, {self.metric.dimension}), got {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("❌ Point coordinates must be finite")
        if self.metric.is_torus and len(pts) and (pts.min() < 0 or pts.max() >= self.metric.period):
            raise InvalidInputError("❌ Torus points must have coordinates in [0, period)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def euclidean(cls, points: Sequence[Sequence[float]]) -> "PointCloud":
        pts = np.asarray(points, dtype=float)
        return cls(pts, Metric.euclidean(pts.shape[1] if pts.ndim == 2 else 2))

    @classmethod
    def torus(cls, points: Sequence[Sequence[float]], period: float = 1.0) -> "PointCloud":
        pts = np.asarray(points, dtype=float)
        return cls(pts, Metric.torus(pts.shape[1] if pts.ndim == 2 else 2, period))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dimension(self) -> int:
        return self.metric.dimension

    def subset(self, indices: Sequence[int]) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=int)], self.metric)

    def scaled(self, factor: float) -> "PointCloud":
        if self.metric.is_torus:
            raise InvalidInputError("❌ Scaling is only defined for Euclidean clouds")
        return PointCloud(self.points * factor, self.metric)

    def translated(self, shift: Sequence[float]) -> "PointCloud":
        moved = self.points + np.asarray(shift, dtype=float)
        if self.metric.is_torus:
            moved = np.mod(moved, self.metric.period)
            # mod can round up to exactly the period
            moved[moved >= self.metric.period] = 0.0
        return PointCloud(moved, self.metric)


def _as_vector(p: Sequence[float], metric: Metric) -> np.ndarray:
    vec = np.asarray(p, dtype=float)
    if vec.shape != (metric.dimension,):
        raise InvalidInputError(f"❌ Point of shape {vec.shape} does not match dimension {metric.dimension}")
    return vec


def _as_points(points, dimension: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise InvalidInputError("❌ Empty point set")
    pts = pts.reshape(-1, pts.shape[-1]) if pts.ndim > 1 else pts.reshape(1, -1)
    if pts.shape[1] != dimension:
        raise InvalidInputError(f"❌ Points of dimension {pts.shape[1]} do not match metric dimension {dimension}")
    return pts


def _minimal_image(delta: np.ndarray, period: float) -> np.ndarray:
    return delta - period * np.round(delta / period)


def distance(p: Sequence[float], q: Sequence[float], metric: Metric) -> float:
    delta = np.abs(_as_vector(p, metric) - _as_vector(q, metric))
    if metric.is_torus:
        delta = np.mod(delta, metric.period)
        delta = np.minimum(delta, metric.period - delta)
    return float(np.sqrt(np.dot(delta, delta)))


def pairwise_distances(points, metric: Metric) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, metric.dimension)
    if len(pts) < 2:
        return np.zeros((len(pts), len(pts)))
    if not metric.is_torus:
        return squareform(pdist(pts))
    delta = np.abs(pts[:, None, :] - pts[None, :, :])
    delta = np.minimum(delta, metric.period - delta)
    return np.sqrt(np.sum(delta ** 2, axis=-1))


def local_embedding(points, metric: Metric) -> np.ndarray:
    """Unwrap a small torus point set into R^d with its first point at the domain center."""
    pts = _as_points(points, metric.dimension)
    if not metric.is_torus:
        return pts.copy()
    if len(pts) > 1 and pairwise_distances(pts, metric).max() >= metric.period / 4:
        raise NotEmbeddableError("❌ Torus point set spread is not below period/4")
    delta = _minimal_image(pts - pts[0], metric.period)
    return delta + metric.period / 2


def _ball_from_support(support: List[np.ndarray]) -> Tuple[Optional[np.ndarray], float]:
    """Smallest ball with every support point on its boundary."""
    if not support:
        return None, -1.0
    base = support[0]
    if len(support) == 1:
        return base.copy(), 0.0
    rows = np.array([s - base for s in support[1:]])
    rhs = 0.5 * np.sum(rows ** 2, axis=1)
    coeffs, *_ = np.linalg.lstsq(rows @ rows.T, rhs, rcond=None)
    center = base + rows.T @ coeffs
    return center, float(np.dot(center - base, center - base))


def _welzl(points: np.ndarray, n: int, support: List[np.ndarray], dimension: int):
    if n == 0 or len(support) == dimension + 1:
        return _ball_from_support(support)
    p = points[n - 1]
    center, r2 = _welzl(points, n - 1, support, dimension)
    if center is not None and float(np.dot(p - center, p - center)) <= r2 + BALL_TOL:
        return center, r2
    return _welzl(points, n - 1, support + [p], dimension)


def min_enclosing_ball(points, metric: Metric) -> Ball:
    pts = _as_points(points, metric.dimension)
    if len(pts) > metric.dimension + 2:
        raise InvalidInputError(f"❌ At most {metric.dimension + 2} points allowed, got {len(pts)}")

    work = local_embedding(pts, metric) if metric.is_torus else pts
    order = np.random.default_rng(MEB_SHUFFLE_SEED).permutation(len(work))
    center, r2 = _welzl(work[order], len(work), [], metric.dimension)
    radius = float(np.sqrt(max(r2, 0.0)))

    if metric.is_torus:
        center = np.mod(pts[0] + (center - work[0]), metric.period)
    return Ball(tuple(float(c) for c in center), radius)


def circumsphere(points) -> Optional[Ball]:
    """Ball through d+1 points in R^d, or None when they are affinely dependent."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] != pts.shape[1] + 1:
        raise InvalidInputError("❌ circumsphere needs exactly d+1 points in R^d")
    base = pts[0]
    rows = pts[1:] - base
    scale = float(np.abs(rows).max())
    if scale == 0.0:
        return None
    rows = rows / scale
    if abs(np.linalg.det(rows)) < DEGENERACY_TOL:
        return None
    offset = np.linalg.solve(rows, 0.5 * np.sum(rows ** 2, axis=1))
    center = base + offset * scale
    return Ball(tuple(float(c) for c in center), float(np.linalg.norm(offset) * scale))


def circumcenters_2d(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised circumcenters and circumradii of planar triangles (nan when collinear)."""
    a, b, c = (np.asarray(x, dtype=float).reshape(-1, 2) for x in (a, b, c))
    bx, by = (b - a).T
    cx, cy = (c - a).T
    denom = 2.0 * (bx * cy - by * cx)
    with np.errstate(divide="ignore", invalid="ignore"):
        b2 = bx * bx + by * by
        c2 = cx * cx + cy * cy
        ux = (cy * b2 - by * c2) / denom
        uy = (bx * c2 - cx * b2) / denom
    centers = a + np.column_stack([ux, uy])
    return centers, np.hypot(ux, uy)


def triangle_meb_radii_2d(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Čech values of planar triangles: circumradius if acute, else half the longest edge."""
    a, b, c = (np.asarray(x, dtype=float).reshape(-1, 2) for x in (a, b, c))
    sides2 = np.sort(
        np.column_stack([np.sum((b - c) ** 2, axis=1), np.sum((a - c) ** 2, axis=1), np.sum((a - b) ** 2, axis=1)]),
        axis=1,
    )
    half_longest = 0.5 * np.sqrt(sides2[:, 2])
    _, circumradii = circumcenters_2d(a, b, c)
    acute = sides2[:, 2] < sides2[:, 0] + sides2[:, 1]
    return np.where(acute & np.isfinite(circumradii), circumradii, half_longest)


@dataclass(frozen=True, eq=False)
class TiledCloud:
    """Euclidean lift of a torus cloud; lifted index i came from original index provenance[i]."""

    cloud: PointCloud
    provenance: np.ndarray
    shifts: np.ndarray
    period: float = 1.0

    def in_fundamental_domain(self, center: Sequence[float]) -> bool:
        return in_fundamental_domain(center, self.period)


def in_fundamental_domain(center: Sequence[float], period: float = 1.0) -> bool:
    c = np.asarray(center, dtype=float)
    return bool(np.all(c >= 0.0) and np.all(c < period))


def torus_tile(cloud: PointCloud, copies: int = 3) -> TiledCloud:
    if not cloud.metric.is_torus:
        raise InvalidInputError("❌ torus_tile needs a torus cloud")
    if copies < 1 or copies % 2 == 0:
        raise InvalidInputError("❌ copies must be a positive odd integer")

    d = cloud.dimension
    period = cloud.metric.period
    reach = copies // 2
    offsets = [np.zeros(d)]
    offsets += [
        np.array(o, dtype=float)
        for o in itertools.product(range(-reach, reach + 1), repeat=d)
        if any(o)
    ]

    n = len(cloud)
    lifted = np.concatenate([cloud.points + period * o for o in offsets]) if n else np.zeros((0, d))
    provenance = np.tile(np.arange(n), len(offsets))
    shifts = np.repeat(np.array(offsets), n, axis=0)
    return TiledCloud(PointCloud(lifted, Metric.euclidean(d)), provenance, shifts, period)
