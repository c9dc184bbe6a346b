"""
Poisson point processes on boxes and the flat torus, r-level clusters and
their census, plus numeric checks of the sampling assumptions.
"""

import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from artifacts import read_csv, write_csv
from errors import DensitySpecError, InvalidInputError
from geometry import Metric, PointCloud

logger = logging.getLogger(__name__)

CUBE = "cube"
TORUS = "torus"
BOX = "box"


@dataclass(frozen=True)
class Window:
    kind: str
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        if self.kind not in (CUBE, TORUS, BOX):
            raise InvalidInputError(f"❌ Unknown window kind: {self.kind}")
        if len(self.lower) != len(self.upper) or not self.lower:
            raise InvalidInputError("❌ Window bounds must have matching, nonzero dimension")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise InvalidInputError("❌ Window upper bounds must exceed lower bounds")

    @classmethod
    def cube(cls, d: int = 2) -> "Window":
        return cls(CUBE, (0.0,) * d, (1.0,) * d)

    @classmethod
    def torus(cls, d: int = 2) -> "Window":
        return cls(TORUS, (0.0,) * d, (1.0,) * d)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Window":
        return cls(BOX, tuple(float(x) for x in lower), tuple(float(x) for x in upper))

    @classmethod
    def parse(cls, text: str, d: int = 2) -> "Window":
        """cube | torus | box:lo,hi (every axis) | box:lo1,hi1,...,lod,hid"""
        text = text.strip()
        if text == CUBE:
            return cls.cube(d)
        if text == TORUS:
            return cls.torus(d)
        if text.startswith(BOX + ":"):
            try:
                bounds = [float(x) for x in text[len(BOX) + 1:].split(",")]
            except ValueError:
                raise InvalidInputError(f"❌ Malformed box window: {text}")
            if len(bounds) == 2:
                return cls.box([bounds[0]] * d, [bounds[1]] * d)
            if len(bounds) == 2 * d:
                return cls.box(bounds[0::2], bounds[1::2])
        raise InvalidInputError(f"❌ Unknown window: {text}")

    def to_text(self) -> str:
        if self.kind in (CUBE, TORUS):
            return self.kind
        return BOX + ":" + ",".join(f"{lo:g},{hi:g}" for lo, hi in zip(self.lower, self.upper))

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @property
    def metric(self) -> Metric:
        if self.kind == TORUS:
            return Metric.torus(self.dimension)
        return Metric.euclidean(self.dimension)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.all((pts >= np.array(self.lower)) & (pts < np.array(self.upper)), axis=1)

    def padded(self, delta: float) -> "Window":
        return Window.box(np.subtract(self.lower, delta), np.add(self.upper, delta))


CONSTANT = "constant"
GAUSSIAN = "gaussian"
GRID = "grid"


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """Bounded density kappa on a window; kappa_max is the thinning envelope."""

    kind: str
    window: Window
    params: Dict[str, Any] = field(default_factory=dict)
    kappa_max: float = 1.0
    grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (CONSTANT, GAUSSIAN, GRID):
            raise DensitySpecError(f"❌ Unknown density kind: {self.kind}")
        if not (math.isfinite(self.kappa_max) and self.kappa_max > 0):
            raise DensitySpecError("❌ kappa_max must be finite and positive")

    @classmethod
    def constant(cls, window: Window, level: float = 1.0) -> "DensitySpec":
        if level <= 0:
            raise DensitySpecError("❌ Constant density must be positive")
        return cls(CONSTANT, window, {"level": float(level)}, float(level))

    @classmethod
    def gaussian(cls, window: Window, scale: float = 1.0) -> "DensitySpec":
        if scale <= 0:
            raise DensitySpecError("❌ Gaussian scale must be positive")
        peak = (2 * math.pi * scale ** 2) ** (-window.dimension / 2)
        return cls(GAUSSIAN, window, {"scale": float(scale)}, peak)

    @classmethod
    def from_grid(cls, window: Window, values: np.ndarray, path: str = "") -> "DensitySpec":
        values = np.asarray(values, dtype=float)
        if values.ndim != window.dimension or window.dimension != 2:
            raise DensitySpecError("❌ Grid densities are supported on 2D windows only")
        if np.any(values < 0) or not np.all(np.isfinite(values)) or values.max() <= 0:
            raise DensitySpecError("❌ Grid density values must be finite, nonnegative and not all zero")
        return cls(GRID, window, {"path": path, "shape": list(values.shape)}, float(values.max()), values)

    @classmethod
    def parse(cls, text: str, window: Window) -> "DensitySpec":
        """const | const:level | gauss:scale | grid:path.csv (rows along y, columns along x)"""
        text = text.strip()
        kind, _, arg = text.partition(":")
        try:
            if kind == "const":
                return cls.constant(window, float(arg) if arg else 1.0)
            if kind == "gauss":
                return cls.gaussian(window, float(arg) if arg else 1.0)
        except ValueError:
            raise DensitySpecError(f"❌ Malformed density: {text}")
        if kind == "grid" and arg:
            if not os.path.exists(arg):
                raise DensitySpecError(f"❌ Density grid not found: {arg}")
            values = np.loadtxt(arg, delimiter=",", ndmin=2)
            return cls.from_grid(window, values, arg)
        raise DensitySpecError(f"❌ Unknown density: {text}")

    def to_text(self) -> str:
        if self.kind == CONSTANT:
            return f"const:{self.params['level']:g}"
        if self.kind == GAUSSIAN:
            return f"gauss:{self.params['scale']:g}"
        return f"grid:{self.params.get('path', '')}"

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.window.dimension)
        inside = self.window.contains(pts)
        if self.kind == CONSTANT:
            values = np.full(len(pts), self.params["level"])
        elif self.kind == GAUSSIAN:
            s = self.params["scale"]
            values = self.kappa_max * np.exp(-np.sum(pts ** 2, axis=1) / (2 * s ** 2))
        else:
            rows, cols = self.grid.shape
            lo, hi = np.array(self.window.lower), np.array(self.window.upper)
            frac = (pts - lo) / (hi - lo)
            ix = np.clip((frac[:, 0] * cols).astype(int), 0, cols - 1)
            iy = np.clip((frac[:, 1] * rows).astype(int), 0, rows - 1)
            values = self.grid[iy, ix]
        return np.where(inside, values, 0.0)

    def integral(self, power: float = 1.0) -> float:
        """Integral of kappa**power over the window."""
        if self.kind == CONSTANT:
            return self.params["level"] ** power * self.window.volume
        if self.kind == GAUSSIAN:
            s = self.params["scale"]
            width = s / math.sqrt(power)
            total = self.kappa_max ** power
            for lo, hi in zip(self.window.lower, self.window.upper):
                total *= width * math.sqrt(2 * math.pi) * (stats.norm.cdf(hi / width) - stats.norm.cdf(lo / width))
            return float(total)
        return float(np.sum(self.grid ** power) * self.window.volume / self.grid.size)

    def cell_integrals(self, cells: int, power: float = 1.0, window: Optional[Window] = None) -> np.ndarray:
        """Integral of kappa**power over each cell of a cells x cells grid (2D), indexed [ix, iy]."""
        window = window or self.window
        if window.dimension != 2:
            raise InvalidInputError("❌ Cell integrals are implemented for 2D windows")
        xs = np.linspace(window.lower[0], window.upper[0], cells + 1)
        ys = np.linspace(window.lower[1], window.upper[1], cells + 1)
        if self.kind == GAUSSIAN:
            width = self.params["scale"] / math.sqrt(power)
            fx = np.diff(stats.norm.cdf(xs / width)) * width * math.sqrt(2 * math.pi)
            fy = np.diff(stats.norm.cdf(ys / width)) * width * math.sqrt(2 * math.pi)
            return self.kappa_max ** power * np.outer(fx, fy)
        sub = 16
        cx = np.linspace(window.lower[0], window.upper[0], cells * sub, endpoint=False)
        cy = np.linspace(window.lower[1], window.upper[1], cells * sub, endpoint=False)
        hx, hy = cx[1] - cx[0], cy[1] - cy[0]
        gx, gy = np.meshgrid(cx + hx / 2, cy + hy / 2, indexing="ij")
        values = self.evaluate(np.column_stack([gx.ravel(), gy.ravel()])).reshape(gx.shape) ** power
        return values.reshape(cells, sub, cells, sub).sum(axis=(1, 3)) * hx * hy


def stream_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent counter-based stream for (master seed, sample index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def sample_homogeneous(n: float, window: Window, seed: int, index: int = 0,
                       rng: Optional[np.random.Generator] = None) -> PointCloud:
    if not n > 0:
        raise InvalidInputError("❌ Intensity must be positive")
    rng = rng or stream_rng(seed, index)
    count = rng.poisson(n * window.volume)
    lo = np.array(window.lower)
    points = lo + (np.array(window.upper) - lo) * rng.random((count, window.dimension))
    return PointCloud(points, window.metric)


def sample_inhomogeneous(n: float, spec: DensitySpec, seed: int, index: int = 0,
                         rng: Optional[np.random.Generator] = None) -> PointCloud:
    """Thinning of a homogeneous process of intensity n * kappa_max."""
    rng = rng or stream_rng(seed, index)
    base = sample_homogeneous(n * spec.kappa_max, spec.window, seed, index, rng=rng)
    values = spec.evaluate(base.points)
    if np.any(values > spec.kappa_max * (1 + 1e-12)):
        raise DensitySpecError("❌ Density exceeds its declared bound kappa_max")
    keep = rng.random(len(base)) < values / spec.kappa_max
    return PointCloud(base.points[keep], base.metric)


@dataclass(frozen=True, eq=False)
class ClusterPartition:
    labels: np.ndarray
    members: Tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.members)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=int)

    def clusters_of_size(self, j: int) -> List[np.ndarray]:
        return [m for m in self.members if len(m) == j]


def close_pairs(cloud: PointCloud, r: float) -> np.ndarray:
    """Index pairs (i < j) at distance strictly below r."""
    if len(cloud) < 2:
        return np.zeros((0, 2), dtype=int)
    boxsize = cloud.metric.period if cloud.metric.is_torus else None
    tree = cKDTree(cloud.points, boxsize=boxsize)
    pairs = tree.query_pairs(r, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=int)
    delta = np.abs(cloud.points[pairs[:, 0]] - cloud.points[pairs[:, 1]])
    if cloud.metric.is_torus:
        delta = np.minimum(delta, cloud.metric.period - delta)
    strict = np.sum(delta ** 2, axis=1) < r * r
    return np.sort(pairs[strict], axis=1)


def clusters(cloud: PointCloud, r: float) -> ClusterPartition:
    """Connected components of the graph with edges {distance < r}."""
    if not r > 0:
        raise InvalidInputError("❌ Cluster radius must be positive")
    n = len(cloud)
    if n == 0:
        return ClusterPartition(np.zeros(0, dtype=int), ())

    pairs = close_pairs(cloud, r)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    # label clusters in order of their smallest member
    _, first = np.unique(labels, return_index=True)
    relabel = np.empty(len(first), dtype=int)
    relabel[np.argsort(first)] = np.arange(len(first))
    labels = relabel[labels]
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    members = tuple(np.split(order, splits))
    return ClusterPartition(labels, members)


def cluster_census(cloud: PointCloud, r: float) -> Dict[int, int]:
    return dict(sorted(Counter(int(s) for s in clusters(cloud, r).sizes).items()))


def rho(n: float, r: float, j: int, d: int = 2) -> float:
    return n * (n * r ** d) ** (j - 1)


def cluster_bound(j: int, n: float, r: float, d: int = 2, c: float = 1.0, c_tilde: float = math.pi) -> float:
    """Upper bound c * j^(j-2) * c_tilde^(j-1) * rho_{n,j} on the expected number of j-clusters."""
    return c * j ** (j - 2) * c_tilde ** (j - 1) * rho(n, r, j, d)


def cluster_bound_check(n: float, r: float, reps: int, seed: int, sizes: Sequence[int] = (3, 4, 5)) -> Dict[str, Any]:
    """Monte Carlo census on [0,1]^2 compared with the cluster bound at 3 standard errors."""
    counts = np.zeros((reps, len(sizes)))
    window = Window.cube(2)
    for i in range(reps):
        census = cluster_census(sample_homogeneous(n, window, seed, i), r)
        counts[i] = [census.get(j, 0) for j in sizes]
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(len(sizes))
    rows = []
    for j, m, s in zip(sizes, mean, se):
        bound = cluster_bound(j, n, r)
        rows.append({"j": j, "mean": float(m), "se": float(s), "bound": bound, "passed": bool(m <= bound + 3 * s)})
    passed = all(row["passed"] for row in rows)
    logger.info(f"📊 Cluster census over {reps} clouds: {'✅ within bound' if passed else '❌ bound exceeded'}")
    return {"n": n, "r": r, "reps": reps, "sizes": rows, "passed": passed}


def expected_close_pairs_unit_square(n: float, r: float) -> float:
    """n^2/2 times the probability that two uniform points of [0,1]^2 are within r (r <= 1)."""
    if not 0 < r <= 1:
        raise InvalidInputError("❌ Closed form holds for 0 < r <= 1")
    return 0.5 * n * n * (math.pi * r ** 2 - 8.0 * r ** 3 / 3.0 + r ** 4 / 2.0)


def mecke_pair_check(n: float, r: float, reps: int, seed: int) -> Dict[str, Any]:
    window = Window.cube(2)
    counts = np.array([len(close_pairs(sample_homogeneous(n, window, seed, i), r)) for i in range(reps)], dtype=float)
    expected = expected_close_pairs_unit_square(n, r)
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(reps))
    return {"mean": mean, "se": se, "expected": expected, "passed": abs(mean - expected) <= 3 * se}


def _loglog_slope(r_values: Sequence[float], series: Sequence[float]) -> Optional[float]:
    r = np.asarray(r_values, dtype=float)
    y = np.asarray(series, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        return None
    return float(stats.linregress(np.log(r[keep]), np.log(y[keep])).slope)


def assumption_p_check(spec: DensitySpec, m: int, r_values: Sequence[float], seed: int,
                       samples: int = 20000) -> Dict[str, Any]:
    """Sup-modulus over pairs within 2*m*r and the boundary mass, both expected to decay like r."""
    rng = stream_rng(seed, 0)
    d = spec.window.dimension
    lo, hi = np.array(spec.window.lower), np.array(spec.window.upper)
    base = lo + (hi - lo) * rng.random((samples, d))
    directions = rng.normal(size=(samples, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    kappa = spec.evaluate(base)

    modulus, boundary = [], []
    for r in r_values:
        reach = 2 * m * r
        moved = base + reach * directions
        both = spec.window.contains(moved)
        diffs = np.abs(kappa - spec.evaluate(moved))[both]
        modulus.append(float(diffs.max()) if len(diffs) else 0.0)
        if spec.window.kind == TORUS:
            boundary.append(0.0)
        else:
            near = np.min(np.minimum(base - lo, hi - base), axis=1) < reach
            boundary.append(float(spec.window.volume * np.mean(kappa * near)))

    def judged(series: List[float]) -> Tuple[Optional[float], bool]:
        if max(series) == 0.0:
            # identically zero is trivially O(r)
            return None, True
        slope = _loglog_slope(r_values, series)
        return slope, slope is not None and 0.8 <= slope <= 1.2

    modulus_slope, modulus_ok = judged(modulus)
    boundary_slope, boundary_ok = judged(boundary)
    return {
        "r": list(r_values),
        "modulus": modulus,
        "boundary": boundary,
        "modulus_slope": modulus_slope,
        "boundary_slope": boundary_slope,
        "passed": modulus_ok and boundary_ok,
    }


def write_cloud_csv(cloud: PointCloud, path: str) -> str:
    header = [f"x{i}" for i in range(cloud.dimension)]
    return write_csv(path, header, cloud.points.tolist())


def read_cloud_csv(path: str, torus: bool = False) -> PointCloud:
    header, rows = read_csv(path)
    points = np.array([[float(v) for v in row] for row in rows], dtype=float).reshape(-1, len(header))
    metric = Metric.torus(len(header)) if torus else Metric.euclidean(len(header))
    return PointCloud(points, metric)
