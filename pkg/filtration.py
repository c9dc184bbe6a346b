"""
Filtered simplicial complexes over point clouds.

Builders:
1. cech_bruteforce  - every simplex valued by its smallest enclosing ball (small clouds)
2. vietoris_rips    - half the largest pairwise distance
3. delaunay         - Qhull triangulation with deterministic cocircular tie-breaking
4. alpha_filtration - Delaunay-restricted radius filtration, same persistence as Čech
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from artifacts import format_float
from errors import DegenerateInputError, InvalidInputError, SizeLimitError
from geometry import (
    PointCloud,
    circumcenters_2d,
    min_enclosing_ball,
    pairwise_distances,
    triangle_meb_radii_2d,
)
from settings import CECH_MAX_POINTS, VR_MAX_POINTS

logger = logging.getLogger(__name__)

Simplex = Tuple[int, ...]

CECH = "cech"
VR = "vr"
ALPHA = "alpha"

# Cocircular quads are detected on the scale-normalised incircle determinant
COCIRCULAR_TOL = 1e-12


def value_tolerance(r_max: float) -> float:
    return 1e-12 * max(1.0, abs(r_max)) if math.isfinite(r_max) else 0.0


def facets(simplex: Simplex) -> List[Simplex]:
    if len(simplex) < 2:
        return []
    return [simplex[:i] + simplex[i + 1:] for i in range(len(simplex))]


def reduction_key(simplex: Simplex, value: float) -> Tuple[float, int, Simplex]:
    return (value, len(simplex) - 1, simplex)


@dataclass(frozen=True, eq=False)
class FilteredComplex:
    """Simplices with filtration values, stored in reduction order."""

    cloud: PointCloud
    simplices: Tuple[Simplex, ...]
    values: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if len(values) != len(self.simplices):
            raise InvalidInputError("❌ One filtration value per simplex is required")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "simplices", tuple(tuple(int(v) for v in s) for s in self.simplices))

    @classmethod
    def build(cls, cloud: PointCloud, entries: Dict[Simplex, float], kind: str) -> "FilteredComplex":
        ordered = sorted(entries.items(), key=lambda item: reduction_key(item[0], item[1]))
        return cls(cloud, tuple(s for s, _ in ordered), np.array([v for _, v in ordered], dtype=float), kind)

    def __len__(self) -> int:
        return len(self.simplices)

    @cached_property
    def index(self) -> Dict[Simplex, int]:
        return {s: i for i, s in enumerate(self.simplices)}

    @cached_property
    def dimensions(self) -> np.ndarray:
        return np.array([len(s) - 1 for s in self.simplices], dtype=int)

    @property
    def max_dimension(self) -> int:
        return int(self.dimensions.max()) if len(self) else -1

    def entries(self) -> Iterator[Tuple[Simplex, float]]:
        return zip(self.simplices, (float(v) for v in self.values))

    def value_of(self, simplex: Sequence[int]) -> float:
        return float(self.values[self.index[tuple(sorted(simplex))]])

    def boundary(self, i: int) -> List[int]:
        try:
            return [self.index[f] for f in facets(self.simplices[i])]
        except KeyError:
            raise InvalidInputError(f"❌ Complex is not closed under faces at simplex {self.simplices[i]}")

    def is_sorted(self) -> bool:
        keys = [reduction_key(s, float(v)) for s, v in zip(self.simplices, self.values)]
        return all(a <= b for a, b in zip(keys, keys[1:]))

    def is_monotone(self) -> bool:
        for i, simplex in enumerate(self.simplices):
            for f in facets(simplex):
                j = self.index.get(f)
                if j is None or self.values[j] > self.values[i]:
                    return False
        return True

    def restricted(self, r_max: float) -> "FilteredComplex":
        keep = [i for i in range(len(self)) if self.values[i] <= r_max + value_tolerance(r_max)]
        return FilteredComplex(self.cloud, tuple(self.simplices[i] for i in keep), self.values[keep], self.kind)

    def euler_characteristic(self, t: float) -> int:
        mask = self.values <= t
        return int(np.sum(np.where(self.dimensions[mask] % 2 == 0, 1, -1)))

    def to_text(self) -> str:
        lines = [",".join(str(v) for v in s) + ":" + format_float(value) for s, value in self.entries()]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, cloud: PointCloud, kind: str = "custom") -> "FilteredComplex":
        simplices, values = [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            vertices, value = line.rsplit(":", 1)
            simplices.append(tuple(int(v) for v in vertices.split(",")))
            values.append(float(value))
        return cls(cloud, tuple(simplices), np.array(values, dtype=float), kind)


def _check_max_dim(cloud: PointCloud, max_dim: int) -> None:
    if max_dim < 0 or max_dim > cloud.dimension + 1:
        raise InvalidInputError(f"❌ max_dim must be in [0, {cloud.dimension + 1}], got {max_dim}")


def _check_r_max(r_max: float) -> None:
    if not r_max > 0:
        raise InvalidInputError("❌ r_max must be positive")


def _cech_values(cloud: PointCloud, candidates: List[Simplex], distances: np.ndarray) -> List[float]:
    if not candidates:
        return []
    dim = len(candidates[0]) - 1
    if dim == 1:
        return [0.5 * float(distances[s[0], s[1]]) for s in candidates]
    if dim == 2 and cloud.dimension == 2 and not cloud.metric.is_torus:
        idx = np.array(candidates, dtype=int)
        pts = cloud.points
        return triangle_meb_radii_2d(pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]).tolist()
    return [min_enclosing_ball(cloud.points[list(s)], cloud.metric).radius for s in candidates]


def cech_bruteforce(cloud: PointCloud, max_dim: int, r_max: float = math.inf) -> FilteredComplex:
    n = len(cloud)
    if n > CECH_MAX_POINTS:
        raise SizeLimitError(f"❌ cech_bruteforce handles at most {CECH_MAX_POINTS} points, got {n}")
    _check_max_dim(cloud, max_dim)
    _check_r_max(r_max)

    limit = r_max + value_tolerance(r_max)
    distances = pairwise_distances(cloud.points, cloud.metric)
    entries: Dict[Simplex, float] = {(i,): 0.0 for i in range(n)}
    previous = [(i,) for i in range(n)]

    for dim in range(1, max_dim + 1):
        present = set(previous)
        candidates = [
            s for s in itertools.combinations(range(n), dim + 1)
            if all(f in present for f in facets(s))
        ]
        values = _cech_values(cloud, candidates, distances)
        previous = []
        for simplex, value in zip(candidates, values):
            # floor at the facets so round-off never breaks monotonicity
            value = max(value, max(entries[f] for f in facets(simplex)))
            if value <= limit:
                entries[simplex] = value
                previous.append(simplex)
        if not previous:
            break

    return FilteredComplex.build(cloud, entries, CECH)


def _rips_edges(cloud: PointCloud, limit: float) -> Dict[Simplex, float]:
    if len(cloud) < 2:
        return {}
    reach = 2.0 * limit
    if math.isfinite(reach):
        boxsize = cloud.metric.period if cloud.metric.is_torus else None
        tree = cKDTree(cloud.points, boxsize=boxsize)
        pairs = tree.query_pairs(reach, output_type="ndarray")
    else:
        pairs = np.array(list(itertools.combinations(range(len(cloud)), 2)), dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        return {}
    pairs = np.sort(pairs, axis=1)
    delta = np.abs(cloud.points[pairs[:, 0]] - cloud.points[pairs[:, 1]])
    if cloud.metric.is_torus:
        delta = np.minimum(delta, cloud.metric.period - delta)
    halves = 0.5 * np.sqrt(np.sum(delta ** 2, axis=1))
    return {(int(a), int(b)): float(h) for (a, b), h in zip(pairs, halves) if h <= limit}


def vietoris_rips(cloud: PointCloud, max_dim: int, r_max: float = math.inf) -> FilteredComplex:
    n = len(cloud)
    if max_dim >= 2 and n > VR_MAX_POINTS:
        raise SizeLimitError(f"❌ vietoris_rips with max_dim >= 2 handles at most {VR_MAX_POINTS} points, got {n}")
    if max_dim < 0:
        raise InvalidInputError("❌ max_dim must be nonnegative")
    _check_r_max(r_max)

    limit = r_max + value_tolerance(r_max)
    entries: Dict[Simplex, float] = {(i,): 0.0 for i in range(n)}
    if max_dim == 0:
        return FilteredComplex.build(cloud, entries, VR)

    edges = _rips_edges(cloud, limit)
    entries.update(edges)
    if max_dim >= 2:
        halves = 0.5 * pairwise_distances(cloud.points, cloud.metric)
        neighbours = {i: set() for i in range(n)}
        for a, b in edges:
            neighbours[a].add(b)
        layer = dict(edges)
        for _ in range(2, max_dim + 1):
            grown: Dict[Simplex, float] = {}
            for simplex, value in layer.items():
                common = set.intersection(*(neighbours[v] for v in simplex)) if simplex else set()
                # neighbour sets only point forward, so v > every vertex
                for v in common:
                    grown_value = max(value, max(halves[u, v] for u in simplex))
                    if grown_value <= limit:
                        grown[simplex + (v,)] = float(grown_value)
            entries.update(grown)
            layer = grown
            if not layer:
                break

    return FilteredComplex.build(cloud, entries, VR)


def _incircle(pa, pb, pc, pd) -> float:
    """Scale-normalised incircle determinant; positive when d lies inside circle(a, b, c) taken CCW."""
    rows = np.array([pa - pd, pb - pd, pc - pd])
    scale = float(np.abs(rows).max()) or 1.0
    rows = rows / scale
    lifted = np.column_stack([rows, np.sum(rows ** 2, axis=1)])
    orient = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
    return float(np.linalg.det(lifted)) * (1.0 if orient > 0 else -1.0)


def _break_cocircular_ties(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Flip cocircular diagonals so the triangulation is the one of a symbolic lifting.

    Lower vertex indices are lifted higher, so the shared diagonal of a cocircular
    quad is flipped exactly when it contains the smallest index of the four.
    """
    tris: List = [tuple(int(v) for v in t) for t in triangles]
    edge_map: Dict[Tuple[int, int], set] = {}

    def edges_of(t):
        a, b, c = t
        return [(a, b), (a, c), (b, c)]

    for ti, t in enumerate(tris):
        for e in edges_of(t):
            edge_map.setdefault(e, set()).add(ti)

    stack = [e for e, owners in edge_map.items() if len(owners) == 2]
    while stack:
        e = stack.pop()
        owners = edge_map.get(e)
        if not owners or len(owners) != 2:
            continue
        t1, t2 = sorted(owners)
        i, j = e
        a = next(v for v in tris[t1] if v not in e)
        b = next(v for v in tris[t2] if v not in e)
        if min(i, j, a, b) not in (i, j):
            continue
        if abs(_incircle(points[i], points[j], points[a], points[b])) > COCIRCULAR_TOL:
            continue

        for ti in (t1, t2):
            for edge in edges_of(tris[ti]):
                edge_map[edge].discard(ti)
        new1 = tuple(sorted((a, b, i)))
        new2 = tuple(sorted((a, b, j)))
        tris[t1], tris[t2] = new1, new2
        for ti in (t1, t2):
            for edge in edges_of(tris[ti]):
                edge_map.setdefault(edge, set()).add(ti)
        if not edge_map[e]:
            del edge_map[e]
        stack.extend(edge for edge in edges_of(new1) + edges_of(new2) if edge != (min(a, b), max(a, b)))

    return np.array(tris, dtype=int).reshape(-1, 3)


def _require_planar(cloud: PointCloud) -> None:
    if cloud.dimension != 2:
        raise InvalidInputError(f"❌ Delaunay/Alpha complexes need d = 2, got d = {cloud.dimension}")
    if cloud.metric.is_torus:
        raise InvalidInputError("❌ Lift torus clouds with torus_tile before building an Alpha complex")


def delaunay(cloud: PointCloud) -> np.ndarray:
    """Triangles (sorted vertex triples, rows in lexicographic order) of the Delaunay triangulation."""
    _require_planar(cloud)
    pts = cloud.points
    if len(pts) < 3:
        raise DegenerateInputError("❌ Delaunay triangulation needs at least 3 points")
    if len(np.unique(pts, axis=0)) < len(pts):
        raise DegenerateInputError("❌ Duplicate points are not allowed")
    spread = pts - pts[0]
    if np.linalg.matrix_rank(spread / (np.abs(spread).max() or 1.0), tol=1e-12) < 2:
        raise DegenerateInputError("❌ All points are collinear")

    try:
        tri = Delaunay(pts)
    except QhullError as e:
        raise DegenerateInputError(f"❌ Qhull failed: {e}")
    if len(tri.coplanar):
        raise DegenerateInputError("❌ Near-duplicate points were dropped by Qhull")

    triangles = _break_cocircular_ties(pts, np.sort(tri.simplices, axis=1))
    order = np.lexsort((triangles[:, 2], triangles[:, 1], triangles[:, 0]))
    return triangles[order]


def alpha_filtration(cloud: PointCloud, r_max: float = math.inf) -> FilteredComplex:
    _require_planar(cloud)
    _check_r_max(r_max)
    triangles = delaunay(cloud)
    pts = cloud.points
    _, radii = circumcenters_2d(pts[triangles[:, 0]], pts[triangles[:, 1]], pts[triangles[:, 2]])

    # every (edge, opposite vertex, triangle) incidence
    incid_edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [0, 2]], triangles[:, [1, 2]]])
    incid_opp = np.concatenate([triangles[:, 2], triangles[:, 1], triangles[:, 0]])
    incid_tri = np.tile(np.arange(len(triangles)), 3)
    edges, inverse = np.unique(incid_edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    mid = 0.5 * (pts[edges[:, 0]] + pts[edges[:, 1]])
    half2 = 0.25 * np.sum((pts[edges[:, 0]] - pts[edges[:, 1]]) ** 2, axis=1)
    opp_d2 = np.sum((pts[incid_opp] - mid[inverse]) ** 2, axis=1)
    attached = np.zeros(len(edges), dtype=bool)
    np.logical_or.at(attached, inverse, opp_d2 < half2[inverse] * (1.0 - 1e-12))
    min_radius = np.full(len(edges), np.inf)
    np.minimum.at(min_radius, inverse, radii[incid_tri])
    edge_values = np.where(attached, min_radius, np.sqrt(half2))

    limit = r_max + value_tolerance(r_max)
    entries: Dict[Simplex, float] = {(i,): 0.0 for i in range(len(pts))}
    edge_lookup = {}
    for (a, b), value in zip(edges.tolist(), edge_values.tolist()):
        edge_lookup[(a, b)] = value
        if value <= limit:
            entries[(a, b)] = value
    for (a, b, c), radius in zip(triangles.tolist(), radii.tolist()):
        value = max(radius, edge_lookup[(a, b)], edge_lookup[(a, c)], edge_lookup[(b, c)])
        if value <= limit:
            entries[(a, b, c)] = value

    return FilteredComplex.build(cloud, entries, ALPHA)


def build_filtration(cloud: PointCloud, kind: str, max_dim: int = 2, r_max: float = math.inf) -> FilteredComplex:
    """Dispatch on a filtration name as used by the CLI and the experiment configs."""
    if kind == CECH:
        return cech_bruteforce(cloud, max_dim, r_max)
    if kind == VR:
        return vietoris_rips(cloud, max_dim, r_max)
    if kind == ALPHA:
        return alpha_filtration(cloud, r_max)
    raise InvalidInputError(f"❌ Unknown filtration: {kind}")
