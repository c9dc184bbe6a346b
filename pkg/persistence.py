"""
Z/2 persistence of filtered complexes.

reduce() pairs simplices by column reduction of the boundary matrix. Three
strategies give the same pairing:
1. standard - left-to-right column reduction
2. clearing - dimensions top-down, paired columns of the lower dimension zeroed
3. planar   - complete 2D Alpha complexes only; H0 by union-find, H1 by
              union-find on the dual graph processed in reverse order

features() turns nontrivial pairs into FeatureRecords with centers, and
associated_loop() recovers the vertex loop around a planar feature.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from matplotlib.path import Path

from artifacts import read_csv, write_csv
from errors import InvalidInputError, LoopExtractionError
from filtration import ALPHA, FilteredComplex, Simplex, alpha_filtration, delaunay, value_tolerance
from geometry import PointCloud, circumsphere, in_fundamental_domain, min_enclosing_ball, torus_tile
from settings import CIRCUM_TOL, PERSISTENCE_TOL

logger = logging.getLogger(__name__)

STANDARD = "standard"
CLEARING = "clearing"
PLANAR = "planar"


def is_trivial(birth: float, death: float, tol: float = PERSISTENCE_TOL) -> bool:
    return death - birth <= tol * max(1.0, abs(death))


@dataclass
class PersistencePairing:
    """Birth/death index pairs per homology dimension plus unpaired (essential) births."""

    pairs: Dict[int, List[Tuple[int, int]]] = field(default_factory=dict)
    essential: Dict[int, List[int]] = field(default_factory=dict)

    def finite_pairs(self, p: int) -> List[Tuple[int, int]]:
        return list(self.pairs.get(p, []))

    def essential_births(self, p: Optional[int] = None) -> List[int]:
        if p is not None:
            return list(self.essential.get(p, []))
        return sorted(i for births in self.essential.values() for i in births)

    def negative_simplices(self, p: Optional[int] = None) -> Set[int]:
        dims = [p] if p is not None else list(self.pairs)
        return {death for dim in dims for _, death in self.pairs.get(dim, [])}

    def nontrivial_pairs(self, p: int, fc: FilteredComplex, tol: float = PERSISTENCE_TOL) -> List[Tuple[int, int]]:
        return [
            (b, d) for b, d in self.pairs.get(p, [])
            if not is_trivial(float(fc.values[b]), float(fc.values[d]), tol)
        ]

    def betti(self, fc: FilteredComplex, t: float) -> Dict[int, int]:
        """Betti numbers of the subcomplex with values <= t."""
        counts: Dict[int, int] = {}
        for p, births in self.essential.items():
            counts[p] = counts.get(p, 0) + sum(1 for b in births if fc.values[b] <= t)
        for p, pairs in self.pairs.items():
            alive = sum(1 for b, d in pairs if fc.values[b] <= t < fc.values[d])
            counts[p] = counts.get(p, 0) + alive
        return counts


def _reduce_column(column: Set[int], low_to_col: Dict[int, int], reduced: Dict[int, Set[int]]) -> Set[int]:
    while column:
        owner = low_to_col.get(max(column))
        if owner is None:
            break
        column ^= reduced[owner]
    return column


def _pairing_from_lows(fc: FilteredComplex, low_to_col: Dict[int, int]) -> PersistencePairing:
    dims = fc.dimensions
    pairs: Dict[int, List[Tuple[int, int]]] = {}
    for low, col in sorted(low_to_col.items(), key=lambda item: item[1]):
        pairs.setdefault(int(dims[low]), []).append((low, col))
    paired = set(low_to_col) | set(low_to_col.values())
    essential: Dict[int, List[int]] = {}
    for i in range(len(fc)):
        if i not in paired:
            essential.setdefault(int(dims[i]), []).append(i)
    return PersistencePairing(pairs, essential)


def _reduce_matrix(fc: FilteredComplex, clearing: bool) -> Dict[int, int]:
    dims = fc.dimensions
    low_to_col: Dict[int, int] = {}
    reduced: Dict[int, Set[int]] = {}

    if not clearing:
        order = [j for j in range(len(fc)) if dims[j] > 0]
    else:
        order = [j for dim in range(fc.max_dimension, 0, -1) for j in range(len(fc)) if dims[j] == dim]

    cleared: Set[int] = set()
    for j in order:
        if j in cleared:
            continue
        column = _reduce_column(set(fc.boundary(j)), low_to_col, reduced)
        if column:
            low = max(column)
            low_to_col[low] = j
            reduced[j] = column
            if clearing:
                cleared.add(low)
    return low_to_col


class _UnionFind:
    """Union-find whose root is always the member with the largest priority."""

    def __init__(self):
        self.parent: Dict[int, int] = {}
        self.priority: Dict[int, float] = {}

    def add(self, item: int, priority: float) -> None:
        self.parent[item] = item
        self.priority[item] = priority

    def find(self, item: int) -> int:
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: int, b: int) -> int:
        """Merge two roots and return the one that loses (the lower priority)."""
        if self.priority[a] < self.priority[b]:
            a, b = b, a
        self.parent[b] = a
        return b


def _planar_lows(fc: FilteredComplex) -> Dict[int, int]:
    full = fc
    if fc.kind != ALPHA:
        raise InvalidInputError("❌ The planar strategy needs an Alpha complex")
    triangles = delaunay(fc.cloud)
    if int(np.sum(fc.dimensions == 2)) < len(triangles):
        full = alpha_filtration(fc.cloud)
        if full.simplices[: len(fc)] != fc.simplices:
            raise InvalidInputError("❌ Complex is not a prefix of its full Alpha filtration")

    dims = full.dimensions
    low_to_col: Dict[int, int] = {}

    # H0: vertices are born at 0, the oldest vertex (smallest index) survives
    components = _UnionFind()
    for i in np.flatnonzero(dims == 0):
        components.add(int(i), -float(i))
    for j in np.flatnonzero(dims == 1):
        a, b = full.simplices[j]
        ra, rb = components.find(a), components.find(b)
        if ra != rb:
            low_to_col[components.union(ra, rb)] = int(j)

    # H1: dual graph of triangles plus the outer face, traversed from the end
    outer = -1
    incident: Dict[Simplex, List[int]] = {}
    for j in np.flatnonzero(dims == 2):
        a, b, c = full.simplices[j]
        for edge in ((a, b), (a, c), (b, c)):
            incident.setdefault(edge, []).append(int(j))
    regions = _UnionFind()
    regions.add(outer, math.inf)
    for j in range(len(full) - 1, -1, -1):
        if dims[j] == 2:
            regions.add(j, float(j))
        elif dims[j] == 1:
            sides = incident.get(full.simplices[j], [])
            left = sides[0] if sides else outer
            right = sides[1] if len(sides) > 1 else outer
            rl, rr = regions.find(left), regions.find(right)
            if rl != rr:
                low_to_col[j] = regions.union(rl, rr)

    return {low: col for low, col in low_to_col.items() if col < len(fc)}


def reduce(fc: FilteredComplex, method: str = STANDARD) -> PersistencePairing:
    if len(fc) == 0:
        return PersistencePairing()
    if not fc.is_sorted():
        raise InvalidInputError("❌ Filtered complex is not in (value, dimension, vertices) order")

    if method == STANDARD:
        low_to_col = _reduce_matrix(fc, clearing=False)
    elif method == CLEARING:
        low_to_col = _reduce_matrix(fc, clearing=True)
    elif method == PLANAR:
        low_to_col = _planar_lows(fc)
    else:
        raise InvalidInputError(f"❌ Unknown reduction method: {method}")
    return _pairing_from_lows(fc, low_to_col)


@dataclass(frozen=True)
class FeatureRecord:
    dimension: int
    birth: float
    death: float
    life_add: float
    life_mult: float
    center: Tuple[float, ...]
    death_simplex: Simplex
    birth_simplex: Simplex = ()

    def scaled_lifetime(self, lifetime: str, r_n: float) -> float:
        """Additive lifetimes are divided by the deathtime bound, multiplicative ones are scale-free."""
        if lifetime == "additive":
            return self.life_add / r_n
        if lifetime == "multiplicative":
            return self.life_mult
        raise InvalidInputError(f"❌ Unknown lifetime kind: {lifetime}")

    def remapped(self, mapping: Sequence[int]) -> "FeatureRecord":
        return FeatureRecord(
            self.dimension, self.birth, self.death, self.life_add, self.life_mult, self.center,
            tuple(sorted(int(mapping[v]) for v in self.death_simplex)),
            tuple(sorted(int(mapping[v]) for v in self.birth_simplex)),
        )


def make_record(fc: FilteredComplex, birth_index: int, death_index: int) -> FeatureRecord:
    birth = float(fc.values[birth_index])
    death = float(fc.values[death_index])
    death_simplex = fc.simplices[death_index]
    ball = min_enclosing_ball(fc.cloud.points[list(death_simplex)], fc.cloud.metric)
    return FeatureRecord(
        dimension=len(fc.simplices[birth_index]) - 1,
        birth=birth,
        death=death,
        life_add=death - birth,
        life_mult=death / birth if birth > 0 else math.inf,
        center=ball.center,
        death_simplex=death_simplex,
        birth_simplex=fc.simplices[birth_index],
    )


def features(pairing: PersistencePairing, fc: FilteredComplex, p: int = 1) -> List[FeatureRecord]:
    if p < 1:
        raise InvalidInputError("❌ Features are extracted for p >= 1")
    return [make_record(fc, b, d) for b, d in pairing.nontrivial_pairs(p, fc)]


def features_on_torus(cloud: PointCloud, p: int = 1, method: str = PLANAR) -> List[FeatureRecord]:
    """Torus persistence through the 3x3 lift, keeping features centered in [0,1)^2."""
    lift = torus_tile(cloud, 3)
    fc = alpha_filtration(lift.cloud)
    pairing = reduce(fc, method)
    kept = []
    for record in features(pairing, fc, p):
        if in_fundamental_domain(record.center, lift.period):
            kept.append(record.remapped(lift.provenance))
    return kept


def _center_names(d: int) -> List[str]:
    named = ["center_x", "center_y", "center_z"]
    return [named[i] if i < 3 else f"center_x{i}" for i in range(d)]


DIAGRAM_FIELDS = ["dim", "birth", "death", "life_add", "life_mult"]


def diagram_to_csv(records: List[FeatureRecord], path: str, dimension: int = 2) -> str:
    header = DIAGRAM_FIELDS + _center_names(dimension)
    rows = [
        [r.dimension, r.birth, r.death, r.life_add, r.life_mult, *r.center]
        for r in records
    ]
    return write_csv(path, header, rows)


def diagram_from_csv(path: str) -> List[FeatureRecord]:
    header, rows = read_csv(path)
    d = len(header) - len(DIAGRAM_FIELDS)
    records = []
    for row in rows:
        dim, birth, death, add, mult = row[:5]
        records.append(
            FeatureRecord(int(dim), float(birth), float(death), float(add), float(mult),
                          tuple(float(c) for c in row[5:5 + d]), ())
        )
    return records


def negative_check_2d(tri: Simplex, cloud: PointCloud, tol: float = CIRCUM_TOL) -> bool:
    """Empty open circumdisk and circumcenter strictly inside the triangle."""
    if cloud.dimension != 2:
        raise InvalidInputError("❌ negative_check_2d needs a planar cloud")
    vertices = cloud.points[list(tri)]
    ball = circumsphere(vertices)
    if ball is None:
        return False

    a, b, c = vertices
    t = np.array([b - a, c - a]).T
    try:
        lam = np.linalg.solve(t, ball.center_array - a)
    except np.linalg.LinAlgError:
        return False
    bary = np.array([1.0 - lam.sum(), lam[0], lam[1]])
    if np.any(bary <= 1e-12):
        return False

    others = np.delete(cloud.points, list(tri), axis=0)
    if len(others) == 0:
        return True
    dist = np.sqrt(np.sum((others - ball.center_array) ** 2, axis=1))
    return bool(np.all(dist >= ball.radius - tol))


@dataclass(frozen=True)
class AssociatedLoop:
    vertices: Tuple[int, ...]
    flagged: bool = False

    def __len__(self) -> int:
        return len(self.vertices)


def _locate(points: np.ndarray, triangles: np.ndarray, z: np.ndarray) -> Optional[int]:
    a, b, c = (points[triangles[:, i]] for i in range(3))
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    l1 = ((z[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (z[1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
    l2 = ((b[:, 0] - a[:, 0]) * (z[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (z[0] - a[:, 0])) / det
    inside = np.flatnonzero((l1 >= -1e-12) & (l2 >= -1e-12) & (1.0 - l1 - l2 >= -1e-12))
    return int(inside[0]) if len(inside) else None


def _ccw(points: np.ndarray, tri: Sequence[int]) -> Tuple[int, int, int]:
    a, b, c = tri
    pa, pb, pc = points[a], points[b], points[c]
    cross = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
    return (a, b, c) if cross > 0 else (a, c, b)


def _signed_area(points: np.ndarray, loop: Sequence[int]) -> float:
    xy = points[list(loop)]
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _walk_loops(points: np.ndarray, half_edges: List[Tuple[int, int]]) -> List[List[int]]:
    outgoing: Dict[int, List[int]] = {}
    for u, v in half_edges:
        outgoing.setdefault(u, []).append(v)
    def clockwise_turn(u: int, v: int, w: int) -> float:
        back = math.atan2(points[u][1] - points[v][1], points[u][0] - points[v][0])
        ahead = math.atan2(points[w][1] - points[v][1], points[w][0] - points[v][0])
        return (back - ahead) % (2 * math.pi) or 2 * math.pi

    unused = set(half_edges)
    loops = []
    for start in sorted(half_edges):
        if start not in unused:
            continue
        unused.discard(start)
        loop = [start[0]]
        u, v = start
        for _ in range(len(half_edges)):
            # the face on the left continues clockwise from the edge we came in on
            if v not in outgoing:
                break
            w = min(outgoing[v], key=lambda w: clockwise_turn(u, v, w))
            if (v, w) == start or (v, w) not in unused:
                break
            loop.append(v)
            unused.discard((v, w))
            u, v = v, w
        loops.append(loop)
    return loops


def associated_loop(fr: FeatureRecord, cloud: PointCloud, alpha_fc: FilteredComplex) -> AssociatedLoop:
    """External boundary of the face of the birth-time 1-skeleton that contains the feature center."""
    if cloud.dimension != 2 or cloud.metric.is_torus:
        raise InvalidInputError("❌ associated_loop needs a planar Euclidean cloud")
    if fr.dimension != 1:
        raise InvalidInputError("❌ associated_loop needs an H1 feature")

    points = cloud.points
    tol = value_tolerance(fr.birth)
    graph = {s for s, v in alpha_fc.entries() if len(s) == 2 and v <= fr.birth + tol}
    ties = sum(1 for s, v in alpha_fc.entries() if len(s) == 2 and abs(v - fr.birth) <= tol)
    flagged = ties > 1

    triangles = delaunay(cloud)
    edge_tris: Dict[Simplex, List[int]] = {}
    for t, (a, b, c) in enumerate(triangles.tolist()):
        for edge in ((a, b), (a, c), (b, c)):
            edge_tris.setdefault(edge, []).append(t)

    z = np.asarray(fr.center, dtype=float)
    start = _locate(points, triangles, z)
    if start is None:
        raise LoopExtractionError(f"❌ Center {fr.center} lies outside the triangulation")

    region = {start}
    queue = deque([start])
    while queue:
        t = queue.popleft()
        a, b, c = triangles[t].tolist()
        for edge in ((a, b), (a, c), (b, c)):
            if edge in graph:
                continue
            neighbours = edge_tris[edge]
            if len(neighbours) == 1:
                raise LoopExtractionError(f"❌ Center {fr.center} is not enclosed at birth time {fr.birth}")
            for other in neighbours:
                if other not in region:
                    region.add(other)
                    queue.append(other)

    half_edges = []
    for t in region:
        a, b, c = _ccw(points, triangles[t].tolist())
        for u, v in ((a, b), (b, c), (c, a)):
            edge = (min(u, v), max(u, v))
            # hull edges border the outer face
            if edge in graph and (len(edge_tris[edge]) == 1 or not all(o in region for o in edge_tris[edge])):
                half_edges.append((u, v))

    best: Optional[List[int]] = None
    best_area = 0.0
    for loop in _walk_loops(points, half_edges):
        if len(loop) < 3:
            continue
        area = _signed_area(points, loop)
        if area <= 0 or area <= best_area:
            continue
        if Path(points[loop]).contains_point(tuple(z)):
            best, best_area = loop, area
    if best is None:
        raise LoopExtractionError(f"❌ No boundary loop encloses center {fr.center}")

    pivot = best.index(min(best))
    ordered = tuple(best[pivot:] + best[:pivot])
    if flagged:
        logger.warning(f"⚠️  Birth edge of feature at {fr.center} is not unique; loop flagged")
    return AssociatedLoop(ordered, flagged)
