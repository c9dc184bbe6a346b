"""
Threshold calculus for large-lifetime cycles.

1. Maximal lifetimes lmax(k, m) with provenance (proven or conjectured)
2. Monte Carlo threshold curves g, h (bounded deathtimes) and v (unbounded)
3. The analytic oracle for h in the Čech triangle case
4. Inversion of the curves into u_{n,alpha} and ell_{n,alpha}
5. Extraction of the extremal marked points from sampled clouds
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import integrate
from scipy.optimize import brentq, isotonic_regression
from scipy.sparse.csgraph import connected_components
from scipy.stats import linregress

from artifacts import write_csv
from errors import (
    ConjectureFalsifiedError,
    ExperimentError,
    InvalidInputError,
    NotEmbeddableError,
    ResolutionError,
    UnsupportedCombinationError,
)
from filtration import CECH, VR, alpha_filtration, cech_bruteforce, value_tolerance, vietoris_rips
from geometry import Metric, PointCloud, circumcenters_2d, local_embedding, pairwise_distances
from persistence import FeatureRecord, features, features_on_torus, make_record, reduce
from pointprocess import Window, clusters, rho, sample_homogeneous, stream_rng
from settings import CLUSTER_MAX_POINTS

logger = logging.getLogger(__name__)

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"
PROVEN = "proven"
CONJECTURED = "conjectured"

SKIP = "skip"
ALPHA_FALLBACK = "alpha"

# batch size for Monte Carlo configuration sampling
MC_BATCH = 200_000
# minimum hits for a grid point to count as resolved
MIN_RESOLVED_HITS = 20


def normalize_lifetime(name: str) -> str:
    aliases = {"add": ADDITIVE, "additive": ADDITIVE, "mult": MULTIPLICATIVE, "multiplicative": MULTIPLICATIVE}
    if name not in aliases:
        raise InvalidInputError(f"❌ Unknown lifetime kind: {name}")
    return aliases[name]


@dataclass(frozen=True)
class RegimeConfig:
    n: float
    r_n: float
    alpha: float = 1.0
    d: int = 2
    k: int = 3
    m: int = 3
    filtration: str = CECH
    lifetime: str = ADDITIVE
    beta: Optional[float] = None

    def __post_init__(self):
        if not self.n > 0 or not self.r_n > 0:
            raise InvalidInputError("❌ Intensity n and deathtime bound r_n must be positive")
        if self.alpha < 0:
            raise InvalidInputError("❌ Level alpha must be nonnegative")
        if not 3 <= self.k <= self.m <= 8:
            raise InvalidInputError(f"❌ Need 3 <= k <= m <= 8, got k={self.k}, m={self.m}")
        if self.filtration not in (CECH, VR):
            raise InvalidInputError(f"❌ Regime filtration must be cech or vr, got {self.filtration}")
        object.__setattr__(self, "lifetime", normalize_lifetime(self.lifetime))

    @classmethod
    def from_exponent(cls, n: float, beta: float, **kwargs) -> "RegimeConfig":
        return cls(n=n, r_n=n ** (-beta), beta=beta, **kwargs)

    def rho(self, j: int) -> float:
        return rho(self.n, self.r_n, j, self.d)

    @property
    def rho_m(self) -> float:
        return self.rho(self.m)

    @property
    def rho_next(self) -> float:
        return self.rho(self.m + 1)

    def sparsity_warnings(self) -> List[str]:
        warnings = []
        if self.rho_m < 10:
            warnings.append(f"rho_(n,m) = {self.rho_m:.3g} is below 10")
        if self.rho_next > 0.5:
            warnings.append(f"rho_(n,m+1) = {self.rho_next:.3g} is above 0.5")
        if self.beta is not None and self.d == 2:
            lo, hi = deathtime_exponent_interval(self.d, self.m, self.filtration)
            if not lo < self.beta < hi:
                warnings.append(f"exponent beta = {self.beta} outside ({lo:.4f}, {hi:.4f})")
        for w in warnings:
            logger.warning(f"⚠️  {w}")
        return warnings

    def intensity_target(self) -> float:
        """Value of g whose inverse is u_{n,alpha}."""
        return self.alpha * math.factorial(self.m) / (self.rho_m * math.comb(self.m, self.k))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class LmaxValue:
    value: float
    provenance: str


def regular_polygon_lifetime(m: int) -> float:
    """Additive lifetime of m equally spaced points on the unit circle."""
    if m < 3:
        raise InvalidInputError("❌ Regular polygons need m >= 3")
    return 1.0 - math.sin(math.pi / m)


def lmax(k: int, m: int, filtration: str, lifetime: str, d: int = 2) -> LmaxValue:
    lifetime = normalize_lifetime(lifetime)
    if d == 2 and k == 3:
        if filtration == CECH and m == 3 and lifetime == ADDITIVE:
            return LmaxValue(1.0 - math.sqrt(3) / 2, PROVEN)
        if filtration == CECH and m == 3 and lifetime == MULTIPLICATIVE:
            return LmaxValue(2.0 / math.sqrt(3), PROVEN)
        if filtration == VR and m == 4 and lifetime == ADDITIVE:
            return LmaxValue(1.0 - 1.0 / math.sqrt(2), PROVEN)
        if filtration == CECH and 4 <= m <= 8 and lifetime == ADDITIVE:
            return LmaxValue(regular_polygon_lifetime(m), CONJECTURED)
    raise UnsupportedCombinationError(
        f"❌ No maximal lifetime known for k={k}, m={m}, {filtration}, {lifetime}, d={d}"
    )


def deathtime_exponent_interval(d: int, m: int, filtration: str) -> Tuple[float, float]:
    """Admissible beta for r_n = n^-beta in the m-sparse regime."""
    if d == 2:
        return (m + 1) / (2 * m), m / (2 * (m - 1))
    if filtration == CECH and m == d + 1:
        return (d + 2) / (d * (d + 1)), (d + 1) / d ** 2
    if filtration == VR and m == 2 * d:
        return (2 * d + 1) / (2 * d * d), 2 / (2 * d - 1)
    raise UnsupportedCombinationError(f"❌ No exponent interval for d={d}, m={m}, {filtration}")


def mortal_deathtime_bound(n: float) -> float:
    return math.sqrt(math.log(n) / n)


def birthtime_bound(n: float) -> float:
    return 19 * math.log(math.log(n)) / math.sqrt(n * math.log(n))


def threshold_bracket(n: float, eps: float = 1.0) -> Tuple[float, float]:
    """Asymptotic bracket on ell_{n,alpha} for multiplicative lifetimes on the torus."""
    log_n = math.log(n)
    loglog_n = math.log(log_n)
    return log_n / ((18 + eps) * loglog_n), 2 * log_n / loglog_n


def weibull_limit_scale(gamma: float, alpha: float, q: float) -> float:
    return (gamma * alpha) ** (-1.0 / q)


def ball_volume(d: int, radius: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius ** d


@dataclass
class Threshold:
    value: float
    lower: Optional[float]
    upper: Optional[float]
    target: float
    extrapolated: bool = False


@dataclass
class ThresholdCurve:
    """Monte Carlo table of a monotone threshold function with smoothing, power law and inversion."""

    grid: np.ndarray
    estimates: np.ndarray
    std_errors: np.ndarray
    name: str = "g"
    increasing: bool = True
    hits: Optional[np.ndarray] = None
    smoothed: Optional[np.ndarray] = None
    slope: Optional[float] = None
    intercept: Optional[float] = None
    fit_range: Optional[Tuple[float, float]] = None
    flags: List[str] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.std_errors = np.asarray(self.std_errors, dtype=float)
        if not (len(self.grid) == len(self.estimates) == len(self.std_errors)):
            raise InvalidInputError("❌ Grid, estimates and standard errors must align")
        if np.any(np.diff(self.grid) <= 0):
            raise InvalidInputError("❌ Curve grid must be strictly increasing")

    def _isotonic(self, values: np.ndarray) -> np.ndarray:
        fitted = isotonic_regression(values, increasing=self.increasing).x
        if self.increasing and self.grid[0] == 0.0:
            fitted[0] = 0.0
            fitted = np.maximum.accumulate(np.maximum(fitted, 0.0))
        return np.asarray(fitted, dtype=float)

    def smooth(self) -> "ThresholdCurve":
        self.smoothed = self._isotonic(self.estimates)
        return self

    def _resolved(self) -> np.ndarray:
        ok = (self.grid > 0) & (self.estimates > 0)
        if self.hits is not None:
            ok &= np.asarray(self.hits) >= MIN_RESOLVED_HITS
        return ok

    def fit_power_law(self, upper_cap: Optional[float] = None) -> "ThresholdCurve":
        """log g = slope * log u + intercept over the smallest decade of resolved grid points."""
        resolved = np.flatnonzero(self._resolved())
        if len(resolved) < 2:
            self.slope = self.intercept = None
            return self
        u0 = self.grid[resolved[0]]
        hi = 10 * u0 if upper_cap is None else min(10 * u0, upper_cap)
        window = resolved[self.grid[resolved] <= hi]
        if len(window) < 3:
            window = resolved[self.grid[resolved] <= 10 * u0]
        if len(window) < 2:
            window = resolved[:2]
        fit = linregress(np.log(self.grid[window]), np.log(self.estimates[window]))
        self.slope, self.intercept = float(fit.slope), float(fit.intercept)
        self.fit_range = (float(self.grid[window[0]]), float(self.grid[window[-1]]))
        return self

    def evaluate(self, x, right: Optional[float] = None) -> np.ndarray:
        """Piecewise-linear value; beyond the last grid point it is `right` (default: the last value)."""
        values = self.smoothed if self.smoothed is not None else self.estimates
        return np.interp(x, self.grid, values, right=right)

    def _invert_values(self, values: np.ndarray, target: float) -> Optional[float]:
        if self.increasing:
            above = np.flatnonzero(values >= target)
        else:
            above = np.flatnonzero(values <= target)
        if len(above) == 0:
            return None
        i = int(above[0])
        if i == 0 or values[i] == target:
            return float(self.grid[i])
        lo, hi = self.grid[i - 1], self.grid[i]

        def gap(x: float) -> float:
            return float(np.interp(x, self.grid, values)) - target

        return float(brentq(gap, lo, hi, xtol=1e-14 * max(1.0, hi)))

    def invert(self, target: float) -> Threshold:
        if self.smoothed is None:
            self.smooth()
        values = self.smoothed
        positive = values[values > 0]

        if self.increasing:
            if target <= 0:
                return Threshold(0.0, 0.0, 0.0, target)
            if target > values.max():
                raise ResolutionError(
                    f"❌ Target {target:.4g} exceeds the largest value {values.max():.4g} of {self.name}"
                )
            smallest = positive.min() if len(positive) else math.inf
            if target < smallest:
                return self._extrapolate(target)
        else:
            if len(positive) == 0 or target < positive.min():
                raise ResolutionError(f"❌ No exceedances resolve {self.name} at target {target:.4g}")
            if target > values.max():
                raise ResolutionError(f"❌ Target {target:.4g} lies left of the {self.name} grid")

        value = self._invert_values(values, target)
        bounds = []
        for sign in (1.0, -1.0):
            shifted = self._isotonic(values + sign * 1.96 * self.std_errors)
            bounds.append(self._invert_values(shifted, target))
        lower, upper = (min(bounds), max(bounds)) if None not in bounds else (None, None)
        return Threshold(value, lower, upper, target)

    def _extrapolate(self, target: float) -> Threshold:
        if self.slope is None:
            self.fit_power_law()
        if self.slope is None or self.slope <= 0:
            raise ResolutionError(f"❌ Target {target:.4g} is below the resolved range and no power law is available")
        value = math.exp((math.log(target) - self.intercept) / self.slope)
        message = f"inverse of {self.name} at {target:.4g} extrapolated by power law (slope {self.slope:.3f})"
        self.flags.append(message)
        logger.warning(f"⚠️  {message}")
        return Threshold(value, None, None, target, extrapolated=True)

    def to_csv(self, path: str) -> str:
        if self.smoothed is None:
            self.smooth()
        return write_csv(
            path, ["u", self.name, "se", "smoothed"],
            zip(self.grid, self.estimates, self.std_errors, self.smoothed),
        )


@dataclass
class ThresholdSurface:
    """h(u, v) on a product grid; rows follow u, columns follow v."""

    u_grid: np.ndarray
    v_grid: np.ndarray
    table: np.ndarray
    std_errors: np.ndarray
    smoothed: Optional[np.ndarray] = None

    def smooth(self) -> "ThresholdSurface":
        fitted = np.array(self.table, dtype=float)
        for _ in range(2):
            fitted = np.column_stack([isotonic_regression(fitted[:, j]).x for j in range(fitted.shape[1])])
            fitted = np.vstack([isotonic_regression(fitted[i, :]).x for i in range(fitted.shape[0])])
        self.smoothed = fitted
        return self

    def marginal(self, v: float = 1.0) -> np.ndarray:
        j = int(np.argmin(np.abs(self.v_grid - v)))
        return self.table[:, j]

    def to_csv(self, path: str) -> str:
        if self.smoothed is None:
            self.smooth()
        rows = [
            (u, v, self.table[i, j], self.std_errors[i, j], self.smoothed[i, j])
            for i, u in enumerate(self.u_grid)
            for j, v in enumerate(self.v_grid)
        ]
        return write_csv(path, ["u", "v", "h", "se", "smoothed"], rows)


def sample_cluster_configs(cfg: RegimeConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    """Anchor at the origin plus m-1 points uniform on B(0, 2(m-1)); shape (count, m, d)."""
    radius = 2.0 * (cfg.m - 1)
    directions = rng.normal(size=(count, cfg.m - 1, cfg.d))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    radii = radius * rng.random((count, cfg.m - 1, 1)) ** (1.0 / cfg.d)
    configs = np.zeros((count, cfg.m, cfg.d))
    configs[:, 1:, :] = directions * radii
    return configs


def triangle_statistics(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Dict[str, np.ndarray]:
    """Closed-form 3-point Čech persistence in the plane.

    An acute triangle carries one H1 pair: born at half its longest edge, killed
    at its circumradius, centered at its circumcenter. Other triangles carry none.
    """
    sides2 = np.column_stack([np.sum((b - c) ** 2, axis=1), np.sum((a - c) ** 2, axis=1), np.sum((a - b) ** 2, axis=1)])
    longest2 = sides2.max(axis=1)
    acute = longest2 < sides2.sum(axis=1) - longest2
    centers, radii = circumcenters_2d(a, b, c)
    birth = 0.5 * np.sqrt(longest2)
    acute &= np.isfinite(radii) & (radii - birth > 1e-10 * np.maximum(1.0, radii))
    return {"acute": acute, "birth": birth, "death": radii, "center": centers}


def _connected(configs: np.ndarray, reach: float) -> np.ndarray:
    diff = configs[:, :, None, :] - configs[:, None, :, :]
    adjacency = np.sum(diff ** 2, axis=-1) < reach ** 2
    m = configs.shape[1]
    reached = adjacency[:, 0, :].copy()
    reached[:, 0] = True
    for _ in range(m - 1):
        reached = reached | np.any(reached[:, :, None] & adjacency, axis=1)
    return reached.all(axis=1)


def _lifetime_value(birth: float, death: float, lifetime: str) -> float:
    if lifetime == ADDITIVE:
        return death - birth
    return death / birth if birth > 0 else math.inf


def _first_simplex_lifetime(points: np.ndarray, cfg: RegimeConfig) -> Tuple[float, float]:
    cloud = PointCloud(points, Metric.euclidean(cfg.d))
    builder = cech_bruteforce if cfg.filtration == CECH else vietoris_rips
    fc = builder(cloud, cfg.k - 1, 1.0)
    target = tuple(range(cfg.k))
    for b, d in reduce(fc).nontrivial_pairs(cfg.k - 2, fc):
        if fc.simplices[d] == target and fc.values[d] <= 1.0 + value_tolerance(1.0):
            return _lifetime_value(float(fc.values[b]), float(fc.values[d]), cfg.lifetime), float(fc.values[d])
    return math.nan, math.nan


def configuration_lifetimes(configs: np.ndarray, cfg: RegimeConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Lifetime and deathtime of the simplex on the first k points when it is a negative
    simplex of the m-point complex with deathtime <= 1 and the m points form a cluster
    at level 1 (edges < 2). NaN where the indicator fails."""
    count = len(configs)
    lifetimes = np.full(count, np.nan)
    deaths = np.full(count, np.nan)
    connected = _connected(configs, 2.0)

    if cfg.d == 2 and cfg.filtration == CECH and cfg.k == 3:
        stats = triangle_statistics(configs[:, 0], configs[:, 1], configs[:, 2])
        candidate = connected & stats["acute"] & (stats["death"] <= 1.0)
        if cfg.m > 3:
            others = configs[:, 3:, :] - stats["center"][:, None, :]
            empty = np.all(np.sum(others ** 2, axis=2) >= (stats["death"] ** 2)[:, None], axis=1)
            candidate &= empty
        if cfg.m == 3:
            idx = np.flatnonzero(candidate)
            birth, death = stats["birth"][idx], stats["death"][idx]
            lifetimes[idx] = death - birth if cfg.lifetime == ADDITIVE else death / birth
            deaths[idx] = death
            return lifetimes, deaths
    else:
        first = configs[:, : cfg.k, :]
        diam2 = np.max(np.sum((first[:, :, None, :] - first[:, None, :, :]) ** 2, axis=-1), axis=(1, 2))
        candidate = connected & (diam2 <= 4.0 + 1e-12)

    for i in np.flatnonzero(candidate):
        lifetimes[i], deaths[i] = _first_simplex_lifetime(configs[i], cfg)
    return lifetimes, deaths


def _simulate_batch(cfg: RegimeConfig, count: int, seed: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = stream_rng(seed, index)
    return configuration_lifetimes(sample_cluster_configs(cfg, count, rng), cfg)


def simulate_configurations(cfg: RegimeConfig, samples: int, seed: int, workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Lifetimes/deathtimes of `samples` sampled configurations, independent of worker count."""
    sizes = [MC_BATCH] * (samples // MC_BATCH)
    if samples % MC_BATCH:
        sizes.append(samples % MC_BATCH)
    parts = Parallel(n_jobs=workers)(
        delayed(_simulate_batch)(cfg, size, seed, i) for i, size in enumerate(sizes)
    )
    if not parts:
        return np.zeros(0), np.zeros(0)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def default_u_grid(ell_max: float, points: int = 40) -> np.ndarray:
    return np.geomspace(1e-3 * ell_max, ell_max, points)


def _deviations(cfg: RegimeConfig, lifetimes: np.ndarray, ell_max: LmaxValue) -> np.ndarray:
    deviations = np.where(np.isnan(lifetimes), np.inf, ell_max.value - lifetimes)
    worst = float(deviations.min()) if len(deviations) else math.inf
    if worst < -1e-9:
        details = {"config": cfg.to_dict(), "lmax": ell_max.value, "excess": -worst}
        if ell_max.provenance == CONJECTURED:
            raise ConjectureFalsifiedError(
                f"❌ Sampled lifetime exceeds the conjectured maximum {ell_max.value:.6f} by {-worst:.3g}", details
            )
        raise ExperimentError(f"❌ Sampled lifetime exceeds the proven maximum {ell_max.value:.6f} by {-worst:.3g}")
    return deviations


def estimate_g(cfg: RegimeConfig, samples: int, seed: int, u_grid: Optional[Sequence[float]] = None,
               workers: int = 1) -> ThresholdCurve:
    ell_max = lmax(cfg.k, cfg.m, cfg.filtration, cfg.lifetime, cfg.d)
    flags = []
    if samples < 10_000:
        flags.append(f"only {samples} Monte Carlo samples")
        logger.warning(f"⚠️  estimate_g with only {samples} samples; results will be noisy")

    grid = np.asarray(u_grid if u_grid is not None else default_u_grid(ell_max.value), dtype=float)
    logger.info(f"🔍 Sampling {samples} configurations for g (m={cfg.m}, k={cfg.k}, {cfg.filtration})")
    lifetimes, _ = simulate_configurations(cfg, samples, seed, workers)
    deviations = np.sort(_deviations(cfg, lifetimes, ell_max))

    scale = ball_volume(cfg.d, 2.0 * (cfg.m - 1)) ** (cfg.m - 1)
    hits = np.searchsorted(deviations, grid, side="right").astype(float)
    p = hits / samples
    estimates = scale * p
    std_errors = scale * np.sqrt(p * (1 - p) / samples)

    if grid[0] > 0:
        grid = np.concatenate([[0.0], grid])
        estimates = np.concatenate([[0.0], estimates])
        std_errors = np.concatenate([[0.0], std_errors])
        hits = np.concatenate([[0.0], hits])

    curve = ThresholdCurve(
        grid, estimates, std_errors, name="g", hits=hits, flags=flags,
        meta={"config": cfg.to_dict(), "samples": samples, "seed": seed,
              "lmax": ell_max.value, "lmax_provenance": ell_max.provenance, "scale": scale},
    )
    curve.smooth().fit_power_law(upper_cap=0.3 * ell_max.value)
    logger.info(f"✅ g estimated; power-law slope {curve.slope}")
    return curve


def estimate_h(cfg: RegimeConfig, samples: int, seed: int, u_grid: Optional[Sequence[float]] = None,
               v_grid: Optional[Sequence[float]] = None, workers: int = 1) -> ThresholdSurface:
    """h(u, v) on the same configuration stream as estimate_g, so h(u, 1) reproduces g(u)."""
    ell_max = lmax(cfg.k, cfg.m, cfg.filtration, cfg.lifetime, cfg.d)
    u_grid = np.asarray(u_grid if u_grid is not None else default_u_grid(ell_max.value), dtype=float)
    v_grid = np.asarray(v_grid if v_grid is not None else np.linspace(0.0, 1.0, 11), dtype=float)
    if np.any(v_grid < 0) or np.any(v_grid > 1):
        raise InvalidInputError("❌ Deathtime deviations v must lie in [0, 1]")
    if samples < 10_000:
        logger.warning(f"⚠️  estimate_h with only {samples} samples; results will be noisy")

    lifetimes, deaths = simulate_configurations(cfg, samples, seed, workers)
    u_dev = _deviations(cfg, lifetimes, ell_max)
    v_dev = np.where(np.isnan(deaths), np.inf, 1.0 - deaths)

    scale = ball_volume(cfg.d, 2.0 * (cfg.m - 1)) ** (cfg.m - 1)
    hits = np.array([[np.count_nonzero((u_dev <= u) & (v_dev <= v)) for v in v_grid] for u in u_grid], dtype=float)
    p = hits / samples
    surface = ThresholdSurface(u_grid, v_grid, scale * p, scale * np.sqrt(p * (1 - p) / samples))
    return surface.smooth()


def _cech33_f(theta: float) -> float:
    return math.sin(theta) * ((3 * theta - math.pi) * math.cos(theta) - math.sin(3 * theta)) / (
        2 * (1 - math.sin(theta)) ** 4
    )


def analytic_h_cech33(u: float, v: float = 1.0) -> float:
    """h(u, v) for planar Čech triangles with additive lifetimes, by nested adaptive quadrature.

    The closed-form double integral counts one orientation of the labelled
    triangle; the Lebesgue measure over both orientations doubles it.
    """
    ell_max = 1.0 - math.sqrt(3) / 2
    if not (0.0 <= u <= ell_max + 1e-15) or not (0.0 <= v <= 1.0):
        raise InvalidInputError(f"❌ Need 0 <= u <= {ell_max:.6f} and 0 <= v <= 1, got u={u}, v={v}")
    if u == 0.0 or v == 0.0:
        return 0.0

    def inner(ell: float) -> float:
        upper = math.asin(min(1.0, 1.0 - ell))
        if v >= 1.0:
            lower = math.pi / 3
        else:
            lower = max(math.pi / 3, math.asin(max(-1.0, 1.0 - ell / (1.0 - v))))
        if lower >= upper:
            return 0.0
        value, _ = integrate.quad(_cech33_f, lower, upper, epsabs=0.0, epsrel=1e-11, limit=200)
        return ell ** 3 * value

    value, _ = integrate.quad(inner, max(0.0, ell_max - u), ell_max, epsabs=0.0, epsrel=1e-9, limit=200)
    return 192 * math.pi * value


def analytic_g_curve(u_grid: Optional[Sequence[float]] = None) -> ThresholdCurve:
    """Tabulated analytic g for planar Čech triangles, usable wherever a Monte Carlo curve is."""
    ell_max = 1.0 - math.sqrt(3) / 2
    grid = np.asarray(u_grid if u_grid is not None else default_u_grid(ell_max, 60), dtype=float)
    values = np.array([analytic_h_cech33(float(min(u, ell_max)), 1.0) for u in grid])
    if grid[0] > 0:
        grid = np.concatenate([[0.0], grid])
        values = np.concatenate([[0.0], values])
    curve = ThresholdCurve(grid, values, np.zeros(len(grid)), name="g", meta={"analytic": True, "lmax": ell_max})
    return curve.smooth().fit_power_law(upper_cap=0.1 * ell_max)


def estimate_g_importance(cfg: RegimeConfig, u_values: Sequence[float], samples: int, seed: int,
                          sigma_factor: float = 0.5) -> ThresholdCurve:
    """Deep-tail g by importance sampling around the optimal equilateral configuration.

    Rotation invariance fixes y2 on the positive x-axis, leaving the integral
    2*pi * int rho2 drho2 dy3. Triangles within u of lmax have circumradius in
    [1 - u/lmax, 1], so the proposal is a Gaussian around the equilateral
    triangle (sqrt(3), (sqrt(3)/2, +-3/2)) shrunk to the middle of that range,
    of width sigma_factor * sqrt(3) * u/lmax, mixed evenly over both chiralities.
    """
    if not (cfg.d == 2 and cfg.filtration == CECH and cfg.k == 3 and cfg.m == 3 and cfg.lifetime == ADDITIVE):
        raise UnsupportedCombinationError("❌ Importance sampling is implemented for planar Čech triangles")
    ell_max = lmax(3, 3, CECH, ADDITIVE).value
    optima = np.array([[math.sqrt(3), math.sqrt(3) / 2, 1.5], [math.sqrt(3), math.sqrt(3) / 2, -1.5]])

    u_values = np.asarray(u_values, dtype=float)
    if np.any(u_values <= 0) or np.any(u_values > ell_max):
        raise InvalidInputError(f"❌ Importance sampling needs 0 < u <= {ell_max:.6f}")
    estimates, std_errors = [], []
    for i, u in enumerate(u_values):
        rng = stream_rng(seed, i)
        shrink = u / ell_max
        centers = optima * (1.0 - 0.5 * shrink)
        sigma = sigma_factor * math.sqrt(3) * shrink
        chirality = rng.integers(0, 2, size=samples)
        x = centers[chirality] + sigma * rng.normal(size=(samples, 3))

        sq = np.stack([np.sum((x - o) ** 2, axis=1) for o in centers])
        density = np.mean(np.exp(-sq / (2 * sigma ** 2)), axis=0) / (2 * math.pi * sigma ** 2) ** 1.5

        rho2 = x[:, 0]
        a = np.zeros((samples, 2))
        b = np.column_stack([rho2, np.zeros(samples)])
        c = x[:, 1:]
        stats = triangle_statistics(a, b, c)
        hit = (rho2 > 0) & stats["acute"] & (stats["death"] <= 1.0)
        hit &= (stats["death"] - stats["birth"]) >= ell_max - u
        weights = np.where(hit, 2 * math.pi * np.abs(rho2) / density, 0.0)
        estimates.append(float(weights.mean()))
        std_errors.append(float(weights.std(ddof=1) / math.sqrt(samples)))

    return ThresholdCurve(u_values, estimates, std_errors, name="g",
                          meta={"importance": True, "samples": samples, "seed": seed, "sigma_factor": sigma_factor})


def torus_lifetimes(n: float, seed: int, index: int) -> np.ndarray:
    """Multiplicative lifetimes of every finite H1 feature of one Poisson sample on the 2-torus."""
    cloud = sample_homogeneous(n, Window.torus(2), seed, index)
    if len(cloud) < 3:
        return np.zeros(0)
    return np.array([f.life_mult for f in features_on_torus(cloud)], dtype=float)


def estimate_v(n: float, ell_grid: Optional[Sequence[float]], samples: int, seed: int,
               workers: int = 1, first_index: int = 0) -> ThresholdCurve:
    """v(ell) = E[#negative triangles with multiplicative lifetime >= ell] / n^3 on the 2-torus."""
    grid = np.asarray(ell_grid if ell_grid is not None else np.geomspace(1.0, 8.0, 80), dtype=float)
    logger.info(f"🔍 Estimating v on the torus: n={n}, {samples} samples")
    per_sample = Parallel(n_jobs=workers)(
        delayed(torus_lifetimes)(n, seed, first_index + i) for i in range(samples)
    )
    counts = np.array([[np.count_nonzero(lives >= ell) for ell in grid] for lives in per_sample], dtype=float)
    largest = [float(lives.max()) if len(lives) else math.nan for lives in per_sample]

    n3 = float(n) ** 3
    estimates = counts.mean(axis=0) / n3
    std_errors = counts.std(axis=0, ddof=1) / math.sqrt(samples) / n3 if samples > 1 else np.zeros(len(grid))
    curve = ThresholdCurve(
        grid, estimates, std_errors, name="v", increasing=False, hits=counts.sum(axis=0),
        meta={"n": n, "samples": samples, "seed": seed, "largest": largest},
    )
    return curve.smooth()


def threshold_u(curve: ThresholdCurve, cfg: RegimeConfig) -> Threshold:
    if cfg.alpha == 0:
        return Threshold(0.0, 0.0, 0.0, 0.0)
    return curve.invert(cfg.intensity_target())


def threshold_ell(curve: ThresholdCurve, n: float, alpha: float) -> Threshold:
    """ell_{n,alpha} = v^-1(alpha / n^3)."""
    if curve.increasing:
        raise InvalidInputError("❌ threshold_ell expects the decreasing v curve")
    return curve.invert(alpha / float(n) ** 3)


@dataclass(frozen=True)
class ExtremalPoint:
    center: Tuple[float, ...]
    u: float
    v: float
    lifetime: float
    deathtime: float


@dataclass
class ExtractionResult:
    points: List[ExtremalPoint] = field(default_factory=list)
    skipped_clusters: List[int] = field(default_factory=list)
    multi_exceedance_clusters: int = 0
    above_lmax: int = 0
    clusters_scanned: int = 0

    def xi2(self) -> List[Tuple[float, ...]]:
        return [p.center for p in self.points if p.u <= 1.0]

    def xi3(self) -> List[Tuple[Tuple[float, ...], float]]:
        return [(p.center, p.u) for p in self.points if p.u <= 1.0]

    def restricted(self, u_cap: float) -> "ExtractionResult":
        return ExtractionResult([p for p in self.points if p.u <= u_cap], list(self.skipped_clusters),
                                self.multi_exceedance_clusters, self.above_lmax, self.clusters_scanned)

    def to_csv(self, path: str, dimension: int = 2) -> str:
        names = ["cx", "cy", "cz"][:dimension] if dimension <= 3 else [f"c{i}" for i in range(dimension)]
        return write_csv(path, names + ["u", "v"], ([*p.center, p.u, p.v] for p in self.points))


@dataclass
class ClusterScan:
    """Deathtime-bounded features found cluster by cluster, with bookkeeping."""

    features: List[Tuple[int, FeatureRecord]] = field(default_factory=list)
    skipped_sizes: List[int] = field(default_factory=list)
    excluded_sizes: List[int] = field(default_factory=list)
    clusters_scanned: int = 0
    cluster_sizes: Dict[int, int] = field(default_factory=dict)


def _back_to_cloud(center: Sequence[float], local: np.ndarray, members: np.ndarray, cloud: PointCloud) -> Tuple[float, ...]:
    c = np.asarray(center, dtype=float)
    if cloud.metric.is_torus:
        c = np.mod(cloud.points[members[0]] + (c - local[0]), cloud.metric.period)
    return tuple(float(x) for x in c)


def scan_cluster_features(cloud: PointCloud, r_n: float, filtration: str = CECH, k: int = 3,
                          size_cap: Optional[int] = None, large_policy: str = SKIP) -> ClusterScan:
    """Features with deathtime <= r_n, computed within clusters at level r_n (edges < 2 r_n)."""
    scan = ClusterScan()
    partition = clusters(cloud, 2.0 * r_n) if len(cloud) else None
    if partition is None:
        return scan
    tol = value_tolerance(r_n)

    for index, members in enumerate(partition.members):
        size = len(members)
        if size < k:
            continue
        scan.clusters_scanned += 1
        scan.cluster_sizes[index] = size
        if size_cap is not None and size > size_cap:
            scan.excluded_sizes.append(size)
            continue
        try:
            local = local_embedding(cloud.points[members], cloud.metric)
        except NotEmbeddableError:
            scan.skipped_sizes.append(size)
            continue
        sub = PointCloud(local, Metric.euclidean(cloud.dimension))

        if filtration == CECH and k == 3 and size == 3 and cloud.dimension == 2:
            stats = triangle_statistics(local[[0]], local[[1]], local[[2]])
            if stats["acute"][0] and stats["death"][0] <= r_n + tol:
                record = FeatureRecord(
                    1, float(stats["birth"][0]), float(stats["death"][0]),
                    float(stats["death"][0] - stats["birth"][0]), float(stats["death"][0] / stats["birth"][0]),
                    _back_to_cloud(stats["center"][0], local, members, cloud),
                    tuple(sorted(int(v) for v in members)),
                )
                scan.features.append((index, record))
            continue

        if size > CLUSTER_MAX_POINTS:
            if large_policy != ALPHA_FALLBACK or filtration != CECH or cloud.dimension != 2:
                scan.skipped_sizes.append(size)
                continue
            fc = alpha_filtration(sub, r_n)
        elif filtration == CECH:
            fc = cech_bruteforce(sub, k - 1, r_n)
        else:
            fc = vietoris_rips(sub, k - 1, r_n)

        for record in features(reduce(fc), fc, k - 2):
            if record.death > r_n + tol:
                continue
            mapped = record.remapped(members)
            scan.features.append((index, FeatureRecord(
                mapped.dimension, mapped.birth, mapped.death, mapped.life_add, mapped.life_mult,
                _back_to_cloud(record.center, local, members, cloud), mapped.death_simplex, mapped.birth_simplex,
            )))

    if scan.skipped_sizes:
        logger.warning(f"⚠️  Skipped {len(scan.skipped_sizes)} oversize clusters (sizes {sorted(scan.skipped_sizes)})")
    return scan


def _emit(result: ExtractionResult, cfg: RegimeConfig, ell_max: float, u_na: float, mark_cap: float,
          tagged: List[Tuple[int, FeatureRecord]]) -> ExtractionResult:
    per_cluster: Dict[int, int] = {}
    for cluster, record in tagged:
        ell_hat = record.scaled_lifetime(cfg.lifetime, cfg.r_n)
        if not math.isfinite(ell_hat) or ell_hat < ell_max - mark_cap * u_na:
            continue
        u = (ell_max - ell_hat) / u_na
        if u < 0:
            result.above_lmax += 1
            u = 0.0
        v = max(0.0, (cfg.r_n - record.death) / u_na)
        result.points.append(ExtremalPoint(record.center, u, v, ell_hat, record.death))
        per_cluster[cluster] = per_cluster.get(cluster, 0) + 1
    result.multi_exceedance_clusters = sum(1 for c in per_cluster.values() if c > 1)
    if result.multi_exceedance_clusters:
        logger.warning(f"⚠️  {result.multi_exceedance_clusters} clusters carry more than one extremal point")
    return result


def extract_extremes(cloud: PointCloud, cfg: RegimeConfig, u_na: float, mark_cap: float = 1.0,
                     large_policy: str = SKIP) -> ExtractionResult:
    """Extremal points of the actual persistence diagram, cluster by cluster."""
    if u_na <= 0 or mark_cap <= 0:
        return ExtractionResult()
    ell_max = lmax(cfg.k, cfg.m, cfg.filtration, cfg.lifetime, cfg.d).value
    scan = scan_cluster_features(cloud, cfg.r_n, cfg.filtration, cfg.k, large_policy=large_policy)
    result = ExtractionResult(skipped_clusters=list(scan.skipped_sizes), clusters_scanned=scan.clusters_scanned)
    return _emit(result, cfg, ell_max, u_na, mark_cap, scan.features)


def u_statistic_extremes(cloud: PointCloud, cfg: RegimeConfig, u_na: float, mark_cap: float = 1.0) -> ExtractionResult:
    """Extremal points of the within-cluster U-statistic: every connected m-subset is
    evaluated on its own m points, every negative k-subset of it counts once."""
    if u_na <= 0 or mark_cap <= 0:
        return ExtractionResult()
    ell_max = lmax(cfg.k, cfg.m, cfg.filtration, cfg.lifetime, cfg.d).value
    result = ExtractionResult()
    if len(cloud) < cfg.m:
        return result
    partition = clusters(cloud, 2.0 * cfg.r_n)
    tol = value_tolerance(cfg.r_n)
    tagged: List[Tuple[int, FeatureRecord]] = []
    fast = cfg.d == 2 and cfg.filtration == CECH and cfg.k == 3 and cfg.m == 3

    for index, members in enumerate(partition.members):
        size = len(members)
        if size < cfg.m:
            continue
        result.clusters_scanned += 1
        if size > CLUSTER_MAX_POINTS:
            result.skipped_clusters.append(size)
            continue
        try:
            local = local_embedding(cloud.points[members], cloud.metric)
        except NotEmbeddableError:
            result.skipped_clusters.append(size)
            continue
        distances = pairwise_distances(local, Metric.euclidean(cloud.dimension))
        subsets = np.array(list(itertools.combinations(range(size), cfg.m)), dtype=int)
        sub_adj = distances[subsets[:, :, None], subsets[:, None, :]] < 2.0 * cfg.r_n
        keep = [connected_components(adj.astype(float), directed=False)[0] == 1 for adj in sub_adj]
        subsets = subsets[np.array(keep, dtype=bool)]
        if len(subsets) == 0:
            continue

        if fast:
            stats = triangle_statistics(local[subsets[:, 0]], local[subsets[:, 1]], local[subsets[:, 2]])
            ok = stats["acute"] & (stats["death"] <= cfg.r_n + tol)
            for row in np.flatnonzero(ok):
                birth, death = float(stats["birth"][row]), float(stats["death"][row])
                tagged.append((index, FeatureRecord(
                    1, birth, death, death - birth, death / birth,
                    _back_to_cloud(stats["center"][row], local, members, cloud),
                    tuple(sorted(int(members[v]) for v in subsets[row])),
                )))
            continue

        builder = cech_bruteforce if cfg.filtration == CECH else vietoris_rips
        for subset in subsets:
            sub = PointCloud(local[subset], Metric.euclidean(cloud.dimension))
            fc = builder(sub, cfg.k - 1, cfg.r_n)
            for b, d in reduce(fc).nontrivial_pairs(cfg.k - 2, fc):
                if fc.values[d] > cfg.r_n + tol:
                    continue
                record = make_record(fc, b, d)
                tagged.append((index, FeatureRecord(
                    record.dimension, record.birth, record.death, record.life_add, record.life_mult,
                    _back_to_cloud(record.center, local, members, cloud),
                    tuple(sorted(int(members[subset[v]]) for v in record.death_simplex)),
                )))

    return _emit(result, cfg, ell_max, u_na, mark_cap, tagged)
