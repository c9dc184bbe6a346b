"""
Experiments and Poisson-limit diagnostics.

Three reproductions (maximal-lifetime annealing, Weibull slopes of the largest
lifetime, deathtime correlation of the two largest cycles) and the statistical
checks of the extremal point process. Every experiment is a pure function of
(config, seed) and returns an ExperimentReport.
"""

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from artifacts import write_csv, write_json
from errors import ConjectureFalsifiedError, ExperimentError, ResolutionError, UnsupportedCombinationError
from filtration import CECH, alpha_filtration, cech_bruteforce, vietoris_rips
from geometry import Metric, PointCloud
from persistence import PLANAR, reduce
from pointprocess import DensitySpec, Window, sample_homogeneous, sample_inhomogeneous, stream_rng
from regime import (
    ADDITIVE,
    ALPHA_FALLBACK,
    CONJECTURED,
    ExtremalPoint,
    RegimeConfig,
    ThresholdCurve,
    analytic_g_curve,
    estimate_g,
    estimate_v,
    extract_extremes,
    lmax,
    scan_cluster_features,
    threshold_bracket,
    threshold_ell,
    threshold_u,
    torus_lifetimes,
    u_statistic_extremes,
    weibull_limit_scale,
)
from settings import MC_SAMPLES

logger = logging.getLogger(__name__)

P_THRESHOLD = 0.01
# proposal scale below which an annealing run is frozen
FROZEN_SCALE = 1e-12
# stream indices per experiment block; blocks never overlap for < 10^6 repetitions
BLOCK = 1_000_000


def _stream(block: int, rep: int) -> int:
    return block * BLOCK + rep


def _parallel(fn: Callable, args: Sequence[Tuple], workers: int) -> List[Any]:
    """Ordered parallel map; results are aggregated by repetition index."""
    return Parallel(n_jobs=workers)(delayed(fn)(*a) for a in args)


@dataclass
class ExperimentReport:
    name: str
    config: Dict[str, Any]
    seed: int
    metrics: Dict[str, Any] = field(default_factory=dict)
    runs: List[Dict[str, Any]] = field(default_factory=list)
    series: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    passed: Optional[bool] = None
    wall_clock: float = 0.0

    def add_series(self, name: str, header: List[str], rows: List[Sequence[Any]]) -> None:
        self.series[name] = {"header": list(header), "rows": [list(r) for r in rows]}

    def flag(self, message: str) -> None:
        self.flags.append(message)
        logger.warning(f"⚠️  {message}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self, path: str) -> str:
        return write_json(path, self.to_dict())

    def write(self, out_dir: str) -> List[str]:
        """report.json plus one CSV per series."""
        paths = [self.to_json(os.path.join(out_dir, "report.json"))]
        for name, table in self.series.items():
            paths.append(write_csv(os.path.join(out_dir, f"{name}.csv"), table["header"], table["rows"]))
        return paths


def _check_against_lmax(value: float, k: int, m: int, filtration: str, lifetime: str, context: Dict[str, Any]) -> None:
    try:
        bound = lmax(k, m, filtration, lifetime)
    except UnsupportedCombinationError:
        return
    if value > bound.value + 1e-9:
        details = dict(context, lmax=bound.value, value=value)
        if bound.provenance == CONJECTURED:
            raise ConjectureFalsifiedError(
                f"❌ Lifetime {value:.9f} exceeds the conjectured maximum {bound.value:.9f} for m={m}", details
            )
        raise ExperimentError(f"❌ Lifetime {value:.9f} exceeds the proven maximum {bound.value:.9f} for m={m}")


# ----------------------------------------------------------------- annealing


@dataclass(frozen=True)
class AnnealSchedule:
    initial_temperature: float = 0.1
    cooling: float = 0.995
    proposal_factor: float = 0.5
    iterations: int = 100_000
    restarts: int = 20

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ExperimentError("❌ Cooling factor must lie in (0, 1)")
        if self.iterations < 1 or self.restarts < 1:
            raise ExperimentError("❌ Annealing needs at least one iteration and one restart")
        if self.initial_temperature <= 0 or self.proposal_factor <= 0:
            raise ExperimentError("❌ Temperature and proposal factor must be positive")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "AnnealSchedule":
        names = {"initial_temperature", "cooling", "proposal_factor", "iterations", "restarts"}
        values = {k: v for k, v in config.items() if k in names}
        for key in ("iterations", "restarts"):
            if key in values:
                values[key] = int(float(values[key]))
        return cls(**values)

    def proposal_scale(self, temperature: float) -> float:
        return self.proposal_factor * temperature


def configuration_lifetime(points: np.ndarray, k: int = 3, filtration: str = CECH) -> float:
    """Largest additive lifetime of a (k-2)-cycle killed at deathtime <= 1; -inf if none."""
    cloud = PointCloud(points, Metric.euclidean(points.shape[1]))
    builder = cech_bruteforce if filtration == CECH else vietoris_rips
    fc = builder(cloud, k - 1, 1.0)
    lives = [float(fc.values[d] - fc.values[b]) for b, d in reduce(fc).nontrivial_pairs(k - 2, fc)]
    return max(lives) if lives else -math.inf


def _uniform_in_ball(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    directions = rng.normal(size=(m, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * rng.random((m, 1)) ** (1.0 / d)


def _accept(new: float, current: float, temperature: float, rng: np.random.Generator) -> bool:
    draw = rng.random()
    if new >= current:
        return True
    if new == -math.inf:
        return False
    return draw < math.exp((new - current) / temperature)


def _anneal_restart(m: int, k: int, filtration: str, schedule: AnnealSchedule, seed: int,
                    restart: int) -> Tuple[np.ndarray, float, int]:
    rng = stream_rng(seed, restart)
    current = _uniform_in_ball(rng, m, 2)
    current_value = configuration_lifetime(current, k, filtration)
    best, best_value = current.copy(), current_value
    temperature = schedule.initial_temperature
    steps = 0
    for steps in range(1, schedule.iterations + 1):
        scale = schedule.proposal_scale(temperature)
        if scale < FROZEN_SCALE:
            break
        proposal = current.copy()
        proposal[rng.integers(m)] += scale * rng.normal(size=2)
        value = configuration_lifetime(proposal, k, filtration)
        if _accept(value, current_value, temperature, rng):
            current, current_value = proposal, value
            if value > best_value:
                best, best_value = proposal.copy(), value
        temperature *= schedule.cooling
    return best, best_value, steps


def anneal_max_lifetime(m: int, k: int = 3, filtration: str = CECH, schedule: Optional[AnnealSchedule] = None,
                        seed: int = 0, workers: int = 1) -> Tuple[np.ndarray, float]:
    """Best configuration and lifetime over independent annealing restarts."""
    if not 3 <= m <= 8:
        raise ExperimentError(f"❌ Annealing supports 3 <= m <= 8, got {m}")
    schedule = schedule or AnnealSchedule()
    logger.info(f"🚀 Annealing m={m}, {filtration}, {schedule.restarts} restarts")
    results = _parallel(
        _anneal_restart, [(m, k, filtration, schedule, seed, r) for r in range(schedule.restarts)], workers
    )
    best_config, best_value = results[0][0], results[0][1]
    for config, value, _ in results[1:]:
        if value > best_value:
            best_config, best_value = config, value
    _check_against_lmax(best_value, k, m, filtration, ADDITIVE,
                        {"m": m, "configuration": best_config.tolist(), "seed": seed})
    logger.info(f"✅ Best lifetime for m={m}: {best_value:.6f}")
    return best_config, best_value


def anneal_experiment(config: Dict[str, Any], seed: int, workers: int = 1) -> ExperimentReport:
    ms = config.get("m", [3])
    ms = ms if isinstance(ms, list) else [ms]
    filtration = config.get("filtration", CECH)
    k = int(config.get("k", 3))
    schedule = AnnealSchedule.from_dict(config)
    minimums = {str(key): float(v) for key, v in config.get("min_lifetime", {}).items()}

    report = ExperimentReport("anneal", dict(config), seed)
    rows = []
    passed = True
    for m in ms:
        best_config, best_value = anneal_max_lifetime(int(m), k, filtration, schedule, seed, workers)
        floor = minimums.get(str(m))
        ok = floor is None or best_value >= floor
        passed &= ok
        report.runs.append({"m": int(m), "lifetime": best_value, "configuration": best_config.tolist(), "passed": ok})
        rows.append([int(m), best_value])
        report.add_series(f"configuration_m{m}", ["x", "y"], best_config.tolist())
    report.add_series("lifetimes", ["m", "lifetime"], rows)
    report.passed = passed
    return report


# ------------------------------------------------------------------- Weibull


@dataclass
class WeibullFit:
    slope: float
    intercept: float
    r_squared: float
    scale: float
    slope_se: float
    intercept_se: float
    logt: List[float]
    loglogS: List[float]
    samples: int
    infinite: int

    @property
    def shape(self) -> float:
        return self.slope

    def scale_interval(self, z: float = 1.96) -> Tuple[float, float]:
        """Delta-method interval for scale = exp(-intercept / slope)."""
        log_scale = -self.intercept / self.slope
        spread = math.hypot(self.intercept_se / self.slope, self.intercept * self.slope_se / self.slope ** 2)
        return math.exp(log_scale - z * spread), math.exp(log_scale + z * spread)


def survival_points(deviations: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(t, S(t)) at the 9 interior deciles of the finite deviations, dropping S in {0, 1}."""
    devs = np.asarray(deviations, dtype=float)
    finite = devs[np.isfinite(devs)]
    if len(finite) < 2 or np.all(finite == finite[0]):
        raise ExperimentError("❌ Survival function is degenerate: deviations are missing or all equal")
    grid = np.unique(np.quantile(finite, np.linspace(0.1, 0.9, 9)))
    survival = np.array([np.mean(devs > t) for t in grid])
    keep = (grid > 0) & (survival > 0) & (survival < 1)
    return grid[keep], survival[keep]


def fit_weibull_plot(deviations: Sequence[float]) -> WeibullFit:
    """OLS on (log t, log(-log S(t))); samples without any feature count as survivors."""
    devs = np.asarray(deviations, dtype=float)
    t, survival = survival_points(devs)
    if len(t) < 2:
        raise ExperimentError("❌ Fewer than two usable survival points")
    x, y = np.log(t), np.log(-np.log(survival))
    fit = stats.linregress(x, y)
    slope, intercept = float(fit.slope), float(fit.intercept)
    scale = math.exp(-intercept / slope) if slope != 0 else math.nan
    return WeibullFit(
        slope=slope, intercept=intercept, r_squared=float(fit.rvalue ** 2), scale=scale,
        slope_se=float(fit.stderr), intercept_se=float(fit.intercept_stderr),
        logt=x.tolist(), loglogS=y.tolist(), samples=len(devs), infinite=int(np.sum(~np.isfinite(devs))),
    )


def largest_scaled_lifetime(cloud: PointCloud, r_n: float, m: int, lifetime: str = ADDITIVE,
                            filtration: str = CECH) -> Tuple[float, int, bool]:
    """
    Largest scaled lifetime over clusters of at most m points (the m-sparse ell^(1)).

    Also returns the number of larger clusters and whether one of them carries a larger lifetime,
    i.e. whether the unrestricted maximum over the whole cloud would differ.
    """
    scan = scan_cluster_features(cloud, r_n, filtration, 3, large_policy=ALPHA_FALLBACK)
    values, larger = [], []
    for index, record in scan.features:
        target = values if scan.cluster_sizes[index] <= m else larger
        target.append(record.scaled_lifetime(lifetime, r_n))
    best = max(values) if values else -math.inf
    oversize = sum(1 for size in scan.cluster_sizes.values() if size > m)
    return best, oversize, bool(larger) and max(larger) > best


def _weibull_rep(n: float, r_n: float, m: int, seed: int, index: int) -> Tuple[float, int, bool]:
    cloud = sample_homogeneous(n, Window.cube(2), seed, index)
    return largest_scaled_lifetime(cloud, r_n, m)


def weibull_slope_experiment(m: int, beta: float, ns: Sequence[float], reps: int, seed: int,
                             workers: int = 1, q_band: Optional[Tuple[float, float]] = None,
                             min_r_squared: float = 0.95) -> ExperimentReport:
    """Weibull-plot slopes of lmax - ell^(1) for growing n at r_n = n^-beta."""
    ell_max = lmax(3, m, CECH, ADDITIVE)
    report = ExperimentReport("weibull", {"m": m, "beta": beta, "n": list(ns), "reps": reps,
                                          "lmax": ell_max.value, "lmax_provenance": ell_max.provenance}, seed)
    if ell_max.provenance == CONJECTURED:
        report.flag(f"lmax for m={m} is conjectured; this run probes the conjecture")

    rows = []
    passed = True
    for block, n in enumerate(ns):
        r_n = float(n) ** (-beta)
        logger.info(f"🔍 Weibull slope: m={m}, n={n}, {reps} clouds")
        results = _parallel(_weibull_rep, [(n, r_n, m, seed, _stream(block, i)) for i in range(reps)], workers)
        largest = np.array([r[0] for r in results])
        oversize = int(sum(r[1] for r in results))
        masked = int(sum(r[2] for r in results))
        if masked:
            report.flag(f"n={n}: in {masked} of {reps} clouds a cluster with more than {m} points held a larger lifetime")
        deviations = ell_max.value - largest
        finite = deviations[np.isfinite(deviations)]
        if len(finite) and finite.min() < -1e-9:
            _check_against_lmax(float(largest[np.isfinite(largest)].max()), 3, m, CECH, ADDITIVE, {"n": n, "seed": seed})

        fit = fit_weibull_plot(deviations)
        ok = fit.r_squared >= min_r_squared
        if q_band is not None:
            ok &= q_band[0] <= fit.slope <= q_band[1]
        passed &= ok
        report.runs.append({"n": n, "r_n": r_n, "q_hat": fit.slope, "intercept": fit.intercept,
                            "r_squared": fit.r_squared, "no_feature": fit.infinite,
                            "oversize_clusters": oversize, "masked_by_larger_clusters": masked, "passed": ok})
        rows.append([n, fit.slope, fit.intercept, fit.r_squared])
        report.add_series(f"weibull_plot_n{n:g}", ["logt", "loglogS"], list(zip(fit.logt, fit.loglogS)))
        logger.info(f"📊 n={n}: q_hat={fit.slope:.3f}, R^2={fit.r_squared:.3f}")

    report.add_series("slopes", ["n", "q_hat", "intercept", "r_squared"], rows)
    report.passed = passed
    return report


def threshold_curve_for(cfg: RegimeConfig, samples: int, seed: int, workers: int = 1) -> ThresholdCurve:
    """Analytic g where it exists, Monte Carlo otherwise."""
    if cfg.d == 2 and cfg.filtration == CECH and cfg.k == 3 and cfg.m == 3 and cfg.lifetime == ADDITIVE:
        return analytic_g_curve()
    return estimate_g(cfg, samples, seed, workers=workers)


def _window_rep(cfg: RegimeConfig, spec: Optional[DensitySpec], window: Window, seed: int,
                index: int) -> Tuple[float, int, bool]:
    if spec is None:
        cloud = sample_homogeneous(cfg.n, window, seed, index)
    else:
        cloud = sample_inhomogeneous(cfg.n, spec, seed, index)
    return largest_scaled_lifetime(cloud, cfg.r_n, cfg.m, cfg.lifetime, cfg.filtration)


def largest_lifetime_weibull_check(cfg: RegimeConfig, reps: int, seed: int, curve: Optional[ThresholdCurve] = None,
                                   spec: Optional[DensitySpec] = None, q: Optional[float] = None,
                                   workers: int = 1, tolerance: float = 0.2) -> ExperimentReport:
    """(lmax - ell^(1)) / u_{n,alpha} against Weibull((gamma*alpha)^(-1/q), q)."""
    curve = curve or threshold_curve_for(cfg, MC_SAMPLES, seed, workers)
    u_na = threshold_u(curve, cfg).value
    if u_na <= 0:
        raise ResolutionError("❌ The Weibull check needs a positive threshold u_{n,alpha}")
    window = spec.window if spec is not None else Window.cube(cfg.d)
    gamma = spec.integral(cfg.m) if spec is not None else window.volume
    q = q if q is not None else curve.slope
    if q is None:
        raise ResolutionError("❌ No power-law exponent q is available for the threshold curve")
    ell_max = lmax(cfg.k, cfg.m, cfg.filtration, cfg.lifetime, cfg.d).value

    results = _parallel(_window_rep, [(cfg, spec, window, seed, _stream(2, i)) for i in range(reps)], workers)
    deviations = (ell_max - np.array([r[0] for r in results])) / u_na
    fit = fit_weibull_plot(deviations)
    expected_scale = weibull_limit_scale(gamma, cfg.alpha, q)
    scale_lo, scale_hi = fit.scale_interval()

    shape_ok = abs(fit.slope - q) <= tolerance * q
    scale_ok = abs(fit.scale - expected_scale) <= tolerance * expected_scale
    report = ExperimentReport("weibullcheck", {"regime": cfg.to_dict(), "reps": reps, "gamma": gamma, "q": q}, seed)
    report.metrics = {
        "u_na": u_na, "shape": fit.slope, "shape_ci": [fit.slope - 1.96 * fit.slope_se, fit.slope + 1.96 * fit.slope_se],
        "scale": fit.scale, "scale_ci": [scale_lo, scale_hi], "expected_shape": q, "expected_scale": expected_scale,
        "r_squared": fit.r_squared, "no_feature": fit.infinite,
        "oversize_clusters": int(sum(r[1] for r in results)),
        "masked_by_larger_clusters": int(sum(r[2] for r in results)),
    }
    report.add_series("weibull_plot", ["logt", "loglogS"], list(zip(fit.logt, fit.loglogS)))
    report.passed = bool(shape_ok and scale_ok)
    return report


def largest_lifetime_statistic(largest: Sequence[float], curve: ThresholdCurve, n: float) -> Tuple[np.ndarray, int, int]:
    """
    n^3 * v(ell^(1)) per sample, with the number of samples beyond the v grid and without features.

    Beyond the last grid point no sampled feature reaches ell, so v is taken as 0 there.
    A sample without features (nan) sits below every lifetime and maps to +inf.
    """
    largest = np.asarray(largest, dtype=float)
    empty = np.isnan(largest)
    beyond = ~empty & (largest > curve.grid[-1])
    values = curve.evaluate(np.where(empty, curve.grid[0], largest), right=0.0)
    statistic = float(n) ** 3 * np.asarray(values, dtype=float)
    statistic[empty] = math.inf
    if beyond.any():
        logger.warning(f"⚠️  {int(beyond.sum())} largest lifetimes lie beyond the v grid (max {curve.grid[-1]:.3f})")
    return statistic, int(beyond.sum()), int(empty.sum())


def unbounded_largest_lifetime_check(n: float, reps: int, seed: int, curve: Optional[ThresholdCurve] = None,
                                     v_samples: int = 200, workers: int = 1) -> ExperimentReport:
    """n^3 * v(ell^(1)) on the 2-torus against Exponential(1)."""
    lifetimes = _parallel(torus_lifetimes, [(n, seed, _stream(3, i)) for i in range(reps)], workers)
    largest = np.array([lives.max() if len(lives) else math.nan for lives in lifetimes])
    if curve is None:
        top = float(np.nanmax(largest)) if np.any(np.isfinite(largest)) else 8.0
        curve = estimate_v(n, np.geomspace(1.0, max(8.0, 1.05 * top), 80), v_samples, seed, workers)
    monotone = bool(np.all(np.diff(curve.smoothed) <= 0))
    threshold = threshold_ell(curve, n, 1.0)
    lo, hi = threshold_bracket(n)
    in_bracket = lo <= threshold.value <= hi

    statistic, beyond, empty = largest_lifetime_statistic(largest, curve, n)
    ks = stats.kstest(statistic, stats.expon.cdf)

    report = ExperimentReport("unbounded", {"n": n, "reps": reps, "v_samples": curve.meta.get("samples")}, seed)
    report.metrics = {
        "ell_n1": threshold.value, "bracket": [lo, hi], "in_bracket": in_bracket,
        "v_monotone": monotone, "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue),
        "beyond_grid": beyond, "no_feature": empty,
    }
    report.add_series("v_curve", ["ell", "v", "se", "smoothed"],
                      list(zip(curve.grid, curve.estimates, curve.std_errors, curve.smoothed)))
    report.passed = bool(monotone and in_bracket and ks.pvalue > P_THRESHOLD)
    return report


# ------------------------------------------------------- deathtime correlation


def deathtime_correlation(first: Sequence[float], second: Sequence[float]) -> Dict[str, Any]:
    a, b = np.asarray(first, dtype=float), np.asarray(second, dtype=float)
    if len(a) != len(b):
        raise ExperimentError("❌ Deathtime samples must pair up")
    if len(a) < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        return {"pearson": math.nan, "spearman": math.nan, "flagged": True}
    return {
        "pearson": float(stats.pearsonr(a, b)[0]),
        "spearman": float(stats.spearmanr(a, b)[0]),
        "flagged": False,
    }


def top_two_deathtimes(cloud: PointCloud, r_n: float) -> Optional[Tuple[float, float]]:
    """Deathtimes of the two largest additive lifetimes among H1 pairs killed by r_n."""
    if len(cloud) < 3:
        return None
    fc = alpha_filtration(cloud)
    pairs = reduce(fc, PLANAR).nontrivial_pairs(1, fc)
    if len(pairs) < 2:
        return None
    births = np.array([fc.values[b] for b, _ in pairs])
    deaths = np.array([fc.values[d] for _, d in pairs])
    keep = deaths <= r_n
    if keep.sum() < 2:
        return None
    lives, deaths = deaths[keep] - births[keep], deaths[keep]
    order = np.argsort(-lives, kind="stable")
    return float(deaths[order[0]]), float(deaths[order[1]])


def _deathcorr_cloud(n: float, r_n: float, intensity_factor: float, seed: int, index: int,
                     max_attempts: int = 100) -> Tuple[float, float, int]:
    for attempt in range(max_attempts):
        cloud = sample_homogeneous(intensity_factor * n, Window.cube(2), seed, index * max_attempts + attempt)
        found = top_two_deathtimes(cloud, r_n)
        if found is not None:
            return found[0], found[1], attempt
    raise ExperimentError(f"❌ No cloud with two features after {max_attempts} attempts (n={n})")


def deathcorr_experiment(ns: Sequence[float], reps: int = 100, outer: int = 30, seed: int = 0,
                         r_exponent: float = 0.67, intensity_factor: float = 10.0, workers: int = 1,
                         band: Tuple[float, float] = (-0.05, 0.10)) -> ExperimentReport:
    report = ExperimentReport("deathcorr", {"n": list(ns), "reps": reps, "outer": outer,
                                            "r_exponent": r_exponent, "intensity_factor": intensity_factor}, seed)
    rows = []
    passed = True
    for block, n in enumerate(ns):
        r_n = float(n) ** (-r_exponent)
        logger.info(f"🔍 Deathtime correlation: n={n}, {outer} x {reps} clouds")
        args = [(n, r_n, intensity_factor, seed, _stream(block, o * reps + i)) for o in range(outer) for i in range(reps)]
        results = _parallel(_deathcorr_cloud, args, workers)
        pearson, spearman, flagged = [], [], 0
        for o in range(outer):
            chunk = results[o * reps:(o + 1) * reps]
            corr = deathtime_correlation([c[0] for c in chunk], [c[1] for c in chunk])
            flagged += int(corr["flagged"])
            if not corr["flagged"]:
                pearson.append(corr["pearson"])
                spearman.append(corr["spearman"])
        average = float(np.mean(pearson)) if pearson else math.nan
        ok = band[0] <= average <= band[1]
        passed &= ok
        resampled = int(sum(r[2] for r in results))
        if flagged:
            report.flag(f"{flagged} outer repetitions with zero deathtime variance at n={n}")
        report.runs.append({"n": n, "avg_corr": average, "avg_spearman": float(np.mean(spearman)) if spearman else math.nan,
                            "resampled_clouds": resampled, "flagged": flagged, "passed": ok})
        rows.append([n, average])
        logger.info(f"📊 n={n}: average correlation {average:.4f}")
    report.add_series("deathcorr", ["n", "avg_corr"], rows)
    report.passed = passed
    return report


# ------------------------------------------------------ Poisson diagnostics


def count_chisquare(counts: Sequence[int], mean: float, min_expected: float = 5.0) -> Dict[str, Any]:
    """Chi-square of per-sample counts against Poisson(mean), merging bins with small expectation."""
    counts = np.asarray(counts, dtype=int)
    total = len(counts)
    cut = 0
    while stats.poisson.sf(cut, mean) * total >= min_expected:
        cut += 1
    # bins 0..cut-1 and [cut, inf)
    expected = np.array([stats.poisson.pmf(j, mean) for j in range(cut)] + [stats.poisson.sf(cut - 1, mean)]) * total
    observed = np.array([np.sum(counts == j) for j in range(cut)] + [np.sum(counts >= cut)], dtype=float)
    while len(expected) > 1 and expected[0] < min_expected:
        expected[1] += expected[0]
        observed[1] += observed[0]
        expected, observed = expected[1:], observed[1:]
    if len(expected) < 2:
        return {"statistic": math.nan, "pvalue": math.nan, "bins": len(expected)}
    result = stats.chisquare(observed, expected * observed.sum() / expected.sum())
    return {"statistic": float(result.statistic), "pvalue": float(result.pvalue), "bins": len(expected)}


def poissonness_test(samples: Sequence[Sequence[ExtremalPoint]], spec: DensitySpec, m: int, q: float,
                     alpha: float = 1.0, cells: int = 4, min_points: int = 200,
                     p_threshold: float = P_THRESHOLD) -> ExperimentReport:
    """Count, spatial, mark and independence tests of pooled extremal points against the Poisson limit."""
    pooled = [p for sample in samples for p in sample if p.u <= 1.0]
    if len(pooled) < min_points:
        raise ResolutionError(f"❌ Only {len(pooled)} extremal points pooled; need at least {min_points}")
    window = spec.window
    gamma = spec.integral(m)

    counts = [sum(1 for p in sample if p.u <= 1.0) for sample in samples]
    count_test = count_chisquare(counts, alpha * gamma)

    centers = np.array([p.center for p in pooled])
    marks = np.array([p.u for p in pooled])
    masses = spec.cell_integrals(cells, m).ravel()
    observed, _, _ = np.histogram2d(
        centers[:, 0], centers[:, 1], bins=cells,
        range=[[window.lower[0], window.upper[0]], [window.lower[1], window.upper[1]]],
    )
    spatial = stats.chisquare(observed.ravel(), masses / masses.sum() * observed.sum())

    mark_test = stats.kstest(marks, lambda x: np.clip(x, 0.0, 1.0) ** q)
    independence = [float(stats.pearsonr(centers[:, j], marks)[1]) for j in range(centers.shape[1])]

    pvalues = {"count": count_test["pvalue"], "spatial": float(spatial.pvalue), "marks": float(mark_test.pvalue)}
    pvalues.update({f"independence_x{j}": p for j, p in enumerate(independence)})
    report = ExperimentReport("poissonness", {"density": spec.to_text(), "m": m, "q": q, "alpha": alpha,
                                              "cells": cells, "samples": len(samples)}, seed=-1)
    report.metrics = {"pooled_points": len(pooled), "mean_count": float(np.mean(counts)),
                      "expected_count": alpha * gamma, "pvalues": pvalues,
                      "count_test": count_test, "note": "several tests at one level; no multiplicity correction"}
    finite = [p for p in pvalues.values() if not math.isnan(p)]
    if len(finite) < len(pvalues):
        report.flag("some tests had too few bins to evaluate")
    report.add_series("cell_counts", ["cell", "observed", "expected"],
                      [[i, o, e] for i, (o, e) in enumerate(zip(observed.ravel(), masses / masses.sum() * observed.sum()))])
    report.passed = all(p > p_threshold for p in finite)
    return report


def _extremes_rep(cfg: RegimeConfig, spec: DensitySpec, u_na: float, seed: int, index: int) -> Tuple[List[ExtremalPoint], int]:
    cloud = sample_inhomogeneous(cfg.n, spec, seed, index)
    result = extract_extremes(cloud, cfg, u_na)
    return result.points, result.multi_exceedance_clusters


def poissonness_experiment(cfg: RegimeConfig, spec: DensitySpec, reps: int, seed: int, curve: Optional[ThresholdCurve] = None,
                           cells: int = 4, workers: int = 1) -> ExperimentReport:
    curve = curve or threshold_curve_for(cfg, MC_SAMPLES, seed, workers)
    u_na = threshold_u(curve, cfg).value
    q = curve.slope if curve.slope is not None else 3.0
    results = _parallel(_extremes_rep, [(cfg, spec, u_na, seed, _stream(4, i)) for i in range(reps)], workers)
    report = poissonness_test([r[0] for r in results], spec, cfg.m, q, cfg.alpha, cells)
    report.seed = seed
    report.config.update({"regime": cfg.to_dict(), "reps": reps, "u_na": u_na})
    multi = sum(r[1] for r in results)
    if multi:
        report.flag(f"{multi} clusters carried more than one extremal point")
    return report


def _intensity_rep(cfg: RegimeConfig, u_na: float, pad: float, seed: int, index: int) -> int:
    window = Window.cube(cfg.d).padded(pad)
    cloud = sample_homogeneous(cfg.n, window, seed, index)
    result = u_statistic_extremes(cloud, cfg, u_na)
    return sum(1 for p in result.points if p.u <= 1.0 and all(0.0 <= c <= 1.0 for c in p.center))


def verify_intensity_formula(cfg: RegimeConfig, reps: int, seed: int, curve: Optional[ThresholdCurve] = None,
                             workers: int = 1) -> ExperimentReport:
    """Monte Carlo mean of the within-cluster extremal count in [0,1]^d against alpha."""
    report = ExperimentReport("intensity", {"regime": cfg.to_dict(), "reps": reps}, seed)
    if cfg.alpha == 0:
        u_na = 0.0
    else:
        curve = curve or threshold_curve_for(cfg, MC_SAMPLES, seed, workers)
        u_na = threshold_u(curve, cfg).value
    pad = 2.0 * cfg.m * cfg.r_n
    counts = np.array(_parallel(_intensity_rep, [(cfg, u_na, pad, seed, _stream(5, i)) for i in range(reps)], workers),
                      dtype=float)
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    report.metrics = {"u_na": u_na, "mean": mean, "se": se, "alpha": cfg.alpha, "ci": [mean - 3 * se, mean + 3 * se]}
    report.passed = bool(abs(mean - cfg.alpha) <= 3 * se) if se > 0 else mean == cfg.alpha
    logger.info(f"📊 Extremal count mean {mean:.4f} ± {se:.4f} against alpha={cfg.alpha}")
    return report


def deathtime_iid_check(records: Sequence[Tuple[float, float]], threshold: float, bins: int = 3,
                        min_per_bin: int = 5) -> Dict[str, Any]:
    """Kruskal-Wallis test that deathtimes share one law across lifetime bins beyond the threshold."""
    pairs = np.array([(life, death) for life, death in records if life >= threshold], dtype=float).reshape(-1, 2)
    if len(pairs) < bins * min_per_bin:
        raise ResolutionError(f"❌ {len(pairs)} features beyond the threshold; need {bins * min_per_bin}")
    edges = np.quantile(pairs[:, 0], np.linspace(0, 1, bins + 1))
    labels = np.clip(np.searchsorted(edges, pairs[:, 0], side="right") - 1, 0, bins - 1)
    groups = [pairs[labels == b, 1] for b in range(bins)]
    groups = [g for g in groups if len(g) >= min_per_bin]
    if len(groups) < 2:
        raise ResolutionError("❌ Fewer than two populated lifetime bins")
    result = stats.kruskal(*groups)
    return {"statistic": float(result.statistic), "pvalue": float(result.pvalue),
            "bins": len(groups), "features": len(pairs), "passed": bool(result.pvalue > P_THRESHOLD)}


# ------------------------------------------------------------------ registry


def _regime_from(config: Dict[str, Any]) -> RegimeConfig:
    n = float(config.get("n", 2000))
    kwargs = {key: config[key] for key in ("alpha", "k", "m", "filtration", "lifetime") if key in config}
    if "rn" in config:
        return RegimeConfig(n=n, r_n=float(config["rn"]), **kwargs)
    return RegimeConfig.from_exponent(n, float(config.get("rn_exp", 0.7)), **kwargs)


def _run_anneal(config, seed, workers):
    return anneal_experiment(config, seed, workers)


def _run_weibull(config, seed, workers):
    band = config.get("q_band")
    return weibull_slope_experiment(int(config.get("m", 3)), float(config.get("beta", 0.74)),
                                    [float(n) for n in config.get("n", [1000])], int(config.get("reps", 500)),
                                    seed, workers, tuple(band) if band else None)


def _run_deathcorr(config, seed, workers):
    return deathcorr_experiment([float(n) for n in config.get("n", [200, 500, 1000])], int(config.get("reps", 100)),
                                int(config.get("outer", 30)), seed, float(config.get("r_exponent", 0.67)),
                                float(config.get("intensity_factor", 10.0)), workers)


def _run_poissonness(config, seed, workers):
    cfg = _regime_from(config)
    window = Window.parse(config.get("window", "cube"))
    spec = DensitySpec.parse(config.get("density", "const"), window)
    return poissonness_experiment(cfg, spec, int(config.get("reps", 1000)), seed,
                                  cells=int(config.get("cells", 4)), workers=workers)


def _run_intensity(config, seed, workers):
    return verify_intensity_formula(_regime_from(config), int(config.get("reps", 2000)), seed, workers=workers)


def _run_weibullcheck(config, seed, workers):
    q = config.get("q")
    return largest_lifetime_weibull_check(_regime_from(config), int(config.get("reps", 1000)), seed,
                                          q=float(q) if q is not None else None, workers=workers)


def _run_unbounded(config, seed, workers):
    return unbounded_largest_lifetime_check(float(config.get("n", 500)), int(config.get("reps", 1000)), seed,
                                            v_samples=int(config.get("v_samples", 200)), workers=workers)


EXPERIMENTS: Dict[str, Callable[[Dict[str, Any], int, int], ExperimentReport]] = {
    "anneal": _run_anneal,
    "weibull": _run_weibull,
    "deathcorr": _run_deathcorr,
    "poissonness": _run_poissonness,
    "intensity": _run_intensity,
    "weibullcheck": _run_weibullcheck,
    "unbounded": _run_unbounded,
}


def run_experiment(name: str, config: Dict[str, Any], seed: int, workers: int = 1) -> ExperimentReport:
    if name not in EXPERIMENTS:
        raise ExperimentError(f"❌ Unknown experiment: {name}")
    started = time.time()
    report = EXPERIMENTS[name](config, seed, workers)
    report.wall_clock = time.time() - started
    status = "✅ passed" if report.passed else "❌ failed" if report.passed is False else "done"
    logger.info(f"📊 Experiment {name}: {status}")
    return report
