#!/usr/bin/env python3
"""
Tests for maximal lifetimes, regime parameters, threshold curves and extremal point extraction.
"""

import math
import sys

import numpy as np
import pytest

from errors import (
    ConjectureFalsifiedError,
    ExperimentError,
    InvalidInputError,
    ResolutionError,
    UnsupportedCombinationError,
)
from filtration import CECH, VR
from geometry import PointCloud
from regime import (
    ADDITIVE,
    ALPHA_FALLBACK,
    CONJECTURED,
    MULTIPLICATIVE,
    PROVEN,
    RegimeConfig,
    ThresholdCurve,
    _deviations,
    _first_simplex_lifetime,
    analytic_g_curve,
    analytic_h_cech33,
    configuration_lifetimes,
    deathtime_exponent_interval,
    estimate_g,
    estimate_g_importance,
    estimate_h,
    estimate_v,
    extract_extremes,
    lmax,
    regular_polygon_lifetime,
    sample_cluster_configs,
    scan_cluster_features,
    threshold_bracket,
    threshold_ell,
    threshold_u,
    triangle_statistics,
    u_statistic_extremes,
)
from pointprocess import stream_rng
from testkit import run_tests

LMAX_CECH3 = 1.0 - math.sqrt(3) / 2


def _equilateral(center, radius, phase=0.3):
    angles = phase + 2 * math.pi * np.arange(3) / 3
    return np.asarray(center) + radius * np.column_stack([np.cos(angles), np.sin(angles)])


def test_lmax_table():
    assert lmax(3, 3, CECH, ADDITIVE).value == pytest.approx(LMAX_CECH3)
    assert lmax(3, 3, CECH, ADDITIVE).provenance == PROVEN
    assert lmax(3, 3, CECH, MULTIPLICATIVE).value == pytest.approx(2 / math.sqrt(3))
    assert lmax(3, 4, VR, "add").value == pytest.approx(1 - 1 / math.sqrt(2))
    hexagon = lmax(3, 6, CECH, ADDITIVE)
    assert hexagon.value == pytest.approx(0.5)
    assert hexagon.provenance == CONJECTURED
    assert regular_polygon_lifetime(3) == pytest.approx(LMAX_CECH3)
    for args in [(3, 3, VR, ADDITIVE), (3, 4, CECH, MULTIPLICATIVE), (4, 4, CECH, ADDITIVE)]:
        with pytest.raises(UnsupportedCombinationError):
            lmax(*args)
    with pytest.raises(UnsupportedCombinationError):
        lmax(3, 3, CECH, ADDITIVE, d=3)
    with pytest.raises(InvalidInputError):
        lmax(3, 3, CECH, "logarithmic")


def test_deathtime_exponent_intervals():
    assert deathtime_exponent_interval(2, 3, CECH) == pytest.approx((2 / 3, 3 / 4))
    assert deathtime_exponent_interval(3, 4, CECH) == pytest.approx((5 / 12, 4 / 9))
    assert deathtime_exponent_interval(3, 6, VR) == pytest.approx((7 / 18, 2 / 5))
    with pytest.raises(UnsupportedCombinationError):
        deathtime_exponent_interval(3, 5, CECH)


def test_regime_config():
    cfg = RegimeConfig.from_exponent(1000, 0.7, lifetime="mult")
    assert cfg.r_n == pytest.approx(1000 ** -0.7)
    assert cfg.lifetime == MULTIPLICATIVE
    assert cfg.rho_m == pytest.approx(1000 ** 0.2)
    assert cfg.rho_next == pytest.approx(1000 ** -0.2)
    warnings = cfg.sparsity_warnings()
    assert len(warnings) == 1 and "below 10" in warnings[0]
    assert cfg.intensity_target() == pytest.approx(6 / cfg.rho_m)

    outside = RegimeConfig.from_exponent(1e6, 0.6)
    assert any("outside" in w for w in outside.sparsity_warnings())

    for kwargs in [dict(n=0, r_n=0.1), dict(n=10, r_n=0.1, alpha=-1), dict(n=10, r_n=0.1, k=2),
                   dict(n=10, r_n=0.1, k=4, m=3), dict(n=10, r_n=0.1, filtration="alpha"),
                   dict(n=10, r_n=0.1, lifetime="log")]:
        with pytest.raises(InvalidInputError):
            RegimeConfig(**kwargs)


def test_analytic_h_basic_shape():
    assert analytic_h_cech33(0.0) == 0.0
    assert analytic_h_cech33(0.05, 0.0) == 0.0
    us = [0.01, 0.03, 0.06, 0.1]
    values = [analytic_h_cech33(u) for u in us]
    assert all(a < b for a, b in zip(values, values[1:]))
    vs = [0.2, 0.5, 0.8, 1.0]
    in_v = [analytic_h_cech33(0.1, v) for v in vs]
    assert all(a <= b for a, b in zip(in_v, in_v[1:]))
    with pytest.raises(InvalidInputError):
        analytic_h_cech33(0.2)
    with pytest.raises(InvalidInputError):
        analytic_h_cech33(0.05, 1.5)


def test_analytic_h_small_u_is_cubic():
    ratios = [analytic_h_cech33(u) / u ** 3 for u in (1e-3, 3e-4, 1e-4)]
    assert ratios[0] > 0
    assert max(ratios) / min(ratios) < 1.05


def test_analytic_h_total_mass():
    # all acute triangles with circumradius <= 1, anchored at the origin
    assert analytic_h_cech33(LMAX_CECH3) == pytest.approx(6 * math.pi ** 2, rel=1e-3)


def test_monte_carlo_g_matches_analytic():
    cfg = RegimeConfig(n=1000, r_n=0.01)
    grid = [0.05, 0.08, 0.12]
    curve = estimate_g(cfg, 200_000, seed=1, u_grid=grid)
    assert curve.grid[0] == 0.0 and curve.estimates[0] == 0.0
    for u, estimate, se in zip(grid, curve.estimates[1:], curve.std_errors[1:]):
        exact = analytic_h_cech33(u)
        assert se > 0
        assert abs(estimate - exact) <= 4 * se, f"u={u}: {estimate} vs {exact} (se {se})"
    assert curve.meta["lmax_provenance"] == PROVEN


def test_estimates_do_not_depend_on_workers():
    cfg = RegimeConfig(n=1000, r_n=0.01)
    grid = [0.05, 0.1]
    serial = estimate_g(cfg, 20_000, seed=5, u_grid=grid, workers=1)
    parallel = estimate_g(cfg, 20_000, seed=5, u_grid=grid, workers=2)
    assert np.array_equal(serial.estimates, parallel.estimates)


def test_h_at_full_deathtime_reproduces_g():
    cfg = RegimeConfig(n=1000, r_n=0.01)
    grid = [0.01, 0.04, 0.08, 0.12]
    g = estimate_g(cfg, 30_000, seed=9, u_grid=grid)
    h = estimate_h(cfg, 30_000, seed=9, u_grid=grid, v_grid=[0.25, 0.5, 1.0])
    assert np.array_equal(h.marginal(1.0), g.estimates[1:])
    assert np.all(h.table[:, 0] <= h.table[:, 2])
    with pytest.raises(InvalidInputError):
        estimate_h(cfg, 1000, seed=9, u_grid=grid, v_grid=[0.5, 1.5])


def test_curve_inversion():
    curve = analytic_g_curve()
    for u in (0.01, 0.05, 0.1):
        assert curve.invert(analytic_h_cech33(u)).value == pytest.approx(u, rel=0.03)

    cfg = RegimeConfig(n=1000, r_n=0.01, alpha=0.0)
    assert threshold_u(curve, cfg).value == 0.0
    with pytest.raises(ResolutionError):
        threshold_u(curve, RegimeConfig(n=1000, r_n=0.01, alpha=1e6))

    tiny = curve.invert(1e-12)
    assert tiny.extrapolated
    assert 0.0 < tiny.value < curve.grid[1]
    assert curve.flags
    assert curve.slope == pytest.approx(3.0, abs=0.2)


def test_curve_validation():
    with pytest.raises(InvalidInputError):
        ThresholdCurve([0.1, 0.05], [1.0, 2.0], [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        ThresholdCurve([0.1, 0.2], [1.0], [0.0, 0.0])


def test_isotonic_smoothing():
    curve = ThresholdCurve([0.0, 0.1, 0.2, 0.3], [0.0, 2.0, 1.0, 3.0], [0.0, 0.1, 0.1, 0.1]).smooth()
    assert curve.smoothed.tolist() == pytest.approx([0.0, 1.5, 1.5, 3.0])


def test_importance_sampling_in_the_deep_tail():
    cfg = RegimeConfig(n=1000, r_n=0.01)
    curve = estimate_g_importance(cfg, [0.003, 0.01], samples=50_000, seed=2)
    for u, estimate, se in zip(curve.grid, curve.estimates, curve.std_errors):
        exact = analytic_h_cech33(u)
        assert abs(estimate - exact) <= 5 * se, f"u={u}: {estimate} vs {exact}"
    with pytest.raises(UnsupportedCombinationError):
        estimate_g_importance(RegimeConfig(n=1000, r_n=0.01, m=4), [0.01], 100, 0)


def test_triangle_statistics():
    pts = _equilateral((0.0, 0.0), 1.0)
    stats = triangle_statistics(pts[[0]], pts[[1]], pts[[2]])
    assert stats["acute"][0]
    assert stats["birth"][0] == pytest.approx(math.sqrt(3) / 2)
    assert stats["death"][0] == pytest.approx(1.0)
    assert stats["center"][0] == pytest.approx((0.0, 0.0), abs=1e-12)
    right = triangle_statistics(np.array([[0.0, 0.0]]), np.array([[2.0, 0.0]]), np.array([[0.0, 2.0]]))
    assert not right["acute"][0]


def test_fast_triangle_path_matches_brute_force():
    cfg = RegimeConfig(n=1000, r_n=0.01)
    configs = sample_cluster_configs(cfg, 3000, stream_rng(4, 0))
    lifetimes, deaths = configuration_lifetimes(configs, cfg)
    hits = np.flatnonzero(~np.isnan(lifetimes))
    assert len(hits) > 0
    checked = list(hits[:40]) + list(np.flatnonzero(np.isnan(lifetimes))[:40])
    for i in checked:
        lifetime, death = _first_simplex_lifetime(configs[i], cfg)
        if math.isnan(lifetimes[i]):
            assert math.isnan(lifetime)
        else:
            assert lifetime == pytest.approx(lifetimes[i], abs=1e-12)
            assert death == pytest.approx(deaths[i], abs=1e-12)
        assert not lifetime > LMAX_CECH3 + 1e-12


def test_larger_clusters_run():
    square = estimate_g(RegimeConfig(n=1000, r_n=0.01, m=4), 50_000, seed=3)
    assert square.meta["lmax_provenance"] == CONJECTURED
    assert np.all(np.diff(square.smoothed) >= 0)
    assert square.estimates[-1] > 0

    rips = estimate_g(RegimeConfig(n=1000, r_n=0.01, m=4, filtration=VR), 5_000, seed=3)
    assert rips.meta["lmax_provenance"] == PROVEN
    assert np.all(np.diff(rips.smoothed) >= 0)


def test_unbounded_curve_and_ell_threshold():
    grid = np.geomspace(1.0, 4.0, 10)
    curve = estimate_v(50, grid, samples=4, seed=0)
    assert not curve.increasing
    assert np.all(np.diff(curve.smoothed) <= 0)
    assert curve.smoothed[0] > 0
    threshold = threshold_ell(curve, 50, 0.5 * curve.smoothed[0] * 50 ** 3)
    assert 1.0 <= threshold.value <= 4.0
    with pytest.raises(InvalidInputError):
        threshold_ell(analytic_g_curve(), 50, 1.0)

    lower, upper = threshold_bracket(1e6)
    assert 0 < lower < upper


def test_extract_equilateral_triangle():
    cfg = RegimeConfig(n=1000, r_n=0.01)
    triangle = _equilateral((0.5, 0.5), 0.9 * cfg.r_n)
    cloud = PointCloud.euclidean(np.vstack([triangle, [[0.1, 0.1]]]))
    result = extract_extremes(cloud, cfg, u_na=0.05)
    assert len(result.points) == 1
    point = result.points[0]
    assert point.u == pytest.approx(0.1 * LMAX_CECH3 / 0.05)
    assert point.v == pytest.approx(0.02)
    assert point.center == pytest.approx((0.5, 0.5), abs=1e-12)
    assert point.deathtime == pytest.approx(0.9 * cfg.r_n)
    assert result.xi2() == [point.center]
    assert result.clusters_scanned == 1

    # a full-size optimal triangle sits exactly at lmax
    exact = extract_extremes(PointCloud.euclidean(_equilateral((0.5, 0.5), cfg.r_n)), cfg, u_na=0.05)
    assert exact.points[0].u == pytest.approx(0.0, abs=1e-9)
    assert exact.points[0].v == pytest.approx(0.0, abs=1e-9)

    # the mark cap drops triangles further than mark_cap * u_na below lmax
    assert extract_extremes(cloud, cfg, u_na=0.001).points == []
    assert extract_extremes(cloud, cfg, u_na=0.0).points == []


def test_extract_and_u_statistic_agree_on_isolated_triangles():
    cfg = RegimeConfig(n=1000, r_n=0.01)
    parts = [
        _equilateral((0.2, 0.2), 0.95 * cfg.r_n),
        _equilateral((0.7, 0.3), 0.8 * cfg.r_n, phase=1.0),
        np.array([[0.5, 0.8], [0.515, 0.8], [0.5075, 0.8005]]),
        np.array([[0.9, 0.9]]),
    ]
    cloud = PointCloud.euclidean(np.vstack(parts))
    direct = extract_extremes(cloud, cfg, u_na=0.1)
    counted = u_statistic_extremes(cloud, cfg, u_na=0.1)
    assert len(direct.points) == 2
    assert len(counted.points) == 2
    assert np.allclose(sorted(p.center for p in direct.points), sorted(p.center for p in counted.points))
    assert np.allclose(sorted(p.u for p in direct.points), sorted(p.u for p in counted.points))


def test_scan_across_the_torus_seam():
    r_n = 0.01
    pts = np.mod(_equilateral((0.001, 0.5), 0.9 * r_n), 1.0)
    cloud = PointCloud.torus(np.vstack([pts, [[0.5, 0.5]]]))
    scan = scan_cluster_features(cloud, r_n)
    assert len(scan.features) == 1
    _, record = scan.features[0]
    assert record.center == pytest.approx((0.001, 0.5), abs=1e-9)
    assert record.death == pytest.approx(0.9 * r_n)
    assert record.death_simplex == (0, 1, 2)


def test_oversize_clusters():
    r_n = 0.01
    k = np.arange(17)
    angles = 2 * math.pi * k / 17
    radii = 0.005 * (1 + 0.01 * k)
    ring = np.column_stack([0.5 + radii * np.cos(angles), 0.5 + radii * np.sin(angles)])
    cloud = PointCloud.euclidean(ring)
    skipped = scan_cluster_features(cloud, r_n)
    assert skipped.skipped_sizes == [17]
    assert skipped.features == []

    fallback = scan_cluster_features(cloud, r_n, large_policy=ALPHA_FALLBACK)
    assert fallback.skipped_sizes == []
    assert fallback.features
    for _, record in fallback.features:
        assert record.death <= r_n
    assert scan_cluster_features(cloud, r_n, size_cap=10).excluded_sizes == [17]


@pytest.mark.slow
def test_monte_carlo_g_matches_analytic_at_full_scale():
    grid = [0.01, 0.02, 0.05]
    curve = estimate_g(RegimeConfig(n=1000, r_n=0.01), 10_000_000, seed=0, u_grid=grid)
    for u, estimate, se in zip(grid, curve.estimates[1:], curve.std_errors[1:]):
        assert abs(estimate - analytic_h_cech33(u)) <= 3 * se, f"u={u}: {estimate} (se {se})"
    assert 2.7 <= curve.slope <= 3.3


def test_sampled_lifetimes_above_lmax():
    proven = RegimeConfig(n=1000, r_n=0.01)
    with pytest.raises(ExperimentError) as raised:
        _deviations(proven, np.array([0.1, 0.2]), lmax(3, 3, CECH, ADDITIVE))
    assert not isinstance(raised.value, ConjectureFalsifiedError)

    conjectured = RegimeConfig(n=1000, r_n=0.01, m=5)
    with pytest.raises(ConjectureFalsifiedError) as raised:
        _deviations(conjectured, np.array([0.9]), lmax(3, 5, CECH, ADDITIVE))
    assert raised.value.details["lmax"] == pytest.approx(1 - math.sin(math.pi / 5))

    deviations = _deviations(proven, np.array([0.1, math.nan]), lmax(3, 3, CECH, ADDITIVE))
    assert deviations[0] == pytest.approx(LMAX_CECH3 - 0.1)
    assert deviations[1] == math.inf


def main():
    return run_tests("Regime Tests", [
        ("Maximal lifetimes", test_lmax_table),
        ("Exponent intervals", test_deathtime_exponent_intervals),
        ("Regime configuration", test_regime_config),
        ("Analytic h shape", test_analytic_h_basic_shape),
        ("Analytic h cubic onset", test_analytic_h_small_u_is_cubic),
        ("Analytic h total mass", test_analytic_h_total_mass),
        ("Monte Carlo g vs analytic", test_monte_carlo_g_matches_analytic),
        ("Worker independence", test_estimates_do_not_depend_on_workers),
        ("h(u, 1) equals g(u)", test_h_at_full_deathtime_reproduces_g),
        ("Curve inversion", test_curve_inversion),
        ("Curve validation", test_curve_validation),
        ("Isotonic smoothing", test_isotonic_smoothing),
        ("Importance sampling", test_importance_sampling_in_the_deep_tail),
        ("Triangle statistics", test_triangle_statistics),
        ("Fast path vs brute force", test_fast_triangle_path_matches_brute_force),
        ("Larger clusters", test_larger_clusters_run),
        ("Unbounded curve", test_unbounded_curve_and_ell_threshold),
        ("Equilateral extraction", test_extract_equilateral_triangle),
        ("Extraction vs U-statistic", test_extract_and_u_statistic_agree_on_isolated_triangles),
        ("Torus seam", test_scan_across_the_torus_seam),
        ("Oversize clusters", test_oversize_clusters),
        ("Lifetimes above lmax", test_sampled_lifetimes_above_lmax),
    ])


if __name__ == "__main__":
    sys.exit(main())
