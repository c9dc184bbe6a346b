#!/usr/bin/env python3
"""
Tests for the Čech, Vietoris-Rips, Delaunay and Alpha builders.
"""

import math
import sys

import numpy as np
import pytest

from errors import DegenerateInputError, InvalidInputError, SizeLimitError
from filtration import (
    ALPHA,
    CECH,
    VR,
    FilteredComplex,
    alpha_filtration,
    build_filtration,
    cech_bruteforce,
    delaunay,
    vietoris_rips,
)
from geometry import PointCloud
from persistence import reduce
from testkit import fish_points, run_tests

H = math.sqrt(3) / 2


def _random_cloud(n, seed):
    return PointCloud.euclidean(np.random.default_rng(seed).random((n, 2)))


def _nontrivial(fc, p):
    pairing = reduce(fc)
    return sorted((float(fc.values[b]), float(fc.values[d])) for b, d in pairing.nontrivial_pairs(p, fc))


def test_cech_equilateral_values():
    cloud = PointCloud.euclidean([(0, 0), (math.sqrt(3), 0), (H, 1.5)])
    fc = cech_bruteforce(cloud, 2)
    assert len(fc) == 7
    assert fc.value_of((0, 1)) == pytest.approx(H)
    assert fc.value_of((1, 2)) == pytest.approx(H)
    assert fc.value_of((0, 1, 2)) == pytest.approx(1.0)
    assert fc.simplices[-1] == (0, 1, 2)


def test_fish_values():
    cloud = PointCloud.euclidean(fish_points())
    cech = cech_bruteforce(cloud, 2, 1.0)
    assert cech.value_of((0, 1)) == pytest.approx(H)
    assert cech.value_of((0, 1, 2)) == pytest.approx(1.0)
    assert cech.value_of((2, 3)) == pytest.approx(1 / math.sqrt(2))
    assert cech.value_of((2, 5)) == pytest.approx(1.0)
    assert cech.value_of((2, 4, 5)) == pytest.approx(1.0)
    assert (0, 3) not in cech.index

    rips = vietoris_rips(cloud, 2, 1.0)
    # Rips fills the equilateral triangle together with its last edge
    assert rips.value_of((0, 1, 2)) == pytest.approx(H)
    assert rips.value_of((2, 3, 5)) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", [CECH, VR, ALPHA])
def test_sorted_and_monotone(kind):
    for seed in range(5):
        cloud = _random_cloud(10 if kind != ALPHA else 60, seed)
        fc = build_filtration(cloud, kind, 2)
        assert fc.is_sorted()
        assert fc.is_monotone()
        assert fc.values[: len(cloud)].tolist() == [0.0] * len(cloud)


def test_rips_higher_dimensions():
    cloud = _random_cloud(8, 3)
    fc = vietoris_rips(cloud, 3)
    assert fc.max_dimension == 3
    assert fc.is_monotone()
    halves = 0.5 * np.sqrt(((cloud.points[:, None] - cloud.points[None]) ** 2).sum(-1))
    for simplex, value in fc.entries():
        if len(simplex) > 1:
            sub = halves[np.ix_(simplex, simplex)]
            assert value == pytest.approx(sub.max())


def test_truncation_matches_restriction():
    cloud = _random_cloud(40, 9)
    full = alpha_filtration(cloud)
    cut = alpha_filtration(cloud, 0.08)
    restricted = full.restricted(0.08)
    assert cut.simplices == restricted.simplices
    assert np.allclose(cut.values, restricted.values)

    small = _random_cloud(9, 4)
    assert cech_bruteforce(small, 2, 0.2).simplices == cech_bruteforce(small, 2).restricted(0.2).simplices


def test_euler_characteristic_of_full_complexes():
    tetra = cech_bruteforce(PointCloud.euclidean([(0, 0), (1, 0), (0, 1), (0.6, 0.7)]), 3)
    assert len(tetra) == 15
    assert tetra.euler_characteristic(math.inf) == 1
    # a Delaunay triangulation of a point set is a disc
    assert alpha_filtration(_random_cloud(50, 2)).euler_characteristic(math.inf) == 1


def test_alpha_and_cech_agree_on_small_clouds():
    _check_alpha_against_cech(40, [9])


def test_delaunay_breaks_cocircular_ties_by_index():
    square = PointCloud.euclidean([(0, 0), (1, 0), (1, 1), (0, 1)])
    assert delaunay(square).tolist() == [[0, 1, 3], [1, 2, 3]]
    relabelled = PointCloud.euclidean([(1, 0), (0, 0), (0, 1), (1, 1)])
    # vertex 0 is now (1, 0), so the kept diagonal joins (0, 0) and (1, 1)
    assert delaunay(relabelled).tolist() == [[0, 1, 3], [1, 2, 3]]


def test_delaunay_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        delaunay(PointCloud.euclidean([(0, 0), (1, 1)]))
    with pytest.raises(DegenerateInputError):
        delaunay(PointCloud.euclidean([(0, 0), (1, 1), (2, 2), (3, 3)]))
    with pytest.raises(DegenerateInputError):
        delaunay(PointCloud.euclidean([(0, 0), (1, 0), (0, 1), (1, 0)]))


def test_builder_guards():
    with pytest.raises(SizeLimitError):
        cech_bruteforce(_random_cloud(17, 0), 2)
    with pytest.raises(SizeLimitError):
        vietoris_rips(_random_cloud(33, 0), 2)
    with pytest.raises(InvalidInputError):
        cech_bruteforce(_random_cloud(5, 0), 4)
    with pytest.raises(InvalidInputError):
        cech_bruteforce(_random_cloud(5, 0), 2, 0.0)
    with pytest.raises(InvalidInputError):
        alpha_filtration(PointCloud.euclidean(np.random.default_rng(0).random((6, 3))))
    with pytest.raises(InvalidInputError):
        alpha_filtration(PointCloud.torus(np.random.default_rng(0).random((6, 2))))
    with pytest.raises(InvalidInputError):
        build_filtration(_random_cloud(5, 0), "witness")


def test_complex_must_be_face_closed():
    cloud = PointCloud.euclidean([(0, 0), (1, 0)])
    fc = FilteredComplex(cloud, ((0,), (0, 1)), np.array([0.0, 0.5]))
    assert not fc.is_monotone()
    with pytest.raises(InvalidInputError):
        fc.boundary(1)


def test_text_codec_preserves_values():
    cloud = _random_cloud(12, 21)
    fc = alpha_filtration(cloud)
    back = FilteredComplex.from_text(fc.to_text(), cloud, ALPHA)
    assert back.simplices == fc.simplices
    assert np.array_equal(back.values, fc.values)


def _check_alpha_against_cech(trials, sizes):
    for seed in range(trials):
        cloud = _random_cloud(sizes[seed % len(sizes)], 100 + seed)
        alpha = alpha_filtration(cloud)
        cech = cech_bruteforce(cloud, 2)
        for p in (0, 1):
            a, c = _nontrivial(alpha, p), _nontrivial(cech, p)
            assert len(a) == len(c), f"seed {seed}, H{p}"
            assert np.allclose(a, c, rtol=1e-9, atol=1e-12), f"seed {seed}, H{p}"


def _check_interleaving(trials, points=10):
    bound = 2 / math.sqrt(3)
    for seed in range(trials):
        cloud = _random_cloud(points, 300 + seed)
        cech = cech_bruteforce(cloud, 3)
        rips = vietoris_rips(cloud, 3)
        for simplex, value in cech.entries():
            rips_value = rips.value_of(simplex)
            assert rips_value <= value + 1e-12, f"seed {seed}, {simplex}"
            assert value <= bound * rips_value + 1e-12, f"seed {seed}, {simplex}"


def test_cech_is_sandwiched_by_rips():
    _check_interleaving(20)


@pytest.mark.slow
def test_cech_is_sandwiched_by_rips_over_many_clouds():
    _check_interleaving(1000)


@pytest.mark.slow
def test_alpha_and_cech_agree_over_many_clouds():
    _check_alpha_against_cech(500, list(range(3, 11)))


@pytest.mark.slow
def test_monotone_over_many_clouds():
    for seed in range(1000):
        cloud = _random_cloud(10, 5000 + seed)
        for kind in (CECH, VR, ALPHA):
            fc = build_filtration(cloud, kind, 2)
            assert fc.is_sorted() and fc.is_monotone(), f"{kind} seed {seed}"


def main():
    return run_tests("Filtration Tests", [
        ("Čech equilateral triangle", test_cech_equilateral_values),
        ("Fish filtration values", test_fish_values),
        ("Čech order", lambda: test_sorted_and_monotone(CECH)),
        ("Rips order", lambda: test_sorted_and_monotone(VR)),
        ("Alpha order", lambda: test_sorted_and_monotone(ALPHA)),
        ("Rips in higher dimensions", test_rips_higher_dimensions),
        ("Truncation", test_truncation_matches_restriction),
        ("Euler characteristic", test_euler_characteristic_of_full_complexes),
        ("Alpha equals Čech persistence", test_alpha_and_cech_agree_on_small_clouds),
        ("Čech between Rips bounds", test_cech_is_sandwiched_by_rips),
        ("Cocircular tie breaking", test_delaunay_breaks_cocircular_ties_by_index),
        ("Delaunay degeneracies", test_delaunay_degenerate_inputs),
        ("Builder guards", test_builder_guards),
        ("Face closure", test_complex_must_be_face_closed),
        ("Text codec", test_text_codec_preserves_values),
    ])


if __name__ == "__main__":
    sys.exit(main())
