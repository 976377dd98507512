import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialcrt.design import (
    assign_treatments,
    compute_exposures,
    design_from_clusters,
    enumerate_designs,
    exposure_radius,
    exposures_from_touch,
    touch_matrix,
)
from spatialcrt.geometry import PointSet, Region, bounding_region, generate_uniform_locations, population_region
from spatialcrt.partition import Partition, grid_partition, spectral_partition


def corner_population():
    """Cell centers of a 4x4 grid on Q(0, 4) plus one unit near each of the
    four cells meeting at the origin, and a unit at the origin itself."""
    centers = [(x, y) for y in (-3.0, -1.0, 1.0, 3.0) for x in (-3.0, -1.0, 1.0, 3.0)]
    near = [(-0.2, -0.2), (0.2, -0.2), (-0.2, 0.2), (0.2, 0.2)]
    ps = PointSet(np.array(centers + near + [(0.0, 0.0)]))
    return ps, grid_partition(ps, Region((0.0, 0.0), 4.0), 2)


class TestExposureRadius:
    @pytest.mark.parametrize(
        "n, depth, expected",
        [(1000, 2, math.sqrt(1000) / 8), (1000, 3, math.sqrt(1000) / 16), (256, 1, 4.0)],
    )
    def test_half_cluster_radius(self, n, depth, expected):
        ps = generate_uniform_locations(n, seed=0)
        part = grid_partition(ps, population_region(n), depth)
        assert exposure_radius(part) == pytest.approx(expected)

    def test_recommended_size_example(self):
        # n = 1000 on Q(0, sqrt(1000)) with m = 100 clusters: r_n = sqrt(10)
        part = Partition(np.zeros(1000, dtype=int), 100, math.sqrt(1000) / math.sqrt(100), "spectral")
        assert exposure_radius(part) == pytest.approx(1.58113883, abs=1e-8)


class TestAssignTreatments:
    def test_bernoulli_frequency(self):
        ps = generate_uniform_locations(4, seed=0)
        part = grid_partition(ps, bounding_region(ps), 0)
        draws = [assign_treatments(part, 0.5, seed).cluster_treatments[0] for seed in range(10000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.02)

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.8])
    def test_frequency_across_clusters(self, p):
        ps = generate_uniform_locations(4096, seed=1)
        part = grid_partition(ps, population_region(4096), 5)
        d = assign_treatments(part, p, seed=3)
        assert d.cluster_treatments.mean() == pytest.approx(p, abs=4 * math.sqrt(p * (1 - p) / part.m))

    def test_units_follow_cluster(self, small_points):
        part = spectral_partition(small_points, 9, seed=0)
        d = assign_treatments(part, 0.5, seed=11)
        assert np.array_equal(d.unit_treatments, d.cluster_treatments[part.membership])

    def test_deterministic(self, small_points):
        part = spectral_partition(small_points, 9, seed=0)
        a = assign_treatments(part, 0.5, seed=5)
        b = assign_treatments(part, 0.5, seed=5)
        assert np.array_equal(a.cluster_treatments, b.cluster_treatments)
        assert a.seed == 5

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_degenerate_p(self, small_points, p):
        part = spectral_partition(small_points, 4, seed=0)
        with pytest.raises(ValueError):
            assign_treatments(part, p, seed=0)

    def test_design_from_clusters_checks_length(self, small_points):
        part = spectral_partition(small_points, 4, seed=0)
        with pytest.raises(ValueError):
            design_from_clusters(part, 0.5, [1, 0, 1])


class TestExposures:
    def test_corner_unit_touches_four_clusters(self):
        ps, part = corner_population()
        origin = ps.n - 1
        touch = touch_matrix(ps, part, exposure_radius(part))
        assert sorted(touch.indices[touch.indptr[origin]:touch.indptr[origin + 1]]) == [5, 6, 9, 10]
        design = design_from_clusters(part, 0.3, np.ones(part.m))
        rec = compute_exposures(ps, part, design, exposure_radius(part))[origin]
        assert rec.c == 4
        assert rec.p1 == pytest.approx(0.3**4)
        assert rec.p0 == pytest.approx(0.7**4)

    def test_corner_unit_probability_by_enumeration(self):
        ps, part = corner_population()
        origin = ps.n - 1
        touch = touch_matrix(ps, part, exposure_radius(part))
        p = 0.3
        e1 = e0 = 0.0
        for clusters, prob in enumerate_designs(SimpleNamespace(m=4), p):
            full = np.zeros(part.m, dtype=np.int8)
            full[[5, 6, 9, 10]] = clusters
            exp = exposures_from_touch(touch, p, full)
            e1 += prob * exp.t1[origin]
            e0 += prob * exp.t0[origin]
        assert e1 == pytest.approx(p**4, abs=1e-15)
        assert e0 == pytest.approx((1 - p) ** 4, abs=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("p", [0.5, 0.25])
    def test_expected_indicators_equal_probabilities(self, seed, p):
        ps = generate_uniform_locations(64, seed=seed)
        part = grid_partition(ps, population_region(64), 1)
        touch = touch_matrix(ps, part, exposure_radius(part))
        e1 = np.zeros(ps.n)
        e0 = np.zeros(ps.n)
        for clusters, prob in enumerate_designs(part, p):
            exp = exposures_from_touch(touch, p, clusters)
            e1 += prob * exp.t1
            e0 += prob * exp.t0
        assert np.allclose(e1, exp.p1, atol=1e-14)
        assert np.allclose(e0, exp.p0, atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_grid_overlap_between_one_and_four(self, seed):
        n = 500
        ps = generate_uniform_locations(n, seed=seed)
        part = grid_partition(ps, population_region(n), 3)
        exp = compute_exposures(ps, part, assign_treatments(part, 0.5, seed), exposure_radius(part))
        assert exp.c.min() >= 1
        assert exp.c.max() <= 4

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.05, 0.95))
    def test_indicator_logic(self, seed, p):
        ps = generate_uniform_locations(100, seed=seed)
        part = grid_partition(ps, population_region(100), 2)
        design = assign_treatments(part, p, seed)
        kappa = exposure_radius(part)
        exp = compute_exposures(ps, part, design, kappa)
        assert not np.any(exp.t1 & exp.t0)
        # an exposed-to-treatment unit is itself treated, and vice versa
        assert np.all(design.unit_treatments[exp.t1 == 1] == 1)
        assert np.all(design.unit_treatments[exp.t0 == 1] == 0)
        for i in range(0, ps.n, 7):
            d = design.unit_treatments[ps.neighborhood(i, kappa)]
            assert exp.t1[i] == int(d.all())
            assert exp.t0[i] == int(not d.any())

    def test_shrinking_radius_never_adds_clusters(self, small_points):
        part = spectral_partition(small_points, 12, seed=0)
        counts = [np.diff(touch_matrix(small_points, part, k).indptr) for k in (3.0, 1.5, 0.7, 0.2)]
        for wide, narrow in zip(counts, counts[1:]):
            assert np.all(narrow <= wide)

    def test_record_access(self, small_points):
        part = spectral_partition(small_points, 6, seed=0)
        exp = compute_exposures(small_points, part, assign_treatments(part, 0.5, 1), 0.8)
        recs = list(exp)
        assert len(recs) == len(exp) == small_points.n
        assert recs[3] == exp[3]
        assert recs[3].p1 == 0.5 ** recs[3].c

    def test_rejects_nonpositive_kappa(self, small_points):
        part = spectral_partition(small_points, 6, seed=0)
        with pytest.raises(ValueError):
            touch_matrix(small_points, part, 0.0)


class TestEnumerateDesigns:
    @pytest.mark.parametrize("m, p", [(1, 0.5), (3, 0.2), (6, 0.7)])
    def test_probabilities_sum_to_one(self, m, p):
        part = SimpleNamespace(m=m)
        designs = list(enumerate_designs(part, p))
        assert len(designs) == 2**m
        assert sum(prob for _, prob in designs) == pytest.approx(1.0, abs=1e-14)
        assert len({tuple(v) for v, _ in designs}) == 2**m
        mean = sum(prob * v for v, prob in designs)
        assert np.allclose(mean, p)

    def test_refuses_large_m(self):
        with pytest.raises(ValueError):
            next(enumerate_designs(SimpleNamespace(m=21), 0.5))
