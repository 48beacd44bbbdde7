import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from facetlab.errors import PointNotOnPath, RayMissesMajorant
from facetlab.majorant import (bridge_roughness, extend_bridge, facet_statistics, least_concave_majorant,
                               local_roughness, max_fl, max_lr, mean_facet, mean_fl, mean_lr, mlrf,
                               roughness_profile)
from facetlab.oracle import path_ext_points
from facetlab.path_core import Bridge, LatticePath, restrict
from facetlab.samplers import enumerate_paths

SQ = LatticePath.square(3)
STAIR = LatticePath.parse("2:RDRD")
R2 = 1 / math.sqrt(2)


def random_path(rng, n):
    bits = rng.integers(0, 2, n).astype(np.uint8)
    return LatticePath(int(n - bits.sum()), bits)


class TestHull:
    def test_square(self):
        maj = least_concave_majorant(SQ)
        assert maj.points() == [(0, 3), (3, 3), (3, 0)]
        assert len(maj.facets) == 2

    def test_staircase(self):
        assert least_concave_majorant(STAIR).points() == [(0, 2), (1, 2), (2, 1), (2, 0)]

    def test_axis_paths(self):
        assert least_concave_majorant(LatticePath.parse("0:RR")).points() == [(2, 0)]
        assert least_concave_majorant(LatticePath.parse("2:DD")).points() == [(0, 2)]
        assert least_concave_majorant(LatticePath.parse("0:")).points() == []

    def test_exhaustive_against_gift_wrapping(self):
        for p in enumerate_paths(12):
            assert least_concave_majorant(p).points() == path_ext_points(p), p

    @given(st.lists(st.integers(0, 1), max_size=200))
    def test_random_against_gift_wrapping(self, bits):
        bits = np.array(bits, np.uint8)
        p = LatticePath(int(bits.size - bits.sum()), bits)
        assert least_concave_majorant(p).points() == path_ext_points(p)

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
    def test_slopes_decrease_and_vertices_below(self, bits):
        bits = np.array(bits, np.uint8)
        p = LatticePath(int(bits.size - bits.sum()), bits)
        ext = least_concave_majorant(p).ext_points
        d = np.diff(ext, axis=0)
        # direction angles strictly decrease clockwise
        ang = np.arctan2(d[:, 1], d[:, 0])
        assert np.all(np.diff(ang) < 0)
        xs, ys = p.vertices
        for a, b in zip(ext[:-1], ext[1:]):
            cross = (b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0])
            inside = (xs >= min(a[0], b[0])) & (xs <= max(a[0], b[0])) & (ys >= min(a[1], b[1])) & (ys <= max(a[1], b[1]))
            assert np.all(cross[inside] <= 0)


class TestRoughness:
    def test_ext_points_have_zero(self):
        for pt in least_concave_majorant(STAIR).points():
            assert local_roughness(STAIR, pt) == 0.0

    def test_inner_corner(self):
        assert local_roughness(STAIR, (1, 1)) == pytest.approx(R2)

    def test_square_all_zero(self):
        d, _ = roughness_profile(SQ)
        assert np.all(d == 0)

    def test_not_a_vertex(self):
        with pytest.raises(PointNotOnPath):
            local_roughness(STAIR, (0, 0))


class TestMeanStatistics:
    def test_square_tie_goes_left(self):
        f = mean_facet(SQ, 1.0)
        assert (f.a, f.b) == ((0, 3), (3, 3))
        assert mean_fl(SQ) == 3

    def test_staircase(self):
        f = mean_facet(STAIR, 1.0)
        assert (f.a, f.b) == ((1, 2), (2, 1))
        assert f.length == pytest.approx(math.sqrt(2))

    def test_steeper_ray(self):
        f = mean_facet(SQ, 2.0)
        assert (f.a, f.b) == ((0, 3), (3, 3))

    def test_mean_lr(self):
        assert mean_lr(SQ) == 0
        assert mean_lr(STAIR) == pytest.approx(R2)
        assert mean_lr(LatticePath.parse("1:RD")) == 0

    def test_degenerate(self):
        with pytest.raises(RayMissesMajorant):
            mean_fl(LatticePath.parse("0:RR"))
        stats = facet_statistics(LatticePath.parse("0:RR"))
        assert all(v == 0.0 for v in stats.values())
        with pytest.raises(ValueError):
            mean_facet(SQ, 0.0)


class TestMaxStatistics:
    def test_square(self):
        assert max_fl(SQ) == 3 and max_lr(SQ) == 0 and mlrf(SQ) == 3

    def test_staircase(self):
        assert max_lr(STAIR) == pytest.approx(R2)
        assert mlrf(STAIR) == pytest.approx(math.sqrt(2))

    def test_mlrf_below_max_fl(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            p = random_path(rng, int(rng.integers(1, 80)))
            assert mlrf(p) <= max_fl(p) + 1e-12

    def test_statistics_agree_with_single_functions(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            p = random_path(rng, int(rng.integers(2, 120)))
            s = facet_statistics(p)
            try:
                assert s["mean_fl"] == pytest.approx(mean_fl(p))
            except RayMissesMajorant:
                pass
            assert s["max_fl"] == pytest.approx(max_fl(p))
            assert s["max_lr"] == pytest.approx(max_lr(p))
            assert s["mlrf"] == pytest.approx(mlrf(p))
            assert s["mean_lr"] == pytest.approx(mean_lr(p))


class TestRestriction:
    def test_extension(self):
        br = Bridge((1, 2), (2, 1), "DR")
        assert extend_bridge(br) == LatticePath.parse("2:RDRD")

    def test_roughness_never_grows_under_restriction(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            p = random_path(rng, int(rng.integers(2, 80)))
            i, j = sorted(rng.integers(0, p.length + 1, 2))
            br = restrict(p, p.vertex(i), p.vertex(j))
            local, _ = bridge_roughness(br)
            full, _ = roughness_profile(p)
            assert np.all(local <= full[i:j + 1] + 1e-9)

    def test_mean_facet_can_grow_under_restriction(self):
        # the restricted hull sits inside the full hull, yet its diagonal facet is longer
        br = restrict(STAIR, (0, 2), (1, 1))
        assert mean_fl(extend_bridge(br)) == 2.0 > mean_fl(STAIR)

    def test_mean_facet_kept_when_endpoints_are_extreme(self):
        rng = np.random.default_rng(12)
        checked = 0
        for _ in range(2000):
            p = random_path(rng, int(rng.integers(4, 80)))
            ext = least_concave_majorant(p).points()
            # strict sides: a diagonal endpoint would let the tie rule pick an extension segment
            upper = [q for q in ext if q[1] > q[0]]
            lower = [q for q in ext if q[1] < q[0]]
            if not upper or not lower:
                continue
            u = upper[int(rng.integers(len(upper)))]
            v = lower[int(rng.integers(len(lower)))]
            if (u, v) == (ext[0], ext[-1]):
                continue
            try:
                full = mean_fl(p)
            except RayMissesMajorant:
                continue
            assert mean_fl(extend_bridge(restrict(p, u, v))) == pytest.approx(full)
            checked += 1
        assert checked > 100
