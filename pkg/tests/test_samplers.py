import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from facetlab.errors import AcceptanceBudgetExceeded, BudgetExceeded, EmptyBridgeSpace
from facetlab.oracle import _length_area_dp
from facetlab.path_core import Bridge, ModelParams, dominates
from facetlab.rng import RngStream
from facetlab.samplers import (below_chord, enumerate_paths, free_length_area, geometric_length,
                               rejection_length_area, sample_bridge_below, sample_bridge_uniform,
                               sample_bridges_below, sample_conditioned_rejection, sample_free)


def test_geometric_inversion_is_exact():
    # P[length >= n] = (2 lam)^n, so u = 1 - (2 lam)^n sits exactly on the boundary
    lam = 0.25
    assert geometric_length(0.0, lam) == 0
    assert geometric_length(0.4999, lam) == 0
    assert geometric_length(0.5001, lam) == 1
    assert geometric_length(0.75 + 1e-9, lam) == 2


def test_free_length_law_at_quarter():
    lengths, _ = free_length_area(ModelParams(0.25, 1), RngStream(1), 200_000)
    n = len(lengths)
    for value, p in [(0, 0.5), (1, 0.25)]:
        assert abs(np.mean(lengths == value) - p) < 4 * math.sqrt(p * (1 - p) / n)
    assert abs(np.mean(lengths >= 4) - 0.0625) < 4 * math.sqrt(0.0625 * 0.9375 / n)


def test_free_mean_area_matches_enumeration():
    lam = 0.25
    raw = _length_area_dp(lam, 40, 0)
    z = 1.0 / (1.0 - 2.0 * lam)
    mean_area = float((raw.sum(axis=0) * np.arange(raw.shape[1])).sum()) / z
    _, areas = free_length_area(ModelParams(lam, 1), RngStream(2), 400_000)
    se = areas.std() / math.sqrt(len(areas))
    assert abs(areas.mean() - mean_area) < 3 * se


def test_sample_free_returns_valid_paths():
    rng = RngStream(3)
    for _ in range(200):
        p = sample_free(ModelParams(0.45, 1), rng)
        assert p.area == p.recompute_area()


def test_free_length_chi_square():
    lam = 0.3
    lengths, _ = free_length_area(ModelParams(lam, 1), RngStream(4), 1_000_000)
    bins = 20
    counts = np.bincount(np.minimum(lengths, bins - 1), minlength=bins)
    ratio = 2 * lam
    probs = (1 - ratio) * ratio ** np.arange(bins)
    probs[-1] = ratio ** (bins - 1)
    expected = probs * len(lengths)
    # merge sparse tail cells so every expected count is at least 5
    keep = expected >= 5
    obs = np.r_[counts[keep], counts[~keep].sum()]
    exp = np.r_[expected[keep], expected[~keep].sum()]
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    assert stats.chisquare(obs, exp).pvalue > 1e-3


class TestBridges:
    def test_two_step(self):
        rng = RngStream(5)
        texts = Counter(sample_bridge_uniform((0, 1), (1, 0), rng).text for _ in range(20_000))
        assert set(texts) == {"RD", "DR"}
        assert abs(texts["RD"] / 20_000 - 0.5) < 0.02

    def test_uniform_chi_square(self):
        rng = RngStream(6)
        texts = Counter(sample_bridge_uniform((0, 2), (2, 0), rng).text for _ in range(100_000))
        assert len(texts) == 6
        assert stats.chisquare(list(texts.values())).pvalue > 1e-3

    def test_empty(self):
        assert len(sample_bridge_uniform((3, 3), (3, 3), RngStream(0))) == 0
        assert len(sample_bridge_below((3, 3), (3, 3), RngStream(0))) == 0
        with pytest.raises(EmptyBridgeSpace):
            sample_bridge_uniform((3, 0), (0, 3), RngStream(0))

    def test_below_two_step(self):
        rng = RngStream(7)
        assert {sample_bridge_below((0, 1), (1, 0), rng).text for _ in range(200)} == {"DR"}

    def test_below_uniform_on_allowed_set(self):
        a, b = (0, 2), (2, 0)
        allowed = set()
        for pattern in range(16):
            bits = np.array([(pattern >> i) & 1 for i in range(4)], np.uint8)
            if bits.sum() == 2 and below_chord(bits, 0, 4, 2, 2):
                allowed.add(Bridge(a, b, bits).text)
        assert allowed == {"DRDR", "DDRR"}
        rng = RngStream(8)
        texts = Counter(sample_bridge_below(a, b, rng).text for _ in range(20_000))
        assert set(texts) == allowed
        assert stats.chisquare(list(texts.values())).pvalue > 1e-3

    def test_batch_matches_single(self):
        rows = sample_bridges_below((0, 4), (4, 0), RngStream(9), 5000)
        assert rows.shape == (5000, 8)
        assert all(below_chord(r, 0, 8, 4, 4) for r in rows)

    def test_below_dominated_by_uniform_on_average(self):
        a, b = (0, 12), (12, 0)
        rng = RngStream(10)
        below = sample_bridges_below(a, b, rng, 4000)
        uniform = np.array([sample_bridge_uniform(a, b, rng).steps for _ in range(4000)])
        hb = np.cumsum(2 * below.astype(int) - 1, axis=1).mean(axis=0)
        hu = np.cumsum(2 * uniform.astype(int) - 1, axis=1).mean(axis=0)
        assert np.all(hb <= hu + 0.1)

    def test_lowest_bridge_dominated(self):
        a, b = (0, 3), (3, 0)
        low = Bridge(a, b, "DDDRRR")
        rng = RngStream(11)
        for _ in range(50):
            assert dominates(sample_bridge_below(a, b, rng), low)


class TestRejection:
    def test_acceptance_rate(self):
        lam = 0.25
        exact = float(_length_area_dp(lam, 40, 1).sum()) * (1 - 2 * lam)
        _, _, attempts = rejection_length_area(ModelParams(lam, 1), RngStream(12), 50_000)
        rate = len(attempts) / attempts.sum()
        se = math.sqrt(exact * (1 - exact) / attempts.sum())
        assert abs(rate - exact) < 3 * se

    def test_single_draw_is_feasible(self):
        params = ModelParams(0.45, 3)
        path, attempts = sample_conditioned_rejection(params, RngStream(13))
        assert path.area >= 9 and attempts >= 1

    def test_budget(self):
        with pytest.raises(AcceptanceBudgetExceeded):
            sample_conditioned_rejection(ModelParams(0.3, 1), RngStream(0), 0)
        with pytest.raises(BudgetExceeded):
            sample_conditioned_rejection(ModelParams(0.1, 6), RngStream(0), 10)

    def test_reproducible(self):
        a = rejection_length_area(ModelParams(0.3, 2), RngStream(14), 100)
        b = rejection_length_area(ModelParams(0.3, 2), RngStream(14), 100)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestEnumeration:
    def test_two(self):
        paths = list(enumerate_paths(2))
        assert len(paths) == 7
        assert [p.encode() for p in paths if p.length == 2 and p.area >= 1] == ["1:RD"]

    def test_zero(self):
        paths = list(enumerate_paths(0))
        assert len(paths) == 1 and paths[0].length == 0

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            next(enumerate_paths(40))
