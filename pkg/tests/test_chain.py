import json
from collections import Counter
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from facetlab.chain import (AUDIT_EVERY, ChainState, MonotoneCoupling, coupled_step, init_chain,
                            integrated_autocorrelation, load_checkpoint, resample_gibbs, resample_steps, run,
                            save_checkpoint, step_boundary, step_interior, step_window)
from facetlab.errors import AuditFailure, BridgeEndpointsInvalid
from facetlab.majorant import facet_statistics
from facetlab.oracle import (chain_transition_matrix, exact_conditional, exact_length_area_law, total_variation)
from facetlab.path_core import Bridge, LatticePath, ModelParams, dominates
from facetlab.rng import RngStream
from facetlab.samplers import below_chord, sample_bridges_below, sample_conditioned_rejection


def free_params(lam=0.3):
    """Parameters with a zero area threshold, which ModelParams does not allow."""
    return SimpleNamespace(lam=lam, n_target=0, area_threshold=0)


class TestInit:
    @pytest.mark.parametrize("n", [1, 3, 10])
    def test_square(self, n):
        st = init_chain(ModelParams(0.3, n), RngStream(0))
        assert st.path == LatticePath.square(n)
        assert st.area == n * n

    def test_rejects_infeasible_start(self):
        with pytest.raises(ValueError):
            ChainState(LatticePath.parse("1:DR"), ModelParams(0.3, 1), RngStream(0))


class TestSingleMoves:
    def test_area_loss_at_zero_excess_rejected(self):
        st = ChainState(LatticePath.parse("1:RD"), ModelParams(0.3, 1), RngStream(1))
        assert not any(step_interior(st) for _ in range(200))
        assert st.path.encode() == "1:RD"

    def test_area_gain_always_accepted(self):
        rng = RngStream(2)
        for _ in range(100):
            st = ChainState(LatticePath.parse("1:DR"), free_params(), rng)
            assert step_interior(st)
            assert st.path.encode() == "1:RD"

    def test_two_state_occupation(self):
        st = ChainState(LatticePath.parse("1:RD"), free_params(), RngStream(3))
        hist = np.zeros((3, 2), dtype=np.int64)
        st.advance(200_000, mode=1, hist=hist)
        frac = hist[2, 1] / hist[2].sum()
        assert abs(frac - 0.5) < 0.01

    def test_remove_down_needs_leading_down(self):
        rng = RngStream(4)
        for _ in range(300):
            st = ChainState(LatticePath.parse("1:RD"), ModelParams(0.3, 1), rng)
            step_boundary(st)
            # the only legal boundary moves from "RD" add steps
            assert st.length >= 2

    def test_boundary_acceptance_is_lambda(self):
        lam = 0.3
        st = init_chain(ModelParams(lam, 3), RngStream(5))
        for _ in range(20_000):
            step_boundary(st)
        rates = st.acceptance_rates()
        n_prepend = st.counters[1, 0]
        se = np.sqrt(lam * (1 - lam) / n_prepend)
        assert abs(rates["prepend_down"] - lam) < 4 * se
        assert abs(rates["append_right"] - lam) < 4 * np.sqrt(lam * (1 - lam) / st.counters[3, 0])

    def test_prepend_keeps_area(self):
        # the new Down step lies on the y-axis, so the area does not change
        st = init_chain(ModelParams(0.45, 2), RngStream(6))
        for _ in range(5000):
            before = st.path
            if step_boundary(st):
                assert st.area == st.path.recompute_area() == before.area
        st.audit()

    def test_window_move_keeps_constraint(self):
        st = init_chain(ModelParams(0.3, 5), RngStream(7))
        for _ in range(3000):
            step_window(st)
            assert st.area >= 25
        st.audit()


class TestDetailedBalance:
    @pytest.mark.parametrize("kwargs", [dict(), dict(interior_fraction=0.5, window_fraction=0.3, window_max=5)])
    def test_stationarity_of_transition_matrix(self, kwargs):
        states, pi, P = chain_transition_matrix(ModelParams(0.3, 1), 8, **kwargs)
        assert all(p.area >= 1 and p.length <= 8 for p in states)
        assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-12
        assert np.max(np.abs(pi @ P - pi)) < 1e-12
        flow = pi[:, None] * P
        assert np.max(np.abs(flow - flow.T)) < 1e-15

    def test_matrix_matches_kernel_frequencies(self):
        # empirical one-step transitions from one state agree with the exact row
        params = ModelParams(0.3, 1)
        states, _, P = chain_transition_matrix(params, 8, interior_fraction=0.5, window_fraction=0.3, window_max=4)
        index = {p: i for i, p in enumerate(states)}
        start = LatticePath.parse("2:RDRD")
        counts = Counter()
        rng = RngStream(8)
        trials = 40_000
        st = ChainState(start, params, rng)
        for _ in range(trials):
            st.set_path(start)
            st.advance(1, 0.5, 0.3, 4)
            counts[st.path] += 1
        row = P[index[start]]
        emp = np.zeros_like(row)
        for p, c in counts.items():
            emp[index[p]] = c / trials
        assert 0.5 * np.abs(emp - row).sum() < 0.02


class TestStationarity:
    @pytest.mark.parametrize("lam,n", [(0.3, 1), (0.45, 1), (0.3, 2), (0.45, 2)])
    def test_length_area_histogram(self, lam, n):
        params = ModelParams(lam, n)
        law = exact_length_area_law(params)
        assert law.neglected_mass_bound < 1e-8
        st = init_chain(params, RngStream(9))
        st.advance(100_000, 0.1, 0.4, 200)
        hist = np.zeros(law.table.shape, dtype=np.int64)
        st.advance(3_000_000, 0.1, 0.4, 200, hist=hist)
        emp = hist / hist.sum()
        tv = 0.5 * np.abs(emp - law.table).sum()
        assert tv < 0.03

    def test_triple_with_mean_facet(self):
        params = ModelParams(0.3, 1)
        table = exact_conditional(params, 16)
        assert table.neglected_mass_bound < 2e-3
        exact = {}
        for path, prob in zip(table.paths(), table.probs):
            key = (path.length, path.area, round(facet_statistics(path)["mean_fl"], 9))
            exact[key] = exact.get(key, 0.0) + prob
        st = init_chain(params, RngStream(10))
        st.advance(10_000, 0.1, 0.4, 200)
        seen = Counter()
        for _ in range(100_000):
            st.advance(10, 0.1, 0.4, 200)
            p = st.path
            seen[(p.length, p.area, round(facet_statistics(p)["mean_fl"], 9))] += 1
        emp = {k: v / 100_000 for k, v in seen.items()}
        assert total_variation(emp, exact) < 0.03


class TestAudit:
    def test_periodic_audit(self):
        st = init_chain(ModelParams(0.3, 6), RngStream(11))
        st.advance(5 * AUDIT_EVERY, 0.9, 0.1, 20)
        assert st.area == st.path.recompute_area()

    def test_audit_detects_drift(self):
        st = init_chain(ModelParams(0.3, 4), RngStream(12))
        st.st[3] += 1
        with pytest.raises(AuditFailure):
            st.audit()


class TestRun:
    def test_zero_sweeps(self):
        st = init_chain(ModelParams(0.3, 5), RngStream(13))
        before = st.path
        st, trace = run(st, 0)
        assert st.path == before and trace.records == []

    def test_interior_only_conserves_length(self):
        st = init_chain(ModelParams(0.3, 5), RngStream(14))
        st, _ = run(st, 200, interior_fraction=1.0)
        assert st.length == 10

    def test_autocorrelation_is_finite(self):
        st = init_chain(ModelParams(0.3, 32), RngStream(15))
        run(st, 500, window_fraction=0.1)
        st, trace = run(st, 4000, window_fraction=0.1)
        tau = integrated_autocorrelation(trace.column("mean_fl"))
        assert np.isfinite(tau) and tau >= 1.0

    def test_autocorrelation_of_white_noise(self):
        x = np.random.default_rng(0).standard_normal(20_000)
        assert integrated_autocorrelation(x) == pytest.approx(1.0, abs=0.5)

    def test_bad_arguments(self):
        st = init_chain(ModelParams(0.3, 2), RngStream(0))
        with pytest.raises(ValueError):
            run(st, -1)
        with pytest.raises(ValueError):
            run(st, 1, interior_fraction=1.5)

    def test_reproducible(self):
        a = init_chain(ModelParams(0.3, 8), RngStream(16))
        b = init_chain(ModelParams(0.3, 8), RngStream(16))
        run(a, 300, window_fraction=0.2)
        run(b, 300, window_fraction=0.2)
        assert a.path == b.path


class TestCheckpoint:
    def test_resume_matches_uninterrupted(self, tmp_path):
        params = ModelParams(0.3, 6)
        full = init_chain(params, RngStream(17))
        run(full, 100, window_fraction=0.1)
        part = init_chain(params, RngStream(17))
        run(part, 40, window_fraction=0.1)
        save_checkpoint(part, str(tmp_path / "ck.json"))
        resumed = load_checkpoint(str(tmp_path / "ck.json"))
        assert resumed.sweep_count == 40
        run(resumed, 60, window_fraction=0.1)
        assert resumed.path == full.path
        assert np.array_equal(resumed.counters, full.counters)

    def test_version_checked(self, tmp_path):
        st = init_chain(ModelParams(0.3, 2), RngStream(0))
        rec = st.to_checkpoint()
        rec["version"] = 99
        (tmp_path / "ck.json").write_text(json.dumps(rec))
        with pytest.raises(ValueError):
            load_checkpoint(str(tmp_path / "ck.json"))


class TestResample:
    def test_vacuous_constraint_gives_uniform_bridge(self):
        # a huge excess makes the constraint irrelevant: every arrangement is equally likely
        params = ModelParams(0.3, 1)
        path = LatticePath.parse("7:RRRRRRDDRDRDRDDD")
        a, b = (6, 5), (9, 2)
        counts = Counter()
        rng = RngStream(18)
        for _ in range(35_000):
            st = ChainState(path, params, rng)
            resample_gibbs(st, a, b, rng)
            i = st.path.index_of(a)
            counts[st.path.steps[i:i + 6].tobytes()] += 1
        assert len(counts) == 20
        assert stats.chisquare(list(counts.values())).pvalue > 1e-3

    def test_zero_slack_forces_top_arrangement(self):
        params = ModelParams(0.3, 3)
        path = LatticePath.square(3)
        rng = RngStream(19)
        for _ in range(50):
            st = ChainState(path, params, rng)
            resample_gibbs(st, (2, 3), (3, 2), rng)
            assert st.path == path and st.area == 9

    def test_bad_endpoints(self):
        st = init_chain(ModelParams(0.3, 3), RngStream(0))
        with pytest.raises(BridgeEndpointsInvalid):
            resample_gibbs(st, (3, 0), (0, 3), RngStream(0))
        with pytest.raises(BridgeEndpointsInvalid):
            resample_gibbs(st, (1, 1), (3, 0), RngStream(0))

    @pytest.mark.parametrize("r,d,q_min", [(3, 3, 4), (6, 5, 20), (40, 40, 900), (300, 300, 46_000)])
    def test_all_methods_respect_constraint(self, r, d, q_min):
        steps = np.r_[np.ones(r, np.uint8), np.zeros(d, np.uint8)]
        rng = RngStream(20)
        methods = set()
        for _ in range(20):
            info = resample_steps(steps, 0, r + d, q_min, rng)
            methods.add(info["method"])
            downs, q = 0, 0
            for s in steps[::-1]:
                if s:
                    q += downs
                else:
                    downs += 1
            assert q >= q_min and steps.sum() == r
        assert methods

    def test_exact_table_law(self):
        # uniform on {arrangements with q >= q_min} for a small window
        r, d, q_min = 3, 3, 5
        allowed = []
        for pattern in range(64):
            bits = np.array([(pattern >> i) & 1 for i in range(6)], np.uint8)
            if bits.sum() != r:
                continue
            downs = q = 0
            for s in bits[::-1]:
                q += downs if s else 0
                downs += 0 if s else 1
            if q >= q_min:
                allowed.append(bits.tobytes())
        rng = RngStream(21)
        counts = Counter()
        steps = np.r_[np.ones(r, np.uint8), np.zeros(d, np.uint8)]
        for _ in range(30_000):
            assert resample_steps(steps, 0, 6, q_min, rng)["method"] == "exact"
            counts[steps.tobytes()] += 1
        assert set(counts) == set(allowed)
        assert stats.chisquare(list(counts.values())).pvalue > 1e-3

    def test_invariance_at_small_n(self):
        params = ModelParams(0.3, 1)
        law = exact_length_area_law(params)
        rng = RngStream(22)
        hist = Counter()
        n = 60_000
        for _ in range(n):
            path, _ = sample_conditioned_rejection(params, rng)
            st = ChainState(path, params, rng)
            if path.length >= 2:
                i, j = sorted(rng.integers(0, path.length + 1, 2).tolist())
                resample_gibbs(st, path.vertex(i), path.vertex(j), rng)
            hist[(st.length, st.area)] += 1
        emp = {k: v / n for k, v in hist.items()}
        assert total_variation(emp, law.as_dict()) < 0.02


class TestCoupling:
    def test_collinear_site_unchanged(self):
        br = Bridge((0, 2), (2, 0), "DDRR")
        c = MonotoneCoupling(br, 0, RngStream(0))
        # lowest bridge: only the middle corner can move and it is a Down-Right corner
        coupled_step(c, 1)
        assert dominates(c.upper, c.lower)

    def test_initial_bridge_checked(self):
        with pytest.raises(BridgeEndpointsInvalid):
            MonotoneCoupling(Bridge((0, 2), (2, 0), "RRDD"), 0, RngStream(0))
        with pytest.raises(BridgeEndpointsInvalid):
            MonotoneCoupling(Bridge((0, 2), (2, 0), "DDRR"), 1, RngStream(0))

    @pytest.mark.parametrize("span", [64, 256])
    def test_domination_holds(self, span):
        rng = RngStream(23)
        # the Down-Right staircase hugs the chord from below and has q-area span(span-1)/2
        start = Bridge((0, span), (span, 0), np.tile(np.array([0, 1], np.uint8), span))
        c = MonotoneCoupling(start, span * span // 4, rng)
        coupled_step(c, 100_000)
        assert c.violations == 0 and c.steps_done == 100_000
        assert dominates(c.upper, c.lower)
        assert c.upper.q_area >= span * span // 4
        assert below_chord(c.upper.steps, 0, 2 * span, span, span)

    def test_lower_chain_law(self):
        span = 5
        a, b = (0, span), (span, 0)
        exact = Counter(r.tobytes() for r in sample_bridges_below(a, b, RngStream(24), 200_000))
        exact = {k: v / 200_000 for k, v in exact.items()}
        c = MonotoneCoupling(Bridge(a, b, np.r_[np.zeros(span, np.uint8), np.ones(span, np.uint8)]), 0, RngStream(25),
                             check=False)
        coupled_step(c, 10_000)
        seen = Counter()
        for _ in range(100_000):
            coupled_step(c, 10)
            seen[c.lower_steps.tobytes()] += 1
        emp = {k: v / 100_000 for k, v in seen.items()}
        assert total_variation(emp, exact) < 0.02

    def test_from_path(self):
        params = ModelParams(0.3, 4)
        path = LatticePath.parse("6:RDDRRDRDDRRD")
        # (1, 6) and (6, 1) are consecutive hull vertices, so the bridge lies under the chord
        c = MonotoneCoupling.from_path(path, (1, 6), (6, 1), params, RngStream(26))
        assert c.q_min == c.upper.q_area - (path.area - 16)
        coupled_step(c, 5000)
        assert c.violations == 0 and c.upper.q_area >= c.q_min
