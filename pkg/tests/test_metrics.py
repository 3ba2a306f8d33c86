import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcigrasp import metrics
from bcigrasp.metrics import (
    ControlTrace,
    EmptyInput,
    EmptyTrace,
    NoCompletedTrials,
    ZeroBaseline,
    ZeroTotal,
    ZeroTrials,
    far,
    gsr,
    holm,
    itr,
    itr_detail,
    km_estimate,
    sci,
    timing_summary,
)


class TestItr:
    def test_published_operating_point(self):
        assert itr(3, 0.931, 4.69) == pytest.approx(14.8, abs=0.1)

    def test_chance_accuracy_exactly_zero(self):
        assert itr(3, 1 / 3, 4.0) == 0.0
        assert itr(3, 1 / 3, 100.0) == 0.0

    def test_perfect_binary_one_per_minute(self):
        assert itr(2, 1.0, 60.0) == 1.0

    def test_below_chance_clamped_and_flagged(self):
        res = itr_detail(4, 0.10, 5.0)
        assert res.bits_per_min == 0.0
        assert res.below_chance
        assert not itr_detail(4, 0.5, 5.0).below_chance

    def test_monotone_in_accuracy(self):
        grid = np.linspace(1 / 3, 1.0, 40)
        vals = [itr(3, p, 4.0) for p in grid]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_monotone_decreasing_in_time(self):
        vals = [itr(3, 0.9, t) for t in np.linspace(1.0, 30.0, 30)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            itr(1, 0.9, 1.0)
        with pytest.raises(ValueError):
            itr(3, 1.2, 1.0)
        with pytest.raises(ValueError):
            itr(3, 0.9, 0.0)


class TestSci:
    def test_constant_congruent(self):
        t = np.linspace(0, 5, 41)
        assert sci(ControlTrace(t, np.ones_like(t), +1)) == pytest.approx(1.0)

    def test_constant_opposed_clipped(self):
        t = np.linspace(0, 5, 41)
        assert sci(ControlTrace(t, -np.ones_like(t), +1)) == 0.0

    def test_unit_sine_one_period(self):
        # analytic: (1/T) * int max(0, sin 2pi t) dt over [0,1] = 1/pi
        t = np.arange(0, 1.0 + 1e-12, 0.01)
        trace = ControlTrace(t, np.sin(2 * np.pi * t), +1)
        assert sci(trace) == pytest.approx(1 / np.pi, abs=1e-3)

    def test_dense_quadrature_oracle_random_signal(self):
        rng = np.random.default_rng(0)
        t = np.linspace(0, 4, 3001)
        coeffs = rng.normal(size=4)
        s = np.clip(sum(c * np.sin((k + 1) * t) for k, c in enumerate(coeffs)), -1, 1)
        # oracle: rectangle-rule on a 10x denser resample of the same samples
        td = np.linspace(0, 4, 30001)
        sd = np.interp(td, t, s)
        oracle = np.trapezoid(np.maximum(0, sd), td) / 4
        assert sci(ControlTrace(t, s, +1)) == pytest.approx(oracle, abs=1e-4)

    def test_invariant_under_time_rescale(self):
        rng = np.random.default_rng(1)
        t = np.linspace(0, 3, 500)
        s = np.clip(rng.normal(size=500), -1, 1)
        a = sci(ControlTrace(t, s, -1))
        b = sci(ControlTrace(t * 7.5, s, -1))
        assert a == pytest.approx(b, rel=1e-12)

    def test_piecewise_cue(self):
        t = np.array([0.0, 1.0, 2.0])
        s = np.array([1.0, 1.0, 1.0])
        d = np.array([1, 1, -1])
        # second interval trapezoid averages +1 and 0 contributions
        assert sci(ControlTrace(t, s, d)) == pytest.approx((1.0 + 0.5) / 2)

    def test_empty_raises(self):
        with pytest.raises(EmptyTrace):
            sci(ControlTrace(np.array([]), np.array([]), +1))


class TestRates:
    def test_far_examples(self):
        assert far(1, 12) == pytest.approx(0.0833, abs=1e-4)
        assert far(0, 12) == 0.0
        assert far(12, 12) == 1.0
        with pytest.raises(ZeroTotal):
            far(0, 0)

    def test_gsr_examples(self):
        assert gsr(35, 36) == pytest.approx(0.972, abs=5e-4)
        assert gsr(36, 36) == 1.0
        assert gsr(0, 36) == 0.0
        with pytest.raises(ZeroTrials):
            gsr(1, 0)


class TestTiming:
    def test_published_decomposition_is_additive(self):
        rows = [(15.20, 9.44, 15.26)] * 12
        s = timing_summary(rows)
        assert s.mean_total == pytest.approx(39.90, abs=1e-9)
        assert s.sd_total == 0.0

    def test_single_trial_zero_sd(self):
        s = timing_summary([(1.0, 2.0, 3.0)])
        assert s.sd_select == 0.0 and s.sd_plan == 0.0 and s.sd_exec == 0.0
        assert s.mean_total == 6.0

    def test_totals_are_rowwise(self):
        rows = [(1.0, 1.0, 1.0), (3.0, 5.0, 7.0)]
        s = timing_summary(rows)
        assert s.mean_total == pytest.approx((3.0 + 15.0) / 2, abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(NoCompletedTrials):
            timing_summary([])


class TestKaplanMeier:
    def test_hand_computed_no_censoring(self):
        km = km_estimate([5, 8, 8, 12])
        assert km.at(5) == pytest.approx(0.75)
        assert km.at(8) == pytest.approx(0.25)
        assert km.at(12) == pytest.approx(0.0)
        assert km.at(4.99) == 1.0

    def test_all_censored_flat_one(self):
        km = km_estimate([3, 6, 9], censored=[True, True, True])
        assert km.at(100.0) == 1.0
        assert km.event_times.size == 0

    def test_hand_computed_with_censoring(self):
        km = km_estimate([5, 8, 12], censored=[False, True, False])
        assert km.at(5) == pytest.approx(2 / 3)
        assert km.at(8) == pytest.approx(2 / 3)  # censoring: no step
        assert km.at(12) == pytest.approx(0.0)

    def test_no_censoring_equals_one_minus_ecdf(self):
        rng = np.random.default_rng(2)
        d = rng.integers(1, 20, size=60).astype(float)
        km = km_estimate(d)
        for t in np.unique(d):
            ecdf = np.mean(d <= t)
            assert km.at(t) == pytest.approx(1 - ecdf, abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            km_estimate([])


class TestHolm:
    def test_all_rejected(self):
        assert holm([0.01, 0.02, 0.04], alpha=0.05) == [True, True, True]

    def test_none_rejected_stops_at_first_failure(self):
        assert holm([0.03, 0.2, 0.5], alpha=0.05) == [False, False, False]

    def test_empty(self):
        assert holm([], alpha=0.05) == []

    def test_partial_rejection_preserves_input_order(self):
        flags = holm([0.2, 0.001, 0.04], alpha=0.05)
        assert flags == [False, True, False]  # 0.04 > 0.05/2

    @given(
        st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=12),
        st.floats(min_value=0.01, max_value=0.2),
    )
    @settings(max_examples=200, deadline=None)
    def test_superset_of_bonferroni(self, ps, alpha):
        h = holm(ps, alpha)
        bonf = [p <= alpha / len(ps) for p in ps]
        assert all(hi for hi, bi in zip(h, bonf) if bi)


class TestErdPercent:
    def test_examples(self):
        assert metrics.erd_percent(1.0, 1.0) == 0.0
        assert metrics.erd_percent(0.5, 1.0) == -50.0
        assert metrics.erd_percent(1.3, 1.0) == pytest.approx(30.0)

    def test_zero_baseline(self):
        with pytest.raises(ZeroBaseline):
            metrics.erd_percent(1.0, 0.0)


def test_report_total_is_sum():
    r = metrics.MetricsReport(t_select=1.5, t_plan=2.5, t_exec=3.0)
    assert r.t_total == pytest.approx(7.0, abs=1e-12)


def test_report_rejects_bad_rates():
    with pytest.raises(ValueError):
        metrics.MetricsReport(accuracy=1.5)


def test_sci_star_composite():
    assert metrics.sci_star(0.9, 0.1, 4.0) == pytest.approx(0.9 * 0.9 / 4.0)
