"""Metric definitions, trace containers, aggregation, and rate fitting."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdsgd import metrics, problems
from pdsgd.algorithms import Schedule, run
from pdsgd.graphs import build_named
from pdsgd.metrics import (
    AggregateTrace,
    Trace,
    aggregate,
    aggregate_to_csv,
    consensus_error,
    fit_loglog_slope,
    optimality_gap,
    speedup_ratio,
    stationarity,
    time_average,
    trace_from_csv,
    trace_to_csv,
)
from pdsgd.problems import NoiseModel


class TestConsensusError:
    def test_hand_value(self):
        assert consensus_error(np.array([[1.0], [-1.0]])) == 1.0

    def test_zero_on_consensus(self):
        x = np.tile([2.5, -1.0], (5, 1))
        assert consensus_error(x) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 20), p=st.integers(1, 8))
    def test_matches_projection_oracle(self, seed, n, p):
        x = np.random.default_rng(seed).standard_normal((n, p))
        proj = (np.eye(n) - np.full((n, n), 1.0 / n)) @ x
        oracle = float(np.sum(proj**2)) / n
        assert consensus_error(x) == pytest.approx(oracle, rel=1e-12, abs=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 20), p=st.integers(1, 8))
    def test_translation_invariant(self, seed, n, p):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, p))
        t = rng.standard_normal(p)
        assert consensus_error(x + t) == pytest.approx(consensus_error(x), rel=1e-12, abs=1e-15)


class TestPointMetrics:
    def test_stationarity_vanishes_at_the_minimizer(self):
        for prob in (
            problems.two_agent_fixture(),
            problems.make_quadratic(3, 4, 1, seed=2),
            problems.make_logistic(3, 2, 25, 0.1, seed=3),
        ):
            assert stationarity(prob, np.asarray(prob.x_ref)) <= 1e-20

    def test_gap_vanishes_at_the_minimizer(self):
        prob = problems.two_agent_fixture()
        assert optimality_gap(prob, np.asarray(prob.x_ref)) == 0.0

    def test_gap_matches_quadratic_form_oracle(self):
        prob = problems.make_quadratic(4, 3, 1, seed=9, shared_design=True, b_spread=1.0)
        h = np.mean([a.T @ a for a in prob.a_mats], axis=0)
        x_star = np.asarray(prob.x_ref)
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = x_star + rng.standard_normal(3)
            d = x - x_star
            oracle = 0.5 * float(d @ h @ d)
            gap = optimality_gap(prob, x)
            assert gap == pytest.approx(oracle, rel=1e-10, abs=1e-12)

    def test_gradient_dominates_the_gap(self):
        for prob in (
            problems.make_quadratic(3, 4, 1, seed=2),
            problems.make_logistic(3, 2, 25, 0.1, seed=3),
        ):
            rng = np.random.default_rng(13)
            for _ in range(30):
                x = np.asarray(prob.x_ref) + rng.standard_normal(prob.p)
                gap = optimality_gap(prob, x)
                if gap <= 1e-12:
                    continue
                assert stationarity(prob, x) >= 2.0 * prob.nu * gap * (1.0 - 1e-8)

    def test_rounding_level_negative_gap_clamps_to_zero(self):
        prob = problems.two_agent_fixture()
        nudged = dataclasses.replace(prob, f_star=prob.f_star + 5e-11)
        assert optimality_gap(nudged, np.asarray(prob.x_ref)) == 0.0

    def test_structurally_negative_gap_fails_loudly(self):
        prob = problems.two_agent_fixture()
        broken = dataclasses.replace(prob, f_star=prob.f_star + 1e-3)
        with pytest.raises(AssertionError, match="negative"):
            optimality_gap(broken, np.asarray(prob.x_ref))


def _small_trace(seed=4, t=40, record_every=3):
    prob = problems.make_quadratic(4, 2, 0, seed=1)
    sched = Schedule.linear_k(kappa1=3.0, kappa2=1e-3, kappa0=0.2, t1=5.0)
    return run(
        prob, build_named("ring", 4), "pdsgd", sched, NoiseModel(1.0), t,
        seed=seed, record_every=record_every,
    )


class TestTraceContainer:
    def test_recorded_values_are_finite_and_nonnegative(self):
        trace = _small_trace()
        assert np.all(np.diff(trace.ks) > 0)
        for name in ("consensus_err", "grad_norm_sq", "opt_gap"):
            vals = trace.column(name)
            assert np.all(np.isfinite(vals))
            assert np.all(vals >= 0.0)

    def test_column_lookup_matches_fields(self):
        trace = _small_trace()
        assert trace.column("k") is trace.ks
        assert trace.column("eta_k") is trace.eta
        assert trace.column("beta_k") is trace.beta

    def test_round_trip_is_exact(self):
        trace = _small_trace()
        text = trace_to_csv(trace)
        back = trace_from_csv(text)
        assert np.array_equal(back.ks, trace.ks)
        for name in ("consensus_err", "grad_norm_sq", "opt_gap", "eta_k", "beta_k"):
            assert np.array_equal(back.column(name), trace.column(name))
        assert trace_to_csv(back) == text

    def test_header_is_validated(self):
        with pytest.raises(ValueError, match="header"):
            trace_from_csv("a,b,c\n1,2,3\n")

    def test_empty_table_parses_to_empty_trace(self):
        back = trace_from_csv(",".join(metrics.CSV_COLUMNS) + "\n")
        assert len(back.ks) == 0


class TestAggregate:
    def test_single_trace_aggregates_to_itself(self):
        trace = _small_trace(seed=4)
        agg = aggregate([trace])
        assert agg.n_seeds == 1
        assert np.array_equal(agg.ks, trace.ks)
        assert np.array_equal(agg.means["grad_norm_sq"], trace.grad_norm_sq)
        assert np.all(agg.stderrs["grad_norm_sq"] == 0.0)

    def test_mean_and_stderr_definitions(self):
        traces = [_small_trace(seed=s) for s in (4, 5, 6)]
        agg = aggregate(traces)
        stack = np.stack([t.opt_gap for t in traces])
        assert agg.means["opt_gap"] == pytest.approx(stack.mean(axis=0), rel=1e-15)
        expected = stack.std(axis=0, ddof=1) / np.sqrt(3)
        assert agg.stderrs["opt_gap"] == pytest.approx(expected, rel=1e-12)

    def test_order_of_seeds_does_not_matter(self):
        traces = [_small_trace(seed=s) for s in (4, 5, 6)]
        a = aggregate(traces)
        b = aggregate(traces[::-1])
        assert a.means["grad_norm_sq"] == pytest.approx(b.means["grad_norm_sq"], rel=1e-14)
        assert a.stderrs["grad_norm_sq"] == pytest.approx(b.stderrs["grad_norm_sq"], rel=1e-12)

    def test_mismatched_grids_rejected(self):
        with pytest.raises(ValueError, match="grid"):
            aggregate([_small_trace(record_every=3), _small_trace(record_every=5)])
        with pytest.raises(ValueError, match="trace"):
            aggregate([])

    def test_summary_carries_final_and_time_average(self):
        traces = [_small_trace(seed=s) for s in (4, 5)]
        agg = aggregate(traces)
        assert agg.summary["n_seeds"] == 2
        assert agg.summary["final"]["opt_gap"] == agg.means["opt_gap"][-1]
        expected = time_average(agg.ks, agg.means["grad_norm_sq"], int(agg.ks[-1]))
        assert agg.summary["time_avg"]["grad_norm_sq"] == expected

    def test_delimited_rendering_round_trips_values(self):
        agg = aggregate([_small_trace(seed=s) for s in (4, 5)])
        text = aggregate_to_csv(agg)
        lines = text.strip().split("\n")
        header = lines[0].split(",")
        assert header[0] == "k" and header[-1] == "n_seeds"
        assert "grad_norm_sq_mean" in header and "grad_norm_sq_stderr" in header
        first = lines[1].split(",")
        idx = header.index("grad_norm_sq_mean")
        assert float(first[idx]) == agg.means["grad_norm_sq"][0]


class TestTimeAverage:
    def test_averages_records_before_the_final_step(self):
        ks = np.array([0, 10, 20, 25])
        values = np.array([1.0, 2.0, 3.0, 4.0])
        assert time_average(ks, values, 25) == 2.0

    def test_zero_horizon_uses_the_initial_record(self):
        assert time_average(np.array([0]), np.array([7.0]), 0) == 7.0

    def test_no_eligible_records_rejected(self):
        with pytest.raises(ValueError, match="records"):
            time_average(np.array([30, 40]), np.array([1.0, 2.0]), 10)


class TestRateFitting:
    def test_exact_power_laws_recovered(self):
        ts = np.array([1e2, 1e3, 1e4, 1e5])
        for exponent in (-1.0, -0.5):
            slope, stderr = fit_loglog_slope(ts, 7.0 * ts**exponent)
            assert slope == pytest.approx(exponent, abs=1e-10)
            assert stderr <= 1e-10

    @pytest.mark.parametrize("exponent", [-1.0, -0.5, -0.3])
    def test_planted_exponents_survive_small_noise(self, exponent):
        rng = np.random.default_rng(17)
        ts = np.logspace(2, 6, 9)
        values = 3.0 * ts**exponent * (1.0 + rng.uniform(-0.01, 0.01, ts.size))
        slope, stderr = fit_loglog_slope(ts, values)
        assert slope == pytest.approx(exponent, abs=0.02)
        assert stderr < 0.02

    def test_input_validation(self):
        with pytest.raises(ValueError, match="3 points"):
            fit_loglog_slope(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        with pytest.raises(ValueError, match="positive"):
            fit_loglog_slope(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 2.0]))
        with pytest.raises(ValueError, match="positive"):
            fit_loglog_slope(np.array([1.0, -2.0, 3.0]), np.array([1.0, 1.0, 2.0]))
        with pytest.raises(ValueError, match="vectors"):
            fit_loglog_slope(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0]))
        with pytest.raises(ValueError, match="coincide"):
            fit_loglog_slope(np.array([2.0, 2.0, 2.0]), np.array([1.0, 2.0, 3.0]))


def _summary(n, value, noise_free=False, **extra):
    cfg = {"n": n, "topology": "ring", "T": 1000, "sigma2": 1.0}
    cfg.update(extra)
    return {
        "config": cfg,
        "time_avg": {"grad_norm_sq": value},
        "noise_free": noise_free,
    }


class TestSpeedupRatio:
    def test_identical_values_give_unit_ratios(self):
        rows = speedup_ratio([_summary(4, 2.0), _summary(16, 2.0)])
        assert [r["ratio_vs_smallest"] for r in rows] == [1.0, 1.0]
        assert all(r["baseline_n"] == 4 for r in rows)

    def test_rows_sorted_by_network_size_with_smallest_as_baseline(self):
        rows = speedup_ratio([_summary(16, 1.0), _summary(4, 4.0), _summary(8, 2.0)])
        assert [r["n"] for r in rows] == [4, 8, 16]
        assert [r["ratio_vs_smallest"] for r in rows] == [1.0, 2.0, 4.0]

    def test_differing_configurations_rejected(self):
        with pytest.raises(ValueError, match="network size"):
            speedup_ratio([_summary(4, 1.0), _summary(8, 1.0, sigma2=2.0)])

    def test_nonpositive_values_rejected(self):
        with pytest.raises(ValueError, match="nonpositive"):
            speedup_ratio([_summary(4, 0.0), _summary(8, 1.0)])

    def test_noise_free_rows_are_flagged(self):
        rows = speedup_ratio([_summary(4, 2.0, True), _summary(8, 1.0, True)])
        for row in rows:
            assert row["noise_free"]
            assert "not applicable" in row["note"]

    def test_noisy_rows_carry_no_disclaimer(self):
        rows = speedup_ratio([_summary(4, 2.0), _summary(8, 1.0)])
        assert all("note" not in r for r in rows)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="summary"):
            speedup_ratio([])
