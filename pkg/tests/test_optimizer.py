"""Scoring and selection tests built around a direct-arithmetic oracle."""

import io
import json
from dataclasses import replace
from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest

from rightsizer.domain import (
    AWS_PRICING,
    MEMORY_SIZES_MB,
    ExecutionCurve,
    PricingModel,
)
from rightsizer.model import Hyperparameters, MlpRegressor, RegressionModel
from rightsizer.optimizer import (
    DEFAULT_TRADEOFF,
    SizingRecommendation,
    TradeoffParameter,
    benefit,
    optimize_from_monitoring,
    rank_quality,
    score,
)
from rightsizer.simgen import (
    FunctionProfile,
    SegmentSpec,
    WorkloadSpec,
    ground_truth,
    simulate_measurement,
)

GB_RATE = Fraction("0.00001667")
INVOCATION = Fraction("0.0000002")


def oracle(times: dict, t: float, gb_rate=GB_RATE, invocation=INVOCATION):
    """Recompute all six scores with exact rational arithmetic."""
    costs = {
        m: Fraction(str(times[m])) / 1000 * Fraction(m, 1024) * gb_rate + invocation
        for m in MEMORY_SIZES_MB
    }
    min_cost = min(costs.values())
    min_time = min(times.values())
    s_cost = {m: float(costs[m] / min_cost) if min_cost else 1.0 for m in costs}
    s_perf = {m: times[m] / min_time for m in times}
    s_total = {m: t * s_cost[m] + (1 - t) * s_perf[m] for m in times}
    chosen = min(MEMORY_SIZES_MB, key=lambda m: (s_total[m], m))
    return s_cost, s_perf, s_total, chosen


def random_curve(rng) -> ExecutionCurve:
    times = {m: float(np.exp(rng.uniform(np.log(5), np.log(10000)))) for m in MEMORY_SIZES_MB}
    return ExecutionCurve(times_ms=times)


# curve with a cost tie between 128 and 256 and a clear knee at 256
HAND_TIMES = {128: 1000.0, 256: 500.0, 512: 400.0, 1024: 380.0, 2048: 370.0, 3008: 365.0}


class TestTradeoffParameter:
    def test_default(self):
        assert TradeoffParameter().t == DEFAULT_TRADEOFF == 0.75

    @pytest.mark.parametrize("t", [0.0, 0.5, 1.0])
    def test_bounds_inclusive(self, t):
        assert TradeoffParameter(t).t == t

    @pytest.mark.parametrize("t", [-0.1, 1.0001, 7.0])
    def test_out_of_range(self, t):
        with pytest.raises(ValueError):
            TradeoffParameter(t)


class TestScoreHandExample:
    def test_knee_curve_at_half_tradeoff(self):
        rec = score(ExecutionCurve(times_ms=HAND_TIMES), AWS_PRICING, TradeoffParameter(0.5))
        s_cost, s_perf, s_total, chosen = oracle(HAND_TIMES, 0.5)
        assert rec.chosen_memory_mb == chosen == 256
        for entry in rec.scores:
            m = entry.memory_mb
            assert entry.s_cost == pytest.approx(s_cost[m], rel=1e-12)
            assert entry.s_perf == pytest.approx(s_perf[m], rel=1e-12)
            assert entry.s_total == pytest.approx(s_total[m], rel=1e-12)
        # spot values computed by hand
        assert rec.score_for(128).s_perf == pytest.approx(1000 / 365)
        assert rec.score_for(128).s_cost == 1.0  # 1000ms*128MB and 500ms*256MB tie
        assert rec.score_for(256).s_cost == 1.0
        assert rec.score_for(256).s_total == pytest.approx(0.5 * (1 + 500 / 365))

    def test_pure_performance_picks_fastest(self):
        rec = score(ExecutionCurve(times_ms=HAND_TIMES), AWS_PRICING, TradeoffParameter(0.0))
        assert rec.chosen_memory_mb == 3008

    def test_pure_cost_breaks_tie_toward_smaller(self):
        # 128 and 256 cost exactly the same here
        rec = score(ExecutionCurve(times_ms=HAND_TIMES), AWS_PRICING, TradeoffParameter(1.0))
        assert rec.chosen_memory_mb == 128

    def test_flat_curve_chooses_smallest(self):
        flat = ExecutionCurve(times_ms={m: 700.0 for m in MEMORY_SIZES_MB})
        for t in (0.0, 0.25, 0.75, 1.0):
            assert score(flat, AWS_PRICING, TradeoffParameter(t)).chosen_memory_mb == 128


class TestScoreAgainstOracle:
    def test_500_random_curves(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            curve = random_curve(rng)
            t = float(rng.uniform())
            rec = score(curve, AWS_PRICING, TradeoffParameter(t))
            s_cost, s_perf, s_total, chosen = oracle(curve.times_ms, t)
            assert rec.chosen_memory_mb == chosen
            for entry in rec.scores:
                assert entry.s_total == pytest.approx(s_total[entry.memory_mb], rel=1e-11)

    def test_normalization_is_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            rec = score(random_curve(rng), AWS_PRICING, TradeoffParameter(0.6))
            assert min(s.s_cost for s in rec.scores) == 1.0
            assert min(s.s_perf for s in rec.scores) == 1.0
            assert all(s.s_total >= 1.0 for s in rec.scores)

    def test_tradeoff_monotonicity(self):
        rng = np.random.default_rng(2)
        grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        for _ in range(200):
            curve = random_curve(rng)
            picks = [
                score(curve, AWS_PRICING, TradeoffParameter(t)).chosen_memory_mb
                for t in grid
            ]
            costs = [
                float(score(curve, AWS_PRICING, TradeoffParameter(t)).score_for(p).cost)
                for t, p in zip(grid, picks)
            ]
            times = [curve.times_ms[p] for p in picks]
            assert all(a >= b - 1e-18 for a, b in zip(costs, costs[1:]))
            assert all(a <= b + 1e-12 for a, b in zip(times, times[1:]))

    def test_scale_invariance_without_invocation_fee(self):
        pricing = PricingModel(price_per_gb_second="0.00001667", price_per_invocation="0")
        rng = np.random.default_rng(3)
        for _ in range(50):
            curve = random_curve(rng)
            scaled = ExecutionCurve(times_ms={m: v * 7.0 for m, v in curve.times_ms.items()})
            a = score(curve, pricing, TradeoffParameter(0.4))
            b = score(scaled, pricing, TradeoffParameter(0.4))
            assert a.chosen_memory_mb == b.chosen_memory_mb
            for sa, sb in zip(a.scores, b.scores):
                assert sa.s_cost == pytest.approx(sb.s_cost, rel=1e-12)
                assert sa.s_perf == pytest.approx(sb.s_perf, rel=1e-12)

    def test_scale_keeps_s_perf_with_invocation_fee(self):
        rng = np.random.default_rng(4)
        curve = random_curve(rng)
        scaled = ExecutionCurve(times_ms={m: v * 3.0 for m, v in curve.times_ms.items()})
        a = score(curve, AWS_PRICING, TradeoffParameter(0.4))
        b = score(scaled, AWS_PRICING, TradeoffParameter(0.4))
        for sa, sb in zip(a.scores, b.scores):
            assert sa.s_perf == pytest.approx(sb.s_perf, rel=1e-12)


class TestRecommendationObject:
    def test_json_payload(self):
        rec = score(ExecutionCurve(times_ms=HAND_TIMES), AWS_PRICING, TradeoffParameter(0.5))
        payload = json.loads(rec.to_json())
        assert payload["chosen_memory_mb"] == 256
        assert payload["ranking"][0] == 256
        assert set(payload["scores"]) == {str(m) for m in MEMORY_SIZES_MB}
        assert payload["scores"]["128"]["s_cost"] == 1.0
        # costs serialize as exact decimal strings
        assert payload["scores"]["128"]["cost_usd"].startswith("0.0000022")

    def test_table_output(self):
        rec = score(ExecutionCurve(times_ms=HAND_TIMES), AWS_PRICING, TradeoffParameter(0.5))
        buf = io.StringIO()
        rec.write_table(buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 7
        assert lines[0].split()[:2] == ["memory_mb", "time_ms"]
        assert sum("<- chosen" in line for line in lines) == 1
        assert "<- chosen" in lines[2]  # 256 row

    def test_rank_of(self):
        rec = score(ExecutionCurve(times_ms=HAND_TIMES), AWS_PRICING, TradeoffParameter(0.5))
        assert rec.rank_of(rec.chosen_memory_mb) == 1
        assert sorted(rec.rank_of(m) for m in MEMORY_SIZES_MB) == [1, 2, 3, 4, 5, 6]

    def test_invariants_enforced(self):
        rec = score(ExecutionCurve(times_ms=HAND_TIMES), AWS_PRICING, TradeoffParameter(0.5))
        with pytest.raises(ValueError):
            replace(rec, chosen_memory_mb=3008)
        with pytest.raises(ValueError):
            replace(rec, ranking=rec.ranking[:3])


class TestRankQuality:
    def test_truth_ranks_itself_first(self):
        gt = ExecutionCurve(times_ms=HAND_TIMES)
        rec = score(gt, AWS_PRICING, TradeoffParameter(0.5))
        assert rank_quality(rec, gt, AWS_PRICING, TradeoffParameter(0.5)) == 1

    def test_rank_matches_truth_position(self):
        gt = ExecutionCurve(times_ms=HAND_TIMES)
        t = TradeoffParameter(0.5)
        truth_ranking = score(gt, AWS_PRICING, t).ranking
        # a curve skewed to make 512 the clear winner
        skewed = ExecutionCurve(
            times_ms={m: (50.0 if m == 512 else 5000.0) for m in MEMORY_SIZES_MB})
        rec = score(skewed, AWS_PRICING, t)
        assert rec.chosen_memory_mb == 512
        expected = truth_ranking.index(512) + 1
        assert rank_quality(rec, gt, AWS_PRICING, t) == expected == 2


class TestBenefit:
    def test_no_move_no_change(self):
        gt = ExecutionCurve(times_ms=HAND_TIMES)
        assert benefit(512, 512, gt, AWS_PRICING) == (0.0, 0.0)

    def test_half_time_at_double_memory_is_cost_neutral(self):
        pricing = PricingModel(price_per_gb_second="0.00001667", price_per_invocation="0")
        curve = ExecutionCurve(
            times_ms={128: 1000.0, 256: 500.0, 512: 300.0, 1024: 200.0,
                      2048: 150.0, 3008: 140.0})
        cost_delta, speedup = benefit(128, 256, curve, pricing)
        assert cost_delta == 0.0
        assert speedup == 50.0

    def test_direct_arithmetic_example(self):
        curve = ExecutionCurve(times_ms=HAND_TIMES)
        cost_delta, speedup = benefit(128, 2048, curve, AWS_PRICING)
        old_cost = Fraction(1) * Fraction(128, 1024) * GB_RATE + INVOCATION
        new_cost = Fraction("0.37") * Fraction(2048, 1024) * GB_RATE + INVOCATION
        assert speedup == pytest.approx((1 - 370 / 1000) * 100)
        assert cost_delta == pytest.approx(float((1 - new_cost / old_cost) * 100), rel=1e-9)
        assert cost_delta < 0  # bigger memory costs more here

    def test_unknown_size_rejected(self):
        gt = ExecutionCurve(times_ms=HAND_TIMES)
        with pytest.raises(ValueError):
            benefit(100, 256, gt, AWS_PRICING)


def perfect_model_for(profile: FunctionProfile, base: int = 256) -> RegressionModel:
    """Stub whose network outputs the profile's true ratios for any input."""
    gt = ground_truth(profile)
    targets = tuple(m for m in MEMORY_SIZES_MB if m != base)
    ratios = np.array([gt.curve.times_ms[m] / gt.curve.times_ms[base] for m in targets])
    est = MlpRegressor(hidden_layers=1, neurons_per_layer=2)
    est.coefs_ = [np.zeros((1, 2)), np.zeros((2, 5))]
    est.intercepts_ = [np.zeros(2), ratios]
    est.x_mean_ = np.zeros(1)
    est.x_scale_ = np.ones(1)
    est.n_features_in_ = 1
    est._single_target = False
    return RegressionModel(
        feature_names=("execution_time",), base_memory=base,
        target_sizes=targets, estimator=est,
        hyperparameters=Hyperparameters(),
    )


class TestOptimizeFromMonitoring:
    def test_perfect_model_matches_ground_truth_scoring(self):
        profile = FunctionProfile(
            function_id="cpu-heavy",
            segments=(SegmentSpec(kind="cpu_bound", work_units=400.0),),
            noise_cv=0.0, seed=9,
        )
        summary = simulate_measurement(profile, 256, WorkloadSpec(10.0, 5.0))
        model = perfect_model_for(profile)
        t = TradeoffParameter(0.75)
        via_model = optimize_from_monitoring(summary, model, AWS_PRICING, t)
        via_truth = score(ground_truth(profile).curve, AWS_PRICING, t)
        assert via_model.chosen_memory_mb == via_truth.chosen_memory_mb
        for a, b in zip(via_model.scores, via_truth.scores):
            assert a.s_total == pytest.approx(b.s_total, rel=1e-9)

    def test_cpu_heavy_matches_brute_force(self):
        profile = FunctionProfile(
            function_id="cpu-heavy",
            segments=(SegmentSpec(kind="cpu_bound", work_units=900.0),),
            noise_cv=0.0, seed=9,
        )
        summary = simulate_measurement(profile, 256, WorkloadSpec(10.0, 5.0))
        rec = optimize_from_monitoring(
            summary, perfect_model_for(profile), AWS_PRICING, TradeoffParameter(0.75))
        _, _, _, chosen = oracle(ground_truth(profile).curve.times_ms, 0.75)
        assert rec.chosen_memory_mb == chosen

    def test_flat_profile_chooses_smallest(self):
        profile = FunctionProfile(
            function_id="flat",
            segments=(SegmentSpec(kind="network_bound", work_units=120.0),),
            noise_cv=0.0, seed=3,
        )
        summary = simulate_measurement(profile, 256, WorkloadSpec(10.0, 5.0))
        model = perfect_model_for(profile)
        for t in (0.25, 0.75, 1.0):
            rec = optimize_from_monitoring(summary, model, AWS_PRICING, TradeoffParameter(t))
            assert rec.chosen_memory_mb == 128
