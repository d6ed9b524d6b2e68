import io

import numpy as np
import pytest
from sklearn.linear_model import LinearRegression

from rightsizer.domain import (
    MEMORY_SIZES_MB,
    METRIC_NAMES,
    MeasurementSummary,
    MetricVector,
)
from rightsizer.features import (
    BASE_SOURCE_METRICS,
    FeatureSet,
    SelectionTrace,
    TargetVector,
    add_dispersion_features,
    build_matrix,
    derive_relative_features,
    dispersion_feature_names,
    f0_feature_set,
    feature_source_metric,
    feature_value,
    make_targets,
    pair_dataset,
    relative_feature_names,
    select_features,
    sequential_forward_selection,
    target_matrix,
)
from rightsizer.simgen import FunctionProfile, SegmentSpec, WorkloadSpec, generate_dataset, generate_profiles


def vector(**overrides):
    base = {name: 1.0 for name in METRIC_NAMES}
    base.update(
        min_event_loop_lag=0.5,
        mean_event_loop_lag=1.0,
        max_event_loop_lag=2.0,
        heap_used=10.0,
        total_heap=20.0,
        execution_time=1000.0,
    )
    base.update(overrides)
    return MetricVector(**base)


def summary(mean=None, std=None, function_id="fn-0", memory=256):
    return MeasurementSummary(
        function_id=function_id,
        memory=memory,
        sample_count=100,
        mean=mean or vector(),
        std=std or vector(execution_time=5.0),
        request_rate=30.0,
        duration=600.0,
    )


class TestFeatureValue:
    def test_plain_mean(self):
        s = summary(mean=vector(fs_writes=42.0))
        assert feature_value(s, "fs_writes") == 42.0

    def test_per_second_rate(self):
        s = summary(mean=vector(vol_context_switches=300.0, execution_time=1000.0))
        assert feature_value(s, "vol_context_switches_per_second") == 300.0

    def test_per_second_rate_half_second(self):
        s = summary(mean=vector(fs_writes=150.0, execution_time=500.0))
        assert feature_value(s, "fs_writes_per_second") == 300.0

    def test_std_and_cv(self):
        s = summary(
            mean=vector(heap_used=200.0, total_heap=400.0),
            std=vector(heap_used=40.0, total_heap=50.0, execution_time=5.0),
        )
        assert feature_value(s, "heap_used_std") == 40.0
        assert feature_value(s, "heap_used_cv") == pytest.approx(0.2)

    def test_cv_zero_mean_is_zero(self):
        s = summary(
            mean=vector(fs_reads=0.0),
            std=vector(fs_reads=0.0, execution_time=5.0),
        )
        assert feature_value(s, "fs_reads_cv") == 0.0

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            feature_value(summary(), "gpu_time")

    def test_rate_requires_positive_execution_time(self):
        s = summary(mean=vector(execution_time=0.0))
        with pytest.raises(ValueError):
            feature_value(s, "fs_writes_per_second")

    def test_build_matrix_shape_and_order(self):
        rows = [summary(mean=vector(fs_writes=float(i))) for i in range(3)]
        got = build_matrix(["fs_writes", "execution_time"], rows)
        assert got.shape == (3, 2)
        assert list(got[:, 0]) == [0.0, 1.0, 2.0]


class TestFeatureSourceMetric:
    @pytest.mark.parametrize(
        "name,source",
        [
            ("heap_used", "heap_used"),
            ("heap_used_cv", "heap_used"),
            ("bytes_received_per_second", "bytes_received"),
            ("std_event_loop_lag", "std_event_loop_lag"),
            ("std_event_loop_lag_std", "std_event_loop_lag"),
            ("execution_time", "execution_time"),
        ],
    )
    def test_parse(self, name, source):
        assert feature_source_metric(name) == source

    def test_unknown(self):
        with pytest.raises(ValueError):
            feature_source_metric("made_up_cv")


class TestFeatureSet:
    def test_f0_is_all_means(self):
        fs = f0_feature_set()
        assert fs.feature_names == METRIC_NAMES

    def test_f0_rejects_other_lists(self):
        with pytest.raises(ValueError):
            FeatureSet(stage="F0", feature_names=("execution_time",))

    def test_late_stage_source_restriction(self):
        FeatureSet(stage="F3", feature_names=("heap_used", "execution_time"))
        with pytest.raises(ValueError, match="fs_reads"):
            FeatureSet(stage="F3", feature_names=("fs_reads",))
        with pytest.raises(ValueError):
            FeatureSet(stage="F4", feature_names=("heap_used", "resident_set_std"))

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            FeatureSet(stage="F1", feature_names=("heap_used", "heap_used"))

    def test_extract_matches_matrix(self):
        fs = FeatureSet(stage="F1", feature_names=("execution_time", "fs_writes"))
        s = summary()
        assert np.array_equal(fs.extract(s), fs.extract_matrix([s])[0])


class TestTargets:
    def _six(self, times):
        return [
            summary(mean=vector(execution_time=times[m]), function_id="fn-9", memory=m)
            for m in MEMORY_SIZES_MB
        ]

    def test_ratio_arithmetic(self):
        times = {m: 100.0 for m in MEMORY_SIZES_MB}
        times[512] = 50.0
        base_summary, target = make_targets(self._six(times), base=256)
        assert base_summary.memory == 256
        assert target.ratios[512] == 0.5

    def test_flat_curve_all_ones(self):
        times = {m: 80.0 for m in MEMORY_SIZES_MB}
        _, target = make_targets(self._six(times), base=256)
        assert all(r == 1.0 for r in target.ratios.values())

    def test_cpu_bound_profile_halves(self):
        profile = FunctionProfile(
            "fn-cpu", (SegmentSpec("cpu_bound", 100.0),), 0.0, 3
        )
        dataset = generate_dataset([profile], WorkloadSpec(request_rate=1, duration=5))
        _, target = make_targets(dataset, base=128)
        assert target.ratios[256] == 0.5

    def test_missing_size_rejected(self):
        rows = self._six({m: 100.0 for m in MEMORY_SIZES_MB})[:-1]
        with pytest.raises(ValueError, match="missing"):
            make_targets(rows, base=256)

    def test_duplicate_size_rejected(self):
        rows = self._six({m: 100.0 for m in MEMORY_SIZES_MB})
        rows[0] = rows[1]
        with pytest.raises(ValueError, match="duplicate"):
            make_targets(rows, base=256)

    def test_mixed_functions_rejected(self):
        rows = self._six({m: 100.0 for m in MEMORY_SIZES_MB})
        rows[2] = summary(function_id="other", memory=rows[2].memory)
        with pytest.raises(ValueError, match="one function"):
            make_targets(rows, base=256)

    def test_target_vector_validation(self):
        good = {m: 1.0 for m in MEMORY_SIZES_MB if m != 256}
        TargetVector(base_memory=256, ratios=good)
        with pytest.raises(ValueError):
            TargetVector(base_memory=256, ratios={**good, 256: 1.0})
        with pytest.raises(ValueError):
            TargetVector(base_memory=256, ratios={**good, 512: 0.0})

    def test_target_matrix_ordering(self):
        ratios = {m: float(i) for i, m in enumerate(MEMORY_SIZES_MB) if m != 128}
        ratios = {m: r + 1.0 for m, r in ratios.items()}
        t = TargetVector(base_memory=128, ratios=ratios)
        assert t.target_sizes == (256, 512, 1024, 2048, 3008)
        assert np.array_equal(target_matrix([t])[0], t.as_array())

    def test_pair_dataset_keeps_first_appearance_order(self):
        profiles = generate_profiles(3, 8, noise_cv=0.0)
        dataset = generate_dataset(profiles, WorkloadSpec(request_rate=1, duration=5))
        inputs, targets = pair_dataset(dataset, base=256)
        assert [s.function_id for s in inputs] == [p.function_id for p in profiles]
        assert all(s.memory == 256 for s in inputs)
        assert len(targets) == 3


class TestDerivedNames:
    def test_relative_append(self):
        names, values = derive_relative_features(
            ["execution_time", "vol_context_switches"],
            np.array([1000.0, 300.0]),
            execution_time_ms=1000.0,
        )
        assert names == [
            "execution_time",
            "vol_context_switches",
            "vol_context_switches_per_second",
        ]
        assert values[-1] == 300.0

    def test_zero_metric_zero_rate(self):
        names, values = derive_relative_features(
            ["fs_reads"], np.array([0.0]), execution_time_ms=250.0
        )
        assert values[-1] == 0.0

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ValueError):
            derive_relative_features(["fs_reads"], np.array([1.0]), 0.0)

    def test_relative_name_list_matches(self):
        names = relative_feature_names(["execution_time", "fs_writes"])
        assert names == ["execution_time", "fs_writes", "fs_writes_per_second"]

    def test_dispersion_names_dedupe_sources(self):
        names = dispersion_feature_names(
            ["heap_used", "heap_used_per_second", "execution_time"]
        )
        assert names == [
            "heap_used",
            "heap_used_per_second",
            "execution_time",
            "heap_used_std",
            "heap_used_cv",
            "execution_time_std",
            "execution_time_cv",
        ]

    def test_add_dispersion_builds_matrix(self):
        rows = [summary(), summary(function_id="fn-1")]
        names, matrix = add_dispersion_features(["heap_used"], rows)
        assert names == ["heap_used", "heap_used_std", "heap_used_cv"]
        assert matrix.shape == (2, 3)


def linear_trainer():
    return LinearRegression()


class TestForwardSelection:
    def _dataset(self, seed=0, n=120):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 10))
        y = np.column_stack(
            [
                3.0 * X[:, 2] - 2.0 * X[:, 7] + 5.0,
                1.0 * X[:, 2] + 1.0 * X[:, 7] + 10.0,
            ]
        )
        return X, y

    def test_relevant_pair_found_first(self):
        X, y = self._dataset()
        names = [f"c{i}" for i in range(10)]
        trace = sequential_forward_selection(names, X, y, linear_trainer, budget=4)
        assert set(trace.chosen_features[:2]) == {"c2", "c7"}
        assert trace.chosen_length == 2

    def test_budget_one(self):
        X, y = self._dataset()
        trace = sequential_forward_selection(
            [f"c{i}" for i in range(10)], X, y, linear_trainer, budget=1
        )
        assert len(trace.steps) == 1
        assert trace.chosen_length == 1

    def test_duplicate_column_never_helps(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(80, 1))
        X = np.hstack([X, X.copy()])
        y = (2.0 * X[:, 0] + 3.0).reshape(-1, 1)
        trace = sequential_forward_selection(
            ["orig", "copy"], X, y, linear_trainer, budget=2
        )
        assert trace.chosen_length == 1
        assert trace.chosen_features == ("orig",)

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            sequential_forward_selection([], np.zeros((5, 0)), np.zeros(5), linear_trainer, 1)

    def test_budget_bounds(self):
        X, y = self._dataset()
        with pytest.raises(ValueError):
            sequential_forward_selection(
                [f"c{i}" for i in range(10)], X, y, linear_trainer, budget=11
            )

    def test_deterministic(self):
        X, y = self._dataset()
        names = [f"c{i}" for i in range(10)]
        a = sequential_forward_selection(names, X, y, linear_trainer, budget=3, seed=5)
        b = sequential_forward_selection(names, X, y, linear_trainer, budget=3, seed=5)
        assert a == b

    def test_worker_count_invariant(self):
        X, y = self._dataset(seed=9)
        names = [f"c{i}" for i in range(10)]
        serial = sequential_forward_selection(names, X, y, linear_trainer, budget=2)
        parallel = sequential_forward_selection(
            names, X, y, linear_trainer, budget=2, workers=3
        )
        assert serial == parallel

    def test_csv_layout(self):
        X, y = self._dataset()
        trace = sequential_forward_selection(
            [f"c{i}" for i in range(10)], X, y, linear_trainer, budget=2
        )
        buf = io.StringIO()
        trace.write_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "round,feature,validation_mape"
        assert len(lines) == 3

    def test_trace_validation(self):
        with pytest.raises(ValueError):
            SelectionTrace(steps=(), chosen_length=0)
        with pytest.raises(ValueError):
            SelectionTrace(steps=(("a", 1.0),), chosen_length=2)


class TestSelectFeaturesPipeline:
    def test_stages_consistent_on_simulated_data(self):
        profiles = generate_profiles(40, master_seed=6, noise_cv=0.0)
        dataset = generate_dataset(profiles, WorkloadSpec(request_rate=1, duration=5))
        inputs, targets = pair_dataset(dataset, base=256)
        result = select_features(
            inputs, targets, linear_trainer, f1_budget=5, f3_budget=5, cv=3, seed=1
        )
        stages = result.stages
        assert set(stages) == {"F0", "F1", "F2", "F3", "F4"}
        assert set(stages["F1"].feature_names) <= set(stages["F0"].feature_names)
        assert set(stages["F2"].feature_names) >= set(stages["F1"].feature_names)
        allowed = set(BASE_SOURCE_METRICS) | {"execution_time"}
        for stage in ("F3", "F4"):
            for name in stages[stage].feature_names:
                assert feature_source_metric(name) in allowed
        assert set(stages["F4"].feature_names) >= set(stages["F3"].feature_names)
        assert result.f1_trace.chosen_features == stages["F1"].feature_names
