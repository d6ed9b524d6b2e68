"""Feature engineering over measurement summaries.

Stages build on each other: F0 is all 25 mean metrics, F1 a forward-selected
subset, F2 adds per-second rates, F3 re-selects restricted to features whose
source metric is one of the six cheap-to-monitor base metrics (plus execution
time), and F4 augments F3 with dispersion statistics of those sources.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import IO, Callable, Mapping, Sequence

import numpy as np
from sklearn.model_selection import KFold

from rightsizer.domain import (
    MEMORY_SIZES_MB,
    METRIC_NAMES,
    MeasurementSummary,
    validate_memory_size,
)

STAGES = ("F0", "F1", "F2", "F3", "F4")

#: The six base metrics every late-stage feature must be derived from.
#: Together with execution time they are what a lightweight monitoring
#: agent can collect in production.
BASE_SOURCE_METRICS: tuple[str, ...] = (
    "heap_used",
    "user_cpu_time",
    "system_cpu_time",
    "vol_context_switches",
    "fs_writes",
    "bytes_received",
)

_ALLOWED_LATE_SOURCES = frozenset(BASE_SOURCE_METRICS) | {"execution_time"}

_SUFFIXES = ("_per_second", "_std", "_cv")


def feature_source_metric(feature_name: str) -> str:
    """The raw metric a feature is computed from (strips derivation suffixes)."""
    for suffix in _SUFFIXES:
        if feature_name.endswith(suffix):
            candidate = feature_name[: -len(suffix)]
            if candidate in METRIC_NAMES:
                return candidate
    if feature_name in METRIC_NAMES:
        return feature_name
    raise ValueError(f"unknown feature name {feature_name!r}")


def _execution_seconds(summary: MeasurementSummary) -> float:
    milliseconds = summary.mean.execution_time
    if not milliseconds > 0:
        raise ValueError("mean execution time must be positive for rate features")
    return milliseconds / 1000.0


def feature_value(summary: MeasurementSummary, feature_name: str) -> float:
    """Evaluate one named feature on one measurement summary."""
    if feature_name.endswith("_per_second"):
        metric = feature_source_metric(feature_name)
        return getattr(summary.mean, metric) / _execution_seconds(summary)
    if feature_name.endswith("_std"):
        return getattr(summary.std, feature_source_metric(feature_name))
    if feature_name.endswith("_cv"):
        metric = feature_source_metric(feature_name)
        mean = getattr(summary.mean, metric)
        if mean == 0:
            return 0.0  # all-zero counters would otherwise poison the column
        return getattr(summary.std, metric) / mean
    if feature_name in METRIC_NAMES:
        return getattr(summary.mean, feature_name)
    raise ValueError(f"unknown feature name {feature_name!r}")


def build_matrix(
    feature_names: Sequence[str], summaries: Sequence[MeasurementSummary]
) -> np.ndarray:
    """Feature matrix with one row per summary, columns in given order."""
    return np.array(
        [[feature_value(s, name) for name in feature_names] for s in summaries],
        dtype=float,
    )


@dataclass(frozen=True)
class FeatureSet:
    """A named feature-engineering stage and its exact column list."""

    stage: str
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if not self.feature_names:
            raise ValueError("a feature set needs at least one feature")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("duplicate feature names")
        if self.stage == "F0" and self.feature_names != METRIC_NAMES:
            raise ValueError("F0 must contain exactly the 25 mean metrics")
        if self.stage in ("F3", "F4"):
            offending = [
                name
                for name in self.feature_names
                if feature_source_metric(name) not in _ALLOWED_LATE_SOURCES
            ]
            if offending:
                raise ValueError(
                    f"{self.stage} features must derive from the six base metrics "
                    f"plus execution time; offending: {offending}"
                )

    def extract(self, summary: MeasurementSummary) -> np.ndarray:
        return np.array(
            [feature_value(summary, name) for name in self.feature_names], dtype=float
        )

    def extract_matrix(self, summaries: Sequence[MeasurementSummary]) -> np.ndarray:
        return build_matrix(self.feature_names, summaries)


def f0_feature_set() -> FeatureSet:
    return FeatureSet(stage="F0", feature_names=METRIC_NAMES)


@dataclass(frozen=True)
class TargetVector:
    """Execution-time ratios target(m)/base for the five non-base sizes."""

    base_memory: int
    ratios: Mapping[int, float]

    def __post_init__(self) -> None:
        validate_memory_size(self.base_memory)
        ratios = {validate_memory_size(int(m)): float(r) for m, r in self.ratios.items()}
        expected = [m for m in MEMORY_SIZES_MB if m != self.base_memory]
        if sorted(ratios) != expected:
            raise ValueError(
                f"ratios must cover exactly the non-base sizes {expected}, got {sorted(ratios)}"
            )
        if any(r <= 0 for r in ratios.values()):
            raise ValueError("all ratios must be positive")
        object.__setattr__(self, "ratios", ratios)

    @property
    def target_sizes(self) -> tuple[int, ...]:
        return tuple(m for m in MEMORY_SIZES_MB if m != self.base_memory)

    def as_array(self) -> np.ndarray:
        return np.array([self.ratios[m] for m in self.target_sizes], dtype=float)


def make_targets(
    summaries_for_function: Sequence[MeasurementSummary], base: int
) -> tuple[MeasurementSummary, TargetVector]:
    """Split one function's six measurements into model input and targets.

    Returns the base-size summary (the feature source) and the five ratios
    of mean execution time at each other size to the base.
    """
    validate_memory_size(base)
    by_memory = {}
    for summary in summaries_for_function:
        if summary.memory in by_memory:
            raise ValueError(f"duplicate measurement at {summary.memory} MB")
        by_memory[summary.memory] = summary
    missing = [m for m in MEMORY_SIZES_MB if m not in by_memory]
    if missing:
        raise ValueError(f"missing measurements at sizes {missing}")
    if len({s.function_id for s in summaries_for_function}) != 1:
        raise ValueError("summaries must all belong to one function")
    base_summary = by_memory[base]
    base_time = base_summary.mean.execution_time
    if not base_time > 0:
        raise ValueError("base execution time must be positive")
    ratios = {
        m: by_memory[m].mean.execution_time / base_time
        for m in MEMORY_SIZES_MB
        if m != base
    }
    return base_summary, TargetVector(base_memory=base, ratios=ratios)


def pair_dataset(
    summaries: Sequence[MeasurementSummary], base: int
) -> tuple[list[MeasurementSummary], list[TargetVector]]:
    """Group a flat dataset by function and derive (input, target) pairs.

    Function order follows first appearance in the dataset, so a dataset
    file maps to matrices deterministically.
    """
    by_function: dict[str, list[MeasurementSummary]] = {}
    order: list[str] = []
    for summary in summaries:
        if summary.function_id not in by_function:
            order.append(summary.function_id)
            by_function[summary.function_id] = []
        by_function[summary.function_id].append(summary)
    inputs, targets = [], []
    for function_id in order:
        base_summary, target = make_targets(by_function[function_id], base)
        inputs.append(base_summary)
        targets.append(target)
    return inputs, targets


def target_matrix(targets: Sequence[TargetVector]) -> np.ndarray:
    return np.array([t.as_array() for t in targets], dtype=float)


def derive_relative_features(
    feature_names: Sequence[str], values: np.ndarray, execution_time_ms: float
) -> tuple[list[str], np.ndarray]:
    """Append per-second variants of plain metric features (F1 -> F2).

    Execution time itself gets no rate variant (it would be the constant
    1000 ms/s); already-derived features are passed through unchanged.
    """
    if not execution_time_ms > 0:
        raise ValueError("execution_time_ms must be positive")
    values = np.asarray(values, dtype=float)
    seconds = execution_time_ms / 1000.0
    names = list(feature_names)
    out_names = list(names)
    out_values = list(values)
    for name, value in zip(names, values):
        if name in METRIC_NAMES and name != "execution_time":
            out_names.append(f"{name}_per_second")
            out_values.append(value / seconds)
    return out_names, np.array(out_values, dtype=float)


def relative_feature_names(feature_names: Sequence[str]) -> list[str]:
    """The F2 name list for a given F1 name list."""
    extra = [
        f"{name}_per_second"
        for name in feature_names
        if name in METRIC_NAMES and name != "execution_time"
    ]
    return list(feature_names) + extra


def add_dispersion_features(
    feature_names: Sequence[str], summaries: Sequence[MeasurementSummary]
) -> tuple[list[str], np.ndarray]:
    """Append std and CV of each feature's source metric (F3 -> F4).

    Sources are deduplicated: a metric appearing both plain and as a
    per-second rate contributes one std and one CV column.
    """
    names = dispersion_feature_names(feature_names)
    return names, build_matrix(names, summaries)


def dispersion_feature_names(feature_names: Sequence[str]) -> list[str]:
    names = list(feature_names)
    seen_sources = []
    for name in feature_names:
        source = feature_source_metric(name)
        if source not in seen_sources:
            seen_sources.append(source)
    for source in seen_sources:
        for suffix in ("_std", "_cv"):
            derived = f"{source}{suffix}"
            if derived not in names:
                names.append(derived)
    return names


@dataclass(frozen=True)
class SelectionTrace:
    """Greedy forward-selection audit trail: feature added per round plus the
    cross-validated error after adding it, and the chosen cut point."""

    steps: tuple[tuple[str, float], ...]
    chosen_length: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(tuple(s) for s in self.steps))
        if not self.steps:
            raise ValueError("a selection trace needs at least one step")
        if not 1 <= self.chosen_length <= len(self.steps):
            raise ValueError("chosen_length out of range")

    @property
    def chosen_features(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.steps[: self.chosen_length])

    def write_csv(self, stream: IO[str]) -> None:
        writer = csv.writer(stream)
        writer.writerow(["round", "feature", "validation_mape"])
        for i, (name, error) in enumerate(self.steps, start=1):
            writer.writerow([i, name, error])


def _pooled_mape(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    denom = np.maximum(np.abs(y_true), 1e-8)
    return float(np.mean(np.abs(y_pred - y_true) / denom))


def _candidate_error(args) -> float:
    X, y, chosen, candidate, trainer, cv, seed = args
    columns = chosen + [candidate]
    fold_errors = []
    splitter = KFold(n_splits=cv, shuffle=True, random_state=seed)
    for train_idx, val_idx in splitter.split(X):
        model = trainer()
        model.fit(X[np.ix_(train_idx, columns)], y[train_idx])
        pred = model.predict(X[np.ix_(val_idx, columns)])
        fold_errors.append(_pooled_mape(y[val_idx], np.asarray(pred)))
    return float(np.mean(fold_errors))


def sequential_forward_selection(
    candidates: Sequence[str],
    X: np.ndarray,
    y: np.ndarray,
    trainer: Callable[[], object],
    budget: int,
    cv: int = 3,
    seed: int = 0,
    workers: int = 1,
) -> SelectionTrace:
    """Greedy forward selection by cross-validated MAPE.

    Each round adds the candidate whose inclusion minimizes the mean
    validation MAPE of a freshly trained model; `trainer` must return a new
    unfitted estimator with fit/predict.  The chosen prefix is the error
    argmin over the whole trace, ties resolved toward fewer features.
    Candidate evaluations within a round may run in parallel; results are
    reduced in candidate order, so the trace is worker-count independent.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidates must be nonempty")
    if not 1 <= budget <= len(candidates):
        raise ValueError(f"budget must be in [1, {len(candidates)}], got {budget}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] != len(candidates):
        raise ValueError("X must have one column per candidate")
    chosen: list[int] = []
    remaining = list(range(len(candidates)))
    steps: list[tuple[str, float]] = []
    for _ in range(budget):
        jobs = [(X, y, chosen, c, trainer, cv, seed) for c in remaining]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                errors = list(pool.map(_candidate_error, jobs))
        else:
            errors = [_candidate_error(job) for job in jobs]
        best = int(np.argmin(errors))  # ties: earliest candidate
        chosen.append(remaining[best])
        steps.append((candidates[remaining[best]], float(errors[best])))
        del remaining[best]
    errors_along_trace = np.array([error for _, error in steps])
    # argmin with ties toward the shorter prefix; improvements inside float
    # noise (a redundant duplicate column) do not count as improvements
    cutoff = errors_along_trace.min() * (1 + 1e-9) + 1e-15
    chosen_length = int(np.argmax(errors_along_trace <= cutoff)) + 1
    return SelectionTrace(steps=tuple(steps), chosen_length=chosen_length)


@dataclass(frozen=True)
class FeaturePipelineResult:
    """All five stages plus the two selection audit trails."""

    stages: Mapping[str, FeatureSet]
    f1_trace: SelectionTrace
    f3_trace: SelectionTrace


def select_features(
    summaries: Sequence[MeasurementSummary],
    targets: Sequence[TargetVector],
    trainer: Callable[[], object],
    f1_budget: int = 13,
    f3_budget: int = 11,
    cv: int = 3,
    seed: int = 0,
    workers: int = 1,
) -> FeaturePipelineResult:
    """Run the full F0 -> F4 pipeline on a prepared dataset."""
    if len(summaries) != len(targets):
        raise ValueError("summaries and targets must align")
    y = target_matrix(targets)
    f0 = f0_feature_set()
    X0 = f0.extract_matrix(summaries)
    f1_trace = sequential_forward_selection(
        f0.feature_names, X0, y, trainer,
        budget=min(f1_budget, len(f0.feature_names)),
        cv=cv, seed=seed, workers=workers,
    )
    f1 = FeatureSet(stage="F1", feature_names=f1_trace.chosen_features)
    f2_names = relative_feature_names(f1.feature_names)
    f2 = FeatureSet(stage="F2", feature_names=tuple(f2_names))
    # the production-monitoring constraint: late stages may only use
    # features derived from the six base metrics plus execution time
    f3_candidates = [
        name
        for name in f2.feature_names
        if feature_source_metric(name) in _ALLOWED_LATE_SOURCES
    ]
    if not f3_candidates:
        raise ValueError("no F2 feature derives from the allowed base metrics")
    X2 = build_matrix(f3_candidates, summaries)
    f3_trace = sequential_forward_selection(
        f3_candidates, X2, y, trainer,
        budget=min(f3_budget, len(f3_candidates)),
        cv=cv, seed=seed, workers=workers,
    )
    f3 = FeatureSet(stage="F3", feature_names=f3_trace.chosen_features)
    f4_names = dispersion_feature_names(f3.feature_names)
    f4 = FeatureSet(stage="F4", feature_names=tuple(f4_names))
    return FeaturePipelineResult(
        stages={"F0": f0, "F1": f1, "F2": f2, "F3": f3, "F4": f4},
        f1_trace=f1_trace,
        f3_trace=f3_trace,
    )
