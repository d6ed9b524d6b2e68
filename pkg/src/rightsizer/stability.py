"""Measurement-duration stability analysis.

Decides, per metric, how long a measurement must run before its sample
distribution stops differing significantly from the full-run distribution.
Built on a two-sample Mann-Whitney U test plus Cliff's delta effect sizes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from rightsizer.domain import METRIC_NAMES

#: Below this pooled sample size the exact permutation p-value is computed;
#: above it the tie-corrected normal approximation is used.
EXACT_TEST_MAX_N = 20

#: Cliff's delta magnitude bands (Romano's conventional thresholds).
CLIFFS_DELTA_BANDS: tuple[tuple[float, str], ...] = (
    (0.147, "negligible"),
    (0.33, "small"),
    (0.474, "medium"),
)


def _as_clean_array(sample: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(sample, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-d sample")
    return arr


def _u_statistics(pooled_ranks: np.ndarray, n_a: int, n_b: int) -> tuple[float, float]:
    """U statistics of both samples from midranks of the pooled data."""
    rank_sum_a = float(pooled_ranks[:n_a].sum())
    u_a = rank_sum_a - n_a * (n_a + 1) / 2.0
    u_b = n_a * n_b - u_a
    return u_a, u_b


def _exact_two_sided_p(pooled_ranks: np.ndarray, n_a: int, u_observed: float) -> float:
    """Exact p by enumerating every assignment of n_a pooled ranks to sample A.

    Two-sided: probability of a U at least as far from the null mean
    n_a*n_b/2 as the observed one.  Midranks handle ties, so the null
    distribution is over rank-set choices, not raw permutations.
    """
    n = pooled_ranks.size
    n_b = n - n_a
    mean_u = n_a * n_b / 2.0
    observed_dev = abs(u_observed - mean_u)
    positions = np.array(list(combinations(range(n), n_a)))
    u_all = pooled_ranks[positions].sum(axis=1) - n_a * (n_a + 1) / 2.0
    # small tolerance: midrank sums are exact multiples of 0.5
    extreme = int((np.abs(u_all - mean_u) >= observed_dev - 1e-9).sum())
    return extreme / positions.shape[0]


def _normal_two_sided_p(
    pooled_ranks: np.ndarray, n_a: int, n_b: int, u_min: float
) -> float:
    """Tie-corrected normal approximation with continuity correction."""
    n = n_a + n_b
    _, tie_counts = np.unique(pooled_ranks, return_counts=True)
    tie_term = float((tie_counts**3 - tie_counts).sum())
    variance = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        return 1.0  # all observations tied
    mean_u = n_a * n_b / 2.0
    # u_min <= mean_u by construction; the 0.5 shifts toward the mean
    z = (u_min - mean_u + 0.5) / math.sqrt(variance)
    return min(1.0, math.erfc(-z / math.sqrt(2.0)))


def mann_whitney_u(
    sample_a: Sequence[float], sample_b: Sequence[float]
) -> tuple[float, float]:
    """Two-sample Mann-Whitney U test with midrank tie handling.

    Returns ``(u, p)`` where ``u = min(U_a, U_b)`` and ``p`` is the two-sided
    p-value: exact by rank-permutation enumeration when the pooled size is at
    most ``EXACT_TEST_MAX_N``, otherwise a tie-corrected normal approximation
    with continuity correction.
    """
    a = _as_clean_array(sample_a, "sample_a")
    b = _as_clean_array(sample_b, "sample_b")
    n_a, n_b = a.size, b.size
    pooled_ranks = rankdata(np.concatenate([a, b]))
    u_a, u_b = _u_statistics(pooled_ranks, n_a, n_b)
    u_min = min(u_a, u_b)
    if n_a + n_b <= EXACT_TEST_MAX_N:
        p = _exact_two_sided_p(pooled_ranks, n_a, u_a)
    else:
        p = _normal_two_sided_p(pooled_ranks, n_a, n_b, u_min)
    return u_min, p


def cliffs_delta(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Cliff's delta: (#(a > b) - #(a < b)) / (n_a * n_b), in [-1, 1].

    Computed via binary search against the sorted second sample, so large
    samples stay O((n_a + n_b) log n_b) instead of quadratic.
    """
    a = _as_clean_array(sample_a, "sample_a")
    b = _as_clean_array(sample_b, "sample_b")
    b_sorted = np.sort(b)
    greater = np.searchsorted(b_sorted, a, side="left")  # #b < a, per a
    less = b.size - np.searchsorted(b_sorted, a, side="right")  # #b > a, per a
    return float((greater.sum() - less.sum()) / (a.size * b.size))


def cliffs_delta_magnitude(delta: float) -> str:
    """Conventional magnitude band for a Cliff's delta value."""
    magnitude = abs(delta)
    for threshold, label in CLIFFS_DELTA_BANDS:
        if magnitude < threshold:
            return label
    return "large"


@dataclass(frozen=True)
class FunctionTrace:
    """Time-stamped per-request metric samples for one measured function.

    ``timestamps`` are seconds since measurement start, ascending;
    ``values`` has one row per request with columns in ``METRIC_NAMES`` order.
    """

    function_id: str
    timestamps: np.ndarray
    values: np.ndarray
    duration: float

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(METRIC_NAMES):
            raise ValueError(
                f"values must be (n, {len(METRIC_NAMES)}), got {self.values.shape}"
            )
        if self.timestamps.shape[0] != self.values.shape[0]:
            raise ValueError("timestamps and values must have equal length")


@dataclass(frozen=True)
class StabilityReport:
    """Instability counts per (metric, prefix minutes) plus the recommendation.

    ``unstable_counts[i, k-1]`` is the number of functions whose first ``k``
    minutes of metric ``METRIC_NAMES[i]`` differ significantly from the full
    run.  Counts need not be monotone in ``k``.
    """

    minutes: tuple[int, ...]
    unstable_counts: np.ndarray  # shape (len(METRIC_NAMES), len(minutes))
    function_count: int
    alpha: float
    recommended_minutes: int

    def count(self, metric: str, minute: int) -> int:
        return int(
            self.unstable_counts[METRIC_NAMES.index(metric), self.minutes.index(minute)]
        )

    def write_csv(self, stream: IO[str]) -> None:
        writer = csv.writer(stream)
        writer.writerow(["metric", "minutes", "unstable_count"])
        for i, metric in enumerate(METRIC_NAMES):
            for j, minute in enumerate(self.minutes):
                writer.writerow([metric, minute, int(self.unstable_counts[i, j])])


def stability_analysis(
    traces: Iterable[FunctionTrace],
    full_duration: int = 15,
    alpha: float = 0.05,
) -> StabilityReport:
    """Flag, per metric and prefix length, functions whose prefix sample
    differs from the full-run sample (Mann-Whitney U, p < alpha).

    The recommended duration is the smallest prefix length at which no
    metric is unstable for any function.  Traces are consumed one at a time,
    so memory stays bounded by a single trace.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    if full_duration < 1:
        raise ValueError("full_duration must be >= 1")
    minutes = tuple(range(1, full_duration + 1))
    counts = np.zeros((len(METRIC_NAMES), len(minutes)), dtype=int)
    function_count = 0
    for trace in traces:
        if trace.duration < full_duration * 60:
            raise ValueError(
                f"trace {trace.function_id} covers {trace.duration} s, "
                f"shorter than the requested {full_duration} minutes"
            )
        function_count += 1
        cut_indices = np.searchsorted(trace.timestamps, [m * 60.0 for m in minutes])
        for col in range(len(METRIC_NAMES)):
            full_sample = trace.values[:, col]
            for j, cut in enumerate(cut_indices):
                if cut == 0:
                    continue  # no samples yet: nothing to test
                _, p = mann_whitney_u(full_sample[:cut], full_sample)
                if p < alpha:
                    counts[col, j] += 1
    stable = [m for j, m in enumerate(minutes) if not counts[:, j].any()]
    recommended = stable[0] if stable else full_duration
    return StabilityReport(
        minutes=minutes,
        unstable_counts=counts,
        function_count=function_count,
        alpha=alpha,
        recommended_minutes=recommended,
    )
