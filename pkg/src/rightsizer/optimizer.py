"""Memory-size selection by cost/performance scalarization.

Each size gets two normalized scores (cost and time relative to the best
achievable on the curve, both with minimum 1) blended by a tradeoff weight:
S_total = t * S_cost + (1 - t) * S_perf.  The recommendation is the argmin,
ties going to the smaller memory size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from typing import IO

from rightsizer.domain import (
    MEMORY_SIZES_MB,
    ExecutionCurve,
    MeasurementSummary,
    PricingModel,
    execution_cost,
    validate_memory_size,
)
from rightsizer.model import RegressionModel, predict

#: Weight recommended for general use: a cost increase is accepted only when
#: it buys a disproportionally larger execution-time reduction.
DEFAULT_TRADEOFF = 0.75


@dataclass(frozen=True)
class TradeoffParameter:
    """Scalarization weight: 1 optimizes cost alone, 0 time alone."""

    t: float = DEFAULT_TRADEOFF

    def __post_init__(self) -> None:
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"tradeoff must lie in [0, 1], got {self.t}")


@dataclass(frozen=True)
class SizeScore:
    memory_mb: int
    time_ms: float
    cost: Decimal
    s_cost: float
    s_perf: float
    s_total: float


@dataclass(frozen=True)
class SizingRecommendation:
    """Scores for all six sizes plus the chosen one and the full ranking."""

    tradeoff: float
    scores: tuple[SizeScore, ...]
    chosen_memory_mb: int
    ranking: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(s.memory_mb for s in self.scores)
        if sizes != MEMORY_SIZES_MB:
            raise ValueError("scores must cover all memory sizes ascending")
        if min(s.s_cost for s in self.scores) != 1.0:
            raise ValueError("minimum S_cost must be exactly 1")
        if min(s.s_perf for s in self.scores) != 1.0:
            raise ValueError("minimum S_perf must be exactly 1")
        if sorted(self.ranking) != sorted(sizes):
            raise ValueError("ranking must be a permutation of the sizes")
        if self.chosen_memory_mb != self.ranking[0]:
            raise ValueError("chosen size must head the ranking")

    def score_for(self, memory_mb: int) -> SizeScore:
        validate_memory_size(memory_mb)
        return next(s for s in self.scores if s.memory_mb == memory_mb)

    def rank_of(self, memory_mb: int) -> int:
        validate_memory_size(memory_mb)
        return self.ranking.index(memory_mb) + 1

    def to_json(self) -> str:
        payload = {
            "tradeoff": self.tradeoff,
            "chosen_memory_mb": self.chosen_memory_mb,
            "ranking": list(self.ranking),
            "scores": {
                str(s.memory_mb): {
                    "time_ms": s.time_ms,
                    "cost_usd": str(s.cost),
                    "s_cost": s.s_cost,
                    "s_perf": s.s_perf,
                    "s_total": s.s_total,
                }
                for s in self.scores
            },
        }
        return json.dumps(payload, separators=(",", ":"))

    def write_table(self, stream: IO[str]) -> None:
        stream.write(
            f"{'memory_mb':>9}  {'time_ms':>12}  {'cost_usd':>15}  "
            f"{'s_cost':>8}  {'s_perf':>8}  {'s_total':>8}  rank\n"
        )
        for s in self.scores:
            marker = "  <- chosen" if s.memory_mb == self.chosen_memory_mb else ""
            stream.write(
                f"{s.memory_mb:>9}  {s.time_ms:>12.3f}  {s.cost:>15.13f}  "
                f"{s.s_cost:>8.4f}  {s.s_perf:>8.4f}  {s.s_total:>8.4f}  "
                f"{self.rank_of(s.memory_mb):>4}{marker}\n"
            )


def score(
    curve: ExecutionCurve, pricing: PricingModel, tradeoff: TradeoffParameter
) -> SizingRecommendation:
    """Score every memory size on the curve and pick the scalarized optimum."""
    times = curve.times_ms
    costs = {m: execution_cost(times[m], m, pricing) for m in MEMORY_SIZES_MB}
    min_cost = min(costs.values())
    min_time = min(times.values())
    scores = []
    for m in MEMORY_SIZES_MB:
        # an all-zero pricing model makes every size equally free
        s_cost = float(costs[m] / min_cost) if min_cost > 0 else 1.0
        s_perf = times[m] / min_time
        s_total = tradeoff.t * s_cost + (1.0 - tradeoff.t) * s_perf
        scores.append(
            SizeScore(
                memory_mb=m, time_ms=times[m], cost=costs[m],
                s_cost=s_cost, s_perf=s_perf, s_total=s_total,
            )
        )
    ranking = tuple(s.memory_mb for s in sorted(scores, key=lambda s: (s.s_total, s.memory_mb)))
    return SizingRecommendation(
        tradeoff=tradeoff.t,
        scores=tuple(scores),
        chosen_memory_mb=ranking[0],
        ranking=ranking,
    )


def optimize_from_monitoring(
    summary: MeasurementSummary,
    model: RegressionModel,
    pricing: PricingModel,
    tradeoff: TradeoffParameter,
) -> SizingRecommendation:
    """Predict the full curve from one monitored size, then score it.

    The monitored size keeps its observed execution time; only the other
    five are model predictions.
    """
    return score(predict(model, summary), pricing, tradeoff)


def rank_quality(
    recommended: SizingRecommendation,
    ground_truth: ExecutionCurve,
    pricing: PricingModel,
    tradeoff: TradeoffParameter,
) -> int:
    """Position (1..6) of the recommended size in the true S_total ordering."""
    truth = score(ground_truth, pricing, tradeoff)
    return truth.rank_of(recommended.chosen_memory_mb)


def benefit(
    old_size: int,
    new_size: int,
    ground_truth: ExecutionCurve,
    pricing: PricingModel,
) -> tuple[float, float]:
    """(cost_delta_pct, speedup_pct) of moving old -> new on the true curve.

    Positive numbers are improvements: speedup 50 means the function runs in
    half the time, cost_delta 10 means it got 10% cheaper.
    """
    validate_memory_size(old_size)
    validate_memory_size(new_size)
    times = ground_truth.times_ms
    old_cost = execution_cost(times[old_size], old_size, pricing)
    new_cost = execution_cost(times[new_size], new_size, pricing)
    speedup_pct = (1.0 - times[new_size] / times[old_size]) * 100.0
    if old_cost > 0:
        cost_delta_pct = float((1 - new_cost / old_cost) * 100)
    else:
        cost_delta_pct = 0.0
    return cost_delta_pct, speedup_pct
