"""Core vocabulary shared by all modules: memory sizes, pricing, metric
vectors, and aggregated measurement records.

All types here are immutable values and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from decimal import Decimal, localcontext
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

#: The six discrete memory allocation levels (MB), smallest to largest.
MEMORY_SIZES_MB: tuple[int, ...] = (128, 256, 512, 1024, 2048, 3008)

#: AWS Lambda list prices (USD): per consumed GB-second and per invocation.
AWS_PRICE_PER_GB_SECOND = Decimal("0.00001667")
AWS_PRICE_PER_INVOCATION = Decimal("0.0000002")

#: Megabytes per gigabyte for billing arithmetic.  1024 makes 512 MB exactly
#: 0.5 GB and stays self-consistent for the odd 3008 MB tier.
MB_PER_GB = 1024


def validate_memory_size(megabytes: int) -> int:
    """Return ``megabytes`` if it is one of the supported sizes, else raise."""
    if megabytes not in MEMORY_SIZES_MB:
        raise ValueError(
            f"unsupported memory size {megabytes!r} MB; expected one of {MEMORY_SIZES_MB}"
        )
    return int(megabytes)


@dataclass(frozen=True)
class PricingModel:
    """Per-execution pricing: a GB-second rate plus a flat invocation charge.

    Prices are decimals, never binary floats: the invocation charge is
    2e-7 USD and must survive arithmetic unrounded.
    """

    price_per_gb_second: Decimal = AWS_PRICE_PER_GB_SECOND
    price_per_invocation: Decimal = AWS_PRICE_PER_INVOCATION

    def __post_init__(self) -> None:
        for name in ("price_per_gb_second", "price_per_invocation"):
            value = getattr(self, name)
            if not isinstance(value, Decimal):
                object.__setattr__(self, name, Decimal(str(value)))
        if self.price_per_gb_second < 0 or self.price_per_invocation < 0:
            raise ValueError("prices must be nonnegative")


#: Default AWS pricing.
AWS_PRICING = PricingModel()


def execution_cost(
    duration_ms: float, memory_mb: int, pricing: PricingModel = AWS_PRICING
) -> Decimal:
    """Cost of one execution: seconds x allocated GB x rate, plus the flat charge.

    Carried out in decimal arithmetic (28 significant digits) so results are
    exact to well beyond 12 significant digits.
    """
    if not duration_ms > 0:
        raise ValueError(f"duration must be positive, got {duration_ms!r} ms")
    validate_memory_size(memory_mb)
    with localcontext() as ctx:
        ctx.prec = 28
        seconds = Decimal(str(duration_ms)) / Decimal(1000)
        gigabytes = Decimal(memory_mb) / Decimal(MB_PER_GB)
        return seconds * gigabytes * pricing.price_per_gb_second + pricing.price_per_invocation


#: Resource-consumption metrics collected per execution, in canonical order.
#: Times are ms, sizes bytes, the rest event counts.
METRIC_NAMES: tuple[str, ...] = (
    "execution_time",
    "user_cpu_time",
    "system_cpu_time",
    "vol_context_switches",
    "invol_context_switches",
    "fs_reads",
    "fs_writes",
    "resident_set",
    "max_resident_set",
    "total_heap",
    "heap_used",
    "physical_heap",
    "available_heap",
    "heap_limit",
    "allocated_memory",
    "external_memory",
    "bytecode_metadata",
    "bytes_received",
    "bytes_transmitted",
    "packages_received",
    "packages_transmitted",
    "min_event_loop_lag",
    "max_event_loop_lag",
    "mean_event_loop_lag",
    "std_event_loop_lag",
)


@dataclass(frozen=True)
class MetricVector:
    """One value per collected metric.

    Invariants: every field is nonnegative, event-loop lags satisfy
    min <= mean <= max, and heap_used <= total_heap.
    """

    execution_time: float
    user_cpu_time: float
    system_cpu_time: float
    vol_context_switches: float
    invol_context_switches: float
    fs_reads: float
    fs_writes: float
    resident_set: float
    max_resident_set: float
    total_heap: float
    heap_used: float
    physical_heap: float
    available_heap: float
    heap_limit: float
    allocated_memory: float
    external_memory: float
    bytecode_metadata: float
    bytes_received: float
    bytes_transmitted: float
    packages_received: float
    packages_transmitted: float
    min_event_loop_lag: float
    max_event_loop_lag: float
    mean_event_loop_lag: float
    std_event_loop_lag: float

    def __post_init__(self) -> None:
        for name in METRIC_NAMES:
            if getattr(self, name) < 0:
                raise ValueError(f"metric {name} must be nonnegative, got {getattr(self, name)!r}")
        if not (
            self.min_event_loop_lag <= self.mean_event_loop_lag <= self.max_event_loop_lag
        ):
            raise ValueError("event loop lags must satisfy min <= mean <= max")
        if self.heap_used > self.total_heap:
            raise ValueError("heap_used must not exceed total_heap")

    def as_array(self) -> np.ndarray:
        """Values as a float array in ``METRIC_NAMES`` order."""
        return np.array([getattr(self, name) for name in METRIC_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "MetricVector":
        if len(values) != len(METRIC_NAMES):
            raise ValueError(f"expected {len(METRIC_NAMES)} metric values, got {len(values)}")
        return cls(**{name: float(v) for name, v in zip(METRIC_NAMES, values)})

    def to_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "MetricVector":
        missing = [name for name in METRIC_NAMES if name not in data]
        if missing:
            raise ValueError(f"metric vector is missing fields: {missing}")
        return cls(**{name: float(data[name]) for name in METRIC_NAMES})


@dataclass(frozen=True)
class MeasurementSummary:
    """Aggregated statistics for one (function, memory size) measurement.

    ``mean`` and ``std`` are per-metric sample mean and population standard
    deviation over all requests of the measurement; raw samples are not kept
    at this boundary.
    """

    function_id: str
    memory: int
    sample_count: int
    mean: MetricVector
    std: MetricVector
    request_rate: float
    duration: float

    def __post_init__(self) -> None:
        validate_memory_size(self.memory)
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.sample_count == 1 and any(
            getattr(self.std, name) != 0 for name in METRIC_NAMES
        ):
            raise ValueError("std must be all zero when sample_count is 1")

    def to_json(self) -> str:
        record = {
            "function_id": self.function_id,
            "memory": self.memory,
            "sample_count": self.sample_count,
            "mean": self.mean.to_dict(),
            "std": self.std.to_dict(),
            "request_rate": self.request_rate,
            "duration": self.duration,
        }
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "MeasurementSummary":
        data = json.loads(line)
        return cls(
            function_id=str(data["function_id"]),
            memory=int(data["memory"]),
            sample_count=int(data["sample_count"]),
            mean=MetricVector.from_dict(data["mean"]),
            std=MetricVector.from_dict(data["std"]),
            request_rate=float(data["request_rate"]),
            duration=float(data["duration"]),
        )


def write_summaries(summaries: Iterable[MeasurementSummary], stream: IO[str]) -> int:
    """Write summaries as JSONL, one object per line.  Returns the row count."""
    count = 0
    for summary in summaries:
        stream.write(summary.to_json())
        stream.write("\n")
        count += 1
    return count


def read_summaries(stream: IO[str]) -> Iterator[MeasurementSummary]:
    """Parse a JSONL summary stream, reporting the offending line on failure."""
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield MeasurementSummary.from_json(line)
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"bad measurement summary on line {lineno}: {exc}") from exc


@dataclass(frozen=True)
class ExecutionCurve:
    """Mean execution time (ms) per memory size, complete over all six sizes."""

    times_ms: Mapping[int, float]

    def __post_init__(self) -> None:
        times = {int(k): float(v) for k, v in self.times_ms.items()}
        if sorted(times) != sorted(MEMORY_SIZES_MB):
            raise ValueError(
                f"curve must cover exactly {MEMORY_SIZES_MB}, got {sorted(times)}"
            )
        if any(t <= 0 for t in times.values()):
            raise ValueError("execution times must be positive")
        object.__setattr__(self, "times_ms", times)

    def __getitem__(self, memory_mb: int) -> float:
        return self.times_ms[validate_memory_size(memory_mb)]

    def items(self) -> list[tuple[int, float]]:
        """(memory, time) pairs in ascending memory order."""
        return [(m, self.times_ms[m]) for m in MEMORY_SIZES_MB]

    def to_dict(self) -> dict[str, float]:
        return {str(m): self.times_ms[m] for m in MEMORY_SIZES_MB}

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "ExecutionCurve":
        return cls({int(k): float(v) for k, v in data.items()})


def _metric_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(MetricVector))


assert _metric_field_names() == METRIC_NAMES
