"""Synthetic serverless functions with a known ground truth.

Functions are composed from behavioral segments whose execution time reacts
to the memory allocation in one of five characteristic ways.  Because the
scaling laws are declared, every downstream prediction can be checked
against an exact oracle instead of a cloud bill.

Work-unit semantics per segment kind:

======================  =======================================================
kind                    work_units means / time at memory m (ms)
======================  =======================================================
cpu_bound               busy-CPU ms at 128 MB;      t(m) = w * 128/m
fs_io                   file-I/O ms at 128 MB;      t(m) = w * sqrt(128/m)
network_bound           transfer wait ms;           t(m) = w
external_service_wait   remote-service wait ms;     t(m) = w
memory_pressure         working-set MB;             t(m) = ALPHA*w
                                                         + BETA*max(0, w-m)^2/w
======================  =======================================================

The memory_pressure penalty vanishes once the allocation covers the working
set, which is what makes some functions cheaper at a larger size.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from rightsizer.domain import (
    MEMORY_SIZES_MB,
    METRIC_NAMES,
    ExecutionCurve,
    MeasurementSummary,
    MetricVector,
    validate_memory_size,
)

SEGMENT_KINDS: tuple[str, ...] = (
    "cpu_bound",
    "network_bound",
    "fs_io",
    "memory_pressure",
    "external_service_wait",
)

#: memory_pressure time constants: ALPHA ms per working-set MB touched, plus
#: BETA * shortfall^2 / working_set ms of thrashing when the set does not fit.
MEMORY_ALPHA_MS_PER_MB = 0.3
MEMORY_BETA_MS_PER_MB = 6.0

_MIB = 1024.0 * 1024.0

#: Per-request runtime overhead added to every metric expectation.  Keyed by
#: metric name; execution_time deliberately has none so the segment scaling
#: laws stay exact (a pure cpu_bound function halves its time from 128 to 256).
BASELINE_METRICS: dict[str, float] = {
    "execution_time": 0.0,
    "user_cpu_time": 2.0,
    "system_cpu_time": 1.0,
    "vol_context_switches": 20.0,
    "invol_context_switches": 10.0,
    "fs_reads": 15.0,
    "fs_writes": 10.0,
    "resident_set": 48.0 * _MIB,
    "max_resident_set": 56.0 * _MIB,
    "total_heap": 16.0 * _MIB,
    "heap_used": 8.0 * _MIB,
    "physical_heap": 14.0 * _MIB,
    "available_heap": 30.0 * _MIB,
    "heap_limit": 120.0 * _MIB,
    "allocated_memory": 20.0 * _MIB,
    "external_memory": 4.0 * _MIB,
    "bytecode_metadata": 3.0 * _MIB,
    "bytes_received": 2048.0,
    "bytes_transmitted": 1024.0,
    "packages_received": 12.0,
    "packages_transmitted": 12.0,
    "min_event_loop_lag": 0.08,
    "max_event_loop_lag": 1.2,
    "mean_event_loop_lag": 0.4,
    "std_event_loop_lag": 0.2,
}

#: How one work unit of each kind contributes to each metric's expectation.
#: Only nonzero entries are listed; execution_time never appears (it is
#: governed by the scaling laws above).
ARCHETYPE_SIGNATURES: dict[str, dict[str, float]] = {
    "cpu_bound": {
        "user_cpu_time": 0.90,
        "system_cpu_time": 0.05,
        "vol_context_switches": 0.01,
        "invol_context_switches": 0.05,
        "resident_set": 0.020 * _MIB,
        "max_resident_set": 0.022 * _MIB,
        "total_heap": 0.015 * _MIB,
        "heap_used": 0.010 * _MIB,
        "physical_heap": 0.012 * _MIB,
        "allocated_memory": 0.020 * _MIB,
        "external_memory": 0.002 * _MIB,
        "min_event_loop_lag": 0.001,
        "mean_event_loop_lag": 0.005,
        "max_event_loop_lag": 0.020,
        "std_event_loop_lag": 0.003,
    },
    "network_bound": {
        "user_cpu_time": 0.02,
        "system_cpu_time": 0.08,
        "vol_context_switches": 0.25,
        "invol_context_switches": 0.005,
        "bytes_received": 1500.0,
        "bytes_transmitted": 600.0,
        "packages_received": 1.1,
        "packages_transmitted": 0.45,
        "external_memory": 0.080 * _MIB,
        "allocated_memory": 0.080 * _MIB,
        "resident_set": 0.020 * _MIB,
        "max_resident_set": 0.022 * _MIB,
        "min_event_loop_lag": 0.0002,
        "mean_event_loop_lag": 0.001,
        "max_event_loop_lag": 0.004,
        "std_event_loop_lag": 0.0008,
    },
    "fs_io": {
        "user_cpu_time": 0.10,
        "system_cpu_time": 0.45,
        "fs_reads": 3.0,
        "fs_writes": 2.0,
        "vol_context_switches": 0.20,
        "invol_context_switches": 0.01,
        "external_memory": 0.050 * _MIB,
        "allocated_memory": 0.050 * _MIB,
        "resident_set": 0.030 * _MIB,
        "max_resident_set": 0.033 * _MIB,
        "total_heap": 0.010 * _MIB,
        "heap_used": 0.005 * _MIB,
        "physical_heap": 0.008 * _MIB,
        "min_event_loop_lag": 0.0004,
        "mean_event_loop_lag": 0.002,
        "max_event_loop_lag": 0.006,
        "std_event_loop_lag": 0.001,
    },
    "memory_pressure": {
        "user_cpu_time": 0.50,
        "system_cpu_time": 0.20,
        "vol_context_switches": 0.05,
        "invol_context_switches": 0.10,
        "fs_reads": 0.20,
        "fs_writes": 0.10,
        "heap_used": 1.00 * _MIB,
        "total_heap": 1.25 * _MIB,
        "physical_heap": 1.10 * _MIB,
        "resident_set": 1.05 * _MIB,
        "max_resident_set": 1.20 * _MIB,
        "allocated_memory": 1.30 * _MIB,
        "available_heap": 0.05 * _MIB,
        "external_memory": 0.01 * _MIB,
        "bytecode_metadata": 0.001 * _MIB,
        "min_event_loop_lag": 0.002,
        "mean_event_loop_lag": 0.010,
        "max_event_loop_lag": 0.040,
        "std_event_loop_lag": 0.008,
    },
    "external_service_wait": {
        "user_cpu_time": 0.01,
        "system_cpu_time": 0.01,
        "vol_context_switches": 0.30,
        "invol_context_switches": 0.002,
        "bytes_received": 8.0,
        "bytes_transmitted": 6.0,
        "packages_received": 0.02,
        "packages_transmitted": 0.02,
        "min_event_loop_lag": 0.0001,
        "mean_event_loop_lag": 0.0005,
        "max_event_loop_lag": 0.002,
        "std_event_loop_lag": 0.0004,
    },
}

#: Metrics that scale with the realized duration of their segment (CPU work
#: shrinks as the allocated share grows).
_DURATION_SCALED = ("user_cpu_time", "system_cpu_time")

# Noise families: metrics within a family share one multiplicative draw per
# request, so cross-metric invariants (lag ordering, heap containment) and the
# wall-clock/CPU-time correlation survive the noise.
_TIME_FAMILY = ("execution_time", "user_cpu_time", "system_cpu_time")
_MEMORY_FAMILY = (
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
)
_LAG_FAMILY = (
    "min_event_loop_lag",
    "max_event_loop_lag",
    "mean_event_loop_lag",
    "std_event_loop_lag",
)
_NETWORK_FAMILY = ("bytes_received", "bytes_transmitted")
#: Event counts: Poisson-distributed around a lognormal-modulated expectation.
_COUNTER_FAMILY = (
    "vol_context_switches",
    "invol_context_switches",
    "fs_reads",
    "fs_writes",
    "packages_received",
    "packages_transmitted",
)

_INDEX = {name: i for i, name in enumerate(METRIC_NAMES)}
assert set(_TIME_FAMILY + _MEMORY_FAMILY + _LAG_FAMILY + _NETWORK_FAMILY + _COUNTER_FAMILY) == set(METRIC_NAMES)


def segment_time(kind: str, work_units: float, memory_mb: int) -> float:
    """Expected duration (ms) of one segment at the given memory size."""
    if kind == "cpu_bound":
        return work_units * 128.0 / memory_mb
    if kind == "fs_io":
        return work_units * math.sqrt(128.0 / memory_mb)
    if kind in ("network_bound", "external_service_wait"):
        return work_units
    if kind == "memory_pressure":
        shortfall = max(0.0, work_units - memory_mb)
        return (
            MEMORY_ALPHA_MS_PER_MB * work_units
            + MEMORY_BETA_MS_PER_MB * shortfall * shortfall / work_units
        )
    raise ValueError(f"unknown segment kind {kind!r}")


@dataclass(frozen=True)
class SegmentSpec:
    """One behavioral building block of a synthetic function."""

    kind: str
    work_units: float
    metric_signature: Mapping[str, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.work_units > 0:
            raise ValueError(f"work_units must be positive, got {self.work_units!r}")
        signature = self.metric_signature
        if signature is None:
            signature = ARCHETYPE_SIGNATURES[self.kind]
        signature = dict(signature)
        for name, coefficient in signature.items():
            if name not in _INDEX:
                raise ValueError(f"unknown metric {name!r} in signature")
            if coefficient < 0:
                raise ValueError(f"signature coefficient for {name} must be >= 0")
        object.__setattr__(self, "metric_signature", signature)


@dataclass(frozen=True)
class FunctionProfile:
    """A complete synthetic function: segments plus its noise level and seed."""

    function_id: str
    segments: tuple[SegmentSpec, ...]
    noise_cv: float
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        if not 1 <= len(self.segments) <= 8:
            raise ValueError("a profile needs between 1 and 8 segments")
        if not 0.0 <= self.noise_cv <= 0.5:
            raise ValueError(f"noise_cv must be in [0, 0.5], got {self.noise_cv!r}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def structural_key(self) -> tuple:
        """Hashable identity of the segment composition (id/seed excluded)."""
        return tuple((seg.kind, seg.work_units) for seg in self.segments)

    def to_json(self) -> str:
        record = {
            "function_id": self.function_id,
            "seed": self.seed,
            "noise_cv": self.noise_cv,
            "segments": [
                {
                    "kind": seg.kind,
                    "work_units": seg.work_units,
                    "metric_signature": seg.metric_signature,
                }
                for seg in self.segments
            ],
        }
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "FunctionProfile":
        data = json.loads(line)
        return cls(
            function_id=str(data["function_id"]),
            segments=tuple(
                SegmentSpec(
                    kind=seg["kind"],
                    work_units=float(seg["work_units"]),
                    metric_signature=seg.get("metric_signature"),
                )
                for seg in data["segments"]
            ),
            noise_cv=float(data["noise_cv"]),
            seed=int(data["seed"]),
        )


def write_profiles(profiles: Iterable[FunctionProfile], stream: IO[str]) -> int:
    count = 0
    for profile in profiles:
        stream.write(profile.to_json())
        stream.write("\n")
        count += 1
    return count


def read_profiles(stream: IO[str]) -> Iterator[FunctionProfile]:
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield FunctionProfile.from_json(line)
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"bad function profile on line {lineno}: {exc}") from exc


@dataclass(frozen=True)
class WorkloadSpec:
    """Open-loop load: fixed request rate over a fixed wall-clock window."""

    request_rate: float = 30.0
    duration: float = 600.0
    arrival_process: str = "exponential"

    def __post_init__(self) -> None:
        if not self.request_rate > 0:
            raise ValueError("request_rate must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.arrival_process != "exponential":
            raise ValueError("only exponential inter-arrival is supported")

    @property
    def request_count(self) -> int:
        return int(self.request_rate * self.duration)


@dataclass(frozen=True)
class GroundTruthCurve:
    """Noise-free expectations per memory size: time curve plus full metrics."""

    curve: ExecutionCurve
    expected_metrics: Mapping[int, MetricVector]

    def __post_init__(self) -> None:
        times = [self.curve[m] for m in MEMORY_SIZES_MB]
        if any(later > earlier + 1e-9 for earlier, later in zip(times, times[1:])):
            raise ValueError("execution time must be non-increasing in memory")
        for memory, vector in self.expected_metrics.items():
            if vector.execution_time != self.curve[memory]:
                raise ValueError("metric expectations disagree with the time curve")


def _duration_ratio(segment: SegmentSpec, memory_mb: int) -> float:
    """Realized duration at memory_mb relative to the 128 MB reference."""
    return segment_time(segment.kind, segment.work_units, memory_mb) / segment_time(
        segment.kind, segment.work_units, 128
    )


def _expected_array(profile: FunctionProfile, memory_mb: int) -> np.ndarray:
    """Noise-free metric expectations at one memory size, METRIC_NAMES order."""
    values = np.array([BASELINE_METRICS[name] for name in METRIC_NAMES])
    total_time = 0.0
    for segment in profile.segments:
        total_time += segment_time(segment.kind, segment.work_units, memory_mb)
        ratio = _duration_ratio(segment, memory_mb)
        for metric, coefficient in segment.metric_signature.items():
            scale = ratio if metric in _DURATION_SCALED else 1.0
            values[_INDEX[metric]] += coefficient * segment.work_units * scale
    values[_INDEX["execution_time"]] = total_time
    return values


def ground_truth(profile: FunctionProfile) -> GroundTruthCurve:
    """Exact expected execution time and metrics at every memory size."""
    expected = {m: _expected_array(profile, m) for m in MEMORY_SIZES_MB}
    curve = ExecutionCurve(
        {m: float(vec[_INDEX["execution_time"]]) for m, vec in expected.items()}
    )
    return GroundTruthCurve(
        curve=curve,
        expected_metrics={
            m: MetricVector.from_array(vec) for m, vec in expected.items()
        },
    )


def _lognormal_params(cv: float) -> tuple[float, float]:
    """(mu, sigma) of a lognormal with mean 1 and the given coefficient of variation."""
    sigma_sq = math.log(1.0 + cv * cv)
    return -sigma_sq / 2.0, math.sqrt(sigma_sq)


def _request_rng(profile: FunctionProfile, memory_mb: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([profile.seed, memory_mb]))


def _simulate_requests(
    profile: FunctionProfile, memory_mb: int, workload: WorkloadSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Per-request (timestamps, metric rows) for one measurement run.

    Arrivals follow a Poisson process conditioned on the request count, i.e.
    sorted uniforms over the measurement window.  Noise is multiplicative
    lognormal with mean 1, drawn once per family per request; counter metrics
    are Poisson draws around a lognormal-modulated expectation.
    """
    validate_memory_size(memory_mb)
    n = workload.request_count
    rng = _request_rng(profile, memory_mb)
    timestamps = np.sort(rng.uniform(0.0, workload.duration, n))
    expected = _expected_array(profile, memory_mb)
    values = np.tile(expected, (n, 1))
    if profile.noise_cv > 0:
        mu, sigma = _lognormal_params(profile.noise_cv)
        for family in (_TIME_FAMILY, _MEMORY_FAMILY, _LAG_FAMILY, _NETWORK_FAMILY):
            factor = rng.lognormal(mu, sigma, n)
            columns = [_INDEX[name] for name in family]
            values[:, columns] *= factor[:, None]
        for name in _COUNTER_FAMILY:
            modulation = rng.lognormal(mu, sigma, n)
            values[:, _INDEX[name]] = rng.poisson(expected[_INDEX[name]] * modulation)
    return timestamps, values


def simulate_measurement(
    profile: FunctionProfile, memory_mb: int, workload: WorkloadSpec
) -> MeasurementSummary:
    """Run one (function, memory) measurement and aggregate it.

    Deterministic in (profile.seed, memory_mb, workload).  With noise_cv = 0
    the result is the ground-truth expectation itself with zero spread.
    """
    n = workload.request_count
    if profile.noise_cv == 0:
        mean = _expected_array(profile, memory_mb)
        std = np.zeros_like(mean)
        validate_memory_size(memory_mb)
    else:
        _, values = _simulate_requests(profile, memory_mb, workload)
        mean = values.mean(axis=0)
        std = values.std(axis=0)
    return MeasurementSummary(
        function_id=profile.function_id,
        memory=memory_mb,
        sample_count=n,
        mean=MetricVector.from_array(mean),
        std=MetricVector.from_array(std),
        request_rate=workload.request_rate,
        duration=workload.duration,
    )


def simulate_trace(
    profile: FunctionProfile, memory_mb: int, workload: WorkloadSpec
):
    """Full per-request trace for stability analysis.

    Returns a stability.FunctionTrace; aggregating its rows reproduces
    simulate_measurement for the same arguments.
    """
    from rightsizer.stability import FunctionTrace

    timestamps, values = _simulate_requests(profile, memory_mb, workload)
    return FunctionTrace(
        function_id=profile.function_id,
        timestamps=timestamps,
        values=values,
        duration=workload.duration,
    )


_WORK_RANGES: dict[str, tuple[float, float]] = {
    "cpu_bound": (20.0, 1500.0),
    "network_bound": (10.0, 600.0),
    "fs_io": (10.0, 600.0),
    "external_service_wait": (10.0, 600.0),
    "memory_pressure": (160.0, 1600.0),
}

_KIND_WEIGHTS = {
    "cpu_bound": 0.27,
    "network_bound": 0.145,
    "fs_io": 0.18,
    "memory_pressure": 0.26,
    "external_service_wait": 0.145,
}


def _draw_segments(rng: np.random.Generator) -> tuple[SegmentSpec, ...]:
    count = int(rng.integers(1, 9))
    kinds = list(_KIND_WEIGHTS)
    weights = np.array([_KIND_WEIGHTS[k] for k in kinds])
    segments = []
    memory_used = False
    for _ in range(count):
        kind = str(rng.choice(kinds, p=weights))
        if kind == "memory_pressure" and memory_used:
            # a second working set would be ambiguous; substitute
            others = [k for k in kinds if k != "memory_pressure"]
            other_weights = np.array([_KIND_WEIGHTS[k] for k in others])
            kind = str(rng.choice(others, p=other_weights / other_weights.sum()))
        if kind == "memory_pressure":
            memory_used = True
        low, high = _WORK_RANGES[kind]
        work = float(np.exp(rng.uniform(np.log(low), np.log(high))))
        segments.append(SegmentSpec(kind=kind, work_units=work))
    return tuple(segments)


def generate_profiles(
    count: int, master_seed: int, noise_cv: float = 0.1
) -> list[FunctionProfile]:
    """Draw `count` structurally distinct profiles, deterministically.

    Segment compositions are redrawn on collision, so no two profiles share
    an identical segment list.  Per-profile simulation seeds are spawned from
    the master seed and are independent of the composition draws.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count!r}")
    root = np.random.SeedSequence(master_seed)
    children = root.spawn(count + 1)
    rng = np.random.default_rng(children[0])
    seeds = [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children[1:]]
    profiles: list[FunctionProfile] = []
    seen: set[tuple] = set()
    for i in range(count):
        for _ in range(1000):
            segments = _draw_segments(rng)
            key = tuple((seg.kind, seg.work_units) for seg in segments)
            if key not in seen:
                break
        else:  # pragma: no cover - work units are continuous draws
            raise RuntimeError("could not draw a distinct profile")
        seen.add(key)
        profiles.append(
            FunctionProfile(
                function_id=f"fn-{i:05d}",
                segments=segments,
                noise_cv=noise_cv,
                seed=seeds[i],
            )
        )
    return profiles


def _profile_summaries(
    args: tuple[FunctionProfile, WorkloadSpec]
) -> list[MeasurementSummary]:
    profile, workload = args
    return [simulate_measurement(profile, m, workload) for m in MEMORY_SIZES_MB]


def generate_dataset(
    profiles: Sequence[FunctionProfile],
    workload: WorkloadSpec,
    workers: int = 1,
) -> list[MeasurementSummary]:
    """All profile x memory measurements, ordered (profile, ascending memory).

    `workers` > 1 distributes profiles across processes; the merge order is
    fixed, so output is byte-identical regardless of parallelism.
    """
    if not profiles:
        raise ValueError("profiles must be nonempty")
    jobs = [(profile, workload) for profile in profiles]
    if workers <= 1:
        per_profile = map(_profile_summaries, jobs)
        return [summary for group in per_profile for summary in group]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        groups = pool.map(_profile_summaries, jobs, chunksize=8)
        return [summary for group in groups for summary in group]
