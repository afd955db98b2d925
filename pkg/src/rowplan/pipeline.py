"""Multi-chip pipeline model over a partition plan.

Each span becomes one pipeline stage on its own chip. A stage's latency is
max(compute time, transfer time) plus a per-stage link latency: transfers
overlap the producing computation except for the initial hop. Throughput
is set by the slowest stage divided by its replica count; replicating a
bottleneck stage raises throughput without touching the partitioning.

simulate_stap runs mini-batch jobs through the stages with the staggered
assignment rule: at a stage with r replicas, job q is served by replica
q mod r, FIFO per replica, one job at a time. The simulation is a
deterministic event-free sweep (service times are constants, so job
completion order is monotone and no event queue is needed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .partitioner import PartitionPlan

DEFAULT_REPLICA_CAP = 64


class UnreachableThroughputError(RuntimeError):
    """Target throughput not reachable within the per-stage replica cap."""


@dataclass(frozen=True)
class Rates:
    compute_rate: float  # MAC/s per chip
    mem_bandwidth: float  # bytes/s
    link_latency: float = 0.0  # seconds, charged once per stage

    def __post_init__(self):
        if self.compute_rate <= 0 or self.mem_bandwidth <= 0:
            raise ValueError("rates must be positive")
        if self.link_latency < 0:
            raise ValueError("link latency must be >= 0")


@dataclass(frozen=True)
class StageModel:
    begin: int
    end: int
    compute_time: float
    transfer_time: float
    link_latency: float = 0.0
    replicas: int = 1

    @property
    def stage_latency(self) -> float:
        return max(self.compute_time, self.transfer_time) + self.link_latency

    @property
    def effective_latency(self) -> float:
        return self.stage_latency / self.replicas


@dataclass(frozen=True)
class PipelinePlan:
    stages: tuple[StageModel, ...]

    @property
    def fill_latency(self) -> float:
        return sum(s.stage_latency for s in self.stages)

    @property
    def steady_throughput(self) -> float:
        return 1.0 / max(s.effective_latency for s in self.stages)

    @property
    def replicas(self) -> tuple[int, ...]:
        return tuple(s.replicas for s in self.stages)

    @classmethod
    def from_latencies(cls, latencies: Sequence[float], link_latency: float = 0.0):
        """Pipeline with directly specified stage latencies (compute-bound stages)."""
        stages = tuple(
            StageModel(begin=i, end=i + 1, compute_time=lat, transfer_time=0.0,
                       link_latency=link_latency)
            for i, lat in enumerate(latencies))
        return cls(stages)


def build_pipeline(plan: PartitionPlan, rates: Rates) -> PipelinePlan:
    """One stage per span; single replicas; latencies from the rate model.

    A job is one mini-batch: compute covers the span's MACs for all images,
    transfer covers the span's batched input and output bytes.
    """
    stages = []
    for sp in plan.spans:
        macs = plan.batch * sp.mac_count
        io_bytes = plan.batch * (sp.input_elems + sp.output_elems) * plan.element_bytes
        stages.append(StageModel(
            begin=sp.span.start,
            end=sp.span.end,
            compute_time=macs / rates.compute_rate,
            transfer_time=io_bytes / rates.mem_bandwidth,
            link_latency=rates.link_latency,
        ))
    return PipelinePlan(tuple(stages))


def replicate_stages(pp: PipelinePlan, target_throughput: float,
                     replica_cap: int = DEFAULT_REPLICA_CAP) -> PipelinePlan:
    """Greedily replicate the current bottleneck until the target is met.

    Partitioning and tiles are untouched; only replica counts change. Ties
    for the bottleneck go to the earliest stage, keeping the result
    deterministic.
    """
    if target_throughput <= 0:
        raise ValueError("target throughput must be positive")
    stages = list(pp.stages)
    while 1.0 / max(s.effective_latency for s in stages) < target_throughput:
        worst = max(range(len(stages)), key=lambda k: (stages[k].effective_latency, -k))
        if stages[worst].replicas >= replica_cap:
            raise UnreachableThroughputError(
                f"stage {worst} already at {replica_cap} replicas; "
                f"target {target_throughput} unreachable")
        stages[worst] = replace(stages[worst], replicas=stages[worst].replicas + 1)
    return PipelinePlan(tuple(stages))


@dataclass(frozen=True)
class JobRecord:
    job: int
    arrival: float
    finish: float
    stage_starts: tuple[float, ...]
    stage_waits: tuple[float, ...]
    replica_ids: tuple[int, ...]

    @property
    def latency(self) -> float:
        return self.finish - self.arrival

    @property
    def total_wait(self) -> float:
        return sum(self.stage_waits)


@dataclass(frozen=True)
class SimulationResult:
    jobs: tuple[JobRecord, ...]
    fill_latency: float
    steady_throughput: float

    @property
    def mean_latency(self) -> float:
        return sum(j.latency for j in self.jobs) / len(self.jobs)

    @property
    def achieved_throughput(self) -> float | None:
        """Steady-state completion rate; None for fewer than two jobs."""
        if len(self.jobs) < 2:
            return None
        spread = self.jobs[-1].finish - self.jobs[0].finish
        if spread <= 0:
            return math.inf
        return (len(self.jobs) - 1) / spread

    @property
    def queue_growing(self) -> bool:
        if len(self.jobs) < 2:
            return False
        return self.jobs[-1].total_wait > self.jobs[0].total_wait + 1e-9

    def trace_rows(self):
        """(job, stage, replica, start, end) per service, for the trace CSV."""
        for rec in self.jobs:
            for s, start in enumerate(rec.stage_starts):
                end = (rec.stage_starts[s + 1] - rec.stage_waits[s + 1]
                       if s + 1 < len(rec.stage_starts) else rec.finish)
                yield (rec.job, s, rec.replica_ids[s], start, end)


def simulate_stap(pp: PipelinePlan, arrivals: Sequence[float]) -> SimulationResult:
    """Run jobs through the staggered pipeline; deterministic.

    Job q at a stage with r replicas is served by replica q mod r, FIFO,
    each service occupying the replica for the stage latency. A job enters
    the next stage the moment it finishes the current one. Arrival times
    must be non-decreasing.
    """
    if not arrivals:
        raise ValueError("at least one arrival required")
    free = [[0.0] * s.replicas for s in pp.stages]
    records = []
    prev_arrival = None
    for q, arrival in enumerate(arrivals):
        if prev_arrival is not None and arrival < prev_arrival:
            raise ValueError(f"arrivals must be non-decreasing (job {q})")
        prev_arrival = arrival
        now = float(arrival)
        starts, waits, reps = [], [], []
        for s, stage in enumerate(pp.stages):
            r = q % stage.replicas
            start = max(now, free[s][r])
            waits.append(start - now)
            starts.append(start)
            reps.append(r)
            now = start + stage.stage_latency
            free[s][r] = now
        records.append(JobRecord(q, float(arrival), now,
                                 tuple(starts), tuple(waits), tuple(reps)))
    return SimulationResult(tuple(records), pp.fill_latency, pp.steady_throughput)


def periodic_arrivals(count: int, period: float, start: float = 0.0) -> list[float]:
    return [start + k * period for k in range(count)]
