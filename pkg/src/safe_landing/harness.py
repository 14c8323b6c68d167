"""Closed-loop evaluation: trials, batches and latency reports.

The harness is the only place where ground truth (the :class:`World`) and
the pipeline meet.  Metrics are sampled on tick boundaries: an incursion
starts at the first tick where an obstacle occupies the active landing zone,
and its latency is the time until the controller first intervenes
(pause, climb, hold, search, or a change of target).
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from . import landing_bt as bt
from .geometry import GeometryError
from .pipeline import MIN_PERCEPTION_AGL, LandingPipeline, PipelineConfig
from .scenario import Scenario
from .segmentation import SyntheticSegmenter
from .sim import obstacle_in_radius, render_view, step, unsafe_clearance, zone_penetration

log = logging.getLogger(__name__)

INTERVENTIONS = frozenset(
    {bt.Command.PAUSE, bt.Command.CLIMB, bt.Command.HOLD_POSITION, bt.Command.FORWARD_SEARCH}
)
LATENCY_BIN = 0.1


class Outcome(enum.Enum):
    LANDED_SAFE = "LandedSafe"
    LANDED_UNSAFE = "LandedUnsafe"
    TIMED_OUT = "TimedOut"
    ABORTED = "Aborted"


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class LatencySample:
    trial: int
    incursion_time: float
    latency: float
    person_diagonal: float


@dataclass
class TrialResult:
    trial: int
    seed: int
    outcome: Outcome
    duration: float
    ticks: int
    touchdown: tuple[float, float] | None = None
    touchdown_class: str = ""
    touchdown_clearance: float = float("nan")
    agents: int = 0
    incursions: int = 0
    undetected: int = 0
    undetected_at_touchdown: int = 0
    max_missed_depth: float = float("nan")
    reroutes: int = 0
    pauses: int = 0
    reason: str = ""
    latencies: list[LatencySample] = field(default_factory=list)


@dataclass
class _Episode:
    start: float
    zone: tuple[float, float]
    depth: float
    intervened: bool = False


def _zone(state: bt.BehaviorState) -> tuple[float, float] | None:
    if state.target is not None and state.sequence in (bt.Sequence.TOWARD_SPOT, bt.Sequence.LANDING):
        return state.target.xy
    return None


def pipeline_config(scenario: Scenario) -> PipelineConfig:
    return PipelineConfig(
        camera=scenario.camera,
        classes=scenario.classes,
        altitude=scenario.altitude,
        filter=scenario.filter,
        spot=scenario.spot,
        map_size=scenario.map_size,
        cell_size=scenario.cell_size,
        tick_rate=scenario.tick_rate,
    )


def run_trial(scenario: Scenario, trial: int = 0, trace: IO[str] | None = None) -> TrialResult:
    """Fly one closed-loop landing with ``scenario.seed``.

    Module errors raised during the loop end the trial as Aborted, with
    the error text in ``reason``.
    """
    world, uav = scenario.build()
    seeds = scenario.seeds()
    segmenter = SyntheticSegmenter(scenario.noise_model(seeds["noise"]))
    person_diag = float(segmenter.model.diagonal[scenario.classes.person])
    pipeline = LandingPipeline(pipeline_config(scenario))
    writer = bt.TraceWriter(trace) if trace is not None else None
    r_safe = scenario.spot.r_safe
    dt = world.dt
    max_ticks = int(math.ceil(scenario.duration_cap / dt - 1e-9))

    result = TrialResult(trial, scenario.seed, Outcome.TIMED_OUT, 0.0, 0, agents=len(world.agents))
    episode: _Episode | None = None

    def close_episode() -> None:
        nonlocal episode
        if episode is not None and not episode.intervened:
            result.undetected += 1
            if not episode.depth <= result.max_missed_depth:
                result.max_missed_depth = episode.depth
        episode = None

    for k in range(max_ticks):
        t = k * dt
        prev = pipeline.state
        zone = _zone(prev)
        depth = zone_penetration(world, zone, r_safe) if zone is not None else -math.inf
        if depth >= 0.0:
            if episode is None or episode.zone != zone:
                close_episode()
                episode = _Episode(t, zone, depth)
                result.incursions += 1
            episode.depth = max(episode.depth, depth)
        else:
            close_episode()

        try:
            frame = None
            if uav.z >= MIN_PERCEPTION_AGL:
                frame = segmenter(render_view(world, uav, scenario.camera), k)
            pose = uav.camera_pose() if frame is not None else None
            res = pipeline.step(frame, pose, uav.z, uav.position, uav.heading)
        except (GeometryError, ValueError) as exc:
            log.warning("trial %d aborted at tick %d: %s", trial, k, exc)
            result.outcome = Outcome.ABORTED
            result.reason = f"{type(exc).__name__}: {exc}"
            result.duration = t
            result.ticks = k
            close_episode()
            return result
        if writer is not None:
            writer.write(k, t, res.inputs, res.state, res.command)

        new_zone = _zone(res.state)
        if episode is not None and not episode.intervened:
            # retargeting counts; losing the zone at touchdown does not
            retarget = new_zone is not None and new_zone != episode.zone
            if res.command.kind in INTERVENTIONS or retarget:
                episode.intervened = True
                result.latencies.append(LatencySample(trial, episode.start, t - episode.start, person_diag))
        if prev.target is not None and res.state.target != prev.target:
            result.reroutes += 1
        if res.state.paused and not prev.paused:
            result.pauses += 1

        result.ticks = k + 1
        seq = res.state.sequence
        if seq is bt.Sequence.ABORTED:
            result.outcome = Outcome.ABORTED
            result.reason = "controller aborted"
            result.duration = t
            close_episode()
            return result
        if seq is bt.Sequence.LANDED:
            result.duration = t
            x, y = uav.position
            occupied = obstacle_in_radius(world, (x, y), r_safe)
            if occupied or (episode is not None and not episode.intervened):
                result.undetected_at_touchdown = 1
            close_episode()
            result.touchdown = (x, y)
            result.touchdown_class = scenario.classes.names[int(world.terrain_class_at(x, y))]
            safe = [scenario.classes.index(n) for n in scenario.safe_classes]
            clearance = unsafe_clearance(world, x, y, safe, r_safe + 1.0)
            result.touchdown_clearance = clearance
            ok = clearance >= r_safe and not occupied
            result.outcome = Outcome.LANDED_SAFE if ok else Outcome.LANDED_UNSAFE
            return result
        world, uav = step(world, uav, res.command, dt)

    close_episode()
    result.duration = max_ticks * dt
    return result


# -- batches -----------------------------------------------------------


TRIAL_COLUMNS = (
    "trial",
    "seed",
    "outcome",
    "duration_s",
    "ticks",
    "touchdown_x",
    "touchdown_y",
    "touchdown_class",
    "touchdown_clearance_m",
    "agents",
    "incursions",
    "undetected",
    "undetected_at_touchdown",
    "max_missed_depth_m",
    "reroutes",
    "pauses",
    "reason",
)
LATENCY_COLUMNS = ("trial", "incursion_time_s", "latency_s", "person_diagonal")


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def _trial_row(r: TrialResult) -> list:
    tx, ty = r.touchdown if r.touchdown is not None else (None, None)
    return [
        r.trial,
        r.seed,
        r.outcome.value,
        _fmt(r.duration),
        r.ticks,
        _fmt(tx),
        _fmt(ty),
        r.touchdown_class,
        _fmt(r.touchdown_clearance),
        r.agents,
        r.incursions,
        r.undetected,
        r.undetected_at_touchdown,
        _fmt(r.max_missed_depth),
        r.reroutes,
        r.pauses,
        r.reason,
    ]


@dataclass
class BatchSummary:
    results: list[TrialResult]

    @property
    def n(self) -> int:
        return len(self.results)

    def count(self, outcome: Outcome) -> int:
        return sum(r.outcome is outcome for r in self.results)

    @property
    def success_rate(self) -> float:
        return self.count(Outcome.LANDED_SAFE) / self.n if self.n else float("nan")

    @property
    def undetected(self) -> int:
        return sum(r.undetected for r in self.results)

    @property
    def undetected_at_touchdown(self) -> int:
        return sum(r.undetected_at_touchdown for r in self.results)

    @property
    def latencies(self) -> list[LatencySample]:
        return [s for r in self.results for s in r.latencies]

    def rows(self) -> list[tuple[str, str]]:
        lat = np.array([s.latency for s in self.latencies])
        out = [
            ("trials", str(self.n)),
            ("success_rate", _fmt(self.success_rate)),
        ]
        out += [(o.value, str(self.count(o))) for o in Outcome]
        out += [
            ("incursions", str(sum(r.incursions for r in self.results))),
            ("undetected", str(self.undetected)),
            ("undetected_at_touchdown", str(self.undetected_at_touchdown)),
            ("reroutes", str(sum(r.reroutes for r in self.results))),
            ("pauses", str(sum(r.pauses for r in self.results))),
            ("latency_samples", str(lat.size)),
        ]
        stats = [("mean", np.mean), ("median", np.median), ("p95", lambda a: np.percentile(a, 95)), ("max", np.max)]
        out += [(f"latency_{name}_s", _fmt(float(f(lat))) if lat.size else "") for name, f in stats]
        return out


def _run_indexed(args: tuple[Scenario, int, int]) -> TrialResult:
    scenario, index, seed = args
    return run_trial(scenario.with_seed(seed), index)


def run_batch(
    scenario: Scenario,
    trials: int,
    seed_base: int = 0,
    jobs: int = 1,
    out_dir: str | Path | None = None,
) -> BatchSummary:
    """Run ``trials`` trials with seeds ``seed_base + i``.

    Results are ordered by trial index whatever ``jobs`` is, so output files
    are byte-identical for identical inputs.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    tasks = [(scenario, i, seed_base + i) for i in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_indexed, tasks))
    else:
        results = []
        for t in tasks:
            r = _run_indexed(t)
            log.info("trial %d seed %d: %s", r.trial, r.seed, r.outcome.value)
            results.append(r)
    results.sort(key=lambda r: r.trial)
    summary = BatchSummary(results)
    if out_dir is not None:
        write_batch(summary, out_dir)
    return summary


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_batch(summary: BatchSummary, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "trials.csv", TRIAL_COLUMNS, (_trial_row(r) for r in summary.results))
    _write_csv(
        out / "latencies.csv",
        LATENCY_COLUMNS,
        (
            (s.trial, _fmt(s.incursion_time), _fmt(s.latency), _fmt(s.person_diagonal))
            for s in summary.latencies
        ),
    )
    _write_csv(out / "summary.csv", ("metric", "value"), summary.rows())


def read_latencies(path: str | Path) -> list[LatencySample]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            LatencySample(
                int(row["trial"]),
                float(row["incursion_time_s"]),
                float(row["latency_s"]),
                float(row["person_diagonal"]),
            )
            for row in csv.DictReader(fh)
        ]


@dataclass(frozen=True)
class LatencyReport:
    bins: list[tuple[float, int]]  # (bin lower edge, count)
    p50: float
    p90: float
    p95: float
    p99: float

    def write(self, path: str | Path) -> None:
        rows = [("p50", _fmt(self.p50)), ("p90", _fmt(self.p90)), ("p95", _fmt(self.p95)), ("p99", _fmt(self.p99))]
        rows += [(f"bin_{lo:.1f}", str(c)) for lo, c in self.bins]
        _write_csv(Path(path), ("key", "value"), rows)


def digitize_latency_report(samples: Sequence[LatencySample] | Sequence[float]) -> LatencyReport:
    """Histogram latencies into 0.1 s bins and compute percentiles."""
    lat = np.array([getattr(s, "latency", s) for s in samples], dtype=float)
    if lat.size == 0:
        raise EmptyInput("no latency samples")
    idx = np.floor(lat / LATENCY_BIN + 1e-9).astype(np.int64)
    counts = np.bincount(idx)
    bins = [(round(i * LATENCY_BIN, 10), int(c)) for i, c in enumerate(counts)]
    p50, p90, p95, p99 = (float(np.percentile(lat, q)) for q in (50, 90, 95, 99))
    return LatencyReport(bins, p50, p90, p95, p99)


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
