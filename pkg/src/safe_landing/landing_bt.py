"""Behavior-tree landing controller.

The tree has three sequences (spot available, toward spot, landing).  It is
realised as a tick-synchronous state machine: each call to :func:`tick`
consumes the perception results of one pipeline cycle and emits exactly one
flight command.  The controller only emits intents; speeds belong to the
vehicle model.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from typing import IO

from .spot_detection import LandingSpot, Validation

ALTITUDE_TOLERANCE = 0.05
WAYPOINT_TOLERANCE = 0.05
TOUCHDOWN_AGL = 0.05


class Sequence(enum.Enum):
    SPOT_AVAILABLE = "SpotAvailable"
    TOWARD_SPOT = "TowardSpot"
    LANDING = "Landing"
    LANDED = "Landed"
    ABORTED = "Aborted"


class Command(enum.Enum):
    HOLD_POSITION = "HoldPosition"
    FORWARD_SEARCH = "ForwardSearch"
    GOTO_WAYPOINT = "GotoWaypoint"
    DESCEND = "Descend"
    CLIMB = "Climb"
    COMMIT_LAND = "CommitLand"
    PAUSE = "Pause"


@dataclass(frozen=True)
class FlightCommand:
    kind: Command
    xy: tuple[float, float] | None = None
    altitude: float | None = None
    heading: float | None = None
    rate: float | None = None

    def __str__(self) -> str:
        if self.kind is Command.GOTO_WAYPOINT:
            return f"GotoWaypoint({self.xy[0]:.2f},{self.xy[1]:.2f},{self.altitude:.2f})"
        if self.kind is Command.CLIMB:
            return f"Climb({self.altitude:.2f})"
        if self.kind is Command.FORWARD_SEARCH:
            return f"ForwardSearch({self.heading:.4f})"
        return self.kind.value


HOLD = FlightCommand(Command.HOLD_POSITION)
PAUSE = FlightCommand(Command.PAUSE)
DESCEND = FlightCommand(Command.DESCEND)
COMMIT_LAND = FlightCommand(Command.COMMIT_LAND)


def climb(altitude: float) -> FlightCommand:
    return FlightCommand(Command.CLIMB, altitude=altitude)


def goto(spot: LandingSpot, altitude: float) -> FlightCommand:
    return FlightCommand(Command.GOTO_WAYPOINT, xy=spot.xy, altitude=altitude)


@dataclass(frozen=True)
class AltitudeConfig:
    search_altitude: float = 15.0
    min_radius_altitude: float = 5.0
    landing_altitude: float = 2.0
    pause_duration: float = 5.0

    def __post_init__(self) -> None:
        if not self.landing_altitude < self.min_radius_altitude < self.search_altitude:
            raise ValueError("need landing < min_radius < search altitude")
        if not self.pause_duration > 0:
            raise ValueError("pause duration must be positive")


@dataclass(frozen=True)
class BehaviorState:
    sequence: Sequence = Sequence.SPOT_AVAILABLE
    target: LandingSpot | None = None
    paused: bool = False
    pause_remaining: float = 0.0
    climb_back: bool = False


@dataclass(frozen=True)
class TickInputs:
    """Perception results for one cycle.

    ``validation`` is the check of the current target (None when it was not
    evaluated, e.g. below the minimum radius altitude).  ``alternative`` is
    the best still-valid history spot other than the target.
    """

    agl: float
    position: tuple[float, float]
    heading: float = 0.0
    spot: LandingSpot | None = None
    validation: Validation | None = None
    dynamic_object: bool = False
    alternative: LandingSpot | None = None
    dt: float = 0.5


class IllegalInput(ValueError):
    pass


def _above(agl: float, altitude: float) -> bool:
    return agl >= altitude - ALTITUDE_TOLERANCE


def _over(inp: TickInputs, spot: LandingSpot) -> bool:
    return math.hypot(inp.position[0] - spot.x, inp.position[1] - spot.y) <= WAYPOINT_TOLERANCE


def tick(
    state: BehaviorState, inputs: TickInputs, config: AltitudeConfig = AltitudeConfig()
) -> tuple[BehaviorState, FlightCommand]:
    """Advance the controller by one cycle."""
    agl = inputs.agl
    if not math.isfinite(agl) or agl < 0:
        return BehaviorState(Sequence.ABORTED), HOLD
    seq = state.sequence
    if seq is Sequence.ABORTED:
        return state, HOLD
    if seq is Sequence.LANDED:
        return state, COMMIT_LAND
    if seq is Sequence.LANDING:
        if agl <= TOUCHDOWN_AGL:
            return replace(state, sequence=Sequence.LANDED), COMMIT_LAND
        return state, COMMIT_LAND
    if seq is Sequence.TOWARD_SPOT:
        if agl <= config.landing_altitude:
            return BehaviorState(Sequence.LANDING, target=state.target), COMMIT_LAND
        return _toward_spot(state, inputs, config)
    return _spot_available(state, inputs, config)


def _spot_available(state, inp, cfg):
    if not _above(inp.agl, cfg.search_altitude):
        return BehaviorState(Sequence.SPOT_AVAILABLE, climb_back=True), climb(cfg.search_altitude)
    if inp.spot is not None:
        return BehaviorState(Sequence.TOWARD_SPOT, target=inp.spot), goto(inp.spot, inp.agl)
    return BehaviorState(Sequence.SPOT_AVAILABLE), FlightCommand(
        Command.FORWARD_SEARCH, heading=inp.heading
    )


def _abandon(inp, cfg):
    """Target invalid above the minimum radius altitude: reroute or search."""
    below_search = not _above(inp.agl, cfg.search_altitude)
    alt = inp.alternative
    if alt is not None:
        if below_search:
            return BehaviorState(Sequence.TOWARD_SPOT, target=alt, climb_back=True), climb(cfg.search_altitude)
        return BehaviorState(Sequence.TOWARD_SPOT, target=alt), goto(alt, inp.agl)
    if below_search:
        return BehaviorState(Sequence.SPOT_AVAILABLE, climb_back=True), climb(cfg.search_altitude)
    return BehaviorState(Sequence.SPOT_AVAILABLE), HOLD


def _toward_spot(state, inp, cfg):
    target = state.target
    if inp.agl > cfg.min_radius_altitude:
        if inp.validation is not None and not inp.validation.valid:
            return _abandon(inp, cfg)
        if state.climb_back:
            if not _above(inp.agl, cfg.search_altitude):
                return state, climb(cfg.search_altitude)
            state = replace(state, climb_back=False)
        state = replace(state, paused=False, pause_remaining=0.0)
        if not _over(inp, target):
            return state, goto(target, inp.agl)
        return state, DESCEND

    # below the minimum radius altitude only dynamic objects matter
    if inp.dynamic_object:
        if not state.paused:
            return replace(state, paused=True, pause_remaining=cfg.pause_duration), PAUSE
        remaining = max(0.0, state.pause_remaining - inp.dt)
        if remaining <= 1e-9:
            return BehaviorState(Sequence.SPOT_AVAILABLE, climb_back=True), climb(cfg.search_altitude)
        return replace(state, pause_remaining=remaining), PAUSE
    state = replace(state, paused=False, pause_remaining=0.0, climb_back=False)
    if not _over(inp, target):
        return state, goto(target, inp.agl)
    return state, DESCEND


TRACE_COLUMNS = ("tick", "time_s", "agl_m", "x_m", "y_m", "state", "command", "validation", "dynamic_object")


class TraceWriter:
    """Per-tick CSV trace of controller decisions."""

    def __init__(self, fh: IO[str]):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(TRACE_COLUMNS)

    def write(
        self,
        tick_index: int,
        time_s: float,
        inputs: TickInputs,
        state: BehaviorState,
        command: FlightCommand,
    ) -> None:
        reason = "" if inputs.validation is None else inputs.validation.reason.value
        self._w.writerow(
            (
                tick_index,
                f"{time_s:.3f}",
                f"{inputs.agl:.4f}",
                f"{inputs.position[0]:.4f}",
                f"{inputs.position[1]:.4f}",
                state.sequence.value,
                str(command),
                reason,
                int(inputs.dynamic_object),
            )
        )
