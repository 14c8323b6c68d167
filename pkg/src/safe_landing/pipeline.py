"""Onboard landing pipeline: map fusion, spot search, validation and control.

The pipeline consumes segmentation frames and the vehicle pose only; it has
no access to the simulated world.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import landing_bt as bt
from .classes import ClassSet
from .geometry import CameraModel, RigidPose
from .semantic_map import FilterConfig, SemanticGroundMap, filtered_argmax, integrate_observation
from .spot_detection import (
    LandingSpot,
    SpotConfig,
    SpotHistory,
    Validation,
    distance_fields,
    relabel_latched_persons,
    safe_mask,
    select_spot,
    validate_spot,
)

log = logging.getLogger(__name__)

# Below this height the camera sees too little ground to be useful and the
# pose check would reject it anyway.
MIN_PERCEPTION_AGL = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraModel
    classes: ClassSet
    altitude: bt.AltitudeConfig = bt.AltitudeConfig()
    filter: FilterConfig = FilterConfig()
    spot: SpotConfig = SpotConfig()
    map_size: int = 256
    cell_size: float = 0.25
    tick_rate: float = 2.0


@dataclass(frozen=True)
class TickResult:
    inputs: bt.TickInputs
    state: bt.BehaviorState
    command: bt.FlightCommand


class LandingPipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.map = SemanticGroundMap.empty(config.map_size, config.map_size, config.cell_size, config.classes)
        self.history = SpotHistory(config.classes, config.spot.history_capacity, config.spot.r_safe)
        self.state = bt.BehaviorState()
        self.labels: np.ndarray | None = None
        self.tick_index = 0

    @property
    def dt(self) -> float:
        return 1.0 / self.config.tick_rate

    def _validate(self, spot: LandingSpot) -> Validation:
        return validate_spot(self.map, self.labels, spot, self.config.spot, self.config.filter)

    def perceive(self, frame, pose: RigidPose) -> LandingSpot | None:
        """Fuse one frame and return the best spot in the updated map."""
        cfg = self.config
        self.map = integrate_observation(self.map, frame, cfg.camera, pose, cfg.filter, self.tick_index)
        labels = filtered_argmax(self.map)
        self.labels = relabel_latched_persons(labels, self.map, cfg.filter, cfg.spot.person_margin)
        field_ = distance_fields(safe_mask(self.labels, cfg.classes), cfg.cell_size, cfg.spot)
        return select_spot(field_, self.map, cfg.spot, cfg.classes, self.history, self.tick_index)

    def dynamic_object(self) -> bool:
        if self.labels is None:
            return False
        latched = self.map.person > self.config.filter.person_latch_threshold
        return bool(np.any(latched & self.map.observed))

    def step(self, frame, pose: RigidPose, agl: float, position, heading: float) -> TickResult:
        """Run one full cycle.  ``frame`` may be None when perception is
        skipped (e.g. on the ground); the controller then sees no spot."""
        cfg = self.config
        spot = None
        if frame is not None and agl >= MIN_PERCEPTION_AGL:
            spot = self.perceive(frame, pose)
        below_min = agl <= cfg.altitude.min_radius_altitude
        target = self.state.target
        validation = None
        alternative = None
        if target is not None and not below_min and self.labels is not None:
            validation = self._validate(target)
            if not validation.valid:
                alternative = self.history.best_alternative(target, self._validate)
                log.debug("tick %d: target invalid (%s)", self.tick_index, validation.reason.value)
        dynamic = below_min and frame is not None and self.dynamic_object()
        inputs = bt.TickInputs(
            agl=agl,
            position=(float(position[0]), float(position[1])),
            heading=heading,
            spot=spot,
            validation=validation,
            dynamic_object=dynamic,
            alternative=alternative,
            dt=self.dt,
        )
        self.state, command = bt.tick(self.state, inputs, cfg.altitude)
        self.tick_index += 1
        return TickResult(inputs, self.state, command)
