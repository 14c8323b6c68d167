"""Scenario description and its YAML/JSON file format.

Schema (version 1; every key except ``schema_version`` is optional)::

    schema_version: 1
    seed: 0                         # base seed; a trial seed replaces it
    duration_cap_s: 600
    tick_rate_hz: 2.0
    world:
      extent_m: [300, 300]
      resolution_m: 0.25
      feature_scale_m: 12
      class_fractions: {Grass: 0.6, Road: 0.2, Roof: 0.2}
      patches:                      # painted over the generated field, in order
        - {class: Grass, rect: [-4, -4, 4, 4]}   # xmin, ymin, xmax, ymax [m]
    uav:
      start: [0, 0]                 # world xy [m]
      altitude_m: 50
      heading_rad: 0.0              # null -> drawn from the trial seed
      horizontal_speed_mps: 5
      vertical_speed_mps: 1.5
    camera: {fx: 102.4, fy: 102.4, cx: 64, cy: 64, width: 128, height: 128}
    map: {size_cells: 256, cell_size_m: 0.25}
    altitude: {search_m: 15, min_radius_m: 5, landing_m: 2, pause_s: 5}
    filter: {alpha: 0.1, person_latch_threshold: 0.2}
    spot: {r_safe_m: 3.0, connectivity: 8, history_capacity: 16, person_margin_m: 0.6,
           safe_classes: [Grass]}
    noise:                          # see safe_landing.segmentation, or {path: file}
      concentration: 0.9
      diagonal: {Person: 0.7009}
      person_false_positive: 0.0
    obstacles:
      agents:                       # explicit scripts
        - {kind: Person, script: intercept, trigger_altitude_m: 6, dwell_s: 2,
           approach_distance_m: 4, bearing_rad: 0.5, speed_mps: 1.4,
           exit_distance_m: 30}
        - {kind: Person, script: waypoints, start: [10, 0], points: [[20, 0]], loop: false}
        - {kind: Vehicle, script: random_walk, start: [0, 0], region: [-20, -20, 20, 20]}
      random_intercepts:            # drawn per trial from the trial seed
        max_count: 10
        trigger_altitudes_m: [6, 45]
        dwell_s: [0.5, 8]
        approach_distance_m: 4.0
        exit_distance_m: 4.0        # default: the approach distance
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .classes import CLASS_NAMES, ClassSet
from .geometry import DEFAULT_CAMERA, CameraModel
from .landing_bt import AltitudeConfig
from .segmentation import NoiseModel
from .semantic_map import FilterConfig
from .sim import (
    PERSON_RADIUS,
    WALKING_SPEED,
    Intercept,
    ObstacleAgent,
    RandomWalk,
    UAVState,
    Waypoints,
    World,
    WorldParams,
    generate_world,
)
from .spot_detection import SpotConfig

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    seed: int = 0
    world: WorldParams = field(default_factory=WorldParams)
    start: tuple[float, float] = (0.0, 0.0)
    start_altitude: float = 50.0
    heading: float | None = 0.0
    h_speed: float = 5.0
    v_speed: float = 1.5
    camera: CameraModel = DEFAULT_CAMERA
    map_size: int = 256
    cell_size: float = 0.25
    altitude: AltitudeConfig = field(default_factory=AltitudeConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    spot: SpotConfig = field(default_factory=SpotConfig)
    safe_classes: tuple[str, ...] = ("Grass",)
    noise: dict = field(default_factory=dict)
    agents: list[dict] = field(default_factory=list)
    random_intercepts: dict | None = None
    tick_rate: float = 2.0
    duration_cap: float = 600.0

    def __post_init__(self) -> None:
        if self.start_altitude < self.altitude.search_altitude:
            raise ScenarioError("start altitude must be at or above the search altitude")
        if self.duration_cap <= 0:
            raise ScenarioError("duration cap must be positive")
        if not 1.0 <= self.tick_rate <= 10.0:
            raise ScenarioError("tick rate must lie in [1, 10] Hz")
        ClassSet(safe=self.safe_classes)
        for spec in self.agents:
            try:
                _agent_from_dict(spec)
            except ScenarioError:
                raise
            except (KeyError, ValueError, TypeError) as exc:
                raise ScenarioError(f"invalid agent {spec!r}: {exc}") from exc

    @property
    def classes(self) -> ClassSet:
        return ClassSet(safe=self.safe_classes)

    def noise_model(self, seed: int | None = None) -> NoiseModel:
        data = dict(self.noise)
        if "path" in data:
            with open(data.pop("path"), encoding="utf-8") as fh:
                data = {**yaml.safe_load(fh), **data}
        if seed is not None:
            data["seed"] = seed
        return NoiseModel.from_dict(data)

    def with_seed(self, seed: int) -> "Scenario":
        out = copy.deepcopy(self)
        out.seed = int(seed)
        return out

    # -- instantiation -------------------------------------------------

    def seeds(self) -> dict[str, int]:
        """Independent sub-seeds for terrain, agents, noise and world rng."""
        ss = np.random.SeedSequence(self.seed)
        keys = ("terrain", "agents", "noise", "world")
        return {k: int(c.generate_state(1)[0]) for k, c in zip(keys, ss.spawn(len(keys)))}

    def build(self) -> tuple[World, UAVState]:
        seeds = self.seeds()
        world = generate_world(seeds["terrain"], self.world, self.tick_rate)
        world.rng = np.random.default_rng(seeds["world"])
        rng = np.random.default_rng(seeds["agents"])
        heading = self.heading if self.heading is not None else float(rng.uniform(-math.pi, math.pi))
        world.agents = [_agent_from_dict(a) for a in self.agents]
        if self.random_intercepts:
            world.agents.extend(_random_intercepts(self.random_intercepts, rng))
        uav = UAVState(self.start[0], self.start[1], self.start_altitude, heading, self.h_speed, self.v_speed)
        return world, uav

    # -- serialisation -------------------------------------------------

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            return cls._from_dict(data)
        except ScenarioError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ScenarioError(f"invalid scenario: {exc}") from exc

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        uav = data.get("uav", {})
        mp = data.get("map", {})
        alt = data.get("altitude", {})
        flt = data.get("filter", {})
        spot = data.get("spot", {})
        obstacles = data.get("obstacles", {})
        return cls(
            seed=int(data.get("seed", 0)),
            world=WorldParams.from_dict(data.get("world", {})),
            start=tuple(float(v) for v in uav.get("start", (0.0, 0.0))),
            start_altitude=float(uav.get("altitude_m", 50.0)),
            heading=None if uav.get("heading_rad", 0.0) is None else float(uav.get("heading_rad", 0.0)),
            h_speed=float(uav.get("horizontal_speed_mps", 5.0)),
            v_speed=float(uav.get("vertical_speed_mps", 1.5)),
            camera=CameraModel.from_dict(data["camera"]) if "camera" in data else DEFAULT_CAMERA,
            map_size=int(mp.get("size_cells", 256)),
            cell_size=float(mp.get("cell_size_m", 0.25)),
            altitude=AltitudeConfig(
                search_altitude=float(alt.get("search_m", 15.0)),
                min_radius_altitude=float(alt.get("min_radius_m", 5.0)),
                landing_altitude=float(alt.get("landing_m", 2.0)),
                pause_duration=float(alt.get("pause_s", 5.0)),
            ),
            filter=FilterConfig(
                alpha=float(flt.get("alpha", 0.1)),
                person_latch_threshold=float(flt.get("person_latch_threshold", 0.2)),
            ),
            spot=SpotConfig(
                r_safe=float(spot.get("r_safe_m", 3.0)),
                connectivity=int(spot.get("connectivity", 8)),
                history_capacity=int(spot.get("history_capacity", 16)),
                person_margin=float(spot.get("person_margin_m", 0.6)),
            ),
            safe_classes=tuple(spot.get("safe_classes", ("Grass",))),
            noise=dict(data.get("noise", {})),
            agents=[dict(a) for a in obstacles.get("agents", [])],
            random_intercepts=dict(obstacles["random_intercepts"]) if obstacles.get("random_intercepts") else None,
            tick_rate=float(data.get("tick_rate_hz", 2.0)),
            duration_cap=float(data.get("duration_cap_s", 600.0)),
        )

    def to_dict(self) -> dict:
        cam = self.camera
        obstacles: dict[str, Any] = {"agents": copy.deepcopy(self.agents)}
        if self.random_intercepts:
            obstacles["random_intercepts"] = copy.deepcopy(self.random_intercepts)
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "duration_cap_s": self.duration_cap,
            "tick_rate_hz": self.tick_rate,
            "world": self.world.to_dict(),
            "uav": {
                "start": list(self.start),
                "altitude_m": self.start_altitude,
                "heading_rad": self.heading,
                "horizontal_speed_mps": self.h_speed,
                "vertical_speed_mps": self.v_speed,
            },
            "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "width": cam.width, "height": cam.height},
            "map": {"size_cells": self.map_size, "cell_size_m": self.cell_size},
            "altitude": {
                "search_m": self.altitude.search_altitude,
                "min_radius_m": self.altitude.min_radius_altitude,
                "landing_m": self.altitude.landing_altitude,
                "pause_s": self.altitude.pause_duration,
            },
            "filter": {"alpha": self.filter.alpha, "person_latch_threshold": self.filter.person_latch_threshold},
            "spot": {
                "r_safe_m": self.spot.r_safe,
                "connectivity": self.spot.connectivity,
                "history_capacity": self.spot.history_capacity,
                "person_margin_m": self.spot.person_margin,
                "safe_classes": list(self.safe_classes),
            },
            "noise": copy.deepcopy(self.noise),
            "obstacles": obstacles,
        }

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, Mapping):
            raise ScenarioError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def _kind(name: str) -> int:
    if name not in ("Person", "Vehicle"):
        raise ScenarioError(f"agent kind must be Person or Vehicle, not {name!r}")
    return CLASS_NAMES.index(name)


def _agent_from_dict(spec: Mapping[str, Any]) -> ObstacleAgent:
    kind = _kind(spec.get("kind", "Person"))
    speed = float(spec.get("speed_mps", WALKING_SPEED))
    radius = float(spec.get("radius_m", PERSON_RADIUS))
    script = spec.get("script", "intercept")
    if script == "intercept":
        s = Intercept(
            trigger_altitude=float(spec["trigger_altitude_m"]),
            dwell=float(spec.get("dwell_s", 2.0)),
            approach_distance=float(spec.get("approach_distance_m", 4.0)),
            bearing=float(spec.get("bearing_rad", 0.0)),
            exit_distance=float(spec.get("exit_distance_m", 30.0)),
        )
        return ObstacleAgent(kind, 0.0, 0.0, s, speed, radius, active=False)
    x, y = (float(v) for v in spec["start"])
    if script == "waypoints":
        pts = [tuple(float(c) for c in p) for p in spec["points"]]
        return ObstacleAgent(kind, x, y, Waypoints(pts, bool(spec.get("loop", False))), speed, radius)
    if script == "random_walk":
        region = tuple(float(v) for v in spec["region"])
        return ObstacleAgent(kind, x, y, RandomWalk(region, float(spec.get("turn_std", 0.6))), speed, radius)
    raise ScenarioError(f"unknown agent script {script!r}")


def _random_intercepts(spec: Mapping[str, Any], rng: np.random.Generator) -> list[ObstacleAgent]:
    max_count = int(spec.get("max_count", 10))
    lo_alt, hi_alt = (float(v) for v in spec.get("trigger_altitudes_m", (6.0, 45.0)))
    lo_dw, hi_dw = (float(v) for v in spec.get("dwell_s", (0.5, 8.0)))
    approach = float(spec.get("approach_distance_m", 4.0))
    # by default the person walks back out the way they came and leaves
    exit_distance = float(spec.get("exit_distance_m", approach))
    n = int(rng.integers(0, max_count + 1))
    agents = []
    for _ in range(n):
        agents.append(
            _agent_from_dict(
                {
                    "kind": "Person",
                    "script": "intercept",
                    "trigger_altitude_m": float(rng.uniform(lo_alt, hi_alt)),
                    "dwell_s": float(rng.uniform(lo_dw, hi_dw)),
                    "approach_distance_m": approach,
                    "bearing_rad": float(rng.uniform(-math.pi, math.pi)),
                    "exit_distance_m": exit_distance,
                }
            )
        )
    return agents
