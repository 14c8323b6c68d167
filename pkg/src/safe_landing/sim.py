"""Deterministic closed-loop world: terrain, vehicle and obstacle agents.

Nothing in the perception pipeline reads :class:`World` directly; it only
sees the rendered ground-truth view (through the segmentation provider) and
the vehicle pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from . import geometry
from .classes import CLASS_NAMES
from .geometry import CameraModel
from .landing_bt import Command, FlightCommand

PERSON = CLASS_NAMES.index("Person")
VEHICLE = CLASS_NAMES.index("Vehicle")
BACKGROUND = CLASS_NAMES.index("Background")
GRASS = CLASS_NAMES.index("Grass")

PERSON_RADIUS = 0.4
WALKING_SPEED = 1.4


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class WorldParams:
    extent: tuple[float, float] = (300.0, 300.0)
    resolution: float = 0.25
    class_fractions: Mapping[str, float] = field(default_factory=lambda: {"Grass": 1.0})
    feature_scale: float = 12.0
    # (class name, (xmin, ymin, xmax, ymax)) rectangles painted over the field
    patches: tuple[tuple[str, tuple[float, float, float, float]], ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping) -> "WorldParams":
        return cls(
            extent=tuple(float(v) for v in data.get("extent_m", (300.0, 300.0))),
            resolution=float(data.get("resolution_m", 0.25)),
            class_fractions=dict(data.get("class_fractions", {"Grass": 1.0})),
            feature_scale=float(data.get("feature_scale_m", 12.0)),
            patches=tuple(
                (str(p["class"]), tuple(float(v) for v in p["rect"])) for p in data.get("patches", ())
            ),
        )

    def to_dict(self) -> dict:
        out = {
            "extent_m": list(self.extent),
            "resolution_m": self.resolution,
            "feature_scale_m": self.feature_scale,
            "class_fractions": dict(self.class_fractions),
        }
        if self.patches:
            out["patches"] = [{"class": c, "rect": list(r)} for c, r in self.patches]
        return out


@dataclass(frozen=True)
class UAVState:
    x: float
    y: float
    z: float
    heading: float = 0.0
    h_speed: float = 5.0
    v_speed: float = 1.5

    def __post_init__(self) -> None:
        if self.z < 0:
            raise ValueError("UAV altitude must be non-negative")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def camera_pose(self) -> geometry.RigidPose:
        return geometry.nadir_pose(self.x, self.y, self.z, yaw=self.heading)


@dataclass
class Waypoints:
    points: list[tuple[float, float]]
    loop: bool = False
    next_index: int = 0


@dataclass
class RandomWalk:
    region: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    turn_std: float = 0.6
    heading: float = 0.0


@dataclass
class Intercept:
    """Walk into the zone below the UAV once it descends past a trigger.

    On triggering, the agent appears ``approach_distance`` from the ground
    point under the UAV at ``bearing``, walks to that point, stays for
    ``dwell`` seconds, then walks ``exit_distance`` directly away from the
    UAV's ground point and leaves the scene.
    """

    trigger_altitude: float
    dwell: float = 2.0
    approach_distance: float = 4.0
    bearing: float = 0.0
    exit_distance: float = 30.0
    phase: str = "waiting"
    target: tuple[float, float] | None = None
    dwell_left: float = 0.0


@dataclass
class ObstacleAgent:
    kind: int
    x: float
    y: float
    script: Waypoints | RandomWalk | Intercept
    speed: float = WALKING_SPEED
    radius: float = PERSON_RADIUS
    active: bool = True

    def __post_init__(self) -> None:
        if self.speed < 0:
            raise ValueError("agent speed must be non-negative")


@dataclass
class World:
    terrain: np.ndarray  # (nx, ny) class indices, [i, j] along world x, y
    resolution: float
    origin: tuple[float, float]  # world xy of the terrain's lower-left corner
    seed: int = 0
    agents: list[ObstacleAgent] = field(default_factory=list)
    clock: float = 0.0
    tick_rate: float = 2.0
    rng: np.random.Generator | None = None

    def __post_init__(self) -> None:
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate

    def terrain_class_at(self, x, y) -> np.ndarray:
        i = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(np.int64)
        j = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(np.int64)
        nx, ny = self.terrain.shape
        inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        cls = self.terrain[np.clip(i, 0, nx - 1), np.clip(j, 0, ny - 1)]
        return np.where(inside, cls, BACKGROUND)


def generate_world(seed: int, params: WorldParams = WorldParams(), tick_rate: float = 2.0) -> World:
    """Procedural terrain with exactly the requested class fractions.

    A smooth random field is thresholded at its quantiles, so each class
    forms contiguous patches of roughly ``feature_scale`` metres.
    """
    w, h = params.extent
    if not (w > 0 and h > 0 and params.resolution > 0 and params.feature_scale > 0):
        raise InvalidParams("extent, resolution and feature scale must be positive")
    nx, ny = int(round(w / params.resolution)), int(round(h / params.resolution))
    if nx < 1 or ny < 1:
        raise InvalidParams("terrain must have at least one cell")
    if not 1.0 <= tick_rate <= 10.0:
        raise InvalidParams("tick rate must lie in [1, 10] Hz")
    fractions = dict(params.class_fractions)
    if not fractions or any(v < 0 for v in fractions.values()):
        raise InvalidParams("class fractions must be non-negative and non-empty")
    total = sum(fractions.values())
    if not math.isclose(total, 1.0, abs_tol=1e-6):
        raise InvalidParams(f"class fractions sum to {total}, not 1")
    for name in fractions:
        if name not in CLASS_NAMES:
            raise InvalidParams(f"unknown class {name!r}")

    rng = np.random.default_rng(seed)
    names = list(fractions)
    if len(names) == 1:
        terrain = np.full((nx, ny), CLASS_NAMES.index(names[0]), dtype=np.int64)
    else:
        coarse_res = params.feature_scale / 4.0
        cx = max(2, int(math.ceil(w / coarse_res)) + 1)
        cy = max(2, int(math.ceil(h / coarse_res)) + 1)
        noise = ndimage.gaussian_filter(rng.standard_normal((cx, cy)), sigma=2.0, mode="wrap")
        fine = ndimage.zoom(noise, (nx / cx, ny / cy), order=1)[:nx, :ny]
        fine = np.pad(fine, ((0, nx - fine.shape[0]), (0, ny - fine.shape[1])), mode="edge")
        order = np.argsort(fine, axis=None, kind="stable")
        flat = np.empty(nx * ny, dtype=np.int64)
        bounds = np.round(np.cumsum([fractions[n] for n in names]) * nx * ny).astype(np.int64)
        start = 0
        for name, end in zip(names, bounds):
            flat[order[start:end]] = CLASS_NAMES.index(name)
            start = end
        terrain = flat.reshape(nx, ny)
    for name, (x0, y0, x1, y1) in params.patches:
        if name not in CLASS_NAMES:
            raise InvalidParams(f"unknown patch class {name!r}")
        # cells whose centre lies inside the rectangle
        i0 = max(0, int(math.ceil((x0 + w / 2.0) / params.resolution - 0.5)))
        i1 = min(nx, int(math.ceil((x1 + w / 2.0) / params.resolution - 0.5)))
        j0 = max(0, int(math.ceil((y0 + h / 2.0) / params.resolution - 0.5)))
        j1 = min(ny, int(math.ceil((y1 + h / 2.0) / params.resolution - 0.5)))
        terrain[i0:i1, j0:j1] = CLASS_NAMES.index(name)
    return World(
        terrain=terrain,
        resolution=params.resolution,
        origin=(-w / 2.0, -h / 2.0),
        seed=seed,
        tick_rate=tick_rate,
        rng=np.random.default_rng([seed, 1]),
    )


def _move_toward(x, y, tx, ty, max_step):
    dx, dy = tx - x, ty - y
    d = math.hypot(dx, dy)
    if d <= max_step:
        return tx, ty, True
    return x + dx / d * max_step, y + dy / d * max_step, False


def _advance_agent(agent: ObstacleAgent, dt: float, uav: UAVState, rng: np.random.Generator) -> None:
    s = agent.script
    step = agent.speed * dt
    if isinstance(s, Waypoints):
        if s.next_index >= len(s.points):
            return
        remaining = step
        while remaining > 0 and s.next_index < len(s.points):
            tx, ty = s.points[s.next_index]
            d = math.hypot(tx - agent.x, ty - agent.y)
            agent.x, agent.y, arrived = _move_toward(agent.x, agent.y, tx, ty, remaining)
            remaining -= min(d, remaining)
            if arrived:
                s.next_index += 1
                if s.loop and s.next_index >= len(s.points):
                    s.next_index = 0
    elif isinstance(s, RandomWalk):
        s.heading += rng.normal(0.0, s.turn_std)
        nx = agent.x + step * math.cos(s.heading)
        ny = agent.y + step * math.sin(s.heading)
        x0, y0, x1, y1 = s.region
        if not (x0 <= nx <= x1):
            s.heading = math.pi - s.heading
            nx = min(max(nx, x0), x1)
        if not (y0 <= ny <= y1):
            s.heading = -s.heading
            ny = min(max(ny, y0), y1)
        agent.x, agent.y = nx, ny
    elif isinstance(s, Intercept):
        if s.phase == "waiting":
            if uav.z <= s.trigger_altitude:
                s.phase = "approach"
                s.target = (uav.x, uav.y)
                agent.x = uav.x + s.approach_distance * math.cos(s.bearing)
                agent.y = uav.y + s.approach_distance * math.sin(s.bearing)
                agent.active = True
            return
        if s.phase == "approach":
            agent.x, agent.y, arrived = _move_toward(agent.x, agent.y, *s.target, step)
            if arrived:
                s.phase = "dwell"
                s.dwell_left = s.dwell
        elif s.phase == "dwell":
            s.dwell_left -= dt
            if s.dwell_left <= 1e-9:
                s.phase = "exit"
                # clear the area: leave directly away from the UAV's ground point
                dx, dy = agent.x - uav.x, agent.y - uav.y
                if math.hypot(dx, dy) > 1e-9:
                    s.bearing = math.atan2(dy, dx)
                s.target = (agent.x, agent.y)
        elif s.phase == "exit":
            ex = s.target[0] + s.exit_distance * math.cos(s.bearing)
            ey = s.target[1] + s.exit_distance * math.sin(s.bearing)
            agent.x, agent.y, arrived = _move_toward(agent.x, agent.y, ex, ey, step)
            if arrived:
                s.phase = "gone"
                agent.active = False


def step(world: World, uav: UAVState, command: FlightCommand, dt: float) -> tuple[World, UAVState]:
    """Advance agents and the point-mass UAV by ``dt`` seconds.

    ``world`` is updated in place and returned alongside the new UAV state.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    for agent in world.agents:
        _advance_agent(agent, dt, uav, world.rng)
    world.clock += dt

    h, v = uav.h_speed * dt, uav.v_speed * dt
    k = command.kind
    if k is Command.FORWARD_SEARCH:
        heading = uav.heading if command.heading is None else command.heading
        uav = replace(uav, x=uav.x + h * math.cos(heading), y=uav.y + h * math.sin(heading), heading=heading)
    elif k is Command.GOTO_WAYPOINT:
        x, y, _ = _move_toward(uav.x, uav.y, command.xy[0], command.xy[1], h)
        z = uav.z
        if command.altitude is not None:
            z = uav.z + float(np.clip(command.altitude - uav.z, -v, v))
        uav = replace(uav, x=x, y=y, z=max(z, 0.0))
    elif k is Command.DESCEND:
        rate = uav.v_speed if command.rate is None else min(command.rate, uav.v_speed)
        uav = replace(uav, z=max(uav.z - rate * dt, 0.0))
    elif k is Command.CLIMB:
        uav = replace(uav, z=uav.z + float(np.clip(command.altitude - uav.z, 0.0, v)))
    elif k is Command.COMMIT_LAND:
        uav = replace(uav, z=max(uav.z - v, 0.0))
    return world, uav


def render_view(world: World, uav: UAVState, cam: CameraModel) -> np.ndarray:
    """Ground-truth class image ``(height, width)`` seen by the nadir camera."""
    ground = geometry.pixel_ground_points(cam, uav.camera_pose())
    gx, gy = ground[..., 0], ground[..., 1]
    view = world.terrain_class_at(gx, gy)
    for agent in world.agents:
        if not agent.active:
            continue
        hit = (gx - agent.x) ** 2 + (gy - agent.y) ** 2 <= agent.radius**2
        view[hit] = agent.kind
    return view


def zone_penetration(world: World, center: Sequence[float], radius: float) -> float:
    """Deepest overlap [m] of any active agent's footprint with the disc;
    negative when nothing touches it (-inf with no active agents).

    For metrics only; the pipeline must never call this.
    """
    cx, cy = center
    depth = -math.inf
    for a in world.agents:
        if a.active:
            depth = max(depth, radius + a.radius - math.hypot(a.x - cx, a.y - cy))
    return depth


def obstacle_in_radius(world: World, center: Sequence[float], radius: float) -> bool:
    """Ground-truth check: does any agent's footprint touch the disc?"""
    return zone_penetration(world, center, radius) >= 0.0


def unsafe_clearance(world: World, x: float, y: float, safe_classes: Sequence[int], search: float) -> float:
    """Distance from ``(x, y)`` to the nearest unsafe terrain cell centre,
    capped at ``search``.  Positions beyond the terrain count as unsafe."""
    r = int(math.ceil(search / world.resolution)) + 1
    ci = int(math.floor((x - world.origin[0]) / world.resolution))
    cj = int(math.floor((y - world.origin[1]) / world.resolution))
    ii, jj = np.meshgrid(np.arange(ci - r, ci + r + 1), np.arange(cj - r, cj + r + 1), indexing="ij")
    cx = world.origin[0] + (ii + 0.5) * world.resolution
    cy = world.origin[1] + (jj + 0.5) * world.resolution
    nx, ny = world.terrain.shape
    inside = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
    cls = np.where(inside, world.terrain[np.clip(ii, 0, nx - 1), np.clip(jj, 0, ny - 1)], BACKGROUND)
    unsafe = ~np.isin(cls, list(safe_classes))
    if not unsafe.any():
        return search
    return float(min(search, np.sqrt(((cx - x) ** 2 + (cy - y) ** 2)[unsafe]).min()))
