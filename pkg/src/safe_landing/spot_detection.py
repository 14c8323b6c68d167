"""Landing-spot extraction from the filtered label grid.

Distances are cell-centre to cell-centre in metres.  A cell's distance is
measured to the nearest cell outside its own segment, and every position
beyond the map border counts as outside.  Values are always computed as
``cell_size * sqrt(d2)`` with ``d2`` an exact integer squared cell offset,
so any two exact methods agree bit for bit.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import ndimage

from .classes import ClassSet
from .semantic_map import FilterConfig, SemanticGroundMap

_STRUCTURE = {8: np.ones((3, 3), dtype=bool), 4: ndimage.generate_binary_structure(2, 1)}


@dataclass(frozen=True)
class SpotConfig:
    r_safe: float = 3.0
    connectivity: int = 8
    history_capacity: int = 16
    # latched person cells are grown by this much [m]: a person's body spills
    # past the cell centres that see it
    person_margin: float = 0.6

    def __post_init__(self) -> None:
        if not self.r_safe > 0:
            raise ValueError("r_safe must be positive")
        if not self.person_margin >= 0:
            raise ValueError("person_margin must be non-negative")
        if self.connectivity not in _STRUCTURE:
            raise ValueError("connectivity must be 4 or 8")
        if self.history_capacity < 1:
            raise ValueError("history capacity must be at least 1")


@dataclass(frozen=True)
class SafeMask:
    """One boolean X x Y grid per safe class index."""

    masks: dict[int, np.ndarray]

    def combined(self) -> np.ndarray:
        shape = next(iter(self.masks.values())).shape
        out = np.zeros(shape, dtype=bool)
        for m in self.masks.values():
            out |= m
        return out


@dataclass(frozen=True, eq=False)
class Segment:
    id: int
    class_index: int
    cells: np.ndarray  # (K, 2) int, row-major order

    @property
    def size(self) -> int:
        return len(self.cells)


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Metric distance per cell and the id of the segment it belongs to.

    ``segment_id`` is 0 outside segments; ``segment_class`` maps ids to
    class indices.
    """

    distance: np.ndarray
    segment_id: np.ndarray
    segment_class: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class LandingSpot:
    x: float
    y: float
    clearance: float
    class_index: int
    tick: int = 0
    valid: bool = True

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def distance_to(self, other: "LandingSpot") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


class Reason(enum.Enum):
    VALID = "Valid"
    UNSAFE_TERRAIN = "UnsafeTerrain"
    PERSON_PRESENT = "PersonPresent"
    OUT_OF_EXTENT = "OutOfExtent"


@dataclass(frozen=True)
class Validation:
    reason: Reason

    @property
    def valid(self) -> bool:
        return self.reason is Reason.VALID

    def __bool__(self) -> bool:
        return self.valid


VALID = Validation(Reason.VALID)


def safe_mask(labels: np.ndarray, classes: ClassSet) -> SafeMask:
    labels = np.asarray(labels)
    return SafeMask({c: labels == c for c in classes.safe_indices})


def _disc_structure(radius_cells: float) -> np.ndarray:
    k = int(math.floor(radius_cells + 1e-9))
    di, dj = np.mgrid[-k : k + 1, -k : k + 1]
    return di * di + dj * dj <= radius_cells * radius_cells + 1e-9


def person_zone(person: np.ndarray, threshold: float, margin_cells: float = 0.0) -> np.ndarray:
    """Cells whose centre lies within ``margin_cells`` of a latched person cell."""
    latched = np.asarray(person) > threshold
    if margin_cells <= 0 or not latched.any():
        return latched
    return ndimage.binary_dilation(latched, structure=_disc_structure(margin_cells))


def relabel_latched_persons(
    labels: np.ndarray, grid: SemanticGroundMap, config: FilterConfig, margin: float = 0.0
) -> np.ndarray:
    """Copy of ``labels`` with every person-latched cell, grown by ``margin``
    metres, set to Person.

    The person entry lives outside the terrain simplex, so a fresh latch can
    be outvoted in the argmax by a well-established terrain class.
    """
    out = np.array(labels, copy=True)
    zone = person_zone(grid.person, config.person_latch_threshold, margin / grid.cell_size)
    out[zone] = grid.classes.person
    return out


def segments(mask: np.ndarray, class_index: int = -1, config: SpotConfig = SpotConfig()) -> list[Segment]:
    lab, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_STRUCTURE[config.connectivity])
    if n == 0:
        return []
    flat = lab.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    bounds = np.cumsum(counts)
    Y = mask.shape[1]
    out = []
    for k in range(1, n + 1):
        idx = order[bounds[k - 1] : bounds[k]]
        out.append(Segment(k, class_index, np.column_stack([idx // Y, idx % Y])))
    return out


def _nearest_outside_d2(member: np.ndarray) -> np.ndarray:
    """Exact integer squared distance to the nearest non-member cell.

    The grid is padded with one ring of non-members to honour the border
    rule.  Zero at non-members.
    """
    padded = np.pad(member, 1, constant_values=False)
    idx = ndimage.distance_transform_edt(padded, return_distances=False, return_indices=True)
    ii, jj = np.indices(padded.shape)
    d2 = (idx[0] - ii) ** 2 + (idx[1] - jj) ** 2
    return d2[1:-1, 1:-1].astype(np.int64)


def distance_transform(segment: Segment, shape: tuple[int, int], cell_size: float) -> DistanceField:
    """Distance field of a single segment (zero everywhere else)."""
    if segment.size == 0:
        raise ValueError("segment is empty")
    lo = segment.cells.min(axis=0)
    hi = segment.cells.max(axis=0) + 1
    local = np.zeros(tuple(hi - lo), dtype=bool)
    local[segment.cells[:, 0] - lo[0], segment.cells[:, 1] - lo[1]] = True
    # the padding ring inside _nearest_outside_d2 bounds the search: clamping
    # any farther non-member onto the ring never increases its distance
    d2 = _nearest_outside_d2(local)
    dist = np.zeros(shape)
    seg_id = np.zeros(shape, dtype=np.int64)
    sl = (slice(lo[0], hi[0]), slice(lo[1], hi[1]))
    dist[sl] = np.where(local, cell_size * np.sqrt(d2), 0.0)
    seg_id[sl] = np.where(local, segment.id, 0)
    return DistanceField(dist, seg_id, {segment.id: segment.class_index})


def distance_fields(mask: SafeMask, cell_size: float, config: SpotConfig = SpotConfig()) -> DistanceField:
    """Combined distance field over every segment of every safe class.

    One transform per class mask suffices: for a cell ``p`` of segment A and
    any cell ``q`` outside A, the king-move path from ``p`` to ``q`` stays
    within ``|p - q|`` of ``p`` and its first cell outside A cannot carry A's
    class (it would be connected to A), so the nearest non-member of A is
    also the nearest cell outside the class mask.  This holds for 8-connected
    segments only; 4-connectivity falls back to per-segment transforms.
    """
    shape = next(iter(mask.masks.values())).shape
    dist = np.zeros(shape)
    seg_id = np.zeros(shape, dtype=np.int64)
    seg_class: dict[int, int] = {}
    next_id = 1
    for class_index, m in mask.masks.items():
        if not m.any():
            continue
        lab, n = ndimage.label(m, structure=_STRUCTURE[config.connectivity])
        if config.connectivity == 8:
            d2 = _nearest_outside_d2(m)
            dist = np.where(m, cell_size * np.sqrt(d2), dist)
        else:
            for seg in segments(m, class_index, config):
                f = distance_transform(seg, shape, cell_size)
                dist = np.where(f.segment_id > 0, f.distance, dist)
        seg_id = np.where(m, lab + (next_id - 1), seg_id)
        for k in range(n):
            seg_class[next_id + k] = class_index
        next_id += n
    return DistanceField(dist, seg_id, seg_class)


def segment_candidates(
    field_: DistanceField, grid: SemanticGroundMap, config: SpotConfig, classes: ClassSet, tick: int = 0
) -> list[LandingSpot]:
    """Best qualifying cell of every segment, sorted best first.

    A segment's best cell has the largest distance, first in row-major order
    on ties; only cells with distance >= r_safe qualify.  Candidates are
    ordered by class rank, then distance (descending), then position.
    """
    D = field_.distance
    flat_d = D.ravel()
    qual = np.flatnonzero(flat_d >= config.r_safe)
    if qual.size == 0:
        return []
    ids = field_.segment_id.ravel()[qual]
    order = np.lexsort((qual, -flat_d[qual], ids))
    ids_sorted = ids[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = ids_sorted[1:] != ids_sorted[:-1]
    best_flat = qual[order[first]]
    best_ids = ids_sorted[first]
    ranks = np.array([classes.rank(field_.segment_class[int(s)]) for s in best_ids])
    pick = np.lexsort((best_flat, -flat_d[best_flat], ranks))
    Y = D.shape[1]
    out = []
    for k in pick:
        f = int(best_flat[k])
        i, j = divmod(f, Y)
        wx, wy = grid.cell_to_world(i, j)
        out.append(
            LandingSpot(
                float(wx),
                float(wy),
                float(flat_d[f]),
                field_.segment_class[int(best_ids[k])],
                tick,
            )
        )
    return out


def select_spot(
    field_: DistanceField,
    grid: SemanticGroundMap,
    config: SpotConfig,
    classes: ClassSet,
    history: "SpotHistory | None" = None,
    tick: int = 0,
) -> LandingSpot | None:
    """Pick the landing spot; None when no cell reaches ``r_safe``.

    Every qualifying segment's best cell is pushed to ``history``.
    """
    candidates = segment_candidates(field_, grid, config, classes, tick)
    if history is not None:
        for spot in reversed(candidates):
            history.push(spot)
    return candidates[0] if candidates else None


def disc_cells(grid: SemanticGroundMap, x: float, y: float, radius: float) -> tuple[np.ndarray, np.ndarray] | None:
    """Indices of cells whose centre lies strictly within ``radius`` of a
    world point; None if the point or any such cell centre falls outside
    the map (the same off-map rule the distance fields use)."""
    fi, fj = grid.world_to_cell(x, y)
    # spots sit on cell centres; undo round-trip error so ties at r stay ties
    fi, fj = (round(v) if abs(v - round(v)) < 1e-6 else v for v in (float(fi), float(fj)))
    r = radius / grid.cell_size
    if not (-0.5 <= fi < grid.X - 0.5 and -0.5 <= fj < grid.Y - 0.5):
        return None
    ii, jj = np.meshgrid(
        np.arange(math.floor(fi - r), math.ceil(fi + r) + 1),
        np.arange(math.floor(fj - r), math.ceil(fj + r) + 1),
        indexing="ij",
    )
    inside = (ii - fi) ** 2 + (jj - fj) ** 2 < r * r
    ii, jj = ii[inside], jj[inside]
    if ii.min() < 0 or jj.min() < 0 or ii.max() >= grid.X or jj.max() >= grid.Y:
        return None
    return ii, jj


def validate_spot(
    grid: SemanticGroundMap,
    labels: np.ndarray,
    spot: LandingSpot,
    config: SpotConfig,
    filter_config: FilterConfig = FilterConfig(),
) -> Validation:
    cells = disc_cells(grid, spot.x, spot.y, config.r_safe)
    if cells is None:
        return Validation(Reason.OUT_OF_EXTENT)
    ii, jj = cells
    # grow latched persons on a local window only; matches relabel_latched_persons
    m = config.person_margin / grid.cell_size
    pad = int(math.floor(m + 1e-9))
    i0, j0 = max(0, int(ii.min()) - pad), max(0, int(jj.min()) - pad)
    i1, j1 = min(grid.X, int(ii.max()) + pad + 1), min(grid.Y, int(jj.max()) + pad + 1)
    zone = person_zone(grid.person[i0:i1, j0:j1], filter_config.person_latch_threshold, m)
    if np.any(zone[ii - i0, jj - j0]):
        return Validation(Reason.PERSON_PRESENT)
    safe = np.isin(labels[ii, jj], grid.classes.safe_indices)
    if not np.all(safe):
        return Validation(Reason.UNSAFE_TERRAIN)
    return VALID


class SpotHistory:
    """Bounded FIFO of previously qualifying spots.

    Pushing a spot within ``merge_radius`` of a stored one replaces it, so a
    location that keeps qualifying occupies one slot with fresh data.
    """

    def __init__(self, classes: ClassSet, capacity: int = 16, merge_radius: float = 3.0):
        self.classes = classes
        self.capacity = capacity
        self.merge_radius = merge_radius
        self._spots: deque[LandingSpot] = deque()

    def __len__(self) -> int:
        return len(self._spots)

    def __iter__(self):
        return iter(self._spots)

    def push(self, spot: LandingSpot) -> None:
        self._spots = deque(s for s in self._spots if s.distance_to(spot) >= self.merge_radius)
        self._spots.append(spot)
        while len(self._spots) > self.capacity:
            self._spots.popleft()

    def best_alternative(
        self,
        exclude: LandingSpot | None,
        validate: Callable[[LandingSpot], Validation],
    ) -> LandingSpot | None:
        """Highest-ranked stored spot that still validates, skipping the
        neighbourhood of ``exclude``.  Invalid spots are dropped."""
        keep: list[LandingSpot] = []
        best: LandingSpot | None = None
        best_key = None
        for age, spot in enumerate(self._spots):
            if exclude is not None and spot.distance_to(exclude) < self.merge_radius:
                keep.append(spot)
                continue
            if not validate(spot).valid:
                continue
            keep.append(spot)
            key = (self.classes.rank(spot.class_index), -spot.clearance, -age)
            if best_key is None or key < best_key:
                best, best_key = spot, key
        self._spots = deque(keep)
        return best

    def extend(self, spots: Iterable[LandingSpot]) -> None:
        for s in spots:
            self.push(s)

