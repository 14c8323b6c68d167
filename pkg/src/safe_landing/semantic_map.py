"""Metric semantic ground map with Bayesian filtering and semantic decay.

Each cell stores a probability vector over the class set.  The non-person
entries behave like a categorical belief that is fused with a Bayes update
and then blended with the previous value through exponential decay.  The
person entry is an independent occupancy value: it is raised whenever the
observation's argmax is Person, only decays when a different class is
observed at the cell, and is never touched while the cell is out of view.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import geometry
from .classes import DEFAULT_CLASSES, ClassSet
from .geometry import CameraModel, RigidPose


@dataclass(frozen=True)
class FilterConfig:
    alpha: float = 0.1
    person_latch_threshold: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.person_latch_threshold < 1.0:
            raise ValueError("person_latch_threshold must lie in (0, 1)")


@lru_cache(maxsize=8)
def _cell_centers(X: int, Y: int, cell_size: float) -> np.ndarray:
    i = (np.arange(X) - (X - 1) / 2.0) * cell_size
    j = (np.arange(Y) - (Y - 1) / 2.0) * cell_size
    ii, jj = np.meshgrid(i, j, indexing="ij")
    out = np.stack([ii, jj], axis=-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SemanticGroundMap:
    """X x Y x C probability grid in an ego-anchored metric frame.

    ``probs[i, j]`` is the vector of cell ``(i, j)``; ``i`` runs along the map
    x axis.  ``pose`` is the camera pose the map frame is anchored to (None
    before the first observation).  ``last_observed`` holds the tick at which
    each cell was last in view, -1 if never.
    """

    probs: np.ndarray
    last_observed: np.ndarray
    cell_size: float
    classes: ClassSet = DEFAULT_CLASSES
    pose: RigidPose | None = None
    tick: int = -1

    def __post_init__(self) -> None:
        probs = np.ascontiguousarray(self.probs, dtype=float)
        if probs.ndim != 3 or probs.shape[-1] != self.classes.count:
            raise ValueError(f"probs must be (X, Y, {self.classes.count})")
        if np.shape(self.last_observed) != probs.shape[:2]:
            raise ValueError("last_observed must match the grid shape")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def empty(
        cls, X: int = 256, Y: int = 256, cell_size: float = 0.25, classes: ClassSet = DEFAULT_CLASSES
    ) -> "SemanticGroundMap":
        if X <= 0 or Y <= 0 or cell_size <= 0:
            raise ValueError("map dimensions and cell size must be positive")
        probs = np.empty((X, Y, classes.count))
        probs[...] = _uninformed(classes)
        return cls(probs, np.full((X, Y), -1, dtype=np.int64), float(cell_size), classes)

    @property
    def X(self) -> int:
        return self.probs.shape[0]

    @property
    def Y(self) -> int:
        return self.probs.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.X * self.cell_size, self.Y * self.cell_size

    @property
    def person(self) -> np.ndarray:
        return self.probs[..., self.classes.person]

    @property
    def observed(self) -> np.ndarray:
        """Cells seen during the most recent integration."""
        return self.last_observed == self.tick

    def replace(self, **changes) -> "SemanticGroundMap":
        return dataclasses.replace(self, **changes)

    def uninformed_vector(self) -> np.ndarray:
        return _uninformed(self.classes)

    def cell_centers(self) -> np.ndarray:
        """Map-frame metric coordinates of every cell centre, ``(X, Y, 2)``."""
        return _cell_centers(self.X, self.Y, self.cell_size)

    def fractional_index(self, mx, my):
        return (
            np.asarray(mx) / self.cell_size + (self.X - 1) / 2.0,
            np.asarray(my) / self.cell_size + (self.Y - 1) / 2.0,
        )

    def _require_pose(self) -> RigidPose:
        if self.pose is None:
            raise ValueError("map has no anchor pose yet")
        return self.pose

    def cell_to_world(self, i, j) -> np.ndarray:
        mx = (np.asarray(i, dtype=float) - (self.X - 1) / 2.0) * self.cell_size
        my = (np.asarray(j, dtype=float) - (self.Y - 1) / 2.0) * self.cell_size
        T = geometry.world_from_map(self._require_pose())
        return geometry.apply_homography(T, np.stack([mx, my], axis=-1))

    def world_to_cell(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Fractional cell indices of world points."""
        T = geometry.map_from_world(self._require_pose())
        m = geometry.apply_homography(T, np.stack([np.asarray(x, float), np.asarray(y, float)], axis=-1))
        return self.fractional_index(m[..., 0], m[..., 1])

    @property
    def anchor(self) -> np.ndarray:
        """World coordinates of the centre of cell (0, 0)."""
        return self.cell_to_world(0, 0)


def _uninformed(classes: ClassSet) -> np.ndarray:
    v = np.full(classes.count, 1.0 / (classes.count - 1))
    v[classes.person] = 0.0
    return v


def bayes_update(prior: np.ndarray, likelihood: np.ndarray, person_index: int | None = None) -> np.ndarray:
    """Normalised posterior ``likelihood * prior`` over the last axis.

    When ``person_index`` is given and the likelihood's argmax is that class,
    its likelihood is forced to 1 before the product.  Where prior and
    likelihood have disjoint support the normalised likelihood is returned.
    """
    prior = np.asarray(prior, dtype=float)
    lik = np.array(likelihood, dtype=float, copy=True)
    if np.any(lik < 0):
        raise ValueError("likelihood entries must be non-negative")
    lik_sum = lik.sum(axis=-1, keepdims=True)
    if np.any(lik_sum <= 0):
        raise ValueError("likelihood must have at least one positive entry")
    if person_index is not None:
        forced = np.argmax(lik, axis=-1) == person_index
        lik[..., person_index] = np.where(forced, 1.0, lik[..., person_index])
        lik_sum = lik.sum(axis=-1, keepdims=True)
    prod = lik * prior
    evidence = prod.sum(axis=-1, keepdims=True)
    zero = evidence <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(zero, lik / lik_sum, prod / np.where(zero, 1.0, evidence))
    return post


def _blend(
    prev: np.ndarray, mask: np.ndarray, post: np.ndarray, person_post: np.ndarray, alpha: float, p: int
) -> np.ndarray:
    """Decay every cell and blend the posterior into the observed ones.

    Works in place: ``prev`` becomes the result and ``post`` is clobbered.
    Both are ``(N, C)`` over flat cells; ``post`` must be finite everywhere
    and is ignored where ``mask`` is False.  The person entry of unobserved
    cells is held.
    """
    person_prev = prev[:, p].copy()
    prev *= alpha
    np.multiply(post, ((1.0 - alpha) * mask)[:, None], out=post)
    prev += post
    prev[:, p] = np.where(mask, alpha * person_prev + (1.0 - alpha) * person_post, person_prev)
    return prev


def apply_decay(
    grid: SemanticGroundMap,
    posterior: np.ndarray,
    observed: np.ndarray,
    person_detected: np.ndarray,
    config: FilterConfig,
) -> SemanticGroundMap:
    """Blend the posterior into the map with decay factor ``alpha``.

    ``posterior`` is ``(X, Y, C)``; its values are ignored where ``observed``
    is False.  Non-person entries of unobserved cells shrink by ``alpha``.
    The person entry moves toward the posterior only where the cell is
    observed, and toward 1 where ``person_detected``.
    """
    p = grid.classes.person
    C = grid.classes.count
    mask = np.asarray(observed, dtype=bool).ravel()
    post = np.where(mask[:, None], np.asarray(posterior, dtype=float).reshape(-1, C), 0.0)
    det = np.asarray(person_detected, dtype=bool).ravel()
    person_post = np.where(det, 1.0, post[:, p])
    out = _blend(grid.probs.reshape(-1, C).copy(), mask, post, person_post, config.alpha, p)
    return grid.replace(probs=out.reshape(grid.probs.shape))


def integrate_observation(
    grid: SemanticGroundMap,
    frame,
    cam: CameraModel,
    pose: RigidPose,
    config: FilterConfig,
    tick: int | None = None,
) -> SemanticGroundMap:
    """Register the map to ``pose`` and fuse one segmentation frame.

    ``frame`` is a :class:`~safe_landing.segmentation.SegmentationFrame` or a
    ``(height, width, C)`` probability array.  Each cell takes the pixel
    containing its projected centre.
    """
    probs_img = np.asarray(getattr(frame, "probs", frame), dtype=float)
    tick = grid.tick + 1 if tick is None else int(tick)
    C = grid.classes.count
    if grid.pose is not None:
        H = geometry.registration_homography(grid.pose, pose, cam)
        prev, last = geometry.warp_arrays(grid, H)
    else:
        prev, last = grid.probs.reshape(-1, C).copy(), grid.last_observed

    world = geometry.apply_homography(geometry.world_from_map(pose), grid.cell_centers())
    u, v, in_view = geometry.project_points(world, cam, pose)
    mask = in_view.ravel()
    p = grid.classes.person
    ones = np.ones(C)

    # out-of-view cells read pixel 0; their values are masked out in _blend
    ui = np.floor(np.where(mask, u.ravel(), 0.0)).astype(np.int64)
    vi = np.floor(np.where(mask, v.ravel(), 0.0)).astype(np.int64)
    pix = vi * probs_img.shape[1] + ui
    img = probs_img.reshape(-1, C)
    lik = np.take(img, pix, axis=0)
    hit = np.take(np.argmax(img, axis=1) == p, pix) & mask
    person_post = np.where(hit, 1.0, lik[:, p])
    # terrain update over the non-person entries only; a pure-person
    # observation says nothing about the terrain underneath
    lik[:, p] = 0.0
    lik_sum = lik @ ones
    empty = lik_sum <= 0
    if empty.any():
        lik[empty] = 1.0
        lik[empty, p] = 0.0
        lik_sum[empty] = C - 1
    post = lik
    post *= prev
    evidence = post @ ones
    disjoint = evidence <= 0
    if disjoint.any():
        # prior and likelihood share no support: keep the normalised likelihood
        fallback = np.take(img, pix[disjoint], axis=0)
        fallback[:, p] = 0.0
        fallback[lik_sum[disjoint] <= 0] = 1.0
        fallback[:, p] = 0.0
        post[disjoint] = fallback
        evidence[disjoint] = lik_sum[disjoint]
    post /= evidence[:, None]

    out = _blend(prev, mask, post, person_post, config.alpha, p)
    last = np.where(in_view, tick, last)
    return grid.replace(probs=out.reshape(grid.probs.shape), last_observed=last, pose=pose, tick=tick)


def filtered_argmax(grid: SemanticGroundMap) -> np.ndarray:
    """Per-cell argmax label grid (ties -> lowest class index).

    Cells without evidence (never observed, or decayed to an all-zero
    vector) are labelled Background.
    """
    labels = np.argmax(grid.probs, axis=-1)
    peak = np.take_along_axis(grid.probs, labels[..., None], axis=-1)[..., 0]
    no_evidence = (grid.last_observed < 0) | (peak <= 0)
    labels[no_evidence] = grid.classes.background
    return labels


def save_map(grid: SemanticGroundMap, path: str | Path) -> None:
    from .gridio import dump_grid

    anchor = grid.anchor if grid.pose is not None else np.array([np.nan, np.nan])
    dump_grid(path, grid.probs, grid.cell_size, anchor, grid.classes.names)
