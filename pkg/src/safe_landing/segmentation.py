"""Segmentation providers.

A provider turns a camera view into a :class:`SegmentationFrame`: a
``(height, width, C)`` array of per-pixel class probabilities.  Any external
model can stand in by producing that array (for instance from a saved
``.npy`` file with the same layout and class order); the pipeline reads
nothing else.

The synthetic provider renders from ground truth through a confusion-matrix
noise model.  Noise-model config files (YAML or JSON)::

    classes: [Road, Dirt, ...]        # optional, defaults to the built-in list
    matrix: [[...], ...]              # C x C, row = true class, rows sum to 1
    concentration: 0.9                # peak probability of the emitted class
    seed: 0

or, instead of ``matrix``, the calibrated default with overrides::

    diagonal: {Person: 1.0}
    person_false_positive: 0.0
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np
import yaml

from .classes import CLASS_NAMES

# Per-class IoU [%] of the reference segmentation network; None = not
# measurable on the held-out split.
REFERENCE_IOU: dict[str, float | None] = {
    "Road": 92.85,
    "Dirt": None,
    "Gravel": None,
    "Rock": None,
    "Grass": 89.18,
    "Vegetation": 96.41,
    "Tree": 81.52,
    "Obstacle": 39.14,
    "Animal": 81.74,
    "Person": 70.09,
    "Bicycle": 1.88,
    "Vehicle": 69.18,
    "Water": 83.30,
    "Boat": None,
    "Wall": 83.49,
    "Roof": 81.05,
    "Sky": 97.40,
    "Drone": 35.49,
    "Train-Track": 50.61,
    "Background": None,
}
REFERENCE_MIOU = 70.22
UNMEASURED_DIAGONAL = 0.8
DEFAULT_CONCENTRATION = 0.9

# Classes that are easily confused with each other from the air.  Half of a
# row's error mass goes to these, half to Background.
ADJACENT: dict[str, tuple[str, ...]] = {
    "Road": ("Gravel", "Dirt"),
    "Dirt": ("Gravel", "Grass"),
    "Gravel": ("Road", "Dirt"),
    "Rock": ("Gravel", "Wall"),
    "Grass": ("Vegetation", "Dirt"),
    "Vegetation": ("Grass", "Tree"),
    "Tree": ("Vegetation",),
    "Obstacle": ("Wall", "Vehicle"),
    "Animal": ("Obstacle",),
    "Person": ("Obstacle",),
    "Bicycle": ("Obstacle", "Vehicle"),
    "Vehicle": ("Obstacle", "Roof"),
    "Water": ("Vegetation",),
    "Boat": ("Water", "Vehicle"),
    "Wall": ("Roof",),
    "Roof": ("Wall",),
    "Sky": (),
    "Drone": ("Obstacle",),
    "Train-Track": ("Gravel", "Road"),
    "Background": ("Obstacle",),
}


@dataclass(frozen=True)
class SegmentationFrame:
    probs: np.ndarray
    tick: int = 0

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)


class SegmentationProvider(Protocol):
    def __call__(self, view: np.ndarray, tick: int) -> SegmentationFrame: ...


@dataclass(frozen=True, eq=False)
class NoiseModel:
    confusion: np.ndarray
    concentration: float = DEFAULT_CONCENTRATION
    seed: int = 0
    classes: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self) -> None:
        m = np.asarray(self.confusion, dtype=float)
        C = len(self.classes)
        if m.shape != (C, C):
            raise ValueError(f"confusion matrix must be {C}x{C}")
        if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("confusion matrix must be row-stochastic")
        if not 0.0 < self.concentration <= 1.0:
            raise ValueError("concentration must lie in (0, 1]")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "confusion", m)
        cdf = np.cumsum(m, axis=1)
        cdf[:, -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.confusion).copy()

    @classmethod
    def identity(cls, concentration: float = 1.0, seed: int = 0) -> "NoiseModel":
        return cls(np.eye(len(CLASS_NAMES)), concentration, seed)

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseModel":
        classes = tuple(data.get("classes", CLASS_NAMES))
        concentration = float(data.get("concentration", DEFAULT_CONCENTRATION))
        seed = int(data.get("seed", 0))
        if "matrix" in data:
            return cls(np.asarray(data["matrix"], dtype=float), concentration, seed, classes)
        return default_noise_model(
            diagonal=data.get("diagonal"),
            person_false_positive=float(data.get("person_false_positive", 0.0)),
            concentration=concentration,
            seed=seed,
        )

    @classmethod
    def load(cls, path: str | Path) -> "NoiseModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "matrix": self.confusion.tolist(),
            "concentration": self.concentration,
            "seed": self.seed,
        }

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def default_noise_model(
    diagonal: Mapping[str, float] | None = None,
    person_false_positive: float = 0.0,
    concentration: float = DEFAULT_CONCENTRATION,
    seed: int = 0,
) -> NoiseModel:
    """Confusion model calibrated so each diagonal equals the class IoU.

    Off-diagonal mass is split evenly between Background and the class's
    visually adjacent classes.  ``person_false_positive`` moves that much of
    every other row's error mass into the Person column.
    """
    names = CLASS_NAMES
    C = len(names)
    diag = {n: (UNMEASURED_DIAGONAL if v is None else v / 100.0) for n, v in REFERENCE_IOU.items()}
    if diagonal:
        for k, v in diagonal.items():
            if k not in diag:
                raise ValueError(f"unknown class {k!r}")
            diag[k] = float(v)
    if not 0.0 <= person_false_positive <= 1.0:
        raise ValueError("person_false_positive must lie in [0, 1]")
    m = np.zeros((C, C))
    bg = names.index("Background")
    person = names.index("Person")
    for i, name in enumerate(names):
        d = diag[name]
        if not 0.0 <= d <= 1.0:
            raise ValueError(f"diagonal for {name} must lie in [0, 1]")
        m[i, i] = d
        err = 1.0 - d
        if err <= 0:
            continue
        if i != person and person_false_positive > 0:
            fp = err * person_false_positive
            m[i, person] += fp
            err -= fp
        adj = [names.index(a) for a in ADJACENT[name]]
        if i == bg or not adj:
            targets = adj if i == bg else [bg]
            share = err / len(targets)
            for t in targets:
                m[i, t] += share
        else:
            m[i, bg] += err / 2.0
            for t in adj:
                m[i, t] += err / 2.0 / len(adj)
    return NoiseModel(m, concentration, seed)


def segment(view: np.ndarray, model: NoiseModel, rng: np.random.Generator, tick: int = 0) -> SegmentationFrame:
    """Corrupt a ground-truth class image into a probability frame.

    Each pixel emits a class drawn from its true class's confusion row; its
    probability vector puts ``concentration`` on the emitted class and
    spreads the rest uniformly over the others.
    """
    view = np.asarray(view)
    C = len(model.classes)
    u = rng.random(view.shape)
    cdf = model._cdf[view]  # type: ignore[attr-defined]
    emitted = np.minimum((u[..., None] >= cdf).sum(axis=-1), C - 1)
    rest = (1.0 - model.concentration) / (C - 1)
    probs = np.full(view.shape + (C,), rest)
    np.put_along_axis(probs, emitted[..., None], model.concentration, axis=-1)
    return SegmentationFrame(probs, tick)


class SyntheticSegmenter:
    """Stateful provider: a noise model plus its own seeded generator."""

    def __init__(self, model: NoiseModel, rng: np.random.Generator | None = None):
        self.model = model
        self.rng = rng if rng is not None else model.rng()

    def __call__(self, view: np.ndarray, tick: int = 0) -> SegmentationFrame:
        return segment(view, self.model, self.rng, tick)
