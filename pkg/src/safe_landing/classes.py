"""Semantic class catalogue shared by every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass

CLASS_NAMES: tuple[str, ...] = (
    "Road",
    "Dirt",
    "Gravel",
    "Rock",
    "Grass",
    "Vegetation",
    "Tree",
    "Obstacle",
    "Animal",
    "Person",
    "Bicycle",
    "Vehicle",
    "Water",
    "Boat",
    "Wall",
    "Roof",
    "Sky",
    "Drone",
    "Train-Track",
    "Background",
)


@dataclass(frozen=True)
class ClassSet:
    """Ordered class list plus the ranked subset that is safe to land on.

    ``safe`` is ordered by preference: index 0 is the most preferred class.
    """

    names: tuple[str, ...] = CLASS_NAMES
    safe: tuple[str, ...] = ("Grass",)

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        for required in ("Person", "Background"):
            if required not in self.names:
                raise ValueError(f"class set must contain {required!r}")
        if len(set(self.safe)) != len(self.safe):
            raise ValueError("safe classes must be unique")
        for name in self.safe:
            if name not in self.names:
                raise ValueError(f"unknown safe class {name!r}")
        if "Person" in self.safe:
            raise ValueError("Person can never be a safe class")

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def person(self) -> int:
        return self.names.index("Person")

    @property
    def background(self) -> int:
        return self.names.index("Background")

    @property
    def safe_indices(self) -> tuple[int, ...]:
        return tuple(self.names.index(n) for n in self.safe)

    def is_safe(self, index: int) -> bool:
        return self.names[index] in self.safe

    def rank(self, index: int) -> int:
        """Preference rank of a safe class (0 = best)."""
        return self.safe.index(self.names[index])


DEFAULT_CLASSES = ClassSet()
