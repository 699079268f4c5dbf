"""Class vocabulary, integer ids and crop grouping."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DuplicateClass, EmptyRegistry, ManifestError, UnknownClass

CROPS = ("Pepper", "Potato", "Tomato")
OTHER = "Other"

# The 15 PlantVillage directory names used by the reference experiments.
PLANTVILLAGE_15 = (
    "Pepper__bell___Bacterial_spot",
    "Pepper__bell___healthy",
    "Potato___Early_blight",
    "Potato___Late_blight",
    "Potato___healthy",
    "Tomato_Bacterial_spot",
    "Tomato_Early_blight",
    "Tomato_Late_blight",
    "Tomato_Leaf_Mold",
    "Tomato_Septoria_leaf_spot",
    "Tomato_Spider_mites_Two_spotted_spider_mite",
    "Tomato__Target_Spot",
    "Tomato__Tomato_YellowLeaf__Curl_Virus",
    "Tomato__Tomato_mosaic_virus",
    "Tomato_healthy",
)


def crop_from_name(name: str) -> str:
    for crop in CROPS:
        if name.startswith(crop):
            return crop
    return OTHER


@dataclass(frozen=True)
class ClassLabel:
    id: int
    name: str
    crop: str


@dataclass(frozen=True)
class LabelRegistry:
    classes: tuple[ClassLabel, ...]
    crop_index: dict[str, tuple[int, ...]] = field(compare=False)

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.id
        raise UnknownClass(name)

    def to_text(self) -> str:
        """Serialized form: one ``<id>,<name>,<crop>`` line per class, LF endings."""
        return "".join(f"{c.id},{c.name},{c.crop}\n" for c in self.classes)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_text().encode("utf-8"))
        return path


def build_registry(class_names: Iterable[str]) -> LabelRegistry:
    """Assign ids by lexicographic order of the names and bucket them by crop."""
    names = list(class_names)
    if not names:
        raise EmptyRegistry("no class names given")
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise DuplicateClass(n)
        if "," in n or "\n" in n:
            raise ValueError(f"class name may not contain ',' or newlines: {n!r}")
        seen.add(n)

    classes = tuple(ClassLabel(i, n, crop_from_name(n)) for i, n in enumerate(sorted(names)))
    buckets: dict[str, list[int]] = {}
    for c in classes:
        buckets.setdefault(c.crop, []).append(c.id)
    return LabelRegistry(classes, {k: tuple(v) for k, v in buckets.items()})


def crop_of(registry: LabelRegistry, class_id: int) -> str:
    if not 0 <= class_id < len(registry):
        raise UnknownClass(f"class id {class_id} outside 0..{len(registry) - 1}")
    return registry.classes[class_id].crop


def parse_registry(text: str) -> LabelRegistry:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split(",")
        if len(parts) != 3:
            raise ManifestError(f"registry line {lineno}: expected 3 fields, got {line!r}")
        rows.append((int(parts[0]), parts[1], parts[2]))
    registry = build_registry([name for _, name, _ in rows])
    for cid, name, crop in rows:
        c = registry.classes[cid]
        if c.name != name or c.crop != crop:
            raise ManifestError(f"registry line for {name!r} is inconsistent with sorted-name ids")
    return registry


def load_registry(path: str | Path) -> LabelRegistry:
    return parse_registry(Path(path).read_text(encoding="utf-8"))
