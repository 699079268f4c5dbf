"""Stratified split manifests, dataset scanning and image preprocessing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import BadImage, BadRatios, EmptyClass, ManifestError
from .labels import LabelRegistry, build_registry

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_RATIOS = (0.7, 0.15, 0.15)
DEFAULT_SEED = 42
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp"}


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_id: int
    split: Split


@dataclass(frozen=True)
class SplitManifest:
    entries: tuple[ManifestEntry, ...]
    seed: int
    ratios: tuple[float, float, float]
    registry_hash: str = ""

    def select(self, split: Split | str) -> list[ManifestEntry]:
        split = Split(split)
        return [e for e in self.entries if e.split is split]

    def counts(self) -> dict[Split, int]:
        out = {s: 0 for s in Split}
        for e in self.entries:
            out[e.split] += 1
        return out

    def to_text(self) -> str:
        t, v, s = self.ratios
        lines = [f"# seed={self.seed} ratios={t!r},{v!r},{s!r} registry={self.registry_hash}\n"]
        lines += [f"{e.path},{e.class_id},{e.split.value}\n" for e in self.entries]
        return "".join(lines)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_text().encode("utf-8"))
        return path


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three positive fractions summing to 1, got {tuple(ratios)}")
    return (float(ratios[0]), float(ratios[1]), float(ratios[2]))


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Per-class (train, val, test) counts by largest-remainder rounding.

    Each count is the floor or the ceiling of ``ratio * n``; leftover images
    go to the largest fractional parts, ties resolved train, val, test.
    """
    quotas = [r * n for r in ratios]
    counts = [math.floor(q + 1e-9) for q in quotas]
    fracs = [round(q - c, 9) for q, c in zip(quotas, counts)]
    for i in sorted(range(3), key=lambda i: (-fracs[i], i))[: max(0, n - sum(counts))]:
        counts[i] += 1
    return counts[0], counts[1], counts[2]


def make_split(
    file_list: Iterable[tuple[str, int]],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = DEFAULT_SEED,
    registry_hash: str = "",
    n_classes: int | None = None,
) -> SplitManifest:
    """Stratified shuffle-then-cut split of ``(path, class_id)`` pairs.

    Within each class the paths are sorted, permuted by a generator seeded
    with ``(seed, class_id)``, and cut into val, test and train in that
    order (sizes from :func:`split_sizes`). The result depends only on the set of pairs, the ratios and the
    seed, never on the input order.

    If ``n_classes`` is given, every id in ``range(n_classes)`` must have at
    least one file, otherwise EmptyClass is raised.
    """
    ratios = _check_ratios(ratios)
    by_class: dict[int, list[str]] = {}
    seen: set[str] = set()
    for path, cid in file_list:
        if path in seen:
            raise ManifestError(f"duplicate path {path!r}")
        seen.add(path)
        by_class.setdefault(int(cid), []).append(path)
    if not by_class:
        raise EmptyClass("file list is empty")
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(by_class))
        if missing:
            raise EmptyClass(f"classes without files: {missing}")

    entries: list[ManifestEntry] = []
    for cid in sorted(by_class):
        paths = sorted(by_class[cid])
        n_train, n_val, n_test = split_sizes(len(paths), ratios)
        if n_train < 1:
            raise EmptyClass(f"class {cid} has no training image ({len(paths)} files)")
        order = np.random.default_rng([seed, cid]).permutation(len(paths))
        shuffled = [paths[i] for i in order]
        for i, p in enumerate(shuffled):
            if i < n_val:
                split = Split.VAL
            elif i < n_val + n_test:
                split = Split.TEST
            else:
                split = Split.TRAIN
            entries.append(ManifestEntry(p, cid, split))
    entries.sort(key=lambda e: e.path)
    return SplitManifest(tuple(entries), int(seed), ratios, registry_hash)


def parse_manifest(text: str) -> SplitManifest:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ManifestError("manifest header missing")
    header = dict(kv.split("=", 1) for kv in lines[0][2:].split())
    try:
        seed = int(header["seed"])
        ratios = tuple(float(x) for x in header["ratios"].split(","))
        registry_hash = header.get("registry", "")
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"bad manifest header {lines[0]!r}") from exc
    entries = []
    for line in lines[1:]:
        path, cid, split = line.rsplit(",", 2)
        entries.append(ManifestEntry(path, int(cid), Split(split)))
    return SplitManifest(tuple(entries), seed, ratios, registry_hash)  # type: ignore[arg-type]


def load_manifest(path: str | Path) -> SplitManifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def scan_dataset(root: str | Path) -> tuple[LabelRegistry, list[tuple[str, int]]]:
    """Read a ``root/<class_name>/<image>`` tree into a registry and file list."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    registry = build_registry([d.name for d in class_dirs])
    files = []
    for d in class_dirs:
        cid = registry.id_of(d.name)
        for f in sorted(d.rglob("*")):
            if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
                files.append((f.relative_to(root).as_posix(), cid))
    return registry, files


# ------------------------------------------------------------ preprocessing


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: tuple[int, int] = (224, 224)
    channel_mean: tuple[float, float, float] = IMAGENET_MEAN
    channel_std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if len(self.target_size) != 2 or min(self.target_size) <= 0:
            raise ValueError(f"target_size must be two positive ints, got {self.target_size}")
        if len(self.channel_std) != 3 or min(self.channel_std) <= 0:
            raise ValueError("channel_std must be three positive values")
        if len(self.channel_mean) != 3:
            raise ValueError("channel_mean must have three values")


def resize_bilinear(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """H×W×3 -> 3×h×w, bilinear with half-pixel centres and no antialiasing."""
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
    return F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)[0].numpy()


def preprocess(image: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise BadImage(f"expected an H×W×3 image, got shape {image.shape}")
    resized = resize_bilinear(image, cfg.target_size)
    mean = np.asarray(cfg.channel_mean, dtype=np.float32)[:, None, None]
    std = np.asarray(cfg.channel_std, dtype=np.float32)[:, None, None]
    return (resized - mean) / std


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an H×W×3 float32 array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_batch(root: str | Path, paths: Sequence[str], cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    root = Path(root)
    return np.stack([preprocess(load_image(root / p), cfg) for p in paths])
