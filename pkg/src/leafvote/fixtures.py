"""Synthetic image trees for offline tests and demos."""

from __future__ import annotations

import colorsys
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .labels import PLANTVILLAGE_15


def class_tint(index: int, n_classes: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(index / n_classes, 0.7, 0.8))


def make_tinted_fixture(
    root: str | Path,
    n_classes: int = 15,
    per_class: int = 30,
    size: int = 64,
    noise: float = 0.05,
    seed: int = 0,
    class_names: Sequence[str] | None = None,
) -> Path:
    """Write ``root/<class>/<i>.png`` images of class-tinted Gaussian noise.

    Each class gets its own hue; pixels are the tint plus N(0, noise) and
    clipped to [0, 1]. With 15 classes the PlantVillage directory names are
    used so the crop grouping is exercised.
    """
    root = Path(root)
    if class_names is None:
        class_names = PLANTVILLAGE_15 if n_classes == 15 else [f"class_{i:02d}" for i in range(n_classes)]
    if len(class_names) != n_classes:
        raise ValueError("class_names length must equal n_classes")
    rng = np.random.default_rng(seed)
    for c, name in enumerate(sorted(class_names)):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        tint = class_tint(c, n_classes)
        for i in range(per_class):
            img = np.clip(tint + rng.normal(0.0, noise, (size, size, 3)), 0.0, 1.0)
            Image.fromarray((img * 255).round().astype(np.uint8)).save(d / f"img_{i:04d}.png")
    return root
