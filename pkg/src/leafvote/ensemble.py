"""Weighted soft voting over cached probability matrices."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .errors import (
    AlignmentError,
    BadAccuracy,
    BadProbabilities,
    BadSubsetSize,
    DegenerateWeights,
    ManifestError,
)

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ProbabilityMatrix:
    """N×C class probabilities for a fixed, ordered set of images."""

    values: np.ndarray
    image_ids: tuple[str, ...]
    model_tag: str
    registry_hash: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise BadProbabilities(f"{self.model_tag}: expected a non-empty N×C matrix, got shape {values.shape}")
        if values.shape[0] != len(self.image_ids):
            raise AlignmentError(f"{self.model_tag}: {values.shape[0]} rows but {len(self.image_ids)} image ids")
        if not np.all(np.isfinite(values)) or values.min() < 0:
            raise BadProbabilities(f"{self.model_tag}: probabilities must be finite and nonnegative")
        worst = np.abs(values.sum(axis=1) - 1.0).max()
        if worst > ROW_SUM_TOL:
            raise BadProbabilities(f"{self.model_tag}: row sums deviate from 1 by {worst:.3g}")

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def sorted_by_id(self) -> "ProbabilityMatrix":
        order = sorted(range(len(self.image_ids)), key=self.image_ids.__getitem__)
        return ProbabilityMatrix(self.values[order], tuple(self.image_ids[i] for i in order), self.model_tag, self.registry_hash)

    # -- cache file -------------------------------------------------------

    def to_text(self) -> str:
        """Cache file body; rows sorted by image id, probabilities at 9 decimals."""
        m = self.sorted_by_id()
        lines = [f"# model={m.model_tag} classes={m.n_classes} registry={m.registry_hash}\n"]
        for image_id, row in zip(m.image_ids, m.values):
            if "," in image_id or "\n" in image_id:
                raise ValueError(f"image id may not contain ',' or newlines: {image_id!r}")
            lines.append(image_id + "," + ",".join(f"{p:.9f}" for p in row) + "\n")
        return "".join(lines)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_text().encode("utf-8"))
        return path


def parse_cache(text: str) -> ProbabilityMatrix:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ManifestError("probability cache header missing")
    try:
        header = dict(kv.split("=", 1) for kv in lines[0][2:].split(" "))
        tag, n_classes, reg = header["model"], int(header["classes"]), header.get("registry", "")
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"bad cache header {lines[0]!r}") from exc
    ids, rows = [], []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        if len(parts) != n_classes + 1:
            raise ManifestError(f"cache line {lineno}: expected {n_classes + 1} fields")
        ids.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return ProbabilityMatrix(np.array(rows, dtype=np.float64).reshape(len(rows), n_classes), tuple(ids), tag, reg)


def load_cache(path: str | Path) -> ProbabilityMatrix:
    return parse_cache(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------- weighting


@dataclass(frozen=True)
class EnsembleWeights:
    weights: tuple[float, ...]
    tags: tuple[str, ...] | None = None
    name: str = "custom"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if self.tags is not None:
            object.__setattr__(self, "tags", tuple(self.tags))
            if len(self.tags) != len(w):
                raise AlignmentError(f"{len(w)} weights but {len(self.tags)} tags")
        if not w or any(not np.isfinite(x) or x < 0 for x in w):
            raise DegenerateWeights(f"weights must be finite and nonnegative, got {w}")
        if not any(x > 0 for x in w):
            raise DegenerateWeights("at least one weight must be positive")

    def __len__(self) -> int:
        return len(self.weights)

    def scaled(self, alpha: float) -> "EnsembleWeights":
        return EnsembleWeights(tuple(alpha * x for x in self.weights), self.tags, self.name)

    def label(self) -> str:
        return "[" + ", ".join(f"{x:g}" for x in self.weights) + "]"


def make_scheme(
    name: str,
    values: Sequence[float] | None = None,
    n_models: int | None = None,
    tags: Sequence[str] | None = None,
) -> EnsembleWeights:
    """Build one of the weighting schemes: ``equal``, ``valweighted`` or ``custom``.

    ``valweighted`` uses the validation accuracies (percent, in (0, 100])
    directly as weights; soft_vote normalizes by their sum.
    """
    key = name.lower().replace("-", "").replace("_", "")
    if key == "equal":
        m = n_models if n_models is not None else (len(tags) if tags is not None else None)
        if m is None or m < 1:
            raise DegenerateWeights("equal weighting needs the number of models")
        return EnsembleWeights((1.0,) * m, tags, "equal")
    if values is None:
        raise DegenerateWeights(f"scheme {name!r} needs values")
    if key in ("valweighted", "validationweighted", "validation"):
        for a in values:
            if not (0 < a <= 100):
                raise BadAccuracy(f"validation accuracy must lie in (0, 100], got {a}")
        return EnsembleWeights(tuple(values), tags, "valweighted")
    if key == "custom":
        return EnsembleWeights(tuple(values), tags, "custom")
    raise ValueError(f"unknown weighting scheme {name!r}")


def parse_scheme(text: str, n_models: int, tags: Sequence[str] | None = None) -> EnsembleWeights:
    """Parse ``equal``, ``valweighted:a1,a2,a3`` or ``custom:w1,w2,w3``.

    An optional ``=label`` suffix renames the scheme, e.g.
    ``custom:0.5,0.5,2=densenet-heavy``.
    """
    label = None
    if "=" in text:
        text, label = text.split("=", 1)
    kind, _, rest = text.partition(":")
    values = [float(x) for x in rest.split(",")] if rest else None
    scheme = make_scheme(kind, values, n_models=n_models, tags=tags)
    if len(scheme) != n_models:
        raise AlignmentError(f"scheme {text!r} has {len(scheme)} weights for {n_models} models")
    if label:
        scheme = EnsembleWeights(scheme.weights, scheme.tags, label)
    return scheme


# ------------------------------------------------------------------ voting


def check_aligned(matrices: Sequence[ProbabilityMatrix]) -> None:
    if not matrices:
        raise AlignmentError("no probability matrices given")
    first = matrices[0]
    for m in matrices[1:]:
        if m.n_classes != first.n_classes:
            raise AlignmentError(f"{m.model_tag} has {m.n_classes} classes, {first.model_tag} has {first.n_classes}")
        if m.image_ids != first.image_ids:
            raise AlignmentError(f"{m.model_tag} and {first.model_tag} disagree on image ids or their order")


def _weights_for(matrices: Sequence[ProbabilityMatrix], w: EnsembleWeights) -> np.ndarray:
    if len(w) != len(matrices):
        raise AlignmentError(f"{len(w)} weights for {len(matrices)} matrices")
    if w.tags is None:
        return np.asarray(w.weights, dtype=np.float64)
    lookup = dict(zip(w.tags, w.weights))
    tags = [m.model_tag for m in matrices]
    if sorted(lookup) != sorted(tags) or len(set(tags)) != len(tags):
        raise AlignmentError(f"weight tags {w.tags} do not match matrix tags {tags}")
    return np.asarray([lookup[t] for t in tags], dtype=np.float64)


def soft_vote(matrices: Sequence[ProbabilityMatrix], w: EnsembleWeights | None = None) -> ProbabilityMatrix:
    """Weighted mean of member probabilities, normalized by the weight sum."""
    check_aligned(matrices)
    if w is None:
        w = make_scheme("equal", n_models=len(matrices))
    weights = _weights_for(matrices, w)
    stack = np.stack([m.values for m in matrices])
    out = _accel.weighted_vote(stack, weights)
    first = matrices[0]
    return ProbabilityMatrix(out, first.image_ids, "+".join(m.model_tag for m in matrices), first.registry_hash)


def predict(matrix: ProbabilityMatrix) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return _accel.argmax_rows(matrix.values)


def subset_ensembles(matrices: Sequence[ProbabilityMatrix], k: int) -> list[tuple[tuple[str, ...], ProbabilityMatrix]]:
    """Equal-weight vote of every k-subset, subsets in lexicographic tag order."""
    if not 1 <= k <= len(matrices):
        raise BadSubsetSize(f"k={k} outside 1..{len(matrices)}")
    check_aligned(matrices)
    ordered = sorted(matrices, key=lambda m: m.model_tag)
    out = []
    for combo in itertools.combinations(ordered, k):
        tags = tuple(m.model_tag for m in combo)
        out.append((tags, soft_vote(list(combo), make_scheme("equal", n_models=k))))
    return out


def align_to(matrix: ProbabilityMatrix, image_ids: Sequence[str]) -> ProbabilityMatrix:
    """Reorder rows of ``matrix`` to follow ``image_ids``."""
    index = {img: i for i, img in enumerate(matrix.image_ids)}
    try:
        order = [index[i] for i in image_ids]
    except KeyError as exc:
        raise AlignmentError(f"{matrix.model_tag} has no row for image {exc.args[0]!r}") from None
    return ProbabilityMatrix(matrix.values[order], tuple(image_ids), matrix.model_tag, matrix.registry_hash)
