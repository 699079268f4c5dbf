"""Experiment grid over cached probabilities: singletons, pairs, weighting schemes."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import EnsembleWeights, ProbabilityMatrix, check_aligned, make_scheme, predict, soft_vote
from .errors import AlignmentError
from .metrics import confusion, report


@dataclass(frozen=True)
class GridRow:
    config_name: str
    kind: str  # "single", "pair" or "scheme"
    member_tags: tuple[str, ...]
    weights: tuple[float, ...]
    test_accuracy: float
    gap_vs_full: float


@dataclass(frozen=True)
class AblationGrid:
    rows: tuple[GridRow, ...]
    full_accuracy: float

    def __len__(self) -> int:
        return len(self.rows)

    def row(self, name: str) -> GridRow:
        for r in self.rows:
            if r.config_name == name:
                return r
        raise KeyError(name)


def vote_accuracy(matrices: Sequence[ProbabilityMatrix], weights: EnsembleWeights, truth: Sequence[int]) -> float:
    voted = soft_vote(matrices, weights)
    return report(confusion(truth, predict(voted), voted.n_classes)).overall_accuracy


def run_grid(
    caches: Sequence[ProbabilityMatrix],
    truth: Sequence[int],
    schemes: Sequence[EnsembleWeights],
) -> AblationGrid:
    """Evaluate every singleton, every equal-weight pair and the full set under each scheme.

    The gap column is measured against the equal-weight vote over all
    members. Rows come out as singletons and pairs in lexicographic tag
    order, then schemes in the order given.
    """
    if len(caches) < 2:
        raise AlignmentError("an ablation grid needs at least two caches")
    check_aligned(caches)
    truth = np.asarray(truth, dtype=np.int64)
    if len(truth) != len(caches[0]):
        raise AlignmentError(f"{len(truth)} labels for {len(caches[0])} cached rows")
    tags = [c.model_tag for c in caches]
    if len(set(tags)) != len(tags):
        raise AlignmentError(f"duplicate model tags {tags}")

    full = vote_accuracy(caches, make_scheme("equal", n_models=len(caches)), truth)
    ordered = sorted(caches, key=lambda c: c.model_tag)
    rows = []
    for k, kind in ((1, "single"), (2, "pair")):
        for combo in itertools.combinations(ordered, k):
            acc = vote_accuracy(list(combo), make_scheme("equal", n_models=k), truth)
            member = tuple(c.model_tag for c in combo)
            rows.append(GridRow(" + ".join(member), kind, member, (1.0,) * k, acc, acc - full))
    for scheme in schemes:
        acc = vote_accuracy(caches, scheme, truth)
        weights = scheme.weights
        if scheme.tags is not None:
            lookup = dict(zip(scheme.tags, scheme.weights))
            weights = tuple(lookup[t] for t in tags)
        rows.append(GridRow(f"{scheme.name} {scheme.label()}", "scheme", tuple(tags), weights, acc, acc - full))
    return AblationGrid(tuple(rows), full)


def write_grid_csv(grid: AblationGrid, path: str | Path) -> Path:
    """Accuracies and gaps as percentages at 2 decimals."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "kind", "members", "weights", "test_accuracy_pct", "gap_vs_full_pct"])
        for r in grid.rows:
            w.writerow([
                r.config_name,
                r.kind,
                "+".join(r.member_tags),
                ";".join(f"{x:g}" for x in r.weights),
                f"{100 * r.test_accuracy:.2f}",
                f"{100 * r.gap_vs_full:+.2f}",
            ])
    return path


def read_grid_csv(path: str | Path) -> AblationGrid:
    """Inverse of :func:`write_grid_csv`, at the file's 2-decimal precision."""
    with open(path, newline="") as fh:
        rows = [
            GridRow(
                r["config"],
                r["kind"],
                tuple(r["members"].split("+")),
                tuple(float(x) for x in r["weights"].split(";")),
                float(r["test_accuracy_pct"]) / 100,
                float(r["gap_vs_full_pct"]) / 100,
            )
            for r in csv.DictReader(fh)
        ]
    full = [r.test_accuracy - r.gap_vs_full for r in rows]
    return AblationGrid(tuple(rows), full[0] if full else 0.0)
