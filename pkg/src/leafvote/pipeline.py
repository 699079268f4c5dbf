"""End-to-end run: split, train, cache, ensemble, metrics, ablations, bench, figures."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .ablation import run_grid, write_grid_csv
from .bench import bench_ensemble, bench_model, write_bench_csv
from .data import DEFAULT_RATIOS, DEFAULT_SEED, Split, load_batch, make_split, scan_dataset
from .ensemble import ProbabilityMatrix, load_cache, make_scheme, parse_scheme, predict, soft_vote
from .errors import StageError
from .metrics import (
    confusion,
    crop_report,
    report,
    write_confusion_csv,
    write_crop_csv,
    write_report_csv,
    write_report_json,
)
from .models import Arch, ModelSpec, build_model, load_checkpoint, save_checkpoint
from .report import emit_figures
from .trainer import TrainConfig, extract_features, train_head

log = logging.getLogger(__name__)

DEFAULT_ARCHS = ("resnet50", "efficientnet_b0", "densenet121")
# weighting ablation in [resnet50, efficientnet_b0, densenet121] order
DEFAULT_SCHEMES = ("equal", "valweighted", "custom:0.5,0.5,2.0=densenet-heavy", "custom:2.0,0.5,0.5=resnet-heavy")


@dataclass(frozen=True)
class PipelineConfig:
    """Every default follows the reference recipe; only ``dataset_root`` is required.

    Keys (flat, as in the JSON config file): dataset_root, output_dir, seed,
    ratios, archs, head_seed, provider, learning_rate, batch_size, epochs,
    checkpoint_policy, schemes, bench, bench_samples, bench_warmup,
    feature_batch_size, parallel_train.
    """

    dataset_root: str
    output_dir: str = "leafvote-run"
    seed: int = DEFAULT_SEED
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    archs: tuple[str, ...] = DEFAULT_ARCHS
    train: TrainConfig = field(default_factory=TrainConfig)
    head_seed: int = 42
    provider: str = "torchvision"
    schemes: tuple[str, ...] = DEFAULT_SCHEMES
    bench: bool = True
    bench_samples: int = 1000
    bench_warmup: int = 50
    feature_batch_size: int = 32
    parallel_train: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "archs", tuple(Arch.parse(a).value for a in self.archs))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig(**self.train))

    def to_flat(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "train"}
        t = self.train.to_dict()
        d.update(learning_rate=t["learning_rate"], batch_size=t["batch_size"], epochs=t["epochs"], checkpoint_policy=t["checkpoint_policy"])
        d["ratios"] = list(self.ratios)
        d["archs"] = list(self.archs)
        d["schemes"] = list(self.schemes)
        return d

    @classmethod
    def from_flat(cls, d: dict[str, Any]) -> "PipelineConfig":
        d = dict(d)
        train_keys = ("learning_rate", "batch_size", "epochs", "checkpoint_policy")
        train = TrainConfig(**{k: d.pop(k) for k in train_keys if k in d})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(train=train, **d)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_flat(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n")
        return path

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_flat(), sort_keys=True).encode()).hexdigest()


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _model_job(arch: str, cfg: PipelineConfig, manifest_text: str, registry_hash: str, work: str) -> dict:
    """Train one architecture and write its checkpoint, history and test cache."""
    from .data import parse_manifest

    work_dir = Path(work)
    manifest = parse_manifest(manifest_text)
    n_classes = 1 + max(e.class_id for e in manifest.entries)
    with _Stage(f"train:{arch}"):
        model = build_model(ModelSpec(arch, n_classes, pretrained=cfg.provider != "random"), head_seed=cfg.head_seed, provider=cfg.provider)
        paths = [e.path for e in manifest.entries]
        feats = extract_features(model, cfg.dataset_root, paths, cfg.feature_batch_size)
        by_split = {s: [i for i, e in enumerate(manifest.entries) if e.split is s] for s in Split}
        labels = np.array([e.class_id for e in manifest.entries])
        tr, va = by_split[Split.TRAIN], by_split[Split.VAL]
        model, history = train_head(model, feats[tr], labels[tr], feats[va], labels[va], cfg.train)
        ckpt = save_checkpoint(model, work_dir / "checkpoints" / f"{arch}.npz", registry_hash=registry_hash, manifest_seed=manifest.seed)
        history.to_csv(work_dir / "checkpoints" / f"{arch}.history.csv")
    with _Stage(f"infer-cache:{arch}"):
        te = by_split[Split.TEST]
        probs = model.probs_from_features(feats[te])
        cache = ProbabilityMatrix(probs, [paths[i] for i in te], arch, registry_hash)
        cache.save(work_dir / "caches" / f"{arch}.csv")
    return {
        "arch": arch,
        "checkpoint": str(ckpt.relative_to(work_dir)),
        "best_val_accuracy": history.best_val_accuracy,
        "best_epoch": history.best_epoch,
    }


def _bench_stage(cfg: PipelineConfig, work: Path, manifest, archs: Sequence[str]) -> list:
    test = manifest.select(Split.TEST)
    n = min(cfg.bench_samples, len(test))
    if n < cfg.bench_samples:
        log.warning("only %d test images; benchmarking %d samples instead of %d", len(test), n, cfg.bench_samples)
    images = load_batch(cfg.dataset_root, [e.path for e in test[:n]])
    models = [load_checkpoint(work / "checkpoints" / f"{a}.npz", provider=cfg.provider) for a in archs]
    results = [bench_model(m, images, warmup=cfg.bench_warmup, samples=n) for m in models]
    if len(models) > 1:
        results.append(bench_ensemble(models, images, warmup=cfg.bench_warmup, samples=n))
    return results


def run_pipeline(cfg: PipelineConfig, overwrite: bool = False) -> Path:
    """Run every stage and return the populated output directory.

    Artifacts are assembled in a temporary sibling directory and moved into
    place only when all stages succeed, so a failed run leaves nothing behind.
    """
    out = Path(cfg.output_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise StageError("setup", FileExistsError(f"{out} exists and is not empty"))
    out.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        _run_stages(cfg, work)
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    work.rename(out)
    return out


def _run_stages(cfg: PipelineConfig, work: Path) -> None:
    (work / "checkpoints").mkdir()
    (work / "caches").mkdir()
    (work / "figures").mkdir()
    cfg.save(work / "config.json")

    with _Stage("split"):
        registry, files = scan_dataset(cfg.dataset_root)
        registry.save(work / "registry.csv")
        manifest = make_split(files, cfg.ratios, cfg.seed, registry.content_hash(), n_classes=len(registry))
        manifest.save(work / "manifest.csv")

    reg_hash = registry.content_hash()
    manifest_text = manifest.to_text()
    jobs = [(a, cfg, manifest_text, reg_hash, str(work)) for a in cfg.archs]
    if cfg.parallel_train and len(jobs) > 1:
        with ProcessPoolExecutor(len(jobs)) as pool:
            model_rows = list(pool.map(_model_job, *zip(*jobs)))
    else:
        model_rows = [_model_job(*j) for j in jobs]

    # downstream stages read the caches back so they see exactly what was written
    caches = [load_cache(work / "caches" / f"{a}.csv") for a in cfg.archs]
    truth_by_id = {e.path: e.class_id for e in manifest.select(Split.TEST)}
    truth = np.array([truth_by_id[i] for i in caches[0].image_ids])
    for row, cache in zip(model_rows, caches):
        row["test_accuracy"] = float((predict(cache) == truth).mean())
    _write_models_csv(model_rows, work / "models.csv")

    with _Stage("ensemble"):
        voted = soft_vote(caches, make_scheme("equal", n_models=len(caches)))
        voted.save(work / "caches" / "ensemble.csv")

    with _Stage("metrics"):
        rep = report(confusion(truth, predict(voted), len(registry)))
        crops = crop_report(rep.confusion, registry)
        write_report_csv(rep, registry.names, work / "metrics.csv")
        write_report_json(rep, registry.names, work / "metrics.json")
        write_confusion_csv(rep.confusion, registry.names, work / "confusion.csv")
        write_crop_csv(crops, work / "crops.csv")

    with _Stage("ablate"):
        schemes = _resolve_schemes(cfg, model_rows, len(caches))
        grid = run_grid(caches, truth, schemes)
        write_grid_csv(grid, work / "grid.csv")

    bench_rows = []
    if cfg.bench:
        with _Stage("bench"):
            bench_rows = _bench_stage(cfg, work, manifest, cfg.archs)
            write_bench_csv(bench_rows, work / "bench.csv")

    with _Stage("report"):
        emit_figures(rep, grid, work / "figures", registry.names)

    summary = {
        "tool": "leafvote",
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_flat(),
        "seeds": {"split": cfg.seed, "head": cfg.head_seed, "epoch_shuffle": f"({cfg.head_seed}, epoch)"},
        "registry_hash": reg_hash,
        "models": model_rows,
        "ensemble_accuracy": rep.overall_accuracy,
        "full_grid_accuracy": grid.full_accuracy,
        "artifacts": sorted(p.relative_to(work).as_posix() for p in work.rglob("*") if p.is_file()) + ["run_summary.json"],
    }
    (work / "run_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _resolve_schemes(cfg: PipelineConfig, model_rows: list[dict], m: int):
    schemes = []
    for text in cfg.schemes:
        if text.split("=")[0] == "valweighted":
            schemes.append(make_scheme("valweighted", [100 * r["best_val_accuracy"] for r in model_rows]))
            continue
        try:
            schemes.append(parse_scheme(text, m))
        except ValueError as exc:
            log.warning("skipping scheme %r: %s", text, exc)
    return schemes


def _write_models_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "test_accuracy_pct", "best_val_accuracy_pct", "best_epoch"])
        for r in rows:
            w.writerow([r["arch"], f"{100 * r['test_accuracy']:.2f}", f"{100 * r['best_val_accuracy']:.2f}", r["best_epoch"]])
