"""Command-line entry point: ``leafvote <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import LeafvoteError, StageError

log = logging.getLogger("leafvote")


def _csv_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(","))


def split_scheme_list(text: str) -> list[str]:
    """Split ``equal,valweighted:95.5,95.3,96.3,custom:0.5,0.5,2`` into schemes.

    A token starting with a letter opens a new scheme; numeric tokens
    continue the previous one.
    """
    out: list[str] = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if re.match(r"[A-Za-z]", tok) or not out:
            out.append(tok)
        else:
            out[-1] += "," + tok
    return out


def _manifest_root(args) -> Path:
    return Path(args.root) if args.root else Path(args.manifest).resolve().parent


# ------------------------------------------------------------------ commands


def cmd_split(args) -> None:
    from .data import make_split, scan_dataset

    registry, files = scan_dataset(args.root)
    out = Path(args.out)
    reg_path = Path(args.registry_out) if args.registry_out else out.with_name("registry.csv")
    registry.save(reg_path)
    manifest = make_split(files, _floats(args.ratios), args.seed, registry.content_hash(), n_classes=len(registry))
    manifest.save(out)
    counts = manifest.counts()
    print(f"{len(files)} images, {len(registry)} classes -> train {counts['train']}, val {counts['val']}, test {counts['test']}")
    print(f"manifest: {out}\nregistry: {reg_path}")


def cmd_train(args) -> None:
    from .data import load_manifest
    from .models import ModelSpec, build_model, save_checkpoint
    from .trainer import TrainConfig, train

    manifest = load_manifest(args.manifest)
    n_classes = 1 + max(e.class_id for e in manifest.entries)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, checkpoint_policy=args.policy)
    spec = ModelSpec(args.arch, n_classes, pretrained=args.provider != "random")
    model = build_model(spec, head_seed=args.seed, provider=args.provider)
    model, history = train(model, manifest, cfg, root=_manifest_root(args))
    out = Path(args.out)
    save_checkpoint(model, out, registry_hash=manifest.registry_hash, manifest_seed=manifest.seed)
    hist_path = Path(args.history) if args.history else out.with_suffix(".history.csv")
    history.to_csv(hist_path)
    print(f"best val accuracy {100 * history.best_val_accuracy:.2f}% at epoch {history.best_epoch}")
    print(f"checkpoint: {out}\nhistory: {hist_path}")


def cmd_infer_cache(args) -> None:
    from .data import load_manifest
    from .ensemble import ProbabilityMatrix
    from .models import load_checkpoint
    from .trainer import extract_features

    manifest = load_manifest(args.manifest)
    model = load_checkpoint(args.checkpoint, provider=args.provider)
    entries = manifest.select(args.split)
    paths = [e.path for e in entries]
    feats = extract_features(model, _manifest_root(args), paths, args.batch)
    cache = ProbabilityMatrix(model.probs_from_features(feats), paths, args.tag or model.tag, manifest.registry_hash)
    cache.save(args.out)
    print(f"{len(paths)} rows -> {args.out}")


def cmd_ensemble(args) -> None:
    from .ensemble import load_cache, parse_scheme, soft_vote

    caches = [load_cache(p) for p in _csv_list(args.caches)]
    scheme = parse_scheme(args.scheme, len(caches))
    voted = soft_vote(caches, scheme)
    voted.save(args.out)
    print(f"{voted.model_tag} {scheme.name} {scheme.label()} -> {args.out}")


def _truth_for(cache, manifest) -> np.ndarray:
    from .errors import AlignmentError

    by_path = {e.path: e.class_id for e in manifest.entries}
    try:
        return np.array([by_path[i] for i in cache.image_ids], dtype=np.int64)
    except KeyError as exc:
        raise AlignmentError(f"image {exc.args[0]!r} is not in the manifest") from None


def cmd_ablate(args) -> None:
    from .ablation import run_grid, write_grid_csv
    from .data import load_manifest
    from .ensemble import load_cache, parse_scheme

    caches = [load_cache(p) for p in _csv_list(args.caches)]
    truth = _truth_for(caches[0], load_manifest(args.truth))
    schemes = [parse_scheme(s, len(caches)) for s in split_scheme_list(args.schemes)]
    grid = run_grid(caches, truth, schemes)
    write_grid_csv(grid, args.out)
    for r in grid.rows:
        print(f"{r.config_name:40s} {100 * r.test_accuracy:6.2f}%  {100 * r.gap_vs_full:+.2f}%")


def cmd_metrics(args) -> None:
    from .data import load_manifest
    from .ensemble import load_cache, predict
    from .labels import load_registry
    from .metrics import confusion, crop_report, report, write_confusion_csv, write_crop_csv, write_report_csv, write_report_json

    cache = load_cache(args.cache)
    registry = load_registry(args.registry)
    truth = _truth_for(cache, load_manifest(args.truth))
    rep = report(confusion(truth, predict(cache), len(registry)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(rep, registry.names, out / "metrics.csv")
    write_report_json(rep, registry.names, out / "metrics.json")
    write_confusion_csv(rep.confusion, registry.names, out / "confusion.csv")
    write_crop_csv(crop_report(rep.confusion, registry), out / "crops.csv")
    print(f"accuracy {100 * rep.overall_accuracy:.2f}%  macro F1 {rep.macro_avg[2]:.3f} -> {out}")


def cmd_bench(args) -> None:
    from .bench import bench_ensemble, bench_model, write_bench_csv
    from .data import IMAGE_SUFFIXES, Split, load_batch, load_manifest
    from .models import load_checkpoint

    src = Path(args.images)
    if src.is_dir():
        root = src
        paths = sorted(p.relative_to(src).as_posix() for p in src.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    else:
        manifest = load_manifest(src)
        root = Path(args.root) if args.root else src.resolve().parent
        paths = [e.path for e in manifest.select(Split.TEST)]
    from .errors import InsufficientSamples

    if len(paths) < args.samples:
        raise InsufficientSamples(f"{len(paths)} images available, {args.samples} samples requested")
    images = load_batch(root, paths[: args.samples])
    models = [load_checkpoint(p, provider=args.provider) for p in _csv_list(args.checkpoints)]
    if args.device:
        for m in models:
            m.to(args.device)
    results = [bench_model(m, images, warmup=args.warmup, samples=args.samples) for m in models]
    results.append(bench_ensemble(models, images, warmup=args.warmup, samples=args.samples, concurrent=args.concurrent))
    write_bench_csv(results, args.out)
    for r in results:
        print(f"{r.model_tag:24s} {r.mean_latency_ms:8.2f} ms  {r.fps:5d} FPS  ({r.mode}, {r.device})")


def cmd_report(args) -> None:
    from .ablation import read_grid_csv
    from .metrics import read_report_json
    from .report import emit_figures

    rep, names = read_report_json(args.metrics)
    grid = read_grid_csv(args.grid)
    heat, bars = emit_figures(rep, grid, args.out_dir, names)
    print(f"{heat}\n{bars}")


def cmd_run(args) -> None:
    from .pipeline import PipelineConfig, run_pipeline

    flat: dict = {}
    if args.config:
        flat = json.loads(Path(args.config).read_text())
    overrides = {
        "dataset_root": args.root,
        "output_dir": args.out,
        "provider": args.provider,
        "epochs": args.epochs,
        "seed": args.seed,
        "bench_samples": args.bench_samples,
        "bench_warmup": args.bench_warmup,
    }
    flat.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_bench:
        flat["bench"] = False
    if args.parallel_train:
        flat["parallel_train"] = True
    if "dataset_root" not in flat:
        raise StageError("config", ValueError("dataset_root is required (--root or config file)"))
    cfg = PipelineConfig.from_flat(flat)
    out = run_pipeline(cfg, overwrite=args.overwrite)
    summary = json.loads((out / "run_summary.json").read_text())
    for m in summary["models"]:
        print(f"{m['arch']:16s} test {100 * m['test_accuracy']:6.2f}%  best val {100 * m['best_val_accuracy']:6.2f}%")
    print(f"{'ensemble':16s} test {100 * summary['ensemble_accuracy']:6.2f}%")
    print(f"artifacts: {out}")


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leafvote", description=__doc__)
    p.add_argument("--version", action="version", version=f"leafvote {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", help="scan a class-per-directory dataset and write the split manifest")
    s.add_argument("--root", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--registry-out")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--ratios", default="0.7,0.15,0.15")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train one classification head")
    s.add_argument("--arch", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--root", help="dataset root (default: the manifest's directory)")
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--policy", choices=["bestval", "final"], default="bestval")
    s.add_argument("--seed", type=int, default=42, help="head initialization seed")
    s.add_argument("--provider", default="torchvision", help="torchvision or random")
    s.add_argument("--history")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer-cache", help="write a probability cache for one split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--root")
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--tag")
    s.add_argument("--provider")
    s.add_argument("--batch", type=int, default=32)
    s.set_defaults(func=cmd_infer_cache)

    s = sub.add_parser("ensemble", help="soft-vote probability caches")
    s.add_argument("--caches", required=True)
    s.add_argument("--scheme", default="equal", help="equal | valweighted:a1,a2,.. | custom:w1,w2,..")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("ablate", help="evaluate the singleton/pair/scheme grid")
    s.add_argument("--caches", required=True)
    s.add_argument("--truth", required=True, help="split manifest holding the true labels")
    s.add_argument("--schemes", default="equal")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("metrics", help="per-class, aggregate and crop metrics for a cache")
    s.add_argument("--cache", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--registry", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("bench", help="batch-size-1 latency and FPS")
    s.add_argument("--checkpoints", required=True)
    s.add_argument("--images", required=True, help="image directory or split manifest (test split)")
    s.add_argument("--root")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--warmup", type=int, default=50)
    s.add_argument("--concurrent", action="store_true", help="run member forwards in parallel (not comparable to sequential numbers)")
    s.add_argument("--device")
    s.add_argument("--provider")
    s.add_argument("--out", default="bench.csv")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", help="render the confusion heatmap and comparison chart")
    s.add_argument("--metrics", required=True, help="metrics.json")
    s.add_argument("--grid", required=True, help="grid.csv")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="full pipeline")
    s.add_argument("--config", help="JSON file with flat PipelineConfig keys")
    s.add_argument("--root", help="dataset root")
    s.add_argument("--out", help="output directory")
    s.add_argument("--provider")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--bench-samples", type=int)
    s.add_argument("--bench-warmup", type=int)
    s.add_argument("--no-bench", action="store_true")
    s.add_argument("--parallel-train", action="store_true")
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"leafvote: error {exc}", file=sys.stderr)
        return 1
    except (LeafvoteError, OSError, ValueError) as exc:
        print(f"leafvote: error [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
