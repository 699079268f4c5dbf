import json

import numpy as np
import pytest

from leafvote.ablation import read_grid_csv
from leafvote.bench import read_bench_csv
from leafvote.data import load_manifest
from leafvote.ensemble import load_cache
from leafvote.errors import StageError
from leafvote.labels import load_registry
from leafvote.metrics import read_confusion_csv, read_crop_csv, read_report_csv, read_report_json
from leafvote.models import load_checkpoint
from leafvote.pipeline import PipelineConfig, run_pipeline
from leafvote.trainer import TrainConfig, TrainHistory

pytestmark = pytest.mark.slow

ARCHS = ("efficientnet_b0", "resnet50")


def small_config(root, out, **kw):
    base = dict(
        dataset_root=str(root),
        output_dir=str(out),
        archs=ARCHS,
        provider="random",
        train=TrainConfig(),
        bench_samples=4,
        bench_warmup=1,
    )
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def run_dir(three_class_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    return run_pipeline(small_config(three_class_root, out))


def test_artifacts_present(run_dir):
    summary = json.loads((run_dir / "run_summary.json").read_text())
    for rel in summary["artifacts"]:
        assert (run_dir / rel).is_file(), rel
    for name in ("manifest.csv", "registry.csv", "metrics.csv", "grid.csv", "bench.csv", "figures/confusion_matrix.png"):
        assert (run_dir / name).is_file()
    assert not list(run_dir.parent.glob(".out.*"))


def test_tables_round_trip(run_dir):
    reg = load_registry(run_dir / "registry.csv")
    man = load_manifest(run_dir / "manifest.csv")
    assert man.registry_hash == reg.content_hash()
    rep, names = read_report_json(run_dir / "metrics.json")
    assert names == reg.names
    csv_rows = read_report_csv(run_dir / "metrics.csv")
    assert len(csv_rows) >= len(reg)
    cm, _ = read_confusion_csv(run_dir / "confusion.csv")
    assert cm == rep.confusion
    crops = read_crop_csv(run_dir / "crops.csv")
    assert crops.overall_accuracy == pytest.approx(rep.overall_accuracy)
    grid = read_grid_csv(run_dir / "grid.csv")
    summary = json.loads((run_dir / "run_summary.json").read_text())
    assert grid.full_accuracy == pytest.approx(summary["full_grid_accuracy"], abs=5e-5)
    assert [r.model_tag for r in read_bench_csv(run_dir / "bench.csv")][-1] == "Ensemble (2-model)"
    for arch in ARCHS:
        cache = load_cache(run_dir / "caches" / f"{arch}.csv")
        assert cache.model_tag == arch
        assert len(TrainHistory.from_csv(run_dir / "checkpoints" / f"{arch}.history.csv").epochs) == 10
        model = load_checkpoint(run_dir / "checkpoints" / f"{arch}.npz")
        assert model.spec.num_classes == len(reg)


def test_ensemble_matches_metrics(run_dir):
    summary = json.loads((run_dir / "run_summary.json").read_text())
    assert abs(summary["ensemble_accuracy"] - summary["full_grid_accuracy"]) <= 1e-12
    assert summary["ensemble_accuracy"] >= 0.9


def test_rerun_is_byte_identical(run_dir, three_class_root, tmp_path):
    again = run_pipeline(small_config(three_class_root, tmp_path / "again", bench=False))
    for rel in ["manifest.csv", "registry.csv", "grid.csv", "metrics.csv", "caches/ensemble.csv"] + [f"caches/{a}.csv" for a in ARCHS]:
        assert (again / rel).read_bytes() == (run_dir / rel).read_bytes(), rel


def test_refuses_nonempty_output(run_dir, three_class_root):
    with pytest.raises(StageError, match="setup"):
        run_pipeline(small_config(three_class_root, run_dir))


def test_missing_root_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(StageError) as info:
        run_pipeline(small_config(tmp_path / "nope", out))
    assert info.value.stage == "split"
    assert list(tmp_path.iterdir()) == []


def test_config_round_trip(tmp_path):
    cfg = small_config("data", "out", seed=7)
    again = PipelineConfig.load(cfg.save(tmp_path / "c.json"))
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


@pytest.mark.parametrize(
    "change",
    [dict(seed=43), dict(archs=("resnet50",)), dict(train=TrainConfig(epochs=4)), dict(train=TrainConfig(checkpoint_policy="final")), dict(head_seed=1), dict(bench=False)],
)
def test_config_hash_tracks_fields(change):
    cfg = small_config("data", "out")
    assert small_config("data", "out").config_hash() == cfg.config_hash()
    assert small_config("data", "out", **change).config_hash() != cfg.config_hash()


def test_unknown_config_key():
    with pytest.raises(ValueError, match="unknown"):
        PipelineConfig.from_flat({"dataset_root": "x", "colour": "red"})


def test_parallel_matches_serial(run_dir, three_class_root, tmp_path):
    par = run_pipeline(small_config(three_class_root, tmp_path / "par", bench=False, parallel_train=True))
    for a in ARCHS:
        x = load_cache(par / "caches" / f"{a}.csv").values
        y = load_cache(run_dir / "caches" / f"{a}.csv").values
        np.testing.assert_array_equal(x, y)
