import json

import pytest

from leafvote.ablation import read_grid_csv
from leafvote.bench import read_bench_csv
from leafvote.cli import main, split_scheme_list
from leafvote.data import load_manifest
from leafvote.ensemble import load_cache
from leafvote.labels import load_registry
from leafvote.metrics import read_confusion_csv, read_report_json

pytestmark = pytest.mark.slow


def test_split_scheme_list():
    assert split_scheme_list("equal,valweighted:95.5,95.3,96.3,custom:0.5,0.5,2.0=dh") == [
        "equal",
        "valweighted:95.5,95.3,96.3",
        "custom:0.5,0.5,2.0=dh",
    ]


@pytest.fixture(scope="module")
def cli_run(three_class_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    manifest = out / "manifest.csv"
    assert main(["split", "--root", str(three_class_root), "--out", str(manifest)]) == 0
    ckpt = out / "eff.npz"
    rc = main([
        "train", "--arch", "efficientnet_b0", "--manifest", str(manifest), "--root", str(three_class_root),
        "--out", str(ckpt), "--epochs", "2", "--provider", "random",
    ])
    assert rc == 0
    for tag in ("a", "b"):
        rc = main([
            "infer-cache", "--checkpoint", str(ckpt), "--manifest", str(manifest), "--root", str(three_class_root),
            "--out", str(out / f"{tag}.csv"), "--tag", tag,
        ])
        assert rc == 0
    return out, manifest, ckpt


def test_split_outputs(cli_run, three_class_root):
    out, manifest, _ = cli_run
    m = load_manifest(manifest)
    reg = load_registry(out / "registry.csv")
    assert m.registry_hash == reg.content_hash()
    assert len(m.entries) == 60 and m.seed == 42


def test_train_outputs(cli_run):
    out, _, ckpt = cli_run
    assert ckpt.exists()
    lines = (out / "eff.history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc" and len(lines) == 3


def test_cache_ensemble_ablate_metrics(cli_run, capsys):
    out, manifest, _ = cli_run
    a = load_cache(out / "a.csv")
    assert len(a) == len(load_manifest(manifest).select("test"))
    assert main(["ensemble", "--caches", f"{out / 'a.csv'},{out / 'b.csv'}", "--scheme", "custom:2,1", "--out", str(out / "ens.csv")]) == 0
    assert load_cache(out / "ens.csv").model_tag == "a+b"
    rc = main([
        "ablate", "--caches", f"{out / 'a.csv'},{out / 'b.csv'}", "--truth", str(manifest),
        "--schemes", "equal,custom:2,1", "--out", str(out / "grid.csv"),
    ])
    assert rc == 0
    assert len(read_grid_csv(out / "grid.csv")) == 2 + 1 + 2
    rc = main([
        "metrics", "--cache", str(out / "ens.csv"), "--truth", str(manifest),
        "--registry", str(out / "registry.csv"), "--out-dir", str(out / "metrics"),
    ])
    assert rc == 0
    rep, names = read_report_json(out / "metrics" / "metrics.json")
    cm, cm_names = read_confusion_csv(out / "metrics" / "confusion.csv")
    assert cm == rep.confusion and names == cm_names
    assert main(["report", "--metrics", str(out / "metrics" / "metrics.json"), "--grid", str(out / "grid.csv"), "--out-dir", str(out / "figs")]) == 0
    assert (out / "figs" / "confusion_matrix.png").exists() and (out / "figs" / "model_comparison.png").exists()


def test_bench_cli(cli_run, three_class_root):
    out, manifest, ckpt = cli_run
    rc = main([
        "bench", "--checkpoints", f"{ckpt},{ckpt}", "--images", str(manifest), "--root", str(three_class_root),
        "--samples", "3", "--warmup", "1", "--out", str(out / "bench.csv"),
    ])
    assert rc == 0
    rows = read_bench_csv(out / "bench.csv")
    assert [r.model_tag for r in rows] == ["efficientnet_b0", "efficientnet_b0", "Ensemble (2-model)"]
    assert all(r.fps == round(1000 / r.mean_latency_ms) or abs(r.fps - 1000 / r.mean_latency_ms) <= 0.5 for r in rows)


def test_errors_exit_nonzero(tmp_path, capsys, cli_run):
    out, manifest, ckpt = cli_run
    assert main(["split", "--root", str(tmp_path / "missing"), "--out", str(tmp_path / "m.csv")]) == 1
    assert "[split]" in capsys.readouterr().err
    rc = main(["bench", "--checkpoints", str(ckpt), "--images", str(manifest), "--samples", "1000", "--out", str(tmp_path / "b.csv")])
    assert rc == 1
    assert "InsufficientSamples" in capsys.readouterr().err
    assert main(["ensemble", "--caches", str(out / "a.csv"), "--scheme", "custom:0", "--out", str(tmp_path / "e.csv")]) == 1
    assert "DegenerateWeights" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_run_missing_root(tmp_path, capsys):
    rc = main(["run", "--root", str(tmp_path / "nope"), "--out", str(tmp_path / "out"), "--provider", "random"])
    assert rc == 1
    assert "[split]" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    assert list(tmp_path.iterdir()) == []
