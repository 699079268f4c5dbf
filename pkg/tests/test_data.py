import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leafvote.data import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    PreprocessConfig,
    Split,
    load_image,
    load_manifest,
    make_split,
    parse_manifest,
    preprocess,
    resize_bilinear,
    scan_dataset,
    split_sizes,
)
from leafvote.errors import BadImage, BadRatios, EmptyClass

RATIOS = (0.7, 0.15, 0.15)


def listing(sizes):
    return [(f"c{c:02d}/img_{i:05d}.jpg", c) for c, n in enumerate(sizes) for i in range(n)]


def test_ten_files_one_class():
    m = make_split(listing([10]), RATIOS, 42)
    counts = m.counts()
    assert counts[Split.TRAIN] == 7
    assert {counts[Split.VAL], counts[Split.TEST]} == {1, 2}


def test_split_sizes_each_within_one_of_quota():
    for n in range(1, 400):
        sizes = split_sizes(n, RATIOS)
        assert sum(sizes) == n
        for s, r in zip(sizes, RATIOS):
            assert abs(s - r * n) < 1


def test_determinism_and_input_order_independence():
    files = listing([37, 12, 50])
    a = make_split(files, RATIOS, 42).to_text()
    b = make_split(list(reversed(files)), RATIOS, 42).to_text()
    assert a == b
    assert make_split(files, RATIOS, 7).to_text() != a


def test_every_path_once_sorted():
    files = listing([9, 14])
    m = make_split(files, RATIOS, 42)
    paths = [e.path for e in m.entries]
    assert paths == sorted(p for p, _ in files)


def test_errors():
    with pytest.raises(BadRatios):
        make_split(listing([10]), (0.7, 0.2, 0.2), 42)
    with pytest.raises(BadRatios):
        make_split(listing([10]), (1.0, 0.0, 0.0), 42)
    with pytest.raises(EmptyClass):
        make_split([], RATIOS, 42)
    with pytest.raises(EmptyClass):
        make_split(listing([10, 0, 5]), RATIOS, 42, n_classes=3)


def test_manifest_text_layout(tmp_path):
    m = make_split([("b.png", 0), ("a.png", 0), ("c.png", 0)], RATIOS, 42, registry_hash="abc")
    text = m.to_text()
    lines = text.splitlines()
    assert lines[0] == "# seed=42 ratios=0.7,0.15,0.15 registry=abc"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["a.png", "b.png", "c.png"]
    assert all(ln.split(",")[2] in {"train", "val", "test"} for ln in lines[1:])
    p = m.save(tmp_path / "m.csv")
    again = load_manifest(p)
    assert again == m
    assert again.to_text().encode() == p.read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 120), min_size=1, max_size=6), st.integers(0, 2**31 - 1))
def test_stratification_bound(sizes, seed):
    m = make_split(listing(sizes), RATIOS, seed)
    for c, n in enumerate(sizes):
        per = {s: 0 for s in Split}
        for e in m.entries:
            if e.class_id == c:
                per[e.split] += 1
        for s, r in zip(Split, RATIOS):
            assert abs(per[s] / n - r) <= 1 / n + 1e-12
    assert parse_manifest(m.to_text()) == m


# ------------------------------------------------------------- preprocessing


def test_mean_image_normalizes_to_zero():
    img = np.broadcast_to(np.array(IMAGENET_MEAN, dtype=np.float32), (50, 70, 3))
    out = preprocess(img)
    assert out.shape == (3, 224, 224)
    assert np.abs(out).max() < 1e-6


def test_channel_value():
    img = np.zeros((40, 40, 3), dtype=np.float32)
    img[..., 0] = 1.0
    out = preprocess(img)
    expected = (1.0 - 0.485) / 0.229  # scalar arithmetic, 2.24890...
    assert abs(expected - 2.2489) < 1e-4
    assert np.allclose(out[0], expected, atol=1e-5)
    assert np.allclose(out[1], (0 - 0.456) / 0.224, atol=1e-5)


def test_output_shape_large_input():
    img = np.random.default_rng(0).random((1000, 600, 3), dtype=np.float32)
    assert preprocess(img).shape == (3, 224, 224)


def test_bad_image():
    with pytest.raises(BadImage):
        preprocess(np.zeros((10, 10)))
    with pytest.raises(BadImage):
        preprocess(np.zeros((10, 10, 4)))


def test_normalization_inverse_recovers_resized_pixels():
    img = np.random.default_rng(1).random((31, 45, 3), dtype=np.float32)
    out = preprocess(img)
    mean = np.array(IMAGENET_MEAN)[:, None, None]
    std = np.array(IMAGENET_STD)[:, None, None]
    assert np.abs(out * std + mean - resize_bilinear(img, (224, 224))).max() < 1e-6


def test_reshaped_output_stays_224():
    out = preprocess(np.random.default_rng(2).random((80, 80, 3)))
    again = preprocess(np.transpose(out, (1, 2, 0)))
    assert again.shape == (3, 224, 224)


def test_bilinear_matches_hand_interpolation():
    # 2x2 -> 4x4 with half-pixel centres: output pixel 1 samples input at x=0.25
    img = np.zeros((2, 2, 3), dtype=np.float32)
    img[0, 1, :] = 1.0
    out = resize_bilinear(img, (4, 4))
    assert out[0, 0, 1] == pytest.approx(0.25)
    assert out[0, 0, 2] == pytest.approx(0.75)
    assert out[0, 0, 0] == pytest.approx(0.0)


def test_custom_config_validation():
    with pytest.raises(ValueError):
        PreprocessConfig(target_size=(0, 224))
    with pytest.raises(ValueError):
        PreprocessConfig(channel_std=(1.0, 0.0, 1.0))
    assert preprocess(np.ones((5, 5, 3)), PreprocessConfig(target_size=(8, 6))).shape == (3, 8, 6)


def test_scan_and_load(three_class_root):
    reg, files = scan_dataset(three_class_root)
    assert len(reg) == 3 and len(files) == 60
    img = load_image(three_class_root / files[0][0])
    assert img.shape == (32, 32, 3) and img.dtype == np.float32
    assert 0.0 <= img.min() and img.max() <= 1.0
