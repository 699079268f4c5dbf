import numpy as np
import pytest

from leafvote.ensemble import ProbabilityMatrix
from leafvote.fixtures import make_tinted_fixture


def random_probs(rng, n, c, tag="m", ids=None):
    raw = rng.random((n, c)) ** 3 + 1e-12
    vals = raw / raw.sum(axis=1, keepdims=True)
    ids = ids if ids is not None else [f"img{i:05d}" for i in range(n)]
    return ProbabilityMatrix(vals, ids, tag)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def three_class_root(tmp_path_factory):
    """3 well-separated tints, 20 images each (14/3/3 split)."""
    root = tmp_path_factory.mktemp("tints3")
    return make_tinted_fixture(root, n_classes=3, per_class=20, size=32, seed=1)


@pytest.fixture(scope="session")
def built_models():
    """One random-backbone model per architecture, built once per session."""
    from leafvote.models import Arch, ModelSpec, build_model

    return {a: build_model(ModelSpec(a, 3, pretrained=False), head_seed=42) for a in Arch}


_acceptance: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
        _acceptance[n] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        status, text = _acceptance[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {text}")
