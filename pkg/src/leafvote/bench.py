"""Batch-size-1 inference latency and FPS."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import _accel
from .errors import BadLatency, InsufficientSamples, NoModels
from .models import AdaptedModel

DEFAULT_WARMUP = 50
DEFAULT_SAMPLES = 1000

Clock = Callable[[], float]


@dataclass(frozen=True)
class BenchmarkResult:
    model_tag: str
    mean_latency_ms: float
    fps: int
    num_samples: int
    warmup_samples: int
    device: str = "cpu"
    mode: str = "single"

    def __post_init__(self):
        if not self.mean_latency_ms > 0:
            raise BadLatency(f"mean latency must be positive, got {self.mean_latency_ms}")


def fps_from_latency(ms: float) -> int:
    """Frames per second from a per-image latency, rounded half up."""
    if not ms > 0:
        raise BadLatency(f"latency must be positive, got {ms}")
    return math.floor(1000.0 / ms + 0.5)


def device_descriptor(device: torch.device | str) -> str:
    device = torch.device(device)
    if device.type == "cuda":
        return f"cuda:{torch.cuda.get_device_name(device)}"
    return device.type


def _sync_for(device: torch.device) -> Callable[[], None]:
    if device.type == "cuda":
        return lambda: torch.cuda.synchronize(device)
    return lambda: None


def _runner(model) -> Callable:
    if isinstance(model, AdaptedModel):
        return model.probs
    return model


def _tag(model) -> str:
    return getattr(model, "tag", None) or getattr(model, "__name__", None) or type(model).__name__


def _as_inputs(images) -> Sequence:
    if isinstance(images, np.ndarray):
        images = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    return images


def _time_loop(step: Callable, images: Sequence, warmup: int, samples: int, clock: Clock, sync: Callable[[], None]) -> float:
    """Mean milliseconds per ``step`` call over ``samples`` timed images."""
    if samples < 1:
        raise InsufficientSamples("need at least one timed sample")
    if len(images) < samples:
        raise InsufficientSamples(f"{len(images)} images available, {samples} samples requested")
    n = len(images)
    with torch.no_grad():
        for i in range(warmup):
            step(images[i % n][None])
        sync()
        total = 0.0
        for i in range(samples):
            x = images[i][None]
            sync()
            t0 = clock()
            step(x)
            sync()
            total += clock() - t0
    return total * 1000.0 / samples


def bench_model(
    model,
    images,
    warmup: int = DEFAULT_WARMUP,
    samples: int = DEFAULT_SAMPLES,
    clock: Clock = time.perf_counter,
    sync: Callable[[], None] | None = None,
) -> BenchmarkResult:
    """Mean per-image latency of one model at batch size 1.

    ``model`` is an AdaptedModel or any callable taking a 1×3×H×W batch.
    The first ``warmup`` calls are not timed. ``clock`` returns seconds.
    """
    device = model.device if isinstance(model, AdaptedModel) else torch.device("cpu")
    sync = sync or _sync_for(device)
    ms = _time_loop(_runner(model), _as_inputs(images), warmup, samples, clock, sync)
    return BenchmarkResult(_tag(model), ms, fps_from_latency(ms), samples, warmup, device_descriptor(device))


def bench_ensemble(
    models: Sequence,
    images,
    warmup: int = DEFAULT_WARMUP,
    samples: int = DEFAULT_SAMPLES,
    concurrent: bool = False,
    clock: Clock = time.perf_counter,
    sync: Callable[[], None] | None = None,
) -> BenchmarkResult:
    """Latency of all member forwards plus the equal-weight combine, per image.

    By default members run one after another. ``concurrent=True`` issues the
    forwards from a thread pool; those numbers measure a different protocol
    and are labelled ``mode="concurrent"``.
    """
    if not models:
        raise NoModels("bench_ensemble needs at least one model")
    runners = [_runner(m) for m in models]
    weights = np.ones(len(runners))
    device = models[0].device if isinstance(models[0], AdaptedModel) else torch.device("cpu")
    sync = sync or _sync_for(device)
    pool = ThreadPoolExecutor(len(runners)) if concurrent else None

    def step(x):
        if pool is not None:
            probs = list(pool.map(lambda r: r(x), runners))
        else:
            probs = [r(x) for r in runners]
        combined = _accel.weighted_vote(np.stack([np.asarray(p) for p in probs]), weights)
        return _accel.argmax_rows(combined)

    try:
        ms = _time_loop(step, _as_inputs(images), warmup, samples, clock, sync)
    finally:
        if pool is not None:
            pool.shutdown()
    tag = f"Ensemble ({len(models)}-model)"
    return BenchmarkResult(tag, ms, fps_from_latency(ms), samples, warmup, device_descriptor(device), "concurrent" if concurrent else "sequential")


def write_bench_csv(results: Sequence[BenchmarkResult], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "time_ms_per_image", "fps", "samples", "warmup", "device", "mode"])
        for r in results:
            w.writerow([r.model_tag, f"{r.mean_latency_ms:.4f}", r.fps, r.num_samples, r.warmup_samples, r.device, r.mode])
    return path


def read_bench_csv(path: str | Path) -> list[BenchmarkResult]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        BenchmarkResult(r["model"], float(r["time_ms_per_image"]), int(r["fps"]), int(r["samples"]), int(r["warmup"]), r["device"], r["mode"])
        for r in rows
    ]
