"""Inference timing across input resolutions and batch sizes."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .train import Predictor

BENCH_COLUMNS = ("resolution", "batch", "mean_ms", "sd_ms")


@dataclass
class BenchRow:
    resolution: str  # "WxH"
    batch: int
    mean_ms: float  # per call, i.e. per batch
    sd_ms: float
    repetitions: int

    @property
    def per_frame_ms(self) -> float:
        return self.mean_ms / self.batch

    @property
    def pixels(self) -> int:
        w, h = parse_resolution(self.resolution)
        return w * h


def parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise InvalidArgument(f"resolution must look like 256x192, got {text!r}") from exc
    if w < 16 or h < 16:
        raise InvalidArgument(f"resolution {text} is below 16x16")
    return w, h


def _run_once(predictor: Predictor, frames: np.ndarray) -> None:
    # preprocessing (resize to the model input) is part of the measured path
    predictor.predict_images(frames)


def bench_inference(predictor: Predictor, resolutions, batches, repetitions: int = 100, warmup: int = 3,
                    seed: int = 0) -> list[BenchRow]:
    """Wall-clock time of resize + forward pass for every (resolution, batch).

    Model loading is excluded; inputs are random 8-bit images.
    """
    if repetitions < 1:
        raise InvalidArgument("repetitions must be >= 1")
    if warmup < 0:
        raise InvalidArgument("warmup must be >= 0")
    rng = np.random.default_rng(seed)
    rows = []
    for res in resolutions:
        w, h = parse_resolution(res) if isinstance(res, str) else res
        for batch in batches:
            if batch < 1:
                raise InvalidArgument("batch sizes must be >= 1")
            frames = rng.integers(0, 256, (batch, h, w, 3), dtype=np.uint8)
            for _ in range(warmup):
                _run_once(predictor, frames)
            times = np.empty(repetitions)
            for i in range(repetitions):
                t0 = time.perf_counter()
                _run_once(predictor, frames)
                times[i] = (time.perf_counter() - t0) * 1e3
            rows.append(BenchRow(f"{w}x{h}", int(batch), float(times.mean()), float(times.std(ddof=1)) if repetitions > 1 else 0.0,
                                 repetitions))
    return rows


def write_bench_csv(path: str | Path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r.resolution, r.batch, f"{r.mean_ms:.4f}", f"{r.sd_ms:.4f}"])
