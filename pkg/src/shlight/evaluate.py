"""Evaluation of a checkpoint on a manifest split."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Manifest
from .errors import InvalidArgument
from .hdrio import load_png
from .metrics import EvalReport, mse_coeffs, nrmse_image, ssime_chroma
from .sh import SHCoeffs, render_sphere
from .train import Predictor, prepare_input

ROW_COLUMNS = ("panorama_id", "view_index", "mse", "baseline_mse", "nrmse", "ssime")


def display_encode(img: np.ndarray, scale: float, gamma: float = 2.2) -> np.ndarray:
    """Normalize linear radiance by ``scale`` and gamma-encode into [0, 1]."""
    if scale <= 0:
        return np.zeros_like(img)
    return np.clip(np.maximum(img, 0.0) / scale, 0.0, 1.0) ** (1.0 / gamma)


def sphere_errors(pred: SHCoeffs, truth: SHCoeffs, size: int = 128) -> tuple[float, float]:
    """(NRMSE on linear renders, SSIME on display-encoded renders) of a
    diffuse sphere lit by each coefficient set."""
    a = render_sphere(pred, size)
    b = render_sphere(truth, size)
    nrmse = nrmse_image(a, b)
    scale = float(b.max())
    return nrmse, ssime_chroma(display_encode(a, scale), display_encode(b, scale))


@dataclass
class EvalResult:
    report: EvalReport
    rows: list[dict]


def evaluate(predictor: Predictor, manifest: Manifest, split: str = "test", sphere_size: int = 128,
             batch_size: int = 32) -> EvalResult:
    samples = manifest.subset(split)
    if not samples:
        raise InvalidArgument(f"split {split!r} is empty")
    train = manifest.subset("train")
    mean_pred = np.mean([s.sh_target.values for s in train], axis=0) if train else None
    rows = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        x = np.stack([prepare_input(load_png(manifest.image_path(s)), predictor.config) for s in chunk])
        out = predictor.predict_batch(x)
        for s, flat in zip(chunk, out):
            norm, denorm = predictor._pair(flat)
            truth = s.sh_target
            nrmse, ssime = sphere_errors(denorm, SHCoeffs(truth.order, s.sh_raw), sphere_size)
            rows.append({"panorama_id": s.panorama_id, "view_index": s.view_index,
                         "mse": mse_coeffs(norm.values, truth.values),
                         "baseline_mse": None if mean_pred is None else mse_coeffs(mean_pred, truth.values),
                         "nrmse": nrmse, "ssime": ssime})
    base = None if mean_pred is None else [r["baseline_mse"] for r in rows]
    report = EvalReport.build([r["mse"] for r in rows], [r["nrmse"] for r in rows],
                              [r["ssime"] for r in rows], base)
    return EvalResult(report, rows)


def write_rows(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
