"""Evaluation metrics: coefficient MSE, quartile reports, NRMSE, SSIM and
the chroma SSIM error."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .color import color_convert
from .errors import InvalidArgument, ShapeError
from .sh import SHCoeffs

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def mse_coeffs(pred: SHCoeffs | np.ndarray, truth: SHCoeffs | np.ndarray) -> float:
    """Mean squared difference over all coefficients."""
    if isinstance(pred, SHCoeffs) and isinstance(truth, SHCoeffs):
        if pred.order != truth.order:
            raise InvalidArgument(f"order mismatch: {pred.order} vs {truth.order}")
        if pred.domain != truth.domain:
            raise InvalidArgument(f"domain mismatch: {pred.domain} vs {truth.domain}")
    a = pred.values if isinstance(pred, SHCoeffs) else np.asarray(pred, dtype=np.float64)
    b = truth.values if isinstance(truth, SHCoeffs) else np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"coefficient shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def quartiles(values) -> tuple[float, float, float]:
    """25/50/75 percentiles with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("quartiles of an empty list")
    q = np.percentile(v, [25, 50, 75], method="linear")
    return float(q[0]), float(q[1]), float(q[2])


def nrmse_image(pred: np.ndarray, truth: np.ndarray) -> float:
    """RMSE divided by the value range (max - min) of ``truth``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"image shapes differ: {pred.shape} vs {truth.shape}")
    rmse = float(np.sqrt(np.mean((pred - truth) ** 2)))
    span = float(truth.max() - truth.min())
    if span == 0.0:
        if rmse == 0.0:
            return 0.0
        raise InvalidArgument("NRMSE undefined: ground truth is constant and prediction differs")
    return rmse / span


def _gauss_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable correlation, 'valid' region only
    n = len(k)
    w = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ k
    return np.lib.stride_tricks.sliding_window_view(w, n, axis=1) @ k


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim needs two equal 2-D images, got {a.shape} and {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidArgument(f"ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    k = _gauss_kernel()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5)."""
    return float(np.mean(ssim_map(a, b, data_range)))


def ssime_chroma(pred_rgb: np.ndarray, truth_rgb: np.ndarray) -> float:
    """1 - mean SSIM over the scaled CIELAB a* and b* channels of two sRGB images."""
    pred_rgb = np.asarray(pred_rgb, dtype=np.float64)
    truth_rgb = np.asarray(truth_rgb, dtype=np.float64)
    if pred_rgb.shape != truth_rgb.shape:
        raise ShapeError(f"image shapes differ: {pred_rgb.shape} vs {truth_rgb.shape}")
    p = color_convert(pred_rgb, "srgb-gamma", "cielab", scaled=True)
    t = color_convert(truth_rgb, "srgb-gamma", "cielab", scaled=True)
    s = 0.5 * (ssim(p[..., 1], t[..., 1]) + ssim(p[..., 2], t[..., 2]))
    return 1.0 - s


@dataclass
class EvalReport:
    n: int
    mse: list[float]
    mse_mean: float
    mse_q25: float
    mse_q50: float
    mse_q75: float
    mse_max: float
    nrmse_mean: float
    nrmse_sd: float
    ssime_mean: float
    ssime_sd: float
    baseline_mse_mean: float | None = None

    @classmethod
    def build(cls, mse, nrmse, ssime, baseline_mse=None) -> EvalReport:
        mse = [float(x) for x in mse]
        q25, q50, q75 = quartiles(mse)
        nr = np.asarray(nrmse, dtype=np.float64)
        ss = np.asarray(ssime, dtype=np.float64)
        base = None if baseline_mse is None else float(np.mean(baseline_mse))
        return cls(len(mse), mse, float(np.mean(mse)), q25, q50, q75, float(np.max(mse)),
                   float(nr.mean()), float(nr.std()), float(ss.mean()), float(ss.std()), base)

    def table1(self) -> str:
        """Coefficient MSE summary: mean and quartiles."""
        return ("| mean | 25% | 50% | 75% |\n|---|---|---|---|\n"
                f"| {self.mse_mean:.3e} | {self.mse_q25:.3e} | {self.mse_q50:.3e} | {self.mse_q75:.3e} |")

    def table2(self) -> str:
        """Rendered-sphere image errors as mean ± sd."""
        return ("| NRMSE | SSIME |\n|---|---|\n"
                f"| {self.nrmse_mean:.3f} ± {self.nrmse_sd:.3f} | {self.ssime_mean:.3f} ± {self.ssime_sd:.3f} |")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")
