"""Training loop, checkpoint handling and inference."""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt_io
from .autograd import Tensor, resample_matrix
from .checkpoint import Checkpoint
from .color import color_convert
from .dataset import Manifest, Sample
from .errors import InvalidArgument, InvalidState, NumericError
from .hdrio import load_png
from .model import TILE_AREA, LightingNet, ModelConfig, build_model, training_loss
from .optim import AdamState, adam_step
from .sh import SHCoeffs

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_sh_mse")
MIN_CROP = 16
# samples per tile for the early layers during batched inference
INFER_TILE = 1


@dataclass
class TrainRun:
    batch_size: int = 64
    lr: float = 1e-4
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("history")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainRun:
        known = {"batch_size", "lr", "max_epochs", "patience", "seed"}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidArgument("batch_size, max_epochs and patience must be >= 1")
        if not self.lr > 0:
            raise InvalidArgument("lr must be positive")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    best_epoch: int
    model: LightingNet


# --------------------------------------------------------------------------
# Image preparation


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable resize of (H, W, C) or (N, H, W, C): area averaging when
    shrinking, bilinear when enlarging."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[-3:-1]
    if (h, w) == (out_h, out_w):
        return img
    mh = resample_matrix(h, out_h, np.float32, antialias=True)
    mw = resample_matrix(w, out_w, np.float32, antialias=True)
    return np.einsum("oh,...hwc,pw->...opc", mh, img, mw, optimize=True)


def to_unit(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    return img.astype(np.float32)


def prepare_input(img: np.ndarray, config: ModelConfig, warn: bool = True) -> np.ndarray:
    """LDR image in [0, 1] (or uint8) at the model's input resolution."""
    x = to_unit(img)
    if x.ndim != 3 or x.shape[2] != 3:
        raise InvalidArgument(f"expected an (H, W, 3) image, got {x.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise InvalidArgument("image values must lie in [0, 1]")
    if min(x.shape[:2]) < MIN_CROP:
        raise InvalidArgument(f"image must be at least {MIN_CROP}x{MIN_CROP}")
    size = (config.input_height, config.input_width)
    if x.shape[:2] != size:
        if warn:
            warnings.warn(f"rescaling {x.shape[1]}x{x.shape[0]} input to {size[1]}x{size[0]}", stacklevel=3)
        x = resize_image(x, *size)
    return x


def luv_target(img: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Scaled CIELUV of an sRGB view, downsampled to the LUV head size."""
    luv = color_convert(to_unit(img), "srgb-gamma", "cieluv", scaled=True).astype(np.float32)
    return resize_image(luv, config.luv_height, config.luv_width)


@dataclass
class _Split:
    images: np.ndarray  # uint8 (N, H, W, 3) at model resolution
    targets: np.ndarray  # (N, 27) normalized
    luv: np.ndarray  # (N, h, w, 3)


def _load_split(manifest: Manifest, samples: list[Sample], config: ModelConfig) -> _Split:
    n = len(samples)
    h, w = config.input_height, config.input_width
    images = np.empty((n, h, w, 3), dtype=np.uint8)
    luv = np.empty((n, config.luv_height, config.luv_width, 3), dtype=np.float32)
    for i, s in enumerate(samples):
        img = load_png(manifest.image_path(s))
        if img.shape[:2] != (h, w):
            img = np.round(np.clip(resize_image(to_unit(img), h, w), 0, 1) * 255).astype(np.uint8)
        images[i] = img
        luv[i] = luv_target(img, config)
    targets = np.stack([s.sh_target.values.reshape(-1) for s in samples]).astype(np.float32)
    return _Split(images, targets, luv)


# --------------------------------------------------------------------------
# Training


def _config_record(config: ModelConfig, run: TrainRun, norm_scale: float) -> dict:
    return {"model": config.to_dict(), "train": run.to_dict(), "norm_scale": norm_scale}


def evaluate_split(model: LightingNet, data: _Split, batch_size: int = 64) -> tuple[float, float]:
    """(mean training loss, SH-MSE) without dropout."""
    losses, sq = [], []
    with ag.no_grad():
        for i in range(0, len(data.targets), batch_size):
            x = data.images[i:i + batch_size].astype(np.float32) / 255.0
            sh, luv = model(x, training=False)
            loss = training_loss(model.config, sh, data.targets[i:i + batch_size], luv, data.luv[i:i + batch_size])
            losses.append(loss.item() * len(x))
            sq.append(((sh.data - data.targets[i:i + batch_size]) ** 2).sum(axis=0))
    n = len(data.targets)
    return float(sum(losses) / n), float(np.sum(sq) / (n * data.targets.shape[1]))


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in HISTORY_COLUMNS})


def train(manifest: Manifest, config: ModelConfig | None = None, run: TrainRun | None = None,
          history_path: str | Path | None = None, model: LightingNet | None = None,
          progress=None) -> TrainResult:
    """Mini-batch Adam on the train split with early stopping on val loss.

    The returned checkpoint holds the weights of the best validation epoch.
    """
    config = config or ModelConfig()
    run = run or TrainRun()
    config.validate()
    run.validate()
    train_s, val_s = manifest.subset("train"), manifest.subset("val")
    if not train_s or not val_s:
        raise InvalidArgument("manifest needs non-empty train and val splits")
    model = model or build_model(config, seed=run.seed)
    tr = _load_split(manifest, train_s, config)
    va = _load_split(manifest, val_s, config)
    rng = np.random.default_rng(run.seed)
    opt = AdamState(lr=run.lr)
    best = (math.inf, 0, None, None)
    run.history = []
    stale = 0
    for epoch in range(1, run.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(tr.targets))
        total = 0.0
        for i in range(0, len(order), run.batch_size):
            idx = np.sort(order[i:i + run.batch_size])
            x = tr.images[idx].astype(np.float32) / 255.0
            sh, luv = model(x, training=True, rng=rng)
            loss = training_loss(config, sh, tr.targets[idx], luv, tr.luv[idx])
            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            grads = {k: t.grad for k, t in model.params.items() if t.grad is not None}
            adam_step(model.state_dict(), grads, opt)
            total += loss.item() * len(idx)
        train_loss = total / len(order)
        val_loss, val_mse = evaluate_split(model, va, run.batch_size)
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_sh_mse": val_mse}
        run.history.append(row)
        log.info("epoch %d train %.6g val %.6g val_sh_mse %.6g (%.1fs)", epoch, train_loss, val_loss, val_mse,
                 time.perf_counter() - t0)
        if progress:
            progress(row)
        if val_loss < best[0]:
            best = (val_loss, epoch, {k: v.copy() for k, v in model.state_dict().items()}, opt.copy())
            stale = 0
        else:
            stale += 1
            if stale >= run.patience:
                break
    if history_path:
        write_history(history_path, run.history)
    _, best_epoch, weights, best_opt = best
    model.load_state_dict(weights)
    ck = Checkpoint(_config_record(config, run, manifest.norm_scale), weights, best_opt,
                    {"best_epoch": best_epoch, "val_loss": best[0]})
    return TrainResult(ck, run.history, best_epoch, model)


def train_arrays(images: np.ndarray, targets: np.ndarray, config: ModelConfig, run: TrainRun,
                 model: LightingNet | None = None) -> tuple[LightingNet, list[float]]:
    """Full-batch-per-step training on in-memory arrays; returns per-epoch losses.

    Used for the memorization check, where no validation split exists.
    """
    model = model or build_model(config, seed=run.seed)
    rng = np.random.default_rng(run.seed)
    opt = AdamState(lr=run.lr)
    images = np.stack([prepare_input(im, config, warn=False) for im in images])
    luv = np.stack([luv_target(im, config) for im in images])
    targets = np.asarray(targets, dtype=np.float32).reshape(len(images), -1)
    losses = []
    for _ in range(run.max_epochs):
        total = 0.0
        for i in range(0, len(images), run.batch_size):
            sl = slice(i, i + run.batch_size)
            sh, pl = model(images[sl], training=True, rng=rng)
            loss = training_loss(config, sh, targets[sl], pl, luv[sl])
            loss.backward()
            adam_step(model.state_dict(), {k: t.grad for k, t in model.params.items() if t.grad is not None}, opt)
            total += loss.item() * len(images[sl])
        losses.append(total / len(images))
    return model, losses


# --------------------------------------------------------------------------
# Inference


@dataclass
class Predictor:
    """A loaded checkpoint ready for inference."""

    model: LightingNet
    norm_scale: float
    tile: int | None = INFER_TILE

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint | str | Path) -> Predictor:
        if not isinstance(ck, Checkpoint):
            ck = ckpt_io.load(ck)
        if "model" not in ck.config:
            raise InvalidState("checkpoint has no model config")
        config = ModelConfig.from_dict(ck.config["model"])
        model = LightingNet(config)
        model.load_state_dict(ck.tensors)
        return cls(model, float(ck.config.get("norm_scale", 1.0)))

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def predict_batch(self, batch: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) inputs at model resolution -> (N, 27) normalized outputs."""
        with ag.no_grad():
            sh, _ = self.model(batch, training=False, with_luv=False, tile=self.tile)
        return sh.data

    def predict_images(self, frames) -> np.ndarray:
        """Preprocess and predict a sequence of images of any size.

        Frames are resized and pushed through the early layers ``tile`` at a
        time, so a large batch never exists as one full-resolution array.
        """
        cfg = self.config
        tile = self.tile or len(frames)
        parts, start = [], 0
        with ag.no_grad():
            for j in range(0, len(frames), tile):
                x = np.stack([prepare_input(f, cfg, warn=False) for f in frames[j:j + tile]])
                h, start = self.model.front(Tensor(x), TILE_AREA)
                parts.append(h.data)
            z = self.model.back(Tensor(np.concatenate(parts)), start)
            sh = self.model.sh_head(z, training=False)
        return sh.data

    def _pair(self, flat: np.ndarray) -> tuple[SHCoeffs, SHCoeffs]:
        order = self.config.sh_order
        norm = SHCoeffs(order, flat.astype(np.float64), meta={"normalized": True})
        return norm, SHCoeffs(order, norm.values * self.norm_scale)


def infer(predictor: Predictor | Checkpoint | str | Path, image: np.ndarray) -> tuple[SHCoeffs, SHCoeffs]:
    """Normalized and de-normalized radiance coefficients for one LDR image."""
    if not isinstance(predictor, Predictor):
        predictor = Predictor.from_checkpoint(predictor)
    x = prepare_input(image, predictor.config)
    return predictor._pair(predictor.predict_batch(x[None])[0])


def infer_local(predictor: Predictor | Checkpoint | str | Path, image: np.ndarray,
                bboxes) -> list[tuple[SHCoeffs, SHCoeffs]]:
    """One coefficient set per bbox ``(x, y, width, height)`` in pixels.

    Each crop is rescaled to the model's input resolution.
    """
    if not isinstance(predictor, Predictor):
        predictor = Predictor.from_checkpoint(predictor)
    img = to_unit(image)
    h, w = img.shape[:2]
    crops = []
    for box in bboxes:
        x0, y0, bw, bh = (int(v) for v in box)
        if bw < MIN_CROP or bh < MIN_CROP:
            raise InvalidArgument(f"bbox {tuple(box)} is smaller than {MIN_CROP}x{MIN_CROP}")
        if x0 < 0 or y0 < 0 or x0 + bw > w or y0 + bh > h:
            raise InvalidArgument(f"bbox {tuple(box)} exceeds the {w}x{h} image")
        crops.append(prepare_input(img[y0:y0 + bh, x0:x0 + bw], predictor.config, warn=False))
    if not crops:
        return []
    out = predictor.predict_batch(np.stack(crops))
    return [predictor._pair(row) for row in out]
