"""Lighting-estimation network: fire-module feature extractor with an SH
decoder and an auxiliary LUV image decoder, plus the three training losses."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .equirect import EquirectGrid
from .errors import InvalidArgument
from .sh import irradiance_scale, n_coeffs, sh_basis

POOL = "pool"
# feature-map area (pixels) below which inference stops tiling the batch
TILE_AREA = 16 * 12


@dataclass(frozen=True)
class LossConfig:
    mode: str = "render"  # render | weighted | banded
    alpha: float = 0.7
    band_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    render_grid: tuple[int, int] = (32, 16)


@dataclass(frozen=True)
class ModelConfig:
    input_height: int = 192
    input_width: int = 256
    stem_channels: int = 32
    stem_kernel: int = 3
    stem_stride: int = 2
    # stages: "pool" or (squeeze, expand1x1, expand3x3)
    stages: tuple = (POOL, (16, 64, 64), POOL, (16, 64, 64), POOL, (16, 64, 64), POOL, (16, 64, 64))
    latent_dim: int = 512
    sh_hidden: tuple[int, ...] = (512, 256)
    dropout: float = 0.5
    sh_order: int = 2
    luv_grid: tuple[int, int] = (12, 16)
    luv_channels: int = 8
    luv_height: int = 48
    luv_width: int = 64
    loss: LossConfig = field(default_factory=LossConfig)

    @property
    def sh_outputs(self) -> int:
        return 3 * n_coeffs(self.sh_order)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [s if s == POOL else list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(s if s == POOL else tuple(s) for s in d["stages"])
        for key in ("sh_hidden", "luv_grid"):
            if key in d:
                d[key] = tuple(d[key])
        if "loss" in d and isinstance(d["loss"], dict):
            loss = dict(d["loss"])
            for key in ("band_weights", "render_grid"):
                if key in loss:
                    loss[key] = tuple(loss[key])
            d["loss"] = LossConfig(**loss)
        return cls(**d)

    def validate(self) -> None:
        if not 0 <= self.sh_order <= 4:
            raise InvalidArgument("sh_order must be in [0, 4]")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must be in [0, 1)")
        if not any(s != POOL for s in self.stages):
            raise InvalidArgument("config needs at least one fire module")
        for s in self.stages:
            if s != POOL and (len(s) != 3 or min(s) < 1):
                raise InvalidArgument(f"fire module widths must be three positive ints, got {s}")
        if self.loss.mode not in ("render", "weighted", "banded"):
            raise InvalidArgument(f"unknown loss mode {self.loss.mode!r}")
        if not 0.0 <= self.loss.alpha <= 1.0:
            raise InvalidArgument("loss alpha must be in [0, 1]")
        gh, gw = self.luv_grid
        if gh * 4 != self.luv_height or gw * 4 != self.luv_width:
            raise InvalidArgument("luv_grid must be a quarter of the LUV output size (two x2 upsamples)")
        h, w = self.input_height, self.input_width
        h, w = (h - self.stem_kernel + 2 * (self.stem_kernel // 2)) // self.stem_stride + 1, \
               (w - self.stem_kernel + 2 * (self.stem_kernel // 2)) // self.stem_stride + 1
        for s in self.stages:
            if s == POOL:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise InvalidArgument(f"input {self.input_height}x{self.input_width} is too small for the stage schedule")


DESK = ModelConfig()

FULL = ModelConfig(
    stem_channels=64,
    stages=(POOL, (16, 64, 64), (16, 64, 64), POOL, (32, 128, 128), (32, 128, 128), POOL,
            (48, 192, 192), (48, 192, 192), (64, 256, 256), (64, 256, 256)),
    latent_dim=512,
    sh_hidden=(2048, 1024),
    luv_channels=16,
)

TINY = ModelConfig(
    input_height=8, input_width=8, stem_channels=4, stem_stride=1,
    stages=((2, 3, 3), POOL, (2, 3, 3)), latent_dim=6, sh_hidden=(8, 8),
    luv_grid=(2, 2), luv_channels=2, luv_height=8, luv_width=8, dropout=0.0,
)

PROFILES = {"desk": DESK, "full": FULL, "tiny": TINY}


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _he_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class LightingNet:
    """The network.  ``params`` maps stable names to leaf tensors."""

    def __init__(self, config: ModelConfig = DESK, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        c = config

        def conv(name, kh, cin, cout, act=True):
            init = _he_uniform if act else _uniform
            self._add(f"{name}.w", init(rng, (kh, kh, cin, cout), kh * kh * cin, dtype))
            self._add(f"{name}.b", np.zeros(cout, dtype))

        def fc(name, cin, cout, act=True):
            init = _he_uniform if act else _uniform
            self._add(f"{name}.w", init(rng, (cin, cout), cin, dtype))
            self._add(f"{name}.b", np.zeros(cout, dtype))

        conv("stem", c.stem_kernel, 3, c.stem_channels)
        ch = c.stem_channels
        k = 0
        for s in c.stages:
            if s == POOL:
                continue
            sq, e1, e3 = s
            conv(f"fire{k}.squeeze", 1, ch, sq)
            conv(f"fire{k}.expand1", 1, sq, e1)
            conv(f"fire{k}.expand3", 3, sq, e3)
            ch = e1 + e3
            k += 1
        conv("latent", 1, ch, c.latent_dim)
        width = c.latent_dim
        for i, hdim in enumerate(c.sh_hidden):
            fc(f"sh.fc{i}", width, hdim)
            width = hdim
        fc("sh.out", width, c.sh_outputs, act=False)
        gh, gw = c.luv_grid
        fc("luv.fc", c.latent_dim, gh * gw * c.luv_channels)
        conv("luv.up0", 3, c.luv_channels, c.luv_channels)
        conv("luv.up1", 3, c.luv_channels, 3, act=False)

    def _add(self, name: str, arr: np.ndarray) -> None:
        self.params[name] = Tensor(arr, requires_grad=True, name=name)

    def p(self, name: str) -> Tensor:
        return self.params[name]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def _conv(self, x, name, stride=1, pad=None, act=True):
        w = self.p(f"{name}.w")
        if pad is None:
            pad = w.shape[0] // 2
        y = ag.conv2d(x, w, self.p(f"{name}.b"), stride=stride, pad=pad, name=name)
        return ag.relu(y) if act else y

    def _fc(self, x, name, act=True):
        y = ag.linear(x, self.p(f"{name}.w"), self.p(f"{name}.b"), name=name)
        return ag.relu(y) if act else y

    def _stages(self, h: Tensor, start: int, stop_area: int = 0) -> tuple[Tensor, int]:
        """Run stages from ``start`` until the feature map area drops to
        ``stop_area`` or below; returns the output and the next stage index."""
        stages = self.config.stages
        k = sum(1 for s in stages[:start] if s != POOL)
        i = start
        while i < len(stages) and h.shape[1] * h.shape[2] > stop_area:
            s = stages[i]
            if s == POOL:
                h = ag.maxpool2d(h, 2, name="pool")
            else:
                sq = self._conv(h, f"fire{k}.squeeze")
                h = ag.concat([self._conv(sq, f"fire{k}.expand1"), self._conv(sq, f"fire{k}.expand3")],
                              axis=-1, name=f"fire{k}.concat")
                k += 1
            i += 1
        return h, i

    def front(self, x: Tensor, stop_area: int = 0) -> tuple[Tensor, int]:
        """Stem plus the stages that run while the feature map is larger than
        ``stop_area`` pixels.  Returns the features and the next stage index."""
        h = self._conv(x, "stem", stride=self.config.stem_stride)
        return self._stages(h, 0, stop_area)

    def back(self, h: Tensor, start: int) -> Tensor:
        """Remaining stages from ``start``, latent conv and global pooling."""
        h, _ = self._stages(h, start)
        h = self._conv(h, "latent")
        return ag.global_avg_pool(h, name="latent.gap")

    def features(self, x: Tensor, tile: int | None = None) -> Tensor:
        """Latent vectors (N, latent_dim).

        With ``tile`` and graph recording off, the large early feature maps
        are computed ``tile`` samples at a time so they stay cache-resident;
        the small late stages run on the whole batch.
        """
        if tile and not ag.is_grad_enabled() and x.shape[0] > tile:
            parts = []
            for j in range(0, x.shape[0], tile):
                h, start = self.front(Tensor(x.data[j:j + tile]), TILE_AREA)
                parts.append(h.data)
            return self.back(Tensor(np.concatenate(parts)), start)
        return self.back(*self.front(x))

    def sh_head(self, z: Tensor, training: bool = False, rng=None) -> Tensor:
        h = z
        for i in range(len(self.config.sh_hidden)):
            h = self._fc(h, f"sh.fc{i}")
            h = ag.dropout(h, self.config.dropout, training, rng, name=f"sh.drop{i}")
        return ag.softsign(self._fc(h, "sh.out", act=False), name="sh.softsign")

    def luv_head(self, z: Tensor) -> Tensor:
        c = self.config
        gh, gw = c.luv_grid
        h = self._fc(z, "luv.fc").reshape(z.shape[0], gh, gw, c.luv_channels)
        h = ag.resize_bilinear(h, gh * 2, gw * 2, name="luv.resize0")
        h = self._conv(h, "luv.up0")
        h = ag.resize_bilinear(h, c.luv_height, c.luv_width, name="luv.resize1")
        return self._conv(h, "luv.up1", act=False)

    def forward(self, images, training: bool = False, rng=None, with_luv: bool = True, tile: int | None = None):
        """images: (N, H, W, 3) in [0, 1].  Returns (sh (N, 27), luv (N, 48, 64, 3) or None).

        ``tile`` is passed to :meth:`features` (inference only)."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.data.ndim != 4 or x.shape[3] != 3:
            raise InvalidArgument(f"expected (N, H, W, 3) images, got {x.shape}")
        z = self.features(x, tile)
        sh = self.sh_head(z, training, rng)
        luv = self.luv_head(z) if with_luv else None
        return sh, luv

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(tensors)
        if missing:
            raise InvalidArgument(f"checkpoint is missing tensors: {sorted(missing)}")
        for k, t in self.params.items():
            if tensors[k].shape != t.shape:
                raise InvalidArgument(f"tensor {k}: checkpoint shape {tensors[k].shape} != model {t.shape}")
            t.data = np.array(tensors[k], dtype=self.dtype)

    def astype(self, dtype) -> LightingNet:
        clone = LightingNet.__new__(LightingNet)
        clone.config = self.config
        clone.dtype = np.dtype(dtype)
        clone.params = {k: Tensor(t.data.astype(dtype), requires_grad=True, name=k) for k, t in self.params.items()}
        return clone


def build_model(config: ModelConfig | str = "desk", seed: int = 0, dtype=np.float32) -> LightingNet:
    if isinstance(config, str):
        if config not in PROFILES:
            raise InvalidArgument(f"unknown profile {config!r}; choose from {sorted(PROFILES)}")
        config = PROFILES[config]
    return LightingNet(config, seed, dtype)


# --------------------------------------------------------------------------
# Losses


def _t(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def loss_weighted(pred_sh, target_sh, pred_luv, target_luv, alpha: float) -> Tensor:
    """alpha * MSE(sh) + (1 - alpha) * MSE(luv)."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument("alpha must be in [0, 1]")
    pred_sh = _t(pred_sh)
    pred_luv = _t(pred_luv)
    a = ag.mse(pred_sh, _t(target_sh, pred_sh.dtype), name="loss.sh")
    b = ag.mse(pred_luv, _t(target_luv, pred_luv.dtype), name="loss.luv")
    return ag.add(ag.scale(a, alpha), ag.scale(b, 1.0 - alpha), name="loss")


@lru_cache(maxsize=8)
def _band_weight_matrix(order: int, weights: tuple[float, ...]) -> np.ndarray:
    w = np.empty(n_coeffs(order))
    for l in range(order + 1):
        w[l * l:(l + 1) ** 2] = weights[l] / (2 * l + 1)
    return np.tile(w, 3)


def loss_banded(pred_sh, target_sh, weights=(1.0, 1.0, 1.0), order: int = 2) -> Tensor:
    """Sum over channels of per-band MSEs weighted by (alpha, beta, gamma, ...).

    Each band's MSE averages its 2l+1 coefficients (and the batch).
    """
    weights = tuple(float(w) for w in weights)
    if len(weights) != order + 1 or min(weights) < 0:
        raise InvalidArgument(f"need {order + 1} non-negative band weights")
    pred = _t(pred_sh)
    target = _t(target_sh, pred.dtype)
    if pred.data.ndim == 1:
        pred, target = pred.reshape(1, -1), target.reshape(1, -1)
    n = pred.shape[0]
    w = Tensor((_band_weight_matrix(order, weights) / n).astype(pred.dtype))
    d = pred - target
    return ag.sum_all(ag.mul(ag.mul(d, d), w), name="loss.banded")


@lru_cache(maxsize=8)
def render_matrix(order: int = 2, grid: tuple[int, int] = (32, 16)) -> np.ndarray:
    """(n_coeffs, W*H) map from radiance SH to an irradiance equirect grid."""
    w, h = grid
    basis = sh_basis(EquirectGrid(w, h).directions(), order).reshape(-1, n_coeffs(order))
    return (basis * irradiance_scale(order)).T.copy()


def sh_to_irradiance_image(sh: Tensor, order: int = 2, grid=(32, 16)) -> Tensor:
    """Differentiable irradiance render: (N, 3*k) -> (N*3, W*H)."""
    k = n_coeffs(order)
    m = Tensor(render_matrix(order, tuple(grid)).astype(sh.dtype))
    return ag.matmul(sh.reshape(-1, k), m, name="render")


def loss_render(pred_sh, target_sh, grid=(32, 16), order: int = 2) -> Tensor:
    """Per-pixel MSE between irradiance maps rendered from both coefficient sets."""
    pred = _t(pred_sh)
    target = _t(target_sh, pred.dtype)
    if pred.shape != target.shape:
        raise InvalidArgument(f"render loss shape mismatch {pred.shape} vs {target.shape}")
    return ag.mse(sh_to_irradiance_image(pred, order, grid), sh_to_irradiance_image(target, order, grid),
                  name="loss.render")


def training_loss(config: ModelConfig, pred_sh, target_sh, pred_luv=None, target_luv=None) -> Tensor:
    """Loss used by the trainer for ``config.loss.mode``.

    ``render`` (default): alpha * render loss + (1 - alpha) * LUV MSE.
    ``weighted``: alpha * coefficient MSE + (1 - alpha) * LUV MSE.
    ``banded``: alpha * banded SH loss + (1 - alpha) * LUV MSE.
    """
    lc = config.loss
    if lc.mode == "render":
        sh_loss = loss_render(pred_sh, target_sh, lc.render_grid, config.sh_order)
    elif lc.mode == "banded":
        sh_loss = loss_banded(pred_sh, target_sh, lc.band_weights, config.sh_order)
    else:
        sh_loss = ag.mse(pred_sh, _t(target_sh, pred_sh.dtype), name="loss.sh")
    if pred_luv is None:
        return sh_loss
    luv_loss = ag.mse(pred_luv, _t(target_luv, pred_luv.dtype), name="loss.luv")
    return ag.add(ag.scale(sh_loss, lc.alpha), ag.scale(luv_loss, 1.0 - lc.alpha), name="loss")


def with_loss(config: ModelConfig, **kwargs) -> ModelConfig:
    return replace(config, loss=replace(config.loss, **kwargs))
