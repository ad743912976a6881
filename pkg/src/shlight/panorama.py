"""Panorama resampling: rotation, camera-translation warp, perspective views
and HDR to LDR tone mapping.

Camera frame: forward is +x (the center column of an equirect map), up is
+y and right is +z.  Yaw turns forward toward +z, pitch tilts it toward +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equirect import EquirectGrid, sample_dirs
from .errors import InvalidArgument, NumericError

LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class RadianceMap:
    """Linear HDR image (H, W, 3) stored as float32.

    Full-sphere panoramas have ``width == 2 * height``; perspective crops do not.
    """

    data: np.ndarray
    exposure_scale: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise InvalidArgument(f"radiance data must be (H, W, 3), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def is_equirect(self) -> bool:
        return self.width == 2 * self.height

    def validate(self) -> None:
        bad = ~np.isfinite(self.data)
        if bad.any():
            v, u, _ = np.argwhere(bad)[0]
            raise NumericError(f"non-finite radiance at pixel (u={u}, v={v})")
        if (self.data < 0).any():
            v, u, _ = np.argwhere(self.data < 0)[0]
            raise InvalidArgument(f"negative radiance at pixel (u={u}, v={v})")

    def require_equirect(self) -> None:
        if not self.is_equirect:
            raise InvalidArgument(f"expected a 2:1 equirect panorama, got {self.width}x{self.height}")


@dataclass
class LdrImage:
    data: np.ndarray  # (H, W, 3) in [0, 1]

    def __post_init__(self):
        self.data = np.clip(np.asarray(self.data, dtype=np.float32), 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_uint8(self) -> np.ndarray:
        return np.round(self.data * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> LdrImage:
        return cls(np.asarray(arr, dtype=np.float32) / 255.0)


@dataclass(frozen=True)
class CameraSpec:
    yaw: float = 0.0
    pitch: float = 0.0
    horizontal_fov: float = 90.0
    out_width: int = 256
    out_height: int = 192

    @property
    def focal(self) -> float:
        return (self.out_width / 2.0) / math.tan(math.radians(self.horizontal_fov) / 2.0)

    @property
    def vertical_fov(self) -> float:
        return math.degrees(2.0 * math.atan((self.out_height / 2.0) / self.focal))


def camera_rotation(yaw: float, pitch: float) -> np.ndarray:
    """Matrix taking camera-frame directions to panorama-frame directions."""
    a, b = math.radians(yaw), math.radians(pitch)
    ry = np.array([[math.cos(a), 0.0, -math.sin(a)],
                   [0.0, 1.0, 0.0],
                   [math.sin(a), 0.0, math.cos(a)]])
    rp = np.array([[math.cos(b), -math.sin(b), 0.0],
                   [math.sin(b), math.cos(b), 0.0],
                   [0.0, 0.0, 1.0]])
    return ry @ rp


def _resample(envmap: RadianceMap, src_dirs: np.ndarray) -> RadianceMap:
    out = sample_dirs(envmap.data, src_dirs)
    return RadianceMap(out.astype(np.float32), envmap.exposure_scale)


def rotate_panorama(envmap: RadianceMap, yaw: float, pitch: float) -> RadianceMap:
    """Re-express the panorama in the frame of a camera at (yaw, pitch).

    Output direction d samples the input at ``R(yaw, pitch) @ d``.
    """
    envmap.require_equirect()
    if yaw % 360.0 == 0.0 and pitch == 0.0:
        return RadianceMap(envmap.data.copy(), envmap.exposure_scale)
    dirs = EquirectGrid(envmap.width, envmap.height).directions()
    return _resample(envmap, dirs @ camera_rotation(yaw, pitch).T)


def warp_offset(beta: float, t: float) -> np.ndarray:
    """Camera position t * n_beta, n_beta at ``beta`` degrees from nadir toward +x."""
    if not 0.0 <= t < 1.0:
        raise InvalidArgument(f"warp translation must satisfy 0 <= t < 1, got {t}")
    b = math.radians(beta)
    return t * np.array([math.sin(b), -math.cos(b), 0.0])


def warp_source_dirs(dirs: np.ndarray, beta: float, t: float) -> np.ndarray:
    """Where a camera at ``warp_offset(beta, t)`` looking along ``dirs`` hits
    the unit sphere (the positive root of |p + s d| = 1)."""
    p = warp_offset(beta, t)
    pd = dirs @ p
    lam = -pd + np.sqrt(pd * pd - (p @ p - 1.0))
    return p + lam[..., None] * dirs


def warp_panorama(envmap: RadianceMap, beta: float, t: float) -> RadianceMap:
    """Resample the panorama as seen from a camera translated inside a
    unit-sphere scene."""
    envmap.require_equirect()
    warp_offset(beta, t)
    if t == 0.0:
        return RadianceMap(envmap.data.copy(), envmap.exposure_scale)
    dirs = EquirectGrid(envmap.width, envmap.height).directions()
    return _resample(envmap, warp_source_dirs(dirs, beta, t))


def unwarp_panorama(envmap: RadianceMap, beta: float, t: float) -> RadianceMap:
    """Exact inverse of :func:`warp_panorama` (up to interpolation)."""
    envmap.require_equirect()
    p = warp_offset(beta, t)
    if t == 0.0:
        return RadianceMap(envmap.data.copy(), envmap.exposure_scale)
    dirs = EquirectGrid(envmap.width, envmap.height).directions()
    src = dirs - p
    src /= np.linalg.norm(src, axis=-1, keepdims=True)
    return _resample(envmap, src)


def camera_rays(cam: CameraSpec) -> np.ndarray:
    """Unit rays (H, W, 3) of a pinhole camera, in the panorama frame."""
    if not 10.0 < cam.horizontal_fov < 170.0:
        raise InvalidArgument(f"horizontal_fov must be in (10, 170) degrees, got {cam.horizontal_fov}")
    f = cam.focal
    j = (np.arange(cam.out_width) + 0.5 - cam.out_width / 2.0) / f
    i = (np.arange(cam.out_height) + 0.5 - cam.out_height / 2.0) / f
    jj, ii = np.meshgrid(j, i)
    local = np.stack([np.ones_like(jj), -ii, jj], axis=-1)
    local /= np.linalg.norm(local, axis=-1, keepdims=True)
    return local @ camera_rotation(cam.yaw, cam.pitch).T


def project_perspective(envmap: RadianceMap, cam: CameraSpec) -> RadianceMap:
    envmap.require_equirect()
    return _resample(envmap, camera_rays(cam))


def luminance(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ LUMA


def auto_exposure(view: RadianceMap, gamma: float = 2.2, percentile: float = 90.0,
                  target: float = 0.8) -> float:
    """Exposure that sends the given luminance percentile to ``target`` after
    gamma encoding."""
    ref = float(np.percentile(luminance(view.data), percentile))
    if not ref > 0.0:
        return 1.0
    return target ** gamma / ref


def tonemap_gamma(view: RadianceMap, exposure: float | None = None, gamma: float = 2.2,
                  percentile: float = 90.0) -> LdrImage:
    """``clamp((exposure * x) ** (1 / gamma), 0, 1)``; ``exposure=None`` picks
    :func:`auto_exposure`."""
    if gamma <= 0:
        raise InvalidArgument("gamma must be positive")
    if exposure is None:
        exposure = auto_exposure(view, gamma, percentile)
    if exposure <= 0:
        raise InvalidArgument("exposure must be positive")
    x = np.maximum(view.data.astype(np.float64) * exposure, 0.0)
    return LdrImage(np.clip(x ** (1.0 / gamma), 0.0, 1.0))


def lowest_visible_beta(cam: CameraSpec) -> float:
    """Angle from the camera-frame nadir to the bottom edge of the view."""
    return 90.0 - cam.vertical_fov / 2.0


@dataclass
class MixedRealityView:
    ldr: LdrImage
    warped: RadianceMap
    yaw: float
    pitch: float
    beta: float
    t: float
    exposure: float


def mixed_reality_view(envmap: RadianceMap, yaw: float, pitch: float, t: float = 0.3,
                       camera: CameraSpec = CameraSpec(), gamma: float = 2.2,
                       percentile: float = 90.0, beta: float | None = None) -> MixedRealityView:
    """Rotate, warp, project and tone-map one egocentric view.

    The warped panorama is expressed in the camera frame, so its SH
    projection is the lighting as seen by that camera.
    """
    rotated = rotate_panorama(envmap, yaw, pitch)
    cam = CameraSpec(0.0, 0.0, camera.horizontal_fov, camera.out_width, camera.out_height)
    if beta is None:
        beta = lowest_visible_beta(cam)
    warped = warp_panorama(rotated, beta, t)
    view = project_perspective(warped, cam)
    exposure = auto_exposure(view, gamma, percentile)
    ldr = tonemap_gamma(view, exposure, gamma)
    return MixedRealityView(ldr, warped, yaw, pitch, beta, t, exposure)
