"""Equirectangular grid conventions shared by every module.

Directions use +y as up.  For pixel (u, v) of a W x H map the polar angle is
``theta = pi * (v + 0.5) / H`` measured from +y and the azimuth is
``phi = 2 * pi * (u + 0.5) / W - pi``, so that

    x = sin(theta) cos(phi),  y = cos(theta),  z = sin(theta) sin(phi).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EquirectGrid:
    width: int
    height: int

    def angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (theta, phi) arrays of shape (H, W) at pixel centers."""
        theta = np.pi * (np.arange(self.height) + 0.5) / self.height
        phi = 2.0 * np.pi * (np.arange(self.width) + 0.5) / self.width - np.pi
        return np.meshgrid(theta, phi, indexing="ij")

    def directions(self) -> np.ndarray:
        theta, phi = self.angles()
        return angles_to_dirs(theta, phi)

    def solid_angles(self) -> np.ndarray:
        """Riemann-sum weights sin(theta) * dtheta * dphi, shape (H, W)."""
        theta, _ = self.angles()
        dtheta = np.pi / self.height
        dphi = 2.0 * np.pi / self.width
        return np.sin(theta) * dtheta * dphi


def angles_to_dirs(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), np.cos(theta), st * np.sin(phi)], axis=-1)


def dirs_to_angles(dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    # atan2 form stays accurate near the poles where arccos does not
    theta = np.arctan2(np.hypot(x, z), y)
    phi = np.arctan2(z, x)
    return theta, phi


def dirs_to_pixel(dirs: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates (u, v); pixel centers sit on integers."""
    theta, phi = dirs_to_angles(dirs)
    u = (phi + np.pi) / (2.0 * np.pi) * width - 0.5
    v = theta / np.pi * height - 0.5
    return u, v


def sample_bilinear(data: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup in an (H, W, C) equirect image.

    Wraps in azimuth and clamps at the poles.
    """
    h, w = data.shape[:2]
    v = np.clip(v, 0.0, h - 1.0)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]
    u0 = u0.astype(np.int64) % w
    u1 = (u0 + 1) % w
    v0 = v0.astype(np.int64)
    r0 = v0 * w
    r1 = np.minimum(v0 + 1, h - 1) * w
    flat = data.reshape(h * w, -1)
    def at(idx):
        return np.take(flat, idx, axis=0).reshape(idx.shape + data.shape[2:])
    top = at(r0 + u0) * (1.0 - fu) + at(r0 + u1) * fu
    bottom = at(r1 + u0) * (1.0 - fu) + at(r1 + u1) * fu
    return top * (1.0 - fv) + bottom * fv


def sample_nearest(data: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    h, w = data.shape[:2]
    u, v = dirs_to_pixel(dirs, w, h)
    ui = np.floor(u + 0.5).astype(np.int64) % w
    vi = np.clip(np.floor(v + 0.5).astype(np.int64), 0, h - 1)
    return data[vi, ui]


def sample_dirs(data: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    h, w = data.shape[:2]
    u, v = dirs_to_pixel(dirs, w, h)
    return sample_bilinear(data, u, v)
