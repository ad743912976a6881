"""sRGB <-> CIE XYZ <-> CIELAB / CIELUV under D65.

Network targets use scaled channels in [0, 1]:
L/100, (a + 128)/255, (b + 128)/255 for LAB and
L/100, (u + 134)/354, (v + 140)/262 for LUV (the u*, v* ranges of the sRGB gamut).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

# sRGB primaries, D65 white (IEC 61966-2-1)
RGB_TO_XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                       [0.2126729, 0.7151522, 0.0721750],
                       [0.0193339, 0.1191920, 0.9503041]])
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
WHITE_D65 = RGB_TO_XYZ.sum(axis=1)

_EPS = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0

LAB_OFFSET = np.array([0.0, 128.0, 128.0])
LAB_RANGE = np.array([100.0, 255.0, 255.0])
LUV_OFFSET = np.array([0.0, 134.0, 140.0])
LUV_RANGE = np.array([100.0, 354.0, 262.0])

RGB_SPACES = ("srgb-linear", "srgb-gamma")
CIE_SPACES = ("cielab", "cieluv")


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.abs(c) ** (1 / 2.4) * np.sign(c) - 0.055)


def rgb_to_xyz(rgb_linear: np.ndarray) -> np.ndarray:
    return np.asarray(rgb_linear, dtype=np.float64) @ RGB_TO_XYZ.T


def xyz_to_rgb(xyz: np.ndarray) -> np.ndarray:
    return np.asarray(xyz, dtype=np.float64) @ XYZ_TO_RGB.T


def _f(t):
    return np.where(t > _EPS, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)


def _f_inv(f):
    return np.where(f ** 3 > _EPS, f ** 3, (116.0 * f - 16.0) / _KAPPA)


def _lightness(y_rel):
    return np.where(y_rel > _EPS, 116.0 * np.cbrt(y_rel) - 16.0, _KAPPA * y_rel)


def xyz_to_lab(xyz: np.ndarray) -> np.ndarray:
    f = _f(np.asarray(xyz, dtype=np.float64) / WHITE_D65)
    return np.stack([116.0 * f[..., 1] - 16.0,
                     500.0 * (f[..., 0] - f[..., 1]),
                     200.0 * (f[..., 1] - f[..., 2])], axis=-1)


def lab_to_xyz(lab: np.ndarray) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    return np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_D65


def _uv_prime(xyz):
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    d = x + 15.0 * y + 3.0 * z
    safe = np.where(d > 0, d, 1.0)
    return np.where(d > 0, 4.0 * x / safe, 0.0), np.where(d > 0, 9.0 * y / safe, 0.0)


def xyz_to_luv(xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    up, vp = _uv_prime(xyz)
    un, vn = _uv_prime(WHITE_D65)
    L = _lightness(xyz[..., 1] / WHITE_D65[1])
    black = (xyz[..., 0] + 15.0 * xyz[..., 1] + 3.0 * xyz[..., 2]) <= 0
    u = np.where(black, 0.0, 13.0 * L * (up - un))
    v = np.where(black, 0.0, 13.0 * L * (vp - vn))
    return np.stack([L, u, v], axis=-1)


def luv_to_xyz(luv: np.ndarray) -> np.ndarray:
    luv = np.asarray(luv, dtype=np.float64)
    L, u, v = luv[..., 0], luv[..., 1], luv[..., 2]
    un, vn = _uv_prime(WHITE_D65)
    pos = L > 0
    Ls = np.where(pos, L, 1.0)
    up = u / (13.0 * Ls) + un
    vp = v / (13.0 * Ls) + vn
    y = np.where(L > _KAPPA * _EPS, ((L + 16.0) / 116.0) ** 3, L / _KAPPA) * WHITE_D65[1]
    vps = np.where(vp != 0, vp, 1.0)
    x = y * 9.0 * up / (4.0 * vps)
    z = y * (12.0 - 3.0 * up - 20.0 * vp) / (4.0 * vps)
    out = np.stack([x, y, z], axis=-1)
    return np.where(pos[..., None], out, 0.0)


def color_convert(image: np.ndarray, src: str = "srgb-gamma", dst: str = "cielab",
                  scaled: bool = False) -> np.ndarray:
    """Convert an RGB image to CIELAB or CIELUV (or back, with src/dst swapped).

    With ``scaled`` the CIE side uses the [0, 1] network-target scaling.
    """
    src, dst = src.lower(), dst.lower()
    img = np.asarray(image, dtype=np.float64)
    if src in RGB_SPACES and dst in CIE_SPACES:
        lin = srgb_to_linear(img) if src == "srgb-gamma" else img
        xyz = rgb_to_xyz(lin)
        out = xyz_to_lab(xyz) if dst == "cielab" else xyz_to_luv(xyz)
        if scaled:
            off, rng = (LAB_OFFSET, LAB_RANGE) if dst == "cielab" else (LUV_OFFSET, LUV_RANGE)
            out = (out + off) / rng
        return out
    if src in CIE_SPACES and dst in RGB_SPACES:
        if scaled:
            off, rng = (LAB_OFFSET, LAB_RANGE) if src == "cielab" else (LUV_OFFSET, LUV_RANGE)
            img = img * rng - off
        xyz = lab_to_xyz(img) if src == "cielab" else luv_to_xyz(img)
        lin = xyz_to_rgb(xyz)
        return linear_to_srgb(lin) if dst == "srgb-gamma" else lin
    raise InvalidArgument(f"unsupported conversion {src!r} -> {dst!r}")
