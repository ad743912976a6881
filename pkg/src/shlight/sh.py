"""Real spherical harmonics on equirectangular radiance maps.

Convention: real SH without the Condon-Shortley phase, z as the polar axis of
the basis, coefficient index ``i = l * (l + 1) + m``.  For order 2 this gives

    Y0 = 0.282095
    Y1..Y3 = 0.488603 * (y, z, x)
    Y4..Y8 = 1.092548 * (xy, yz), 0.315392 * (3z^2 - 1), 1.092548 * xz,
             0.546274 * (x^2 - y^2)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre

from .equirect import EquirectGrid, sample_nearest
from .errors import InvalidArgument, InvalidState, NumericError, ParseError
from .panorama import RadianceMap

MAX_ORDER = 4
CONVENTION = "real-sh-no-cs"
CHANNELS = ("R", "G", "B")

RADIANCE = "radiance"
IRRADIANCE = "irradiance"


def n_coeffs(order: int) -> int:
    return (order + 1) ** 2


def band_of(index: int) -> int:
    return math.isqrt(index)


def _check_order(order: int) -> None:
    if not isinstance(order, (int, np.integer)) or not 0 <= order <= MAX_ORDER:
        raise InvalidArgument(f"SH order must be an integer in [0, {MAX_ORDER}], got {order!r}")


@dataclass
class SHCoeffs:
    """Per-channel SH coefficients, ``values`` has shape (3, (order+1)**2)."""

    order: int
    values: np.ndarray
    domain: str = RADIANCE
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        _check_order(self.order)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(3, n_coeffs(self.order))
        if self.domain not in (RADIANCE, IRRADIANCE):
            raise InvalidArgument(f"unknown SH domain {self.domain!r}")

    @classmethod
    def zeros(cls, order: int = 2, domain: str = RADIANCE) -> SHCoeffs:
        return cls(order, np.zeros((3, n_coeffs(order))), domain)

    def band(self, l: int) -> np.ndarray:
        return self.values[:, l * l : (l + 1) ** 2]

    def truncated(self, order: int) -> SHCoeffs:
        """Keep bands 0..order; padding with zeros when order exceeds ours."""
        out = np.zeros((3, n_coeffs(order)))
        k = min(n_coeffs(order), n_coeffs(self.order))
        out[:, :k] = self.values[:, :k]
        return SHCoeffs(order, out, self.domain)

    def scaled(self, factor: float) -> SHCoeffs:
        return SHCoeffs(self.order, self.values * factor, self.domain, dict(self.meta))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    def to_dict(self) -> dict:
        return {
            "order": int(self.order),
            "convention": CONVENTION,
            "domain": self.domain,
            "channels": list(CHANNELS),
            "values": [[float(v) for v in row] for row in self.values],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SHCoeffs:
        if d.get("convention", CONVENTION) != CONVENTION:
            raise ParseError(f"unsupported SH convention {d.get('convention')!r}")
        try:
            return cls(int(d["order"]), np.array(d["values"], dtype=np.float64), d.get("domain", RADIANCE))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad SH coefficient record: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> SHCoeffs:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc.msg}", exc.pos) from exc


# --------------------------------------------------------------------------
# Basis


@lru_cache(maxsize=None)
def _legendre_derivs(order: int) -> list[tuple[int, int, float, np.ndarray]]:
    """(l, m, K_lm, coefficients of d^m P_l / dz^m) for m >= 0."""
    table = []
    for l in range(order + 1):
        pl = legendre.Legendre.basis(l).convert(kind=np.polynomial.Polynomial)
        for m in range(l + 1):
            k = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - m) / math.factorial(l + m))
            table.append((l, m, k, pl.deriv(m).coef))
    return table


def sh_basis(dirs: np.ndarray, order: int = 2) -> np.ndarray:
    """Evaluate all basis functions up to ``order`` at unit directions.

    Args:
        dirs: array of shape (..., 3).
        order: SH order in [0, 4].

    Returns:
        Array of shape (..., (order+1)**2).
    """
    _check_order(order)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (n_coeffs(order),))
    # (x + iy)^m carries sin^m(theta) * exp(i m phi) about the z axis
    xy_pow = [np.ones_like(x, dtype=np.complex128)]
    for _ in range(order):
        xy_pow.append(xy_pow[-1] * (x + 1j * y))
    for l, m, k, coef in _legendre_derivs(order):
        q = np.polynomial.polynomial.polyval(z, coef)
        if m == 0:
            out[..., l * (l + 1)] = k * q
        else:
            c = math.sqrt(2.0) * k * q
            out[..., l * (l + 1) + m] = c * xy_pow[m].real
            out[..., l * (l + 1) - m] = c * xy_pow[m].imag
    return out


def sh_basis_eval(direction, order: int = 2) -> np.ndarray:
    """Basis vector at a single unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,):
        raise InvalidArgument("direction must have 3 components")
    if abs(float(d @ d) - 1.0) > 1e-9:
        raise InvalidArgument(f"direction {tuple(d)} is not unit length")
    return sh_basis(d, order)


# --------------------------------------------------------------------------
# Projection and reconstruction


def _radiance_array(envmap) -> np.ndarray:
    data = envmap.data if isinstance(envmap, RadianceMap) else np.asarray(envmap)
    if data.ndim != 3 or data.shape[2] != 3:
        raise InvalidArgument(f"expected an (H, W, 3) radiance map, got shape {data.shape}")
    bad = ~np.isfinite(data)
    if bad.any():
        v, u, c = np.argwhere(bad)[0]
        raise NumericError(f"non-finite radiance at pixel (u={u}, v={v}), channel {c}")
    return data


@lru_cache(maxsize=16)
def _weighted_basis(width: int, height: int, order: int) -> np.ndarray:
    grid = EquirectGrid(width, height)
    basis = sh_basis(grid.directions(), order)
    out = basis * grid.solid_angles()[..., None]
    out.setflags(write=False)
    return out


def project_panorama(envmap, order: int = 2) -> SHCoeffs:
    """Project an equirect radiance map onto SH by Riemann-sum quadrature."""
    _check_order(order)
    data = _radiance_array(envmap)
    if (data < 0).any():
        v, u, c = np.argwhere(data < 0)[0]
        raise InvalidArgument(f"negative radiance at pixel (u={u}, v={v}), channel {c}")
    h, w = data.shape[:2]
    wb = _weighted_basis(w, h, order).reshape(-1, n_coeffs(order))
    # row-major GEMM has a fixed reduction order for a given shape
    coeffs = data.reshape(-1, 3).astype(np.float64).T @ wb
    return SHCoeffs(order, coeffs, RADIANCE)


def uniform_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.uniform(-1.0, 1.0, n)
    a = rng.uniform(0.0, 2.0 * np.pi, n)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(a), r * np.sin(a), z], axis=-1)


def stratified_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """About ``n`` directions, one uniform point in each cell of an
    equal-area (z, phi) grid with twice as many phi cells as z cells."""
    nz = max(1, int(round(math.sqrt(n / 2))))
    nphi = max(1, n // nz)
    iz, ip = np.divmod(np.arange(nz * nphi), nphi)
    z = -1.0 + 2.0 * (iz + rng.uniform(size=iz.size)) / nz
    a = 2.0 * np.pi * (ip + rng.uniform(size=ip.size)) / nphi
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(a), r * np.sin(a), z], axis=-1)


def mc_project_oracle(envmap, order: int = 2, n_samples: int = 100_000, seed: int = 0,
                      chunk: int = 250_000, stratified: bool = False) -> SHCoeffs:
    """Monte Carlo estimate of the projection integral over the sphere.

    Radiance is looked up at the nearest texel, so this route shares no
    interpolation or quadrature code with :func:`project_panorama`.  With
    ``stratified`` the samples are jittered over equal-area cells, which
    lowers the variance for maps with small bright lights.
    """
    _check_order(order)
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    data = _radiance_array(envmap).astype(np.float64)
    rng = np.random.default_rng(seed)
    acc = np.zeros((3, n_coeffs(order)))
    if stratified:
        dirs_all = stratified_sphere(n_samples, rng)
        total = len(dirs_all)
        for i in range(0, total, chunk):
            dirs = dirs_all[i:i + chunk]
            acc += sample_nearest(data, dirs).T @ sh_basis(dirs, order)
        return SHCoeffs(order, acc * (4.0 * np.pi / total), RADIANCE)
    remaining = n_samples
    while remaining:
        n = min(chunk, remaining)
        dirs = uniform_sphere(n, rng)
        acc += sample_nearest(data, dirs).T @ sh_basis(dirs, order)
        remaining -= n
    return SHCoeffs(order, acc * (4.0 * np.pi / n_samples), RADIANCE)


def irradiance_factors(order: int) -> np.ndarray:
    """Per-band clamped-cosine convolution factors A_l, l = 0..order."""
    out = []
    for l in range(order + 1):
        if l == 0:
            out.append(np.pi)
        elif l == 1:
            out.append(2.0 * np.pi / 3.0)
        elif l % 2:
            out.append(0.0)
        else:
            h = l // 2
            out.append(2.0 * np.pi * (-1) ** (h - 1) / ((l + 2) * (l - 1))
                       * math.factorial(l) / (2 ** l * math.factorial(h) ** 2))
    return np.array(out)


def irradiance_scale(order: int) -> np.ndarray:
    """A_l expanded to one factor per coefficient index."""
    a = irradiance_factors(order)
    return np.array([a[band_of(i)] for i in range(n_coeffs(order))])


def convolve_irradiance(c: SHCoeffs) -> SHCoeffs:
    if c.domain != RADIANCE:
        raise InvalidState("coefficients are already in the irradiance domain")
    return SHCoeffs(c.order, c.values * irradiance_scale(c.order), IRRADIANCE, dict(c.meta))


def reconstruct_envmap(c: SHCoeffs, width: int, height: int) -> RadianceMap:
    if width < 4 or height < 4:
        raise InvalidArgument("reconstruction grid must be at least 4x4")
    basis = sh_basis(EquirectGrid(width, height).directions(), c.order)
    data = basis @ c.values.T
    return RadianceMap(data.astype(np.float32))


def eval_sh(c: SHCoeffs, dirs: np.ndarray) -> np.ndarray:
    """Per-channel SH expansion at directions, shape (..., 3)."""
    return sh_basis(dirs, c.order) @ c.values.T


def shade_diffuse(c: SHCoeffs, normal, albedo=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Lambertian exit radiance ``albedo / pi * E(normal)``, clamped at zero.

    ``normal`` may be a single direction or an array (..., 3).
    """
    if c.domain != IRRADIANCE:
        raise InvalidState("shade_diffuse expects irradiance-domain coefficients")
    e = eval_sh(c, np.asarray(normal, dtype=np.float64))
    return np.maximum(np.asarray(albedo, dtype=np.float64) / np.pi * e, 0.0)


# --------------------------------------------------------------------------
# Reference irradiance and sphere rendering


def sphere_normals(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Normals of a unit sphere filling a size x size image.

    Image x runs to +x, image up is +y and the viewer looks down -z, so the
    center pixel has normal (0, 0, 1).  Returns (normals, mask).
    """
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    px, py = np.meshgrid(c, -c)
    r2 = px * px + py * py
    mask = r2 < 1.0
    nz = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    normals = np.stack([px, py, nz], axis=-1)
    normals[~mask] = (0.0, 0.0, 1.0)
    return normals, mask


def render_sphere(c: SHCoeffs, size: int = 128, albedo=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Diffuse sphere lit by ``c`` (radiance or irradiance), linear RGB."""
    if c.domain == RADIANCE:
        c = convolve_irradiance(c)
    normals, mask = sphere_normals(size)
    img = shade_diffuse(c, normals, albedo)
    img[~mask] = 0.0
    return img


def mc_irradiance(envmap, normals: np.ndarray, n_samples: int = 200_000, seed: int = 0,
                  chunk: int = 20_000) -> np.ndarray:
    """Importance-sampled Monte Carlo irradiance E(n) for each normal.

    Pixels are drawn proportionally to luminance times solid angle, with a
    uniform-solid-angle jitter inside the chosen pixel.
    """
    data = _radiance_array(envmap).astype(np.float64)
    h, w = data.shape[:2]
    grid = EquirectGrid(w, h)
    omega = grid.solid_angles()
    lum = data @ np.array([0.2126, 0.7152, 0.0722])
    weight = (lum + 1e-3 * max(lum.mean(), 1e-12)) * omega
    p = (weight / weight.sum()).reshape(-1)
    rng = np.random.default_rng(seed)
    idx = rng.choice(p.size, size=n_samples, p=p)
    vi, ui = np.divmod(idx, w)
    # uniform in cos(theta) and phi within the pixel is uniform in solid angle
    cos_hi = np.cos(np.pi * vi / h)
    cos_lo = np.cos(np.pi * (vi + 1) / h)
    ct = cos_lo + (cos_hi - cos_lo) * rng.uniform(size=n_samples)
    phi = 2.0 * np.pi * (ui + rng.uniform(size=n_samples)) / w - np.pi
    st = np.sqrt(np.clip(1.0 - ct * ct, 0.0, None))
    dirs = np.stack([st * np.cos(phi), ct, st * np.sin(phi)], axis=-1)
    contrib = data[vi, ui] / (p[idx] / omega[vi, ui])[:, None]

    flat = normals.reshape(-1, 3)
    out = np.zeros((flat.shape[0], 3))
    for start in range(0, n_samples, chunk):
        cosines = np.maximum(flat @ dirs[start:start + chunk].T, 0.0)
        out += cosines @ contrib[start:start + chunk]
    return (out / n_samples).reshape(normals.shape[:-1] + (3,))
