import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import sph_harm_y

from shlight.equirect import EquirectGrid
from shlight.errors import InvalidArgument, InvalidState, NumericError, ParseError
from shlight.panorama import RadianceMap
from shlight.sh import (
    SHCoeffs,
    convolve_irradiance,
    eval_sh,
    irradiance_factors,
    mc_irradiance,
    mc_project_oracle,
    n_coeffs,
    project_panorama,
    reconstruct_envmap,
    render_sphere,
    sh_basis,
    sh_basis_eval,
    shade_diffuse,
    sphere_normals,
    stratified_sphere,
    uniform_sphere,
)


def scipy_real_sh(dirs, order):
    """Real SH without the Condon-Shortley phase, pole on +z, built from
    scipy's complex harmonics (which include the phase)."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    polar = np.arccos(np.clip(z, -1, 1))
    azim = np.arctan2(y, x)
    out = []
    for l in range(order + 1):
        for m in range(-l, l + 1):
            c = sph_harm_y(l, abs(m), polar, azim)
            if m == 0:
                out.append(c.real)
            elif m > 0:
                out.append(math.sqrt(2) * (-1) ** m * c.real)
            else:
                out.append(math.sqrt(2) * (-1) ** m * c.imag)
    return np.stack(out, axis=-1)


class TestBasis:
    def test_order2_constants(self):
        assert sh_basis(np.array([0.0, 0.0, 1.0]))[0] == pytest.approx(0.282095, abs=1e-6)
        y = sh_basis(np.array([0.0, 1.0, 0.0]))
        assert y[1] == pytest.approx(0.488603, abs=1e-6)
        d = np.array([1.0, 1.0, 1.0]) / math.sqrt(3)
        b = sh_basis(d)
        assert b[4] == pytest.approx(1.092548 / 3, abs=1e-6)
        assert b[6] == pytest.approx(0.0, abs=1e-12)
        assert b[8] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("order", [0, 1, 2, 3, 4])
    def test_matches_scipy(self, order, rng):
        dirs = uniform_sphere(200, rng)
        assert np.allclose(sh_basis(dirs, order), scipy_real_sh(dirs, order), atol=1e-12)

    def test_orthonormal_by_quadrature(self):
        g = EquirectGrid(512, 256)
        b = sh_basis(g.directions(), 4).reshape(-1, 25)
        w = g.solid_angles().reshape(-1)
        gram = (b * w[:, None]).T @ b
        assert np.allclose(gram, np.eye(25), atol=2e-4)

    def test_eval_rejects_non_unit(self):
        with pytest.raises(InvalidArgument):
            sh_basis_eval((1.0, 1.0, 0.0))
        assert sh_basis_eval((0.0, 0.0, 1.0)).shape == (9,)

    def test_order_bounds(self):
        with pytest.raises(InvalidArgument):
            sh_basis(np.array([0.0, 0.0, 1.0]), 5)
        with pytest.raises(InvalidArgument):
            SHCoeffs(-1, np.zeros((3, 1)))


class TestCoeffs:
    def test_band_slices(self):
        c = SHCoeffs(2, np.arange(27.0).reshape(3, 9))
        assert c.band(1).shape == (3, 3)
        assert c.band(2)[0, 0] == 4

    def test_truncate_and_pad(self):
        c = SHCoeffs(2, np.ones((3, 9)))
        assert c.truncated(1).values.shape == (3, 4)
        padded = c.truncated(3)
        assert padded.values.shape == (3, 16) and padded.values[:, 9:].sum() == 0

    def test_json_round_trip_is_exact(self, tmp_path, rng):
        c = SHCoeffs(2, rng.normal(size=(3, 9)))
        c.save(tmp_path / "c.json")
        back = SHCoeffs.load(tmp_path / "c.json")
        assert np.array_equal(back.values, c.values)
        rec = json.loads((tmp_path / "c.json").read_text())
        assert rec["convention"] == "real-sh-no-cs" and rec["channels"] == ["R", "G", "B"]

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ParseError):
            SHCoeffs.load(p)
        p.write_text(json.dumps({"order": 2, "convention": "complex", "values": []}))
        with pytest.raises(ParseError):
            SHCoeffs.load(p)


class TestProjection:
    def test_constant_map(self):
        m = RadianceMap(np.full((64, 128, 3), 2.0, np.float32))
        c = project_panorama(m)
        assert c.values[:, 0] == pytest.approx(2.0 * math.sqrt(4 * math.pi), rel=1e-3)
        # zonal band-2 leakage is the midpoint-rule error on 64 rows, O((pi/h)^2)
        assert np.abs(c.values[:, 1:]).max() < 3e-3

    def test_agrees_with_monte_carlo(self, lit_map):
        a = project_panorama(lit_map).values
        b = mc_project_oracle(lit_map, 2, 400_000, seed=1, stratified=True).values
        assert np.linalg.norm(a - b) / np.linalg.norm(b) < 0.01

    def test_plain_monte_carlo_is_unbiased(self, lit_map):
        a = project_panorama(lit_map).values
        b = mc_project_oracle(lit_map, 2, 300_000, seed=2).values
        assert np.linalg.norm(a - b) / np.linalg.norm(b) < 0.03

    def test_stratified_count(self, rng):
        d = stratified_sphere(1000, rng)
        assert abs(len(d) - 1000) < 50
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0)

    def test_nan_reports_pixel(self):
        data = np.ones((8, 16, 3), np.float32)
        data[3, 5, 1] = np.nan
        with pytest.raises(NumericError, match=r"u=5, v=3"):
            project_panorama(data)

    def test_negative_rejected(self):
        data = np.ones((8, 16, 3), np.float32)
        data[0, 0, 0] = -1
        with pytest.raises(InvalidArgument):
            project_panorama(data)

    def test_band_limited_round_trip(self, rng):
        c = SHCoeffs(2, rng.normal(size=(3, 9)))
        back = project_panorama(_shifted(c))
        assert np.allclose(back.values - _shift_coeffs(), c.values, atol=1e-3)


def _shift_coeffs():
    # a large constant keeps the reconstructed map non-negative
    s = np.zeros((3, 9))
    s[:, 0] = 20.0 * math.sqrt(4 * math.pi)
    return s


def _shifted(c: SHCoeffs) -> RadianceMap:
    m = reconstruct_envmap(SHCoeffs(2, c.values + _shift_coeffs()), 512, 256)
    assert m.data.min() >= 0
    return m


class TestIrradiance:
    def test_factors(self):
        a = irradiance_factors(4)
        assert a[:3] == pytest.approx([math.pi, 2 * math.pi / 3, math.pi / 4])
        assert a[3] == 0.0
        assert a[4] == pytest.approx(-math.pi / 24)

    def test_factors_match_numeric_legendre_integral(self):
        # A_l = 2 pi * integral_0^1 P_l(t) t dt
        from numpy.polynomial import legendre
        t = np.linspace(0, 1, 200_001)
        for l, a in enumerate(irradiance_factors(4)):
            p = legendre.legval(t, [0] * l + [1])
            assert a == pytest.approx(2 * math.pi * np.trapezoid(p * t, t), abs=1e-8)

    def test_constant_environment(self):
        c = SHCoeffs(2, np.zeros((3, 9)))
        c.values[:, 0] = 1.5 * math.sqrt(4 * math.pi)
        e = eval_sh(convolve_irradiance(c), np.array([0.3, -0.5, 0.81]) / np.linalg.norm([0.3, -0.5, 0.81]))
        assert e == pytest.approx(math.pi * 1.5, abs=1e-9)

    def test_double_convolution_is_error(self):
        c = convolve_irradiance(SHCoeffs.zeros())
        with pytest.raises(InvalidState):
            convolve_irradiance(c)

    def test_shade_requires_irradiance(self):
        with pytest.raises(InvalidState):
            shade_diffuse(SHCoeffs.zeros(), (0.0, 0.0, 1.0))

    def test_shade_clamps_negative(self):
        c = SHCoeffs.zeros(domain="irradiance")
        c.values[:, 1] = 1.0  # pure y lobe
        assert np.all(shade_diffuse(c, (0.0, -1.0, 0.0)) == 0.0)
        assert np.all(shade_diffuse(c, (0.0, 1.0, 0.0)) > 0.0)

    def test_mc_irradiance_matches_sh_for_smooth_light(self):
        # L = 1 + 0.5 y has no energy above band 1, so SH irradiance is exact
        h, w = 128, 256
        d = EquirectGrid(w, h).directions()
        m = RadianceMap(np.repeat((1.0 + 0.5 * d[..., 1])[..., None], 3, axis=2).astype(np.float32))
        normals = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
        ref = mc_irradiance(m, normals, 400_000, seed=0)
        sh = eval_sh(convolve_irradiance(project_panorama(m)), normals)
        assert np.allclose(ref, sh, rtol=0.02)
        assert sh[0, 0] == pytest.approx(math.pi * (1 + 0.5 * 2 / 3), rel=1e-3)


class TestSphere:
    def test_normals(self):
        n, mask = sphere_normals(65)
        assert np.allclose(n[32, 32], (0.0, 0.0, 1.0), atol=1e-3)
        assert n[0, 32, 1] > 0.9 or not mask[0, 32]
        assert not mask[0, 0]

    def test_constant_sh_uniform_sphere(self):
        c = SHCoeffs.zeros()
        c.values[:, 0] = 1.0
        img = render_sphere(c, 32)
        _, mask = sphere_normals(32)
        lit = img[mask]
        assert np.allclose(lit, lit[0])

    def test_zero_sh_black(self):
        assert render_sphere(SHCoeffs.zeros(), 16).max() == 0.0


@given(st.lists(st.floats(-2, 2), min_size=27, max_size=27))
def test_eval_is_linear_in_coefficients(vals):
    c = SHCoeffs(2, np.array(vals).reshape(3, 9))
    d = np.array([[0.0, 0.6, 0.8], [1.0, 0.0, 0.0]])
    both = eval_sh(SHCoeffs(2, 2 * c.values), d)
    assert np.allclose(both, 2 * eval_sh(c, d), atol=1e-9)
    assert n_coeffs(2) == 9
