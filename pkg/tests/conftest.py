import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shlight.dataset import AreaLight, SynthLightSpec, synth_panorama
from shlight.panorama import RadianceMap

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def lit_map():
    """128x64 panorama with one warm light above and to the right."""
    spec = SynthLightSpec([AreaLight((0.3, 0.8, 0.5), 20.0, (6.0, 5.0, 4.0))], (0.1, 0.1, 0.12), bounce=0.5)
    return synth_panorama(spec, 128, 64, seed=3)


@pytest.fixture(scope="session")
def textured_map():
    """512x256 smooth random panorama for interpolation-sensitive checks."""
    r = np.random.default_rng(7)
    h, w = 256, 512
    v, u = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    data = np.full((h, w, 3), 1.0)
    for _ in range(5):
        fu, fv = r.integers(1, 4, 2)
        ph = r.uniform(0, 2 * np.pi, 3)
        data += 0.2 * np.sin(2 * np.pi * fu * u[..., None] + ph) * np.sin(np.pi * fv * v[..., None])
    return RadianceMap(data.astype(np.float32))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
