import os
import sys

import numpy as np
import pytest
from hypothesis import settings

from ulft.field.grid import MultiResGrid
from ulft.field.render import RayBatch
from ulft.geometry import Camera, Intrinsics, Pose

settings.register_profile("ulft", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("ulft")

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def random_grid(rng, resolutions=(2, 4), n_instance=3, scale=0.5):
    g = MultiResGrid.create(resolutions, n_instance, init_density=0.0, seed=0)
    for k, a in g.params.items():
        a[:] = scale * rng.standard_normal(a.shape)
    g.background[:] = rng.random(3)
    g.density_scale = float(rng.uniform(0.5, 4.0))
    return g


def random_rays(rng, n=6):
    o = rng.uniform(0.1, 0.9, (n, 3))
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t_lo = rng.uniform(0.0, 0.1, n)
    t_hi = t_lo + rng.uniform(0.2, 0.8, n)
    zf = rng.uniform(0.6, 1.0, n)
    return RayBatch(o, d, zf, t_lo, t_hi)


def random_camera(rng, width=16, height=12):
    fov = rng.uniform(40, 90)
    intr = Intrinsics.from_fov(width, height, fov)
    eye = rng.uniform(-1, 2, 3)
    target = rng.uniform(0.2, 0.8, 3)
    up = (0.0, 0.0, 1.0)
    if abs(np.dot((target - eye) / np.linalg.norm(target - eye), up)) > 0.99:
        up = (0.0, 1.0, 0.0)
    return Camera(intr, Pose.look_at(eye, target, up), 1e-3, 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
