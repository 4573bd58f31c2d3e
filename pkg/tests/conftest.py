import math

import numpy as np
import pytest

from qiuptomo.acquisition import AcquisitionConfig, Scene, standard_battery
from qiuptomo.analytic import JonesObject
from qiuptomo.interferometer import ProbeState, SourceConfig

REFERENCE = JonesObject(tau_h=0.9, tau_v=0.7, kappa=0.3, phi_h=0.4, phi_v=-0.2, xi=1.0)
EXTRAS = ("diagonal", "antidiagonal", "circular")


@pytest.fixture
def src():
    return SourceConfig()


@pytest.fixture
def grid():
    return np.arange(32) * (2 * math.pi / 32)


@pytest.fixture
def reference_object():
    return REFERENCE


def batteries(obj=REFERENCE, T=0.8, cfg=None, extras=EXTRAS, src=None):
    """Object battery and matching no-object calibration battery."""
    cfg = cfg or AcquisitionConfig()
    src = src or SourceConfig()
    objs = standard_battery(Scene(src, T, obj), cfg, extras)
    refs = standard_battery(Scene(src, T, None), cfg, extras, tag="ref/")
    return objs, refs


def random_probe(rng):
    a = rng.uniform(0, 1)
    return ProbeState(a, math.sqrt(1 - a * a), rng.uniform(-math.pi, math.pi))
