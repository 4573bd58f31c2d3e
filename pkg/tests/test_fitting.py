import math

import numpy as np
import pytest

from qiuptomo.acquisition import AcquisitionConfig, Scene, acquire, uniform_grid
from qiuptomo.analytic import JonesObject
from qiuptomo.fitting import FitError, fit_arrays, fit_sinusoid, visibility_of, visibility_stderr
from qiuptomo.interferometer import ProbeState, wrap_phase


def dft_oracle(zeta, y):
    """Independent estimate for a uniform full-period grid via the first Fourier coefficient."""
    n = len(y)
    z1 = 2 / n * np.sum(y * np.exp(-1j * zeta))
    # c + a sin(ζ+φ) has first coefficient a e^{i(φ - π/2)}
    return float(np.mean(y)), float(abs(z1)), wrap_phase(np.angle(z1) + math.pi / 2)


def test_exact_recovery(grid):
    f = fit_arrays(grid, 2 + 0.5 * np.sin(grid + 0.3))
    assert (f.c, f.a, f.phi) == pytest.approx((2, 0.5, 0.3), abs=1e-14)
    assert f.residual_rms < 1e-14 and f.phase_determined


def test_flat_data_phase_undetermined(grid):
    f = fit_arrays(grid, np.full(32, 7.0))
    assert f.a < 1e-12 and not f.phase_determined


def test_reference_object_fringe():
    # horizontal probe at 0°, κ=0.3, ξ=1.0, T=0.8, balanced source, 1e6 pairs
    obj = JonesObject(0.9, 0.7, 0.3, 0.4, -0.2, 1.0)
    ds = acquire(0, ProbeState.horizontal(), Scene(T=0.8, obj=obj), AcquisitionConfig())
    f = fit_sinusoid(ds)
    assert f.a == pytest.approx(1.2e5, rel=1e-12)
    assert f.phi == pytest.approx(1.0, abs=1e-12)
    c, a, phi = dft_oracle(ds.zeta, ds.counts)
    assert (f.c, f.a, f.phi) == pytest.approx((c, a, phi), abs=1e-8)


def test_matches_dft_on_random_sinusoids(grid):
    rng = np.random.default_rng(2)
    for _ in range(50):
        c, a, phi = rng.uniform(1, 10), rng.uniform(0.01, 1), rng.uniform(-math.pi, math.pi)
        y = c + a * np.sin(grid + phi)
        f = fit_arrays(grid, y)
        assert (f.c, f.a, f.phi) == pytest.approx(dft_oracle(grid, y), abs=1e-12)


def test_scale_equivariance(grid):
    y = 3 + np.sin(grid - 2.0)
    f, g = fit_arrays(grid, y), fit_arrays(grid, 1e4 * y)
    assert g.c == pytest.approx(1e4 * f.c, rel=1e-12)
    assert g.a == pytest.approx(1e4 * f.a, rel=1e-12)
    assert g.phi == pytest.approx(f.phi, abs=1e-12)


def test_grid_shift_moves_phase(grid):
    phi = 0.7
    shifted = grid + 0.05
    f = fit_arrays(shifted, 1 + 0.4 * np.sin(shifted + phi))
    assert f.phi == pytest.approx(phi, abs=1e-12)


def test_nonuniform_grid():
    rng = np.random.default_rng(3)
    z = np.sort(rng.uniform(0, 2 * math.pi, 20))
    f = fit_arrays(z, 5 - 2 * np.sin(z + 1))
    assert f.a == pytest.approx(2, abs=1e-12)
    assert f.phi == pytest.approx(wrap_phase(1 + math.pi), abs=1e-12)


@pytest.mark.parametrize("z", [
    np.linspace(0, 1, 20),
    np.linspace(0, 2 * math.pi, 7, endpoint=False),
])
def test_rejects_bad_grids(z):
    with pytest.raises(FitError):
        fit_arrays(z, np.ones_like(z))


def test_rejects_rank_deficient():
    z = np.array([0.0, math.pi] * 5)
    with pytest.raises(FitError):
        fit_arrays(z, np.ones_like(z))


def test_rejects_shape_mismatch(grid):
    with pytest.raises(FitError):
        fit_arrays(grid, np.ones(31))


def test_unbiased_under_poisson():
    obj = JonesObject(0.9, 0.7, 0.3, 0.4, -0.2, 1.0)
    scene = Scene(T=0.8, obj=obj)
    truth = acquire(0, ProbeState.horizontal(), scene, AcquisitionConfig())
    exact = fit_sinusoid(truth)
    fits = [fit_sinusoid(acquire(0, ProbeState.horizontal(), scene,
                                 AcquisitionConfig(noise="poisson", rng_seed=s)))
            for s in range(200)]
    for name in ("c", "a", "phi"):
        vals = np.array([getattr(f, name) for f in fits])
        sem = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - getattr(exact, name)) < 3 * sem, name
    # reported errors describe the scatter
    se = np.mean([f.stderr.a for f in fits])
    assert se == pytest.approx(np.std([f.a for f in fits]), rel=0.2)


def test_unweighted_errors_scale_with_noise(grid):
    rng = np.random.default_rng(5)
    y = 10 + np.sin(grid) + rng.normal(0, 0.1, 32)
    f = fit_arrays(grid, y)
    assert 0.01 < f.stderr.a < 0.05
    assert f.phase_determined


def test_visibility_of(grid):
    f = fit_arrays(grid, 2 + 0.5 * np.sin(grid))
    assert visibility_of(f) == pytest.approx(0.25, abs=1e-14)
    assert visibility_stderr(f) < 1e-12


def test_fit_dict_serializable(grid):
    d = fit_arrays(uniform_grid(16), np.ones(16) + np.sin(uniform_grid(16))).to_dict()
    assert set(d) == {"c", "a", "phi", "residual_rms", "stderr", "phase_determined"}
