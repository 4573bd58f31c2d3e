"""
Fitting fringes
===============

Scan the interferometric phase, count vertical signal photons and fit
C + A sin(ζ + φ).  Without a sample the visibilities measure the idler
transmission T directly.
"""

import math

from qiuptomo.acquisition import AcquisitionConfig, Scene, acquire
from qiuptomo.fitting import fit_sinusoid, visibility_of, visibility_stderr
from qiuptomo.interferometer import ProbeState, wrap_phase

scene = Scene(T=0.65)
probe = ProbeState(alpha1=0.6, beta1=0.8, gamma=1.2)

for noise in ("none", "poisson"):
    cfg = AcquisitionConfig(pairs_per_point=200_000, noise=noise, rng_seed=1)
    print(f"-- {noise} --")
    for theta, expected in (("0", scene.T * probe.beta1), ("45", scene.T * probe.alpha1)):
        fit = fit_sinusoid(acquire(theta, probe, scene, cfg))
        nu, dnu = visibility_of(fit), visibility_stderr(fit)
        print(f"θ={theta:>2}°  C={fit.c:10.1f}  A={fit.a:9.1f}  φ={fit.phi:+.4f}  "
              f"ν={nu:.5f} ± {dnu:.5f}  (T·{'β' if theta == '0' else 'α'}₁ = {expected:.5f})")

# at 0° the fringe phase gives the probe's relative phase: φ = π − γ
fit0 = fit_sinusoid(acquire("0", probe, scene, AcquisitionConfig()))
print(f"recovered γ: {wrap_phase(math.pi - fit0.phi):.12f}")
