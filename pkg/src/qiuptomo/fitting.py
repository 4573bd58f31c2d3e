"""Linear least-squares fit of C + A sin(ζ + φ) to a phase scan."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic import visibility
from .interferometer import wrap_phase

MIN_POINTS = 8
PHASE_SNR = 10.0
# relative floor below which a fitted amplitude is numerical noise
AMPLITUDE_RTOL = 1e-12


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitErrors:
    c: float
    a: float
    phi: float


@dataclass(frozen=True)
class SinusoidFit:
    c: float
    a: float
    phi: float
    residual_rms: float
    stderr: FitErrors
    phase_determined: bool = True

    def model(self, zeta) -> np.ndarray:
        return self.c + self.a * np.sin(np.asarray(zeta, dtype=float) + self.phi)

    def to_dict(self) -> dict:
        return {"c": self.c, "a": self.a, "phi": self.phi, "residual_rms": self.residual_rms,
                "stderr": {"c": self.stderr.c, "a": self.stderr.a, "phi": self.stderr.phi},
                "phase_determined": self.phase_determined}


def fit_arrays(zeta, counts, poisson: bool = False) -> SinusoidFit:
    """Fit counts ≈ c + p sin ζ + q cos ζ, then a = √(p²+q²), φ = atan2(q, p).

    With ``poisson=True`` each point is weighted by 1/max(count, 1) and the
    covariance is taken as known (no residual rescaling); otherwise the fit
    is unweighted and the covariance is scaled by the residual variance.
    """
    z = np.asarray(zeta, dtype=float)
    y = np.asarray(counts, dtype=float)
    if z.shape != y.shape or z.ndim != 1:
        raise FitError(f"zeta and counts must be 1-D of equal length, got {z.shape} and {y.shape}")
    n = z.size
    if n < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points, got {n}")
    if np.ptp(z) < math.pi:
        raise FitError(f"phase grid spans only {np.ptp(z):.3g} rad; need at least π")
    X = np.column_stack([np.ones(n), np.sin(z), np.cos(z)])
    if np.linalg.matrix_rank(X) < 3:
        raise FitError("singular design: phase grid does not determine a sinusoid")

    w = 1.0 / np.maximum(y, 1.0) if poisson else np.ones(n)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    c, p, q = (float(v) for v in beta)
    resid = y - X @ beta
    rms = float(np.sqrt(np.mean(resid**2)))

    cov = np.linalg.inv((X * w[:, None]).T @ X)
    if not poisson:
        cov = cov * float(np.sum(resid**2)) / max(n - 3, 1)

    a = math.hypot(p, q)
    phi = wrap_phase(math.atan2(q, p))
    if a > 0:
        var_a = (p * p * cov[1, 1] + q * q * cov[2, 2] + 2 * p * q * cov[1, 2]) / a**2
        var_phi = (q * q * cov[1, 1] + p * p * cov[2, 2] - 2 * p * q * cov[1, 2]) / a**4
    else:
        var_a, var_phi = max(cov[1, 1], cov[2, 2]), math.inf
    err = FitErrors(math.sqrt(max(cov[0, 0], 0.0)), math.sqrt(max(var_a, 0.0)),
                    math.sqrt(max(var_phi, 0.0)))
    determined = a > PHASE_SNR * err.a and a > AMPLITUDE_RTOL * max(abs(c), 1.0)
    return SinusoidFit(c, a, phi, rms, err, determined)


def fit_sinusoid(ds) -> SinusoidFit:
    """Fit a :class:`~qiuptomo.acquisition.FringeDataset`; Poisson weights for sampled data."""
    return fit_arrays(ds.zeta, ds.counts, poisson=ds.config.sampled)


def visibility_of(fit: SinusoidFit) -> float:
    return visibility(fit.a, fit.c)


def visibility_stderr(fit: SinusoidFit) -> float:
    """First-order error of a/c, ignoring the (weak) a–c covariance."""
    if fit.c <= 0:
        return math.inf
    nu = fit.a / fit.c
    rel = math.hypot(fit.stderr.a / fit.a if fit.a > 0 else 0.0, fit.stderr.c / fit.c)
    return nu * rel if fit.a > 0 else fit.stderr.a / fit.c
