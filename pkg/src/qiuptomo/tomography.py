"""Jones-matrix reconstruction from H/V fringe fits, with global refinement.

Workflow::

    calibrate_T        no-object fringes (V probe at 0°, H probe at 45°) -> T
    characterize_probe no-object fringes of a general probe -> (α₁, β₁, γ)
    extract_hv         four object fringes (H/V probe × 0°/45°) -> object
    refine_global      all object fringes, damped Gauss-Newton -> object

Phase bookkeeping for the H/V fits (fit convention a ≥ 0, counts =
c + a sin(ζ + phi)):

    H probe, 0°   +κ   sin(ξ + ζ)      ξ   = phi
    H probe, 45°  +τ_H sin(φ_H − ζ)    φ_H = π − phi
    V probe, 0°   +τ_V sin(φ_V − ζ)    φ_V = π − phi
    V probe, 45°  +κ   sin(ξ − ζ)      ξ   = π − phi
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import analytic
from .acquisition import FringeDataset, probe_label
from .analytic import JonesObject
from .fitting import SinusoidFit, fit_sinusoid, visibility_stderr
from .interferometer import ProbeState, SourceConfig, ThetaSetting, wrap_phase

REPORT_SCHEMA_VERSION = "1"
DEFAULT_TOLERANCE = 0.05
NOISE_FLOOR_SIGMA = 5.0
NOISE_FLOOR_RTOL = 1e-9


class ModelInconsistentError(ValueError):
    """Fitted DC levels cannot come from any six-parameter object."""


class MissingDatasetError(LookupError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__("missing required datasets: " + ", ".join(self.missing))


class PassivityError(ValueError):
    pass


@dataclass(frozen=True)
class Ratios:
    r1: float | None  # κ/τ_H
    r2: float | None  # τ_V/κ


@dataclass(frozen=True)
class Consistency:
    kappa_rel_discrepancy: float
    xi_rel_discrepancy: float
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def passed(self) -> bool:
        return (self.kappa_rel_discrepancy <= self.tolerance
                and self.xi_rel_discrepancy <= self.tolerance)

    def to_dict(self) -> dict:
        return {"kappa_rel_discrepancy": self.kappa_rel_discrepancy,
                "xi_rel_discrepancy": self.xi_rel_discrepancy,
                "tolerance": self.tolerance, "pass": self.passed}


@dataclass
class Reconstruction:
    t_hat: float
    probe_hat: ProbeState
    kappa_alpha: float
    kappa_beta: float
    object: JonesObject
    dphi: float
    consistency: Consistency
    refined: bool = False
    residual_rms: float = math.nan
    iterations: int = 0
    ratios: Ratios = Ratios(None, None)
    xi_estimates: tuple[float | None, float | None] = (None, None)
    bounds: dict[str, float] = field(default_factory=dict)
    undetermined: tuple[str, ...] = ()
    zeta_origin: float = 0.0
    diagnostic: str = ""
    cost_history: list[float] = field(default_factory=list)
    fits: dict[str, SinusoidFit] = field(default_factory=dict)
    probe_checks: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "t_hat": self.t_hat,
            "probe_hat": {"alpha1": self.probe_hat.alpha1, "beta1": self.probe_hat.beta1,
                          "gamma": self.probe_hat.gamma},
            "object": self.object.as_dict(),
            "dphi": self.dphi,
            "kappa_alpha": self.kappa_alpha,
            "kappa_beta": self.kappa_beta,
            "ratios": {"r1": self.ratios.r1, "r2": self.ratios.r2},
            "xi_estimates": list(self.xi_estimates),
            "bounds": dict(self.bounds),
            "undetermined": list(self.undetermined),
            "zeta_origin": self.zeta_origin,
            "consistency": self.consistency.to_dict(),
            "refined": self.refined,
            "residual_rms": None if math.isnan(self.residual_rms) else self.residual_rms,
            "iterations": self.iterations,
            "diagnostic": self.diagnostic,
            "probe_checks": list(self.probe_checks),
            "per_dataset_fits": [dict(label=k, **v.to_dict()) for k, v in self.fits.items()],
        }


class HVFits(NamedTuple):
    """Fits of the four H/V object datasets: probe (H or V) × HWP (0° or 45°)."""

    h0: SinusoidFit
    h45: SinusoidFit
    v0: SinusoidFit
    v45: SinusoidFit


@dataclass(frozen=True)
class TCalibration:
    t: float
    rel_spread: float
    nu_theta0: float
    nu_theta45: float


def _balance(src: SourceConfig) -> float:
    return 2 * src.b1 * src.b2 / (src.b1**2 + src.b2**2)


def measurable(fit: SinusoidFit) -> bool:
    """Whether the fringe amplitude stands above the noise floor."""
    return (fit.a > NOISE_FLOOR_SIGMA * fit.stderr.a
            and fit.a > NOISE_FLOOR_RTOL * abs(fit.c))


def _noise_floor(fit: SinusoidFit) -> float:
    return max(NOISE_FLOOR_SIGMA * fit.stderr.a, NOISE_FLOOR_RTOL * abs(fit.c))


def circular_mean(angles: Sequence[float]) -> float:
    return wrap_phase(math.atan2(sum(math.sin(a) for a in angles),
                                 sum(math.cos(a) for a in angles)))


def circular_distance(a: float, b: float) -> float:
    return abs(wrap_phase(a - b))


def calibrate_T(v_theta0: SinusoidFit, h_theta45: SinusoidFit,
                src: SourceConfig = SourceConfig()) -> TCalibration:
    """Idler transmission from the no-object V-probe (0°) and H-probe (45°) fringes."""
    f = _balance(src)
    nus = []
    for name, fit in (("V probe at 0°", v_theta0), ("H probe at 45°", h_theta45)):
        nu = fit.a / fit.c / f
        if nu > 1 + 3 * visibility_stderr(fit) / f + 1e-12:
            raise ValueError(f"{name}: visibility {nu:.6g} exceeds 1 beyond its uncertainty")
        nus.append(nu)
    t = 0.5 * (nus[0] + nus[1])
    spread = abs(nus[0] - nus[1]) / t if t > 0 else 0.0
    return TCalibration(min(t, 1.0), spread, nus[0], nus[1])


def zeta_origin_from(h_theta45_no_object: SinusoidFit) -> float:
    """Phase-scan origin offset from the no-object H-probe 45° fringe (ideal phase π)."""
    return wrap_phase(h_theta45_no_object.phi - math.pi)


def characterize_probe(fit0: SinusoidFit, fit45: SinusoidFit, t: float,
                       src: SourceConfig = SourceConfig(), zeta_origin: float = 0.0) -> ProbeState:
    """Recover (α₁, β₁, γ) from no-object fringes of one probe at 0° and 45°.

    β₁ and α₁ come from the two visibilities, γ from the 0° fringe phase:
    that fringe is +β₁ sin(γ − ζ) = β₁ sin(ζ + π − γ).
    """
    if t <= 0:
        raise ValueError("transmission must be positive to characterize a probe")
    f = _balance(src) * t
    beta = fit0.a / fit0.c / f
    alpha = fit45.a / fit45.c / f
    norm2 = alpha**2 + beta**2
    if abs(norm2 - 1) > 0.1:
        raise ValueError(f"probe visibilities give alpha^2 + beta^2 = {norm2:.4g}; expected 1")
    n = math.sqrt(norm2)
    alpha, beta = min(alpha / n, 1.0), min(beta / n, 1.0)
    if not measurable(fit0):
        alpha, beta = 1.0, 0.0
    elif not measurable(fit45):
        alpha, beta = 0.0, 1.0
    gamma = wrap_phase(math.pi - (fit0.phi - zeta_origin)) if measurable(fit0) else 0.0
    # renormalize exactly after the clipping above
    n = math.hypot(alpha, beta)
    return ProbeState(alpha / n, beta / n, gamma)


def extract_hv(fits: HVFits, t: float, src: SourceConfig, pairs_per_point: float,
               tolerance: float = DEFAULT_TOLERANCE, zeta_origin: float = 0.0) -> Reconstruction:
    """Closed-form object estimate from the four H/V fringes.

    κ is obtained twice, once from the H-probe pair and once from the V-probe
    pair, by inverting the DC level with the visibility ratio.  Their relative
    discrepancy (and that of the two coupling-phase estimates) is the
    consistency check.
    """
    s = float(pairs_per_point)
    if s <= 0:
        raise ValueError("pairs_per_point must be positive")
    b1, b2 = src.b1, src.b2
    g = b1 * b2 * t * s
    if g <= 0:
        raise ValueError("no interference: b1*b2*T must be positive")

    c_alpha = 0.5 * (fits.h0.c + fits.h45.c)
    c_beta = 0.5 * (fits.v0.c + fits.v45.c)
    sum_alpha = (2 * c_alpha - b2**2 * s) / (b1**2 * s)  # κ² + τ_H²
    sum_beta = (2 * c_beta - b2**2 * s) / (b1**2 * s)  # κ² + τ_V²
    if sum_alpha < 0:
        raise ModelInconsistentError(
            f"model-inconsistent DC in the H-probe datasets (alpha=1): kappa^2 + tau_h^2 = {sum_alpha:.6g}")
    if sum_beta < 0:
        raise ModelInconsistentError(
            f"model-inconsistent DC in the V-probe datasets (beta=1): kappa^2 + tau_v^2 = {sum_beta:.6g}")

    m = {k: measurable(getattr(fits, k)) for k in HVFits._fields}
    bounds: dict[str, float] = {}
    undetermined: list[str] = []
    nu = {k: getattr(fits, k).a / getattr(fits, k).c for k in HVFits._fields}

    r1 = r2 = None
    # H-probe pair: 0° carries κ, 45° carries τ_H
    if m["h0"] and m["h45"]:
        r1 = nu["h0"] / nu["h45"]
        kappa_a = math.sqrt(sum_alpha / (1 + 1 / r1**2))
    elif m["h45"]:
        kappa_a = 0.0
        bounds["kappa"] = _noise_floor(fits.h0) / g
    elif m["h0"]:
        kappa_a = math.sqrt(sum_alpha)
        bounds["tau_h"] = _noise_floor(fits.h45) / g
    else:
        raise ValueError("neither H-probe fringe is measurable")
    # V-probe pair: 0° carries τ_V, 45° carries κ
    if m["v0"] and m["v45"]:
        r2 = nu["v0"] / nu["v45"]
        kappa_b = math.sqrt(sum_beta / (1 + r2**2))
    elif m["v0"]:
        kappa_b = 0.0
        bounds["kappa"] = min(bounds.get("kappa", math.inf), _noise_floor(fits.v45) / g)
    elif m["v45"]:
        kappa_b = math.sqrt(sum_beta)
        bounds["tau_v"] = _noise_floor(fits.v0) / g
    else:
        raise ValueError("neither V-probe fringe is measurable")

    kappa = 0.5 * (kappa_a + kappa_b)
    if r1 is not None:
        tau_h = kappa / r1
    elif m["h45"]:
        tau_h = math.sqrt(max(sum_alpha - kappa**2, 0.0))
    else:
        tau_h = 0.0
    if r2 is not None:
        tau_v = kappa * r2
    elif m["v0"]:
        tau_v = math.sqrt(max(sum_beta - kappa**2, 0.0))
    else:
        tau_v = 0.0

    def phase(fit: SinusoidFit) -> float:
        return wrap_phase(fit.phi - zeta_origin)

    xi1 = phase(fits.h0) if m["h0"] else None
    xi2 = wrap_phase(math.pi - phase(fits.v45)) if m["v45"] else None
    phi_h = wrap_phase(math.pi - phase(fits.h45)) if m["h45"] else 0.0
    phi_v = wrap_phase(math.pi - phase(fits.v0)) if m["v0"] else 0.0
    xis = [x for x in (xi1, xi2) if x is not None]
    xi = circular_mean(xis) if xis else 0.0
    if not xis:
        undetermined.append("xi")
    if not m["h45"]:
        undetermined.append("phi_h")
    if not m["v0"]:
        undetermined.append("phi_v")

    diagnostic = ""
    worst = max(tau_h, tau_v) ** 2 + kappa**2
    if worst > 1:
        scale = 1 / math.sqrt(worst)
        tau_h, tau_v, kappa = tau_h * scale, tau_v * scale, kappa * scale
        diagnostic = f"H/V estimate projected onto passivity boundary (excess {worst - 1:.3g})"

    kappa_rel = abs(kappa_a - kappa_b) / kappa if kappa > 0 else 0.0
    xi_rel = circular_distance(xi1, xi2) / math.pi if (xi1 is not None and xi2 is not None) else 0.0
    obj = JonesObject(min(tau_h, 1.0), min(tau_v, 1.0), min(kappa, 1.0), phi_h, phi_v, xi)
    return Reconstruction(
        t_hat=t, probe_hat=ProbeState.horizontal(), kappa_alpha=kappa_a, kappa_beta=kappa_b,
        object=obj, dphi=wrap_phase(phi_h - phi_v),
        consistency=Consistency(kappa_rel, xi_rel, tolerance),
        ratios=Ratios(r1, r2), xi_estimates=(xi1, xi2), bounds=bounds,
        undetermined=tuple(undetermined), zeta_origin=zeta_origin, diagnostic=diagnostic,
        fits=dict(zip(("alpha=1,theta=0", "alpha=1,theta=45", "beta=1,theta=0", "beta=1,theta=45"),
                      fits)),
    )


# -- global refinement -----------------------------------------------------


@dataclass(frozen=True)
class RefineOptions:
    max_iter: int = 200
    ftol: float = 1e-12
    xtol: float = 1e-10
    amp_step: float = 1e-6
    phase_step: float = 1e-5
    damping: float = 1e-3
    passivity_tol: float = 1e-6


class _RawObject(NamedTuple):
    # same attributes as JonesObject, without validation, for trial points
    tau_h: float
    tau_v: float
    kappa: float
    phi_h: float
    phi_v: float
    xi: float


class _Problem:
    def __init__(self, datasets: Sequence[FringeDataset], src: SourceConfig, t: float,
                 zeta_origin: float):
        self.datasets = list(datasets)
        self.src, self.t, self.zeta_origin = src, t, zeta_origin
        self.weights = [np.sqrt(1.0 / np.maximum(ds.counts, 1.0)) if ds.config.sampled
                        else np.ones_like(ds.counts) for ds in self.datasets]
        self.n = sum(ds.counts.size for ds in self.datasets)

    def residuals(self, p: np.ndarray) -> np.ndarray:
        obj = _RawObject(*p)
        parts = []
        for ds, w in zip(self.datasets, self.weights):
            model = ds.config.pairs_per_point * analytic.counts_with_object(
                ds.theta, ds.probe, obj, self.src, self.t, ds.zeta + self.zeta_origin)
            parts.append(w * (ds.counts - model))
        return np.concatenate(parts)

    def jacobian(self, p: np.ndarray, steps: np.ndarray) -> np.ndarray:
        cols = []
        for k, h in enumerate(steps):
            dp = np.zeros_like(p)
            dp[k] = h
            cols.append((self.residuals(p + dp) - self.residuals(p - dp)) / (2 * h))
        return np.column_stack(cols)


def residual_rms(datasets: Sequence[FringeDataset], obj: JonesObject, src: SourceConfig,
                 t: float, zeta_origin: float = 0.0) -> float:
    """Weighted RMS residual of ``obj`` against the datasets (the refined cost)."""
    r = _Problem(datasets, src, t, zeta_origin).residuals(obj.as_array())
    return float(np.sqrt(np.mean(r**2)))


def _canonical(p: np.ndarray) -> np.ndarray:
    """Fold negative amplitudes into the phases and wrap the phases."""
    tau_h, tau_v, kappa, phi_h, phi_v, xi = p
    if tau_h < 0:
        tau_h, phi_h = -tau_h, phi_h + math.pi
    if tau_v < 0:
        tau_v, phi_v = -tau_v, phi_v + math.pi
    if kappa < 0:
        kappa, xi = -kappa, xi + math.pi
    return np.array([tau_h, tau_v, kappa, wrap_phase(phi_h), wrap_phase(phi_v), wrap_phase(xi)])


def refine_global(datasets: Sequence[FringeDataset], initial: Reconstruction,
                  src: SourceConfig, options: RefineOptions = RefineOptions()) -> Reconstruction:
    """Damped Gauss-Newton fit of the six object parameters to every dataset.

    T, b₁, b₂ and the ζ origin are held at ``initial``/``src`` values.  Each
    iteration solves (JᵀJ + λ diag JᵀJ) δ = −Jᵀr; λ drops ×10 after an
    accepted step and rises ×10 after a rejected one.  The Jacobian is a
    central difference.
    """
    if len(datasets) < 4:
        raise ValueError(f"refinement needs at least 4 datasets, got {len(datasets)}")
    prob = _Problem(datasets, src, initial.t_hat, initial.zeta_origin)
    steps = np.array([options.amp_step] * 3 + [options.phase_step] * 3)

    p = initial.object.as_array()
    r = prob.residuals(p)
    cost = float(r @ r)
    initial_rms = math.sqrt(cost / prob.n)
    history = [cost]
    lam = options.damping
    converged = cost == 0.0
    it = 0
    J = None
    while not converged and it < options.max_iter:
        it += 1
        if J is None:
            J = prob.jacobian(p, steps)
            A, grad = J.T @ J, J.T @ r
            diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        delta = np.linalg.lstsq(A + lam * np.diag(diag), -grad, rcond=None)[0]
        step_norm = float(np.linalg.norm(delta))
        p_new = p + delta
        r_new = prob.residuals(p_new)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            rel = (cost - cost_new) / cost
            p, r, cost = p_new, r_new, cost_new
            history.append(cost)
            lam = max(lam / 10, 1e-15)
            J = None
            converged = rel < options.ftol or step_norm < options.xtol or cost == 0.0
        else:
            lam *= 10
            converged = step_norm < options.xtol

    p = _canonical(p)
    excess = max(p[0] ** 2, p[1] ** 2) + p[2] ** 2 - 1
    if excess > options.passivity_tol:
        raise PassivityError(f"refined object violates passivity by {excess:.3g}")
    notes = [initial.diagnostic] if initial.diagnostic else []
    if excess > 0:
        p[:3] /= math.sqrt(1 + excess)
        notes.append("refined object projected onto passivity boundary")
    if not converged:
        notes.append(f"no convergence after {it} iterations (best iterate returned)")
    notes.append(f"initial residual_rms {initial_rms:.6g}")
    obj = JonesObject(*p)
    return replace(initial, object=obj, dphi=wrap_phase(obj.phi_h - obj.phi_v),
                   refined=converged, iterations=it, cost_history=history,
                   residual_rms=residual_rms(datasets, obj, src, initial.t_hat, initial.zeta_origin),
                   diagnostic="; ".join(notes))


# -- end-to-end protocol ---------------------------------------------------


def _index(datasets: Sequence[FringeDataset]) -> dict[tuple[ProbeState, ThetaSetting], FringeDataset]:
    out = {}
    for ds in datasets:
        out.setdefault((ds.probe, ds.theta), ds)
    return out


def _require(index, wanted: dict[str, tuple[ProbeState, ThetaSetting]], role: str):
    missing = [f"{role} {name}" for name, key in wanted.items() if key not in index]
    if missing:
        raise MissingDatasetError(missing)
    return {name: index[key] for name, key in wanted.items()}


H, V = ProbeState.horizontal(), ProbeState.vertical()
D0, D45 = ThetaSetting.DEG0, ThetaSetting.DEG45
HV_KEYS = {"alpha=1,theta=0": (H, D0), "alpha=1,theta=45": (H, D45),
           "beta=1,theta=0": (V, D0), "beta=1,theta=45": (V, D45)}


def reconstruct(object_datasets: Sequence[FringeDataset],
                reference_datasets: Sequence[FringeDataset],
                src: SourceConfig = SourceConfig(), tolerance: float = DEFAULT_TOLERANCE,
                refine: bool = False, options: RefineOptions = RefineOptions(),
                probe_tolerance: float = 0.05) -> Reconstruction:
    """Full protocol: calibrate T and the ζ origin, check probes, H/V extraction, refinement."""
    ref_index = _index(reference_datasets)
    ref = _require(ref_index, {"beta=1,theta=0": (V, D0), "alpha=1,theta=45": (H, D45)},
                   "no-object")
    obj_index = _index(object_datasets)
    hv = _require(obj_index, HV_KEYS, "object")

    ref_fits = {name: fit_sinusoid(ds) for name, ds in ref.items()}
    origin = zeta_origin_from(ref_fits["alpha=1,theta=45"])
    tcal = calibrate_T(ref_fits["beta=1,theta=0"], ref_fits["alpha=1,theta=45"], src)

    checks, probe_hat = [], None
    probes = []
    for probe, _ in ref_index:
        if probe not in probes:
            probes.append(probe)
    for probe in probes:
        if (probe, D0) not in ref_index or (probe, D45) not in ref_index:
            continue
        got = characterize_probe(fit_sinusoid(ref_index[probe, D0]), fit_sinusoid(ref_index[probe, D45]),
                                 tcal.t, src, origin)
        dev = max(abs(got.alpha1 - probe.alpha1), abs(got.beta1 - probe.beta1),
                  circular_distance(got.gamma, probe.gamma) if min(got.alpha1, got.beta1) > 0.05 else 0.0)
        checks.append({"label": probe_label(probe),
                       "nominal": [probe.alpha1, probe.beta1, probe.gamma],
                       "recovered": [got.alpha1, got.beta1, got.gamma],
                       "max_deviation": dev, "pass": dev <= probe_tolerance})
        if probe_hat is None or (probe_hat in (H, V) and probe not in (H, V)):
            probe_hat = got

    fits = {label: fit_sinusoid(ds) for label, ds in hv.items()}
    s = hv["alpha=1,theta=0"].config.pairs_per_point
    rec = extract_hv(HVFits(*(fits[k] for k in HV_KEYS)), tcal.t, src, s, tolerance, origin)
    rec.probe_hat = probe_hat if probe_hat is not None else H
    rec.probe_checks = checks
    rec.fits = {ds.label: fit_sinusoid(ds) for ds in object_datasets}
    rec.residual_rms = residual_rms(object_datasets, rec.object, src, tcal.t, origin)
    if refine:
        rec = refine_global(object_datasets, rec, src, options)
    return rec
