"""Closed-form vertical-count and visibility expressions.

All counts are per generated pair.  Functions accept scalar or array ``zeta``
and broadcast.

Interference term convention: after the HWP the crystal-1 idler component
that is indistinguishable from crystal 2 carries the coefficient ``-X`` with
``X = B″`` at 0° and ``X = A″`` at 45°, giving

    N_V = b₁²/2 (|A″|² + |B″|²) + b₂²/2 + b₁ b₂ T Im(X e^{-iζ}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .interferometer import ProbeState, SourceConfig, ThetaSetting, wrap_phase

PASSIVITY_TOL = 1e-9


@dataclass(frozen=True)
class JonesObject:
    """Six-parameter sample matrix

        [[τ_H e^{iφ_H},   κ e^{iξ} ],
         [-κ e^{-iξ},    τ_V e^{iφ_V}]]
    """

    tau_h: float
    tau_v: float
    kappa: float
    phi_h: float = 0.0
    phi_v: float = 0.0
    xi: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("tau_h", "tau_v", "kappa"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0 + PASSIVITY_TOL:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.tau_h**2 + self.kappa**2 > 1 + PASSIVITY_TOL:
            raise ValueError(f"tau_h^2 + kappa^2 = {self.tau_h**2 + self.kappa**2} > 1")
        if self.tau_v**2 + self.kappa**2 > 1 + PASSIVITY_TOL:
            raise ValueError(f"tau_v^2 + kappa^2 = {self.tau_v**2 + self.kappa**2} > 1")
        for name in ("phi_h", "phi_v", "xi"):
            object.__setattr__(self, name, wrap_phase(getattr(self, name)))

    @classmethod
    def identity(cls) -> "JonesObject":
        return cls(1.0, 1.0, 0.0)

    def matrix(self) -> np.ndarray:
        return to_matrix(self)

    def max_singular_value(self) -> float:
        return float(np.linalg.svd(self.matrix(), compute_uv=False)[0])

    def is_passive(self, tol: float = PASSIVITY_TOL) -> bool:
        """Full passivity (largest singular value ≤ 1), stricter than the column bounds."""
        return self.max_singular_value() <= 1 + tol

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in PARAM_NAMES}

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES], dtype=float)


PARAM_NAMES = ("tau_h", "tau_v", "kappa", "phi_h", "phi_v", "xi")


def random_passive_object(rng: np.random.Generator, kappa_max: float = 1.0) -> JonesObject:
    """Draw a six-parameter object uniformly in its box, rejecting non-passive ones."""
    while True:
        kappa = rng.uniform(0.0, kappa_max)
        lim = math.sqrt(max(0.0, 1.0 - kappa**2))
        obj = JonesObject(rng.uniform(0.0, lim), rng.uniform(0.0, lim), kappa,
                          *rng.uniform(-math.pi, math.pi, 3))
        if obj.is_passive():
            return obj


def to_matrix(obj: JonesObject) -> np.ndarray:
    return np.array([
        [obj.tau_h * np.exp(1j * obj.phi_h), obj.kappa * np.exp(1j * obj.xi)],
        [-obj.kappa * np.exp(-1j * obj.xi), obj.tau_v * np.exp(1j * obj.phi_v)],
    ], dtype=complex)


class AmplitudePair(NamedTuple):
    """H and V coefficients (A″, B″) of the crystal-1 idler after the object."""

    a_pp: complex
    b_pp: complex


def amplitudes(obj, probe: ProbeState) -> AmplitudePair:
    """A″ = α₁O_HH + β₁e^{iγ}O_HV,  B″ = α₁O_VH + β₁e^{iγ}O_VV."""
    m = obj.matrix() if hasattr(obj, "matrix") else np.asarray(obj, dtype=complex)
    out = m @ probe.jones_vector()
    return AmplitudePair(complex(out[0]), complex(out[1]))


def hwp_pair(theta: ThetaSetting, pair: AmplitudePair) -> AmplitudePair:
    """Reorder (A″, B″) so that ``b_pp`` is the coefficient that ends up vertical.

    The 45° plate exchanges H and V (with a common sign that drops out of the
    counts), so the interfering coefficient becomes A″.
    """
    if ThetaSetting.parse(theta) is ThetaSetting.DEG0:
        return pair
    return AmplitudePair(pair.b_pp, pair.a_pp)


def counts_general(pair: AmplitudePair, src: SourceConfig, T: float, zeta):
    """Vertical ω′ counts for a given (already HWP-ordered) amplitude pair.

    ``b₁²/2 (|A″|²+|B″|²) + b₂²/2 - (i b₁b₂T/2)(B″e^{-iζ} - B″* e^{iζ})``
    """
    zeta = np.asarray(zeta, dtype=float)
    a, b = pair
    rot = b * np.exp(-1j * zeta)
    cross = -0.5j * src.b1 * src.b2 * T * (rot - np.conj(rot))
    val = 0.5 * src.b1**2 * (abs(a) ** 2 + abs(b) ** 2) + 0.5 * src.b2**2 + cross.real
    return _scalar(val)


def counts_no_object(theta: ThetaSetting, probe: ProbeState, src: SourceConfig, T: float, zeta):
    zeta = np.asarray(zeta, dtype=float)
    dc = 0.5 * (src.b1**2 + src.b2**2)
    g = src.b1 * src.b2 * T
    if ThetaSetting.parse(theta) is ThetaSetting.DEG0:
        val = dc + g * probe.beta1 * np.sin(probe.gamma - zeta)
    else:
        val = dc - g * probe.alpha1 * np.sin(zeta)
    return _scalar(val)


def dc_block(probe: ProbeState, obj: JonesObject) -> float:
    """|A″|² + |B″|² for the six-parameter object, written out term by term."""
    al, be, ga = probe.alpha1, probe.beta1, probe.gamma
    return (obj.kappa**2 + al**2 * obj.tau_h**2 + be**2 * obj.tau_v**2
            + 2 * al * be * obj.kappa * (obj.tau_h * math.cos(obj.phi_h - ga - obj.xi)
                                         - obj.tau_v * math.cos(obj.phi_v + ga + obj.xi)))


def counts_with_object(theta: ThetaSetting, probe: ProbeState, obj: JonesObject,
                       src: SourceConfig, T: float, zeta):
    """Explicit trigonometric form of the with-object vertical counts."""
    zeta = np.asarray(zeta, dtype=float)
    al, be, ga = probe.alpha1, probe.beta1, probe.gamma
    dc = 0.5 * src.b2**2 + 0.5 * src.b1**2 * dc_block(probe, obj)
    g = src.b1 * src.b2 * T
    if ThetaSetting.parse(theta) is ThetaSetting.DEG0:
        osc = (al * obj.kappa * np.sin(obj.xi + zeta)
               + be * obj.tau_v * np.sin(obj.phi_v + ga - zeta))
    else:
        osc = (al * obj.tau_h * np.sin(obj.phi_h - zeta)
               + be * obj.kappa * np.sin(obj.xi + ga - zeta))
    return _scalar(dc + g * osc)


def counts(theta: ThetaSetting, probe: ProbeState, src: SourceConfig, T: float, zeta, obj=None):
    """Dispatch on the object type: None, ``JonesObject`` or a raw 2x2 matrix."""
    if obj is None:
        return counts_no_object(theta, probe, src, T, zeta)
    if isinstance(obj, JonesObject):
        return counts_with_object(theta, probe, obj, src, T, zeta)
    return counts_general(hwp_pair(theta, amplitudes(obj, probe)), src, T, zeta)


class Fringe(NamedTuple):
    """Fringe C + A sin(ζ + φ) per pair, with A ≥ 0 and φ in [-π, π)."""

    c: float
    a: float
    phi: float


def fringe(theta: ThetaSetting, probe: ProbeState, src: SourceConfig, T: float, obj=None) -> Fringe:
    """Closed-form DC, amplitude and phase of the fringe for one setting.

    Uses Im(X e^{-iζ}) = |X| sin(ζ + π - arg X).
    """
    m = np.eye(2) if obj is None else obj
    a_pp, x = hwp_pair(theta, amplitudes(m, probe))
    c = 0.5 * src.b1**2 * (abs(a_pp) ** 2 + abs(x) ** 2) + 0.5 * src.b2**2
    amp = src.b1 * src.b2 * T * abs(x)
    return Fringe(float(c), float(amp), wrap_phase(math.pi - np.angle(x)))


def visibility(amplitude: float, dc: float, rtol: float = 1e-12) -> float:
    """Fringe visibility A / C of a pure sinusoid."""
    if dc <= 0:
        raise ValueError(f"DC level must be positive, got {dc}")
    if amplitude < 0:
        raise ValueError(f"amplitude must be non-negative, got {amplitude}")
    if amplitude > dc * (1 + rtol):
        raise ValueError(f"amplitude {amplitude} exceeds DC {dc}: implies negative counts")
    return min(amplitude / dc, 1.0)


def _scalar(val):
    return float(val) if np.ndim(val) == 0 else val
