"""Brute-force state-vector model of the two-crystal nonlinear interferometer.

The two-photon state is kept as a sparse map ``(signal mode, idler mode) ->
complex amplitude``.  Every optical element is a linear map on single modes,
lifted to the pair state by acting on the signal or the idler factor.  The
module is deliberately explicit: it is the reference against which the
closed-form count expressions in :mod:`qiuptomo.analytic` are checked.

Pipeline order (see :func:`run_forward`)::

    initial_state -> dichroic 1 -> preparation -> object -> HWP -> loss
        -> merge -> dichroic 2 + final beam splitter -> counts
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-14
_SQRT1_2 = 1.0 / math.sqrt(2.0)


class Path(Enum):
    A = "a"
    B = "b"
    R = "r"
    X = "x"
    OMEGA = "ω"
    B_OUT = "b′"
    OMEGA_OUT = "ω′"


class Pol(Enum):
    H = "H"
    V = "V"


class Kind(Enum):
    SIGNAL = "signal"
    IDLER = "idler"


class Source(Enum):
    CRYSTAL1 = "crystal1"
    CRYSTAL2 = "crystal2"
    MERGED = "merged"


class ThetaSetting(Enum):
    """The two half-wave-plate fast-axis orientations used by the protocol."""

    DEG0 = "0"
    DEG45 = "45"

    @classmethod
    def parse(cls, value) -> "ThetaSetting":
        if isinstance(value, cls):
            return value
        text = str(value).strip().rstrip("°")
        if text in ("0", "0.0", "deg0"):
            return cls.DEG0
        if text in ("45", "45.0", "deg45"):
            return cls.DEG45
        raise ValueError(f"unsupported HWP setting {value!r}; only 0 and 45 degrees exist")


@dataclass(frozen=True)
class Mode:
    path: Path
    pol: Pol
    kind: Kind
    source: Source | None = None

    def replace(self, **changes) -> "Mode":
        fields_ = {"path": self.path, "pol": self.pol, "kind": self.kind, "source": self.source}
        fields_.update(changes)
        return Mode(**fields_)

    def __str__(self) -> str:
        tag = {Source.CRYSTAL1: "1", Source.CRYSTAL2: "2", Source.MERGED: "", None: ""}[self.source]
        letter = "S" if self.kind is Kind.SIGNAL else "I"
        return f"|{self.pol.value}_{letter}{tag}⟩_{self.path.value}"


Key = tuple[Mode, Mode]


@dataclass(frozen=True)
class TwoPhotonState:
    """Sparse superposition of (signal, idler) mode pairs.

    Construct with :meth:`from_terms`; duplicate keys are summed and
    amplitudes below ``PRUNE_TOL`` are dropped.
    """

    _terms: Mapping[Key, complex] = field(default_factory=dict)

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[Mode, Mode, complex]]) -> "TwoPhotonState":
        acc: dict[Key, complex] = {}
        for signal, idler, amp in terms:
            key = (signal, idler)
            acc[key] = acc.get(key, 0j) + complex(amp)
        pruned = {k: v for k, v in acc.items() if abs(v) >= PRUNE_TOL}
        return cls(MappingProxyType(pruned))

    @property
    def terms(self) -> Mapping[Key, complex]:
        return self._terms

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        for (signal, idler), amp in self._terms.items():
            yield signal, idler, amp

    def amplitude(self, signal: Mode, idler: Mode) -> complex:
        return self._terms.get((signal, idler), 0j)

    def norm_sq(self) -> float:
        return float(sum(abs(a) ** 2 for a in self._terms.values()))

    def isclose(self, other: "TwoPhotonState", atol: float = 1e-12) -> bool:
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.amplitude(*k) - other.amplitude(*k)) <= atol for k in keys)

    def __str__(self) -> str:
        parts = [f"({amp:.6g}) {s} {i}" for s, i, amp in self]
        return " + ".join(parts) if parts else "0"


ModeMap = Callable[[Mode], "Sequence[tuple[Mode, complex]] | None"]


def _transform(state: TwoPhotonState, *, signal: ModeMap | None = None,
               idler: ModeMap | None = None) -> TwoPhotonState:
    """Lift single-mode linear maps to the pair state.

    A map returning ``None`` leaves that mode untouched.
    """

    def expand(mode: Mode, fn: ModeMap | None):
        out = fn(mode) if fn is not None else None
        return [(mode, 1.0)] if out is None else out

    new_terms = []
    for s, i, amp in state:
        for s2, cs in expand(s, signal):
            for i2, ci in expand(i, idler):
                new_terms.append((s2, i2, amp * cs * ci))
    return TwoPhotonState.from_terms(new_terms)


# -- configuration types ---------------------------------------------------


@dataclass(frozen=True)
class SourceConfig:
    """Generation amplitudes of the two crystals and the interferometric phase."""

    b1: float = _SQRT1_2
    b2: float = _SQRT1_2
    zeta: float = 0.0

    def __post_init__(self):
        for name in ("b1", "b2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if abs(self.b1**2 + self.b2**2 - 1.0) > 1e-12:
            raise ValueError(f"b1^2 + b2^2 = {self.b1**2 + self.b2**2}, expected 1")

    def with_zeta(self, zeta: float) -> "SourceConfig":
        return SourceConfig(self.b1, self.b2, float(zeta))


@dataclass(frozen=True)
class LossModel:
    """Lossy idler transfer as a beam splitter into an auxiliary path."""

    T: float
    R: float = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.T <= 1.0:
            raise ValueError(f"transmission amplitude T={self.T} outside [0, 1]")
        object.__setattr__(self, "R", math.sqrt(max(0.0, 1.0 - self.T**2)))


def wrap_phase(x):
    """Wrap angle(s) to [-pi, pi)."""
    w = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class ProbeState:
    """Idler polarization prepared before the object: α₁|H⟩ + β₁ e^{iγ}|V⟩."""

    alpha1: float
    beta1: float
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha1", "beta1"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if abs(self.alpha1**2 + self.beta1**2 - 1.0) > 1e-12:
            raise ValueError(
                f"alpha1^2 + beta1^2 = {self.alpha1**2 + self.beta1**2}, expected 1")
        object.__setattr__(self, "gamma", wrap_phase(self.gamma))

    @classmethod
    def horizontal(cls) -> "ProbeState":
        return cls(1.0, 0.0, 0.0)

    @classmethod
    def vertical(cls) -> "ProbeState":
        return cls(0.0, 1.0, 0.0)

    @classmethod
    def diagonal(cls) -> "ProbeState":
        return cls(_SQRT1_2, _SQRT1_2, 0.0)

    @classmethod
    def antidiagonal(cls) -> "ProbeState":
        return cls(_SQRT1_2, _SQRT1_2, math.pi)

    @classmethod
    def circular(cls) -> "ProbeState":
        return cls(_SQRT1_2, _SQRT1_2, math.pi / 2)

    def jones_vector(self) -> np.ndarray:
        return np.array([self.alpha1, self.beta1 * np.exp(1j * self.gamma)], dtype=complex)


PROBE_PRESETS: dict[str, Callable[[], ProbeState]] = {
    "horizontal": ProbeState.horizontal,
    "vertical": ProbeState.vertical,
    "diagonal": ProbeState.diagonal,
    "antidiagonal": ProbeState.antidiagonal,
    "circular": ProbeState.circular,
}


@dataclass(frozen=True)
class Detector:
    """Which photon is counted: kind, output path and polarization."""

    kind: Kind = Kind.SIGNAL
    path: Path = Path.OMEGA_OUT
    pol: Pol = Pol.V


VERTICAL_OMEGA_OUT = Detector()


# -- mode shorthands -------------------------------------------------------


def _is_c1_idler_in_a(mode: Mode) -> bool:
    return mode.kind is Kind.IDLER and mode.path is Path.A and mode.source is Source.CRYSTAL1


# -- pipeline elements -----------------------------------------------------


def initial_state(src: SourceConfig) -> TwoPhotonState:
    """Pair emission from both crystals; crystal 2 carries the phase e^{iζ}."""
    s1 = Mode(Path.A, Pol.V, Kind.SIGNAL, Source.CRYSTAL1)
    i1 = Mode(Path.A, Pol.V, Kind.IDLER, Source.CRYSTAL1)
    s2 = Mode(Path.R, Pol.V, Kind.SIGNAL, Source.CRYSTAL2)
    i2 = Mode(Path.R, Pol.V, Kind.IDLER, Source.CRYSTAL2)
    return TwoPhotonState.from_terms([
        (s1, i1, src.b1),
        (s2, i2, src.b2 * np.exp(1j * src.zeta)),
    ])


def apply_dichroic_1(state: TwoPhotonState) -> TwoPhotonState:
    def sig(mode: Mode):
        if mode.path is Path.A:
            return [(mode.replace(path=Path.B), 1.0)]
        return None

    return _transform(state, signal=sig)


def apply_preparation(state: TwoPhotonState, probe: ProbeState) -> TwoPhotonState:
    """HWP+QWP preparation of the crystal-1 idler: |V⟩ -> α₁|H⟩ + β₁e^{iγ}|V⟩."""
    def idl(mode: Mode):
        if _is_c1_idler_in_a(mode) and mode.pol is Pol.V:
            return [(mode.replace(pol=Pol.H), probe.alpha1),
                    (mode, probe.beta1 * np.exp(1j * probe.gamma))]
        return None

    return _transform(state, idler=idl)


class NonPassiveObjectError(ValueError):
    """Raised for a Jones matrix that would amplify light."""


def check_passive(jones, tol: float = 1e-9) -> np.ndarray:
    """Return ``jones`` as a complex 2x2 array, rejecting non-passive matrices.

    Objects exposing a ``matrix()`` method (e.g. ``JonesObject``) are accepted.
    """
    if hasattr(jones, "matrix"):
        jones = jones.matrix()
    m = np.asarray(jones, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError(f"Jones matrix must be 2x2, got shape {m.shape}")
    smax = np.linalg.svd(m, compute_uv=False)[0]
    if smax > 1.0 + tol:
        raise NonPassiveObjectError(f"object is not passive: largest singular value {smax:.12g} > 1")
    return m


def apply_object(state: TwoPhotonState, jones) -> TwoPhotonState:
    """Act with a 2x2 Jones matrix (rows/cols ordered H, V) on the crystal-1 idler."""
    m = check_passive(jones)
    col = {Pol.H: 0, Pol.V: 1}

    def idl(mode: Mode):
        if not _is_c1_idler_in_a(mode):
            return None
        j = col[mode.pol]
        return [(mode.replace(pol=Pol.H), m[0, j]), (mode.replace(pol=Pol.V), m[1, j])]

    return _transform(state, idler=idl)


def apply_hwp(state: TwoPhotonState, theta: ThetaSetting) -> TwoPhotonState:
    """0°: H -> H, V -> -V.  45°: H -> -V, V -> -H."""
    theta = ThetaSetting.parse(theta)

    def idl(mode: Mode):
        if not _is_c1_idler_in_a(mode):
            return None
        if theta is ThetaSetting.DEG0:
            return [(mode, 1.0 if mode.pol is Pol.H else -1.0)]
        flipped = Pol.V if mode.pol is Pol.H else Pol.H
        return [(mode.replace(pol=flipped), -1.0)]

    return _transform(state, idler=idl)


def apply_loss(state: TwoPhotonState, loss: LossModel) -> TwoPhotonState:
    def idl(mode: Mode):
        if not _is_c1_idler_in_a(mode):
            return None
        return [(mode.replace(path=Path.R), loss.T), (mode.replace(path=Path.X), loss.R)]

    return _transform(state, idler=idl)


def merge_indistinguishable(state: TwoPhotonState) -> TwoPhotonState:
    """Erase source labels where the two emissions are indistinguishable.

    Only vertically polarized idlers in path r lose their crystal tag; the
    vertically polarized signals in b and r are relabeled likewise.  A
    horizontally polarized crystal-1 idler keeps its tag and cannot interfere.
    """
    def idl(mode: Mode):
        if mode.kind is Kind.IDLER and mode.pol is Pol.V and mode.path is Path.R:
            return [(mode.replace(source=Source.MERGED), 1.0)]
        return None

    def sig(mode: Mode):
        if mode.pol is Pol.V and mode.path in (Path.B, Path.R):
            return [(mode.replace(source=Source.MERGED), 1.0)]
        return None

    return _transform(state, signal=sig, idler=idl)


def apply_dichroic_2_and_final_bs(state: TwoPhotonState) -> TwoPhotonState:
    """Signal r -> ω, then b -> (b′ + iω′)/√2 and ω -> (ω′ + ib′)/√2."""
    def to_omega(mode: Mode):
        if mode.path is Path.R:
            return [(mode.replace(path=Path.OMEGA), 1.0)]
        return None

    def bs(mode: Mode):
        if mode.path is Path.B:
            return [(mode.replace(path=Path.B_OUT), _SQRT1_2),
                    (mode.replace(path=Path.OMEGA_OUT), 1j * _SQRT1_2)]
        if mode.path is Path.OMEGA:
            return [(mode.replace(path=Path.OMEGA_OUT), _SQRT1_2),
                    (mode.replace(path=Path.B_OUT), 1j * _SQRT1_2)]
        return None

    return _transform(_transform(state, signal=to_omega), signal=bs)


def expected_counts(state: TwoPhotonState, detector: Detector = VERTICAL_OMEGA_OUT) -> float:
    """Mean number of detector clicks per generated pair.

    Keys are unique after construction, so amplitudes that share the same
    (signal, idler) pair are already summed; distinct partner modes add
    incoherently.
    """
    total = 0.0
    for s, i, amp in state:
        photon = s if detector.kind is Kind.SIGNAL else i
        if photon.path is detector.path and photon.pol is detector.pol:
            total += abs(amp) ** 2
    return total


def final_state(src: SourceConfig, loss: LossModel, probe: ProbeState,
                theta: ThetaSetting, jones=None) -> TwoPhotonState:
    state = apply_dichroic_1(initial_state(src))
    state = apply_preparation(state, probe)
    if jones is not None:
        state = apply_object(state, jones)
    state = apply_hwp(state, theta)
    state = apply_loss(state, loss)
    state = merge_indistinguishable(state)
    return apply_dichroic_2_and_final_bs(state)


def _check_grid(zeta_grid) -> np.ndarray:
    z = np.asarray(zeta_grid, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("zeta grid must be a non-empty 1-D sequence")
    if np.any(np.diff(z) <= 0):
        raise ValueError("zeta grid must be strictly increasing")
    if z[0] < 0 or z[-1] >= 2 * np.pi:
        raise ValueError("zeta grid must lie in [0, 2π)")
    return z


def run_forward(src: SourceConfig, loss: LossModel, probe: ProbeState,
                theta: ThetaSetting, jones=None, zeta_grid=None) -> np.ndarray:
    """Vertical ω′ counts per pair at each scanned phase, via the full state model."""
    if jones is not None:
        jones = check_passive(jones)
    z = _check_grid(zeta_grid)
    return np.array([
        expected_counts(final_state(src.with_zeta(zeta), loss, probe, theta, jones))
        for zeta in z
    ])
