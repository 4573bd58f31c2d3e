"""Synthetic phase scans: expected or Poisson-sampled vertical counts vs ζ."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analytic
from .analytic import JonesObject
from .interferometer import (LossModel, ProbeState, SourceConfig, ThetaSetting, check_passive,
                             run_forward)

SCHEMA_VERSION = "1"
NOISE_MODES = ("none", "poisson")
MODELS = ("oracle", "analytic")


def uniform_grid(n: int = 32) -> tuple[float, ...]:
    return tuple(float(x) for x in np.arange(n) * (2 * math.pi / n))


@dataclass(frozen=True)
class AcquisitionConfig:
    zeta_grid: tuple[float, ...] = field(default_factory=uniform_grid)
    pairs_per_point: int = 1_000_000
    noise: str = "none"
    rng_seed: int = 0
    model: str = "analytic"

    def __post_init__(self):
        z = tuple(float(v) for v in self.zeta_grid)
        object.__setattr__(self, "zeta_grid", z)
        if len(z) < 8:
            raise ValueError(f"zeta grid needs at least 8 points, got {len(z)}")
        if any(b <= a for a, b in zip(z, z[1:])):
            raise ValueError("zeta grid must be strictly increasing")
        if z[0] < 0 or z[-1] >= 2 * math.pi:
            raise ValueError("zeta grid must lie in [0, 2π)")
        if int(self.pairs_per_point) != self.pairs_per_point or self.pairs_per_point < 0:
            raise ValueError(f"pairs_per_point must be a non-negative integer, got {self.pairs_per_point}")
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}, got {self.noise!r}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def zeta(self) -> np.ndarray:
        return np.asarray(self.zeta_grid)

    @property
    def sampled(self) -> bool:
        """True when counts are Poisson draws rather than expectation values."""
        return self.noise == "poisson"

    def to_dict(self) -> dict:
        return {"pairs_per_point": int(self.pairs_per_point), "noise": self.noise,
                "rng_seed": int(self.rng_seed), "model": self.model}


@dataclass(frozen=True)
class Scene:
    """What sits in the interferometer: source balance, idler loss and the sample."""

    src: SourceConfig = field(default_factory=SourceConfig)
    T: float = 1.0
    obj: JonesObject | np.ndarray | None = None

    def __post_init__(self):
        LossModel(self.T)


@dataclass
class FringeDataset:
    theta: ThetaSetting
    probe: ProbeState
    counts: np.ndarray
    config: AcquisitionConfig
    label: str

    def __post_init__(self):
        self.theta = ThetaSetting.parse(self.theta)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (len(self.config.zeta_grid),):
            raise ValueError(
                f"{self.label}: {self.counts.size} counts for {len(self.config.zeta_grid)} grid points")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValueError(f"{self.label}: counts must be finite and non-negative")

    @property
    def zeta(self) -> np.ndarray:
        return self.config.zeta

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "label": self.label,
            "theta": self.theta.value,
            "probe": {"alpha1": float(self.probe.alpha1), "beta1": float(self.probe.beta1),
                      "gamma": float(self.probe.gamma)},
            "zeta_grid": [float(z) for z in self.config.zeta_grid],
            "counts": [float(c) for c in self.counts],
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FringeDataset":
        try:
            if str(d["schema_version"]) != SCHEMA_VERSION:
                raise DatasetFormatError(f"unsupported schema_version {d['schema_version']!r}")
            zeta, counts = d["zeta_grid"], d["counts"]
            if len(zeta) != len(counts):
                raise DatasetFormatError(
                    f"zeta_grid has {len(zeta)} entries but counts has {len(counts)}")
            cfg = AcquisitionConfig(zeta_grid=tuple(zeta), **d["config"])
            p = d["probe"]
            probe = ProbeState(float(p["alpha1"]), float(p["beta1"]), float(p["gamma"]))
            return cls(ThetaSetting.parse(d["theta"]), probe, np.asarray(counts, dtype=float),
                       cfg, str(d["label"]))
        except DatasetFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"malformed dataset: {exc}") from exc


class DatasetFormatError(ValueError):
    pass


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def save_dataset(ds: FringeDataset, path) -> Path:
    path = Path(path)
    path.write_text(dumps_json(ds.to_dict()), encoding="utf-8")
    return path


def load_dataset(path) -> FringeDataset:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise DatasetFormatError(f"{path}: top level must be an object")
    return FringeDataset.from_dict(d)


def expected_probabilities(theta, probe: ProbeState, scene: Scene, zeta, model: str = "analytic"):
    """Vertical ω′ counts per pair on a ζ grid from the chosen model."""
    if model == "oracle":
        jones = None if scene.obj is None else check_passive(scene.obj)
        return run_forward(scene.src, LossModel(scene.T), probe, theta, jones, zeta)
    return np.asarray(analytic.counts(theta, probe, scene.src, scene.T, zeta, scene.obj), dtype=float)


def point_rng(seed: int, label: str, index: int) -> np.random.Generator:
    """Per-point generator from (seed, label, index); independent of evaluation order."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("utf-8")), int(index)])


def probe_label(probe: ProbeState) -> str:
    named = {ProbeState.horizontal(): "alpha=1", ProbeState.vertical(): "beta=1",
             ProbeState.diagonal(): "diagonal", ProbeState.antidiagonal(): "antidiagonal",
             ProbeState.circular(): "circular"}
    if probe in named:
        return named[probe]
    return f"probe({probe.alpha1:.6g},{probe.beta1:.6g},{probe.gamma:.6g})"


def setting_label(probe: ProbeState, theta, tag: str = "") -> str:
    return f"{tag}{probe_label(probe)},theta={ThetaSetting.parse(theta).value}"


def acquire(theta, probe: ProbeState, scene: Scene, cfg: AcquisitionConfig,
            label: str | None = None) -> FringeDataset:
    theta = ThetaSetting.parse(theta)
    label = setting_label(probe, theta) if label is None else label
    mean = cfg.pairs_per_point * expected_probabilities(theta, probe, scene, cfg.zeta, cfg.model)
    mean = np.clip(mean, 0.0, None)
    if cfg.sampled:
        counts = np.array([point_rng(cfg.rng_seed, label, i).poisson(m) for i, m in enumerate(mean)],
                          dtype=float)
    else:
        counts = mean
    return FringeDataset(theta, probe, counts, cfg, label)


EXTRA_PROBES = {
    "diagonal": ProbeState.diagonal,
    "antidiagonal": ProbeState.antidiagonal,
    "circular": ProbeState.circular,
}


def standard_battery(scene: Scene, cfg: AcquisitionConfig,
                     extras: Sequence[str | ProbeState] = (), tag: str = "") -> list[FringeDataset]:
    """H/V datasets at both HWP settings, followed by any extra probes at both settings.

    ``tag`` prefixes every label (e.g. ``"ref/"`` for the no-object calibration
    battery) so that labels, and therefore noise streams, stay distinct.
    """
    probes = [ProbeState.horizontal(), ProbeState.vertical()]
    for extra in extras:
        probes.append(EXTRA_PROBES[extra]() if isinstance(extra, str) else extra)
    out = []
    for probe in probes:
        for theta in (ThetaSetting.DEG0, ThetaSetting.DEG45):
            out.append(acquire(theta, probe, scene, cfg, setting_label(probe, theta, tag)))
    return out
