"""Command-line front end: simulate | fit | reconstruct | validate | plotdata.

Exit codes::

    0  success
    2  config parse error
    3  unphysical scene
    4  malformed dataset / input file
    5  consistency check failed (report still written)
    6  required datasets missing
    7  oracle/closed-form validation failed
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from filelock import FileLock

from . import __version__
from .acquisition import (AcquisitionConfig, DatasetFormatError, FringeDataset, Scene, acquire,
                          dumps_json, load_dataset, save_dataset, setting_label, uniform_grid)
from .analytic import JonesObject, counts_with_object, random_passive_object
from .fitting import FitError, fit_sinusoid
from .interferometer import (PROBE_PRESETS, LossModel, NonPassiveObjectError, ProbeState,
                             SourceConfig, ThetaSetting, check_passive, run_forward)
from .tomography import (DEFAULT_TOLERANCE, MissingDatasetError, ModelInconsistentError,
                         PassivityError, reconstruct)

EXIT_OK, EXIT_CONFIG, EXIT_SCENE, EXIT_DATASET = 0, 2, 3, 4
EXIT_INCONSISTENT, EXIT_MISSING, EXIT_VALIDATION = 5, 6, 7
VALIDATION_TOL = 1e-10


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- config ----------------------------------------------------------------


class ConfigError(ValueError):
    def __init__(self, path: tuple, message: str):
        super().__init__(message)
        self.path = path


@dataclass
class RunConfig:
    scene: Scene
    acquisition: AcquisitionConfig
    probes: list[ProbeState]
    calibration: bool
    output_dir: Path


_TOP_KEYS = {"scene", "acquisition", "probes", "calibration", "output_dir"}
_SCENE_KEYS = {"source", "T", "object"}
_ACQ_KEYS = {"n_points", "zeta_grid", "pairs_per_point", "noise", "seed", "model"}
_OBJECT_KEYS = {"tau_h", "tau_v", "kappa", "phi_h", "phi_v", "xi"}


def _strict(d, allowed: set, path: tuple) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(path, f"{'.'.join(map(str, path)) or 'config'} must be a mapping")
    for key in d:
        if key not in allowed:
            raise ConfigError(path + (key,), f"unknown field {key!r}")
    return d


def _number(v, path: tuple) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"{'.'.join(map(str, path))} must be a number, got {v!r}")
    return float(v)


class SceneError(ValueError):
    pass


def parse_config(data) -> RunConfig:
    """Validate a config mapping; structural problems raise ConfigError, physics SceneError."""
    _strict(data, _TOP_KEYS, ())
    scene_d = _strict(data.get("scene", {}), _SCENE_KEYS, ("scene",))
    acq_d = _strict(data.get("acquisition", {}), _ACQ_KEYS, ("acquisition",))

    src_d = _strict(scene_d.get("source", {}), {"b1", "b2"}, ("scene", "source"))
    b1 = _number(src_d.get("b1", 1 / math.sqrt(2)), ("scene", "source", "b1"))
    b2 = _number(src_d.get("b2", 1 / math.sqrt(2)), ("scene", "source", "b2"))
    T = _number(scene_d.get("T", 1.0), ("scene", "T"))
    obj_d = scene_d.get("object", None)
    if obj_d is None or obj_d == "none":
        obj_spec = None
    elif obj_d == "identity":
        obj_spec = ("six", dict(tau_h=1.0, tau_v=1.0, kappa=0.0))
    elif isinstance(obj_d, dict) and "matrix" in obj_d:
        _strict(obj_d, {"matrix"}, ("scene", "object"))
        vals = obj_d["matrix"]
        if not isinstance(vals, list) or len(vals) != 8:
            raise ConfigError(("scene", "object", "matrix"), "matrix must be a list of 8 reals "
                              "(re, im of HH, HV, VH, VV)")
        re_im = [_number(v, ("scene", "object", "matrix")) for v in vals]
        obj_spec = ("matrix", np.array(re_im[0::2]) + 1j * np.array(re_im[1::2]))
    else:
        _strict(obj_d, _OBJECT_KEYS, ("scene", "object"))
        obj_spec = ("six", {k: _number(v, ("scene", "object", k)) for k, v in obj_d.items()})

    if "zeta_grid" in acq_d and "n_points" in acq_d:
        raise ConfigError(("acquisition", "zeta_grid"), "give either zeta_grid or n_points, not both")
    if "zeta_grid" in acq_d:
        if not isinstance(acq_d["zeta_grid"], list):
            raise ConfigError(("acquisition", "zeta_grid"), "zeta_grid must be a list")
        grid = tuple(_number(v, ("acquisition", "zeta_grid")) for v in acq_d["zeta_grid"])
    else:
        n = acq_d.get("n_points", 32)
        if isinstance(n, bool) or not isinstance(n, int):
            raise ConfigError(("acquisition", "n_points"), "n_points must be an integer")
        grid = uniform_grid(n)
    pairs = acq_d.get("pairs_per_point", 1_000_000)
    if isinstance(pairs, float) and pairs.is_integer():
        pairs = int(pairs)
    seed = acq_d.get("seed", 0)
    if isinstance(pairs, bool) or not isinstance(pairs, int):
        raise ConfigError(("acquisition", "pairs_per_point"), "pairs_per_point must be an integer")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(("acquisition", "seed"), "seed must be an integer")
    try:
        acq = AcquisitionConfig(zeta_grid=grid, pairs_per_point=pairs,
                                noise=str(acq_d.get("noise", "none")), rng_seed=seed,
                                model=str(acq_d.get("model", "analytic")))
    except ValueError as exc:
        raise ConfigError(("acquisition",), str(exc)) from exc

    probes_d = data.get("probes", ["horizontal", "vertical"])
    if not isinstance(probes_d, list) or not probes_d:
        raise ConfigError(("probes",), "probes must be a non-empty list")
    probes = []
    for i, p in enumerate(probes_d):
        if isinstance(p, str):
            if p not in PROBE_PRESETS:
                raise ConfigError(("probes", i), f"unknown probe preset {p!r}; "
                                  f"choose from {sorted(PROBE_PRESETS)}")
            probes.append(PROBE_PRESETS[p]())
        else:
            _strict(p, {"alpha1", "beta1", "gamma"}, ("probes", i))
            try:
                probes.append(ProbeState(_number(p.get("alpha1"), ("probes", i, "alpha1")),
                                         _number(p.get("beta1"), ("probes", i, "beta1")),
                                         _number(p.get("gamma", 0.0), ("probes", i, "gamma"))))
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(("probes", i), str(exc)) from exc

    calibration = data.get("calibration", True)
    if not isinstance(calibration, bool):
        raise ConfigError(("calibration",), "calibration must be true or false")
    output_dir = data.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError(("output_dir",), "output_dir must be a string")

    try:
        src = SourceConfig(b1, b2)
        if obj_spec is None:
            obj = None
        elif obj_spec[0] == "six":
            obj = JonesObject(**obj_spec[1])
        else:
            obj = check_passive(obj_spec[1].reshape(2, 2))
        scene = Scene(src, T, obj)
    except ValueError as exc:
        raise SceneError(str(exc)) from exc
    return RunConfig(scene, acq, probes, calibration, Path(output_dir))


def _line_of(text: str, path: tuple) -> int | None:
    """1-based line of the YAML node at ``path`` (or its nearest existing parent)."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    line, node = k.start_mark.line + 1, v
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def load_config(path) -> tuple[RunConfig, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"{path}: cannot read config: {exc}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise CliError(EXIT_CONFIG, f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}")
    if data is None:
        data = {}
    try:
        return parse_config(data), text
    except ConfigError as exc:
        line = _line_of(text, exc.path)
        raise CliError(EXIT_CONFIG, f"{path}:{line}: {exc}")
    except SceneError as exc:
        raise CliError(EXIT_SCENE, f"{path}: unphysical scene: {exc}")


# -- helpers ---------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _file_stem(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label.replace("=", "")).strip("_")


def _emit(text: str, out: str | None, quiet: bool) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
        if not quiet:
            print(f"wrote {out}", file=sys.stderr)
    else:
        sys.stdout.write(text)


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _provenance(**extra) -> dict:
    return {"tool": "qiuptomo", "version": __version__, **extra}


# -- commands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg, text = load_config(args.config)
    acq = cfg.acquisition
    if args.seed is not None:
        acq = AcquisitionConfig(acq.zeta_grid, acq.pairs_per_point, acq.noise, args.seed, acq.model)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    runs = [("object", "", cfg.scene)]
    if cfg.calibration:
        runs.append(("reference", "ref/", Scene(cfg.scene.src, cfg.scene.T, None)))
    entries = []
    with FileLock(str(out_dir / ".qiuptomo.lock"), timeout=0):
        try:
            for role, tag, scene in runs:
                for probe in cfg.probes:
                    for theta in (ThetaSetting.DEG0, ThetaSetting.DEG45):
                        label = setting_label(probe, theta, tag)
                        ds = acquire(theta, probe, scene, acq, label)
                        fname = _file_stem(label) + ".json"
                        save_dataset(ds, out_dir / fname)
                        entries.append({"file": fname, "label": label, "role": role,
                                        "theta": theta.value})
        except NonPassiveObjectError as exc:
            raise CliError(EXIT_SCENE, f"unphysical scene: {exc}")
        manifest = {
            "schema_version": "1",
            "source": {"b1": cfg.scene.src.b1, "b2": cfg.scene.src.b2},
            "datasets": entries,
            "provenance": _provenance(config_sha256=_sha256(text.encode("utf-8")),
                                      seed=int(acq.rng_seed), config=yaml.safe_load(text)),
        }
        (out_dir / "manifest.json").write_text(dumps_json(manifest), encoding="utf-8")
    _log(args, f"wrote {len(entries)} datasets and manifest.json to {out_dir}")
    return EXIT_OK


def _load_dataset_or_exit(path) -> FringeDataset:
    try:
        return load_dataset(path)
    except (DatasetFormatError, ValueError) as exc:
        raise CliError(EXIT_DATASET, f"{path}: malformed dataset: {exc}")


def fit_entry(path, ds: FringeDataset) -> dict:
    try:
        fit = fit_sinusoid(ds)
    except FitError as exc:
        raise CliError(EXIT_DATASET, f"{path}: cannot fit: {exc}")
    nu = fit.a / fit.c if fit.c > 0 and fit.a <= fit.c * (1 + 1e-12) else None
    return {"file": str(path), "label": ds.label, "theta": ds.theta.value,
            **fit.to_dict(), "visibility": nu,
            "zeta_grid": [float(z) for z in ds.zeta], "counts": [float(c) for c in ds.counts]}


def cmd_fit(args) -> int:
    entries = [fit_entry(p, _load_dataset_or_exit(p)) for p in args.datasets]
    report = {"schema_version": "1", "fits": entries, "provenance": _provenance()}
    _emit(dumps_json(report), args.out, args.quiet)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    manifest_path = Path(args.manifest)
    try:
        raw = manifest_path.read_bytes()
        manifest = json.loads(raw.decode("utf-8"))
        entries = manifest["datasets"]
        src = SourceConfig(float(manifest["source"]["b1"]), float(manifest["source"]["b2"]))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DATASET, f"{manifest_path}: malformed manifest: {exc}")
    base = manifest_path.parent
    obj_ds, ref_ds = [], []
    for e in entries:
        ds = _load_dataset_or_exit(base / e["file"])
        (ref_ds if e.get("role") == "reference" else obj_ds).append(ds)
    try:
        rec = reconstruct(obj_ds, ref_ds, src, tolerance=args.tolerance, refine=args.refine)
    except MissingDatasetError as exc:
        raise CliError(EXIT_MISSING, str(exc))
    except (ModelInconsistentError, PassivityError) as exc:
        raise CliError(EXIT_INCONSISTENT, str(exc))
    except (FitError, ValueError) as exc:
        raise CliError(EXIT_DATASET, f"cannot reconstruct: {exc}")
    report = rec.to_dict()
    report["provenance"] = _provenance(manifest_sha256=_sha256(raw),
                                       seed=manifest.get("provenance", {}).get("seed"))
    out = args.out or str(base / "reconstruction.json")
    _emit(dumps_json(report), out, args.quiet)
    if not rec.consistency.passed:
        _log(args, f"consistency check FAILED: kappa discrepancy "
                   f"{rec.consistency.kappa_rel_discrepancy:.4g}, xi discrepancy "
                   f"{rec.consistency.xi_rel_discrepancy:.4g} (tolerance {args.tolerance})")
        return EXIT_INCONSISTENT
    return EXIT_OK


def validation_draw(rng: np.random.Generator, identity: bool = False) -> dict:
    alpha = rng.uniform(0.0, 1.0)
    probe = ProbeState(alpha, math.sqrt(1 - alpha**2), rng.uniform(-math.pi, math.pi))
    obj = JonesObject.identity() if identity else random_passive_object(rng)
    T = rng.uniform(0.1, 1.0)
    offset = rng.uniform(0.0, 2 * math.pi / 32)
    return {"probe": probe, "object": obj, "T": T, "zeta": offset + np.array(uniform_grid(32))}


def run_validation(draws: int, seed: int, identity: bool = False) -> dict:
    src = SourceConfig()
    worst, worst_draw = -1.0, None
    for i in range(draws):
        d = validation_draw(np.random.default_rng([seed, i]), identity)
        for theta in ThetaSetting:
            oracle = run_forward(src, LossModel(d["T"]), d["probe"], theta, d["object"], d["zeta"])
            closed = counts_with_object(theta, d["probe"], d["object"], src, d["T"], d["zeta"])
            dev = float(np.max(np.abs(oracle - closed)))
            if dev > worst:
                worst = dev
                worst_draw = {"index": i, "theta": theta.value, "T": d["T"],
                              "probe": [d["probe"].alpha1, d["probe"].beta1, d["probe"].gamma],
                              "object": d["object"].as_dict(), "zeta_offset": float(d["zeta"][0])}
    return {"schema_version": "1", "draws": draws, "seed": seed, "tolerance": VALIDATION_TOL,
            "max_abs_deviation": worst, "worst_draw": worst_draw,
            "pass": worst < VALIDATION_TOL, "provenance": _provenance()}


def cmd_validate(args) -> int:
    if args.draws < 1:
        raise CliError(EXIT_CONFIG, "--draws must be at least 1")
    seed = 0 if args.seed is None else args.seed
    report = run_validation(args.draws, seed, identity=args.object == "identity")
    _emit(dumps_json(report), args.out, args.quiet)
    if not report["pass"]:
        print(f"validation FAILED: max deviation {report['max_abs_deviation']:.3g}; "
              f"offending draw: {json.dumps(report['worst_draw'])}", file=sys.stderr)
        return EXIT_VALIDATION
    _log(args, f"validation passed: max deviation {report['max_abs_deviation']:.3g} over "
               f"{args.draws} draws")
    return EXIT_OK


def _columns(*cols) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in zip(*cols))


def cmd_plotdata(args) -> int:
    path = Path(args.input)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_DATASET, f"{path}: {exc}")
    if isinstance(data, dict) and "fits" in data:
        fits = data["fits"]
        if args.label is not None:
            fits = [f for f in fits if f.get("label") == args.label]
        if not fits:
            raise CliError(EXIT_DATASET, f"{path}: no matching fit entry")
        chunks = []
        try:
            for f in fits:
                z = np.asarray(f["zeta_grid"], dtype=float)
                y = np.asarray(f["counts"], dtype=float)
                if z.shape != y.shape:
                    raise ValueError("zeta_grid and counts lengths differ")
                model = f["c"] + f["a"] * np.sin(z + f["phi"])
                body = _columns(z, y, model)
                chunks.append(body if len(fits) == 1 else f"# {f['label']}\n{body}\n")
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(EXIT_DATASET, f"{path}: malformed fit report: {exc}")
        text = "".join(chunks)
    else:
        if not isinstance(data, dict):
            raise CliError(EXIT_DATASET, f"{path}: not a dataset or fit report")
        try:
            ds = FringeDataset.from_dict(data)
        except (DatasetFormatError, ValueError) as exc:
            raise CliError(EXIT_DATASET, f"{path}: malformed dataset: {exc}")
        text = _columns(ds.zeta, ds.counts)
    _emit(text, args.out, args.quiet)
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed override")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (simulate) or file")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress progress messages")

    parser = argparse.ArgumentParser(prog="qiuptomo", parents=[common],
                                     description="Polarization tomography with undetected photons.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="synthesize a dataset battery from a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit C + A sin(ζ+φ) to dataset files")
    p.add_argument("datasets", nargs="+")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reconstruct", parents=[common], help="recover the object from a manifest")
    p.add_argument("manifest")
    p.add_argument("--refine", action="store_true", help="run global least-squares refinement")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE,
                   help="relative tolerance of the dual-κ / dual-ξ consistency check")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("validate", parents=[common], help="oracle vs closed-form check")
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--object", choices=("random", "identity"), default="random")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plotdata", parents=[common], help="columnar text for plotting")
    p.add_argument("input", help="dataset file or fit report")
    p.add_argument("--label", default=None, help="select one entry of a fit report")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("seed", None), ("out", None), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"qiuptomo {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    raise SystemExit(main())
