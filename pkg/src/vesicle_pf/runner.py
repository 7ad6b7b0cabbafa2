"""Run configuration, orchestration, diagnostics files and resume."""
from __future__ import annotations

import copy
import csv
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .energy import EnergyModel, ModelParams
from .integrators import (
    DiagnosticsRow,
    EnergyInequalityViolated,
    IntegratorConfig,
    NonFinite,
    PicardDiverged,
    StoppingCriterion,
    check_admissible,
    run_to_steady_state,
)
from .io import FORMATS, IoError, read_checkpoint, write_checkpoint, write_snapshot
from .scenarios import EllipsoidSpec, UnknownPreset, preset, tanh_ellipsoid
from .spectral import GridSpec, NonPositiveSymbol, ScalarField3D

log = logging.getLogger(__name__)

DIAGNOSTICS = "diagnostics.csv"
MANIFEST = "manifest.json"
CHECKPOINT_DIR = "checkpoint"
SNAPSHOT_DIR = "snapshots"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SYMBOL = 3
EXIT_NONFINITE = 4
EXIT_PICARD = 5
EXIT_ENERGY = 6
EXIT_IO = 7


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}" if key else reason)
        self.key = key
        self.reason = reason


# Shape of a resolved config.  Leaves are ``None``; nested dicts are sections.
SCHEMA: dict = {
    "preset": None,
    "out": None,
    "domain": {"nx": None, "ny": None, "nz": None, "lx": None, "ly": None, "lz": None},
    "params": {k: None for k in ("epsilon", "kappa", "kappa_bar", "C", "D", "M1", "M2",
                                 "alpha", "beta", "dA0", "A0")},
    "init": {"center": None, "divisors": None, "R": None},
    "integrator": {"scheme": None, "dt": None, "picard_tol": None, "picard_max_iters": None},
    "stopping": {"max_steps": None, "rate_tol": None, "energy_tol": None},
    "output": {"snapshot_every": None, "diag_every": None, "checkpoint_every": None, "formats": None},
}

OUTPUT_DEFAULTS = {"snapshot_every": 10000, "diag_every": 100, "checkpoint_every": 10000, "formats": ["raw"]}


def _check_keys(data: dict, schema: dict, prefix: str = "") -> None:
    if not isinstance(data, dict):
        raise ConfigError(prefix, f"expected a mapping, got {type(data).__name__}")
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in schema:
            raise ConfigError(path, "unknown key")
        if isinstance(schema[key], dict):
            if value is None:
                continue
            _check_keys(value, schema[key], path)
        elif isinstance(value, dict):
            raise ConfigError(path, "expected a value, got a mapping")


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            out.update(_flatten(value, path))
        else:
            out[path] = value
    return out


def _set_path(data: dict, path: str, value) -> None:
    parts = path.split(".")
    node, schema = data, SCHEMA
    for i, part in enumerate(parts):
        here = ".".join(parts[: i + 1])
        if not isinstance(schema, dict) or part not in schema:
            raise ConfigError(here, "unknown key")
        if i == len(parts) - 1:
            if isinstance(schema[part], dict):
                raise ConfigError(here, "cannot assign to a section")
            node[part] = value
        else:
            node = node.setdefault(part, {})
            schema = schema[part]


def _expand_grid(data: dict, n) -> None:
    try:
        n = int(n)
    except (TypeError, ValueError):
        raise ConfigError("grid", f"expected an integer, got {n!r}") from None
    dom = data.setdefault("domain", {})
    for axis in ("nx", "ny", "nz"):
        dom[axis] = n


def parse_assignment(text: str) -> tuple[str, object]:
    """``key.path=value`` with the value parsed as YAML (numbers, lists, strings)."""
    if "=" not in text:
        raise ConfigError(text, "expected key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from None
    return key, value


def preset_config(name: str) -> dict:
    """Resolved config dict of a catalog preset."""
    try:
        p = preset(name)
    except UnknownPreset as exc:
        raise ConfigError("preset", str(exc.args[0])) from None
    d, i = p.domain, p.integrator
    return {
        "preset": name,
        "out": None,
        "domain": {"nx": d.nx, "ny": d.ny, "nz": d.nz, "lx": d.lx, "ly": d.ly, "lz": d.lz},
        "params": p.params.to_dict(),
        "init": {"center": list(p.init.center), "divisors": list(p.init.divisors), "R": p.init.R},
        "integrator": {"scheme": i.scheme, "dt": i.dt, "picard_tol": i.picard_tol,
                       "picard_max_iters": i.picard_max_iters},
        "stopping": {"max_steps": StoppingCriterion().max_steps, "rate_tol": StoppingCriterion().rate_tol,
                     "energy_tol": StoppingCriterion().energy_tol},
        "output": dict(copy.deepcopy(OUTPUT_DEFAULTS)),
    }


@dataclass
class RunConfig:
    """A validated run: typed objects plus the plain dict they were built from."""

    resolved: dict
    grid: GridSpec
    params: ModelParams
    init: EllipsoidSpec
    integrator: IntegratorConfig
    stopping: StoppingCriterion
    out: Path
    snapshot_every: int
    diag_every: int
    checkpoint_every: int
    formats: tuple[str, ...]
    provenance: list[dict] = field(default_factory=list)

    @property
    def preset(self) -> str | None:
        return self.resolved.get("preset")

    def model(self) -> EnergyModel:
        return EnergyModel(self.grid, self.params)

    def initial_field(self) -> ScalarField3D:
        return tanh_ellipsoid(self.init, self.grid, self.params.epsilon)


def _build(section: str, factory, kwargs: dict):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        # point at the offending field when the message names one
        m = re.match(r"(?:\w+\.)?(\w+) must", str(exc))
        key = f"{section}.{m.group(1)}" if m and m.group(1) in SCHEMA[section] else section
        raise ConfigError(key, str(exc)) from None


def _positive_int(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ConfigError(key, f"must be an integer >= 1, got {value!r}")
    return int(value)


def validate(resolved: dict, provenance: list[dict] | None = None) -> RunConfig:
    """Type-check a resolved dict and build the run objects from it."""
    _check_keys(resolved, SCHEMA)
    for section, keys in SCHEMA.items():
        if isinstance(keys, dict):
            sub = resolved.get(section) or {}
            missing = [k for k in keys if k not in sub and not (section == "params")]
            if section == "params" and "epsilon" not in sub:
                missing = ["epsilon"]
            if missing:
                raise ConfigError(f"{section}.{missing[0]}", "missing")
    if not resolved.get("out"):
        raise ConfigError("out", "an output directory is required")

    grid = _build("domain", GridSpec, resolved["domain"])
    params = _build("params", ModelParams, resolved["params"])
    init = _build("init", EllipsoidSpec, {**resolved["init"], "epsilon": None})
    try:
        init.check_inside(grid)
    except ValueError as exc:
        raise ConfigError("init.center", str(exc)) from None
    integrator = _build("integrator", IntegratorConfig, resolved["integrator"])
    stopping = _build("stopping", StoppingCriterion, resolved["stopping"])
    out = resolved["output"]
    formats = out["formats"]
    if isinstance(formats, str):
        formats = [formats]
    if not formats or any(f not in FORMATS for f in formats):
        raise ConfigError("output.formats", f"must be a non-empty subset of {list(FORMATS)}, got {formats!r}")
    return RunConfig(
        resolved=resolved,
        grid=grid,
        params=params,
        init=init,
        integrator=integrator,
        stopping=stopping,
        out=Path(resolved["out"]),
        snapshot_every=_positive_int(out["snapshot_every"], "output.snapshot_every"),
        diag_every=_positive_int(out["diag_every"], "output.diag_every"),
        checkpoint_every=_positive_int(out["checkpoint_every"], "output.checkpoint_every"),
        formats=tuple(formats),
        provenance=list(provenance or []),
    )


def parse_config(path=None, preset_name: str | None = None, overrides=(), flags: dict | None = None) -> RunConfig:
    """Merge preset, config file, flags and ``--set`` assignments (later wins).

    Every value that differs from the preset (or every value, without a
    preset) is recorded in the provenance list with its source.
    """
    file_data: dict = {}
    if path is not None:
        try:
            file_data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError("", f"cannot parse config {path}: {exc}") from None
        if not isinstance(file_data, dict):
            raise ConfigError("", "config file must contain a mapping")
        file_data = copy.deepcopy(file_data)
        if "grid" in file_data:
            _expand_grid(file_data, file_data.pop("grid"))
        _check_keys(file_data, SCHEMA)

    name = preset_name or file_data.get("preset")
    base = preset_config(name) if name else {
        "preset": None,
        "out": None,
        "domain": {"lx": 1.0, "ly": 1.0, "lz": 1.0},
        "params": {},
        "init": {},
        "integrator": {"scheme": "semi_implicit", "picard_tol": 1e-10, "picard_max_iters": 200},
        "stopping": {"max_steps": StoppingCriterion().max_steps, "rate_tol": StoppingCriterion().rate_tol,
                     "energy_tol": StoppingCriterion().energy_tol},
        "output": dict(copy.deepcopy(OUTPUT_DEFAULTS)),
    }
    resolved = copy.deepcopy(base)
    before = _flatten(base)
    provenance: list[dict] = []

    def apply(key: str, value, source: str) -> None:
        _set_path(resolved, key, value)
        provenance.append({"key": key, "value": value, "source": source,
                           "preset_value": before.get(key)})

    for key, value in _flatten(file_data).items():
        if key == "preset":
            resolved["preset"] = value
            continue
        if before.get(key) != value:
            apply(key, value, "config")
    if preset_name:
        resolved["preset"] = preset_name
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key == "grid":
            for axis in ("nx", "ny", "nz"):
                apply(f"domain.{axis}", int(value), "flag")
        else:
            apply(key, value, "flag")
    for text in overrides:
        key, value = parse_assignment(text)
        apply(key, value, "set")
    return validate(resolved, provenance)


# execution ----------------------------------------------------------------------

def _format(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


class DiagnosticsWriter:
    """Append-only CSV with a fixed header; values at 17 significant digits."""

    def __init__(self, path: Path, append: bool = False):
        self.path = path
        exists = append and path.exists()
        self.fh = open(path, "a" if exists else "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        if not exists:
            self.writer.writerow(DiagnosticsRow.COLUMNS)
            self.fh.flush()

    def __call__(self, row: DiagnosticsRow, phi=None) -> None:
        self.writer.writerow([_format(v) for v in row.values()])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def read_diagnostics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]


def truncate_diagnostics(path: Path, last_step: int, cadence: int) -> None:
    """Drop rows an uninterrupted run would not have written before ``last_step``.

    That is every row past it, plus an off-cadence closing row at it.
    """
    lines = path.read_text().splitlines(keepends=True)
    keep = lines[:1]
    for ln in lines[1:]:
        n = int(ln.split(",", 1)[0])
        if n < last_step or (n == last_step and (n % cadence == 0 or n == 0)):
            keep.append(ln)
    path.write_text("".join(keep))


def _write_manifest(out: Path, data: dict) -> None:
    tmp = out / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=False, default=str))
    tmp.replace(out / MANIFEST)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NonPositiveSymbol):
        return EXIT_SYMBOL
    if isinstance(exc, NonFinite):
        return EXIT_NONFINITE
    if isinstance(exc, PicardDiverged):
        return EXIT_PICARD
    if isinstance(exc, EnergyInequalityViolated):
        return EXIT_ENERGY
    if isinstance(exc, (IoError, OSError)):
        return EXIT_IO
    return EXIT_ERROR


@dataclass
class Outcome:
    status: int
    converged: bool = False
    reason: str = ""
    steps: int = 0
    message: str = ""


def execute(cfg: RunConfig, resume: bool = False) -> Outcome:
    """Run ``cfg`` to a steady state (or the step budget), writing artifacts under ``cfg.out``.

    With ``resume`` the run restarts from ``cfg.out/checkpoint``; diagnostics
    past the checkpoint are discarded so the files match an uninterrupted run.
    """
    out = cfg.out
    started = time.perf_counter()
    manifest = {
        "version": __version__,
        "config": cfg.resolved,
        "provenance": cfg.provenance,
        "status": "running",
        "converged": False,
        "reason": "",
        "steps": 0,
        "final_time": 0.0,
        "wall_clock_seconds": 0.0,
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / SNAPSHOT_DIR).mkdir(exist_ok=True)
    except OSError as exc:
        return Outcome(EXIT_IO, message=f"cannot create output directory {out}: {exc}")

    writer = None
    try:
        model = cfg.model()
        dt = cfg.integrator.dt
        if cfg.integrator.scheme != "forward_euler":
            check_admissible(model, dt)

        if resume:
            field_, meta = read_checkpoint(out / CHECKPOINT_DIR)
            saved = meta.get("config") or {}
            current = json.loads(json.dumps(cfg.resolved, default=str))
            if any(saved.get(k) != current.get(k) for k in ("domain", "params", "init", "integrator")):
                log.warning("checkpoint model differs from the run config; using the run config")
            phi0 = field_.values
            start = int(meta["step"])
            truncate_diagnostics(out / DIAGNOSTICS, start, cfg.diag_every)
            writer = DiagnosticsWriter(out / DIAGNOSTICS, append=True)
            manifest["resumed_from_step"] = start
        else:
            phi0 = cfg.initial_field().values
            start = 0
            writer = DiagnosticsWriter(out / DIAGNOSTICS)
        _write_manifest(out, manifest)

        def on_step(n: int, phi: np.ndarray) -> None:
            if n % cfg.snapshot_every == 0:
                write_snapshot(out / SNAPSHOT_DIR, ScalarField3D(cfg.grid, phi), n, n * dt, cfg.formats)
            if n % cfg.checkpoint_every == 0:
                write_checkpoint(out / CHECKPOINT_DIR, ScalarField3D(cfg.grid, phi), n, n * dt, cfg.resolved)

        if not resume:
            write_snapshot(out / SNAPSHOT_DIR, ScalarField3D(cfg.grid, phi0), 0, 0.0, cfg.formats)
        result = run_to_steady_state(
            phi0, model, cfg.integrator, cfg.stopping,
            hooks=[writer], cadence=cfg.diag_every, start_step=start,
            record_initial=not resume, on_step=on_step,
        )
        final = ScalarField3D(cfg.grid, result.phi)
        write_snapshot(out / SNAPSHOT_DIR, final, result.steps, result.steps * dt, cfg.formats)
        write_checkpoint(out / CHECKPOINT_DIR, final, result.steps, result.steps * dt, cfg.resolved)
        manifest.update(status="finished", converged=result.converged, reason=result.reason,
                        steps=result.steps, final_time=result.steps * dt)
        outcome = Outcome(EXIT_OK, result.converged, result.reason, result.steps)
    except Exception as exc:  # mapped to an exit code; artifacts so far are kept
        code = _exit_code(exc)
        if code == EXIT_ERROR:
            log.exception("run failed")
        manifest.update(status="failed", reason=type(exc).__name__, error=str(exc))
        outcome = Outcome(code, reason=type(exc).__name__, message=f"{type(exc).__name__}: {exc}")
    finally:
        if writer is not None:
            writer.close()
    manifest["wall_clock_seconds"] = time.perf_counter() - started
    try:
        _write_manifest(out, manifest)
    except OSError as exc:
        return Outcome(EXIT_IO, message=f"cannot write manifest: {exc}")
    return outcome


def load_run(directory, max_steps: int | None = None) -> RunConfig:
    """Rebuild the RunConfig of an existing run directory from its manifest."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError("", f"cannot read {directory / MANIFEST}: {exc}") from None
    resolved = manifest["config"]
    resolved["out"] = str(directory)
    provenance = manifest.get("provenance", [])
    if max_steps is not None:
        resolved["stopping"]["max_steps"] = int(max_steps)
        provenance = provenance + [{"key": "stopping.max_steps", "value": int(max_steps),
                                    "source": "resume", "preset_value": None}]
    return validate(resolved, provenance)
