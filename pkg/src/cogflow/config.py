"""Experiment configuration: one JSON document drives a whole run.

Every numeric parameter is checked here, before any computation starts.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .breadth import BreadthError, SwitchingGeneratorSet, generators_from_dict
from .model import ModelError, ModelSpec, model_from_dict, validate_model

__all__ = [
    "ConfigError",
    "RunConfig",
    "VerifyConfig",
    "BreadthConfig",
    "OutputConfig",
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "CHECKS",
]

CHECKS = ("kernel", "continuity", "rhs-forms")


class ConfigError(ValueError):
    pass


def _reject(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _positive(name: str, v: float) -> None:
    if not np.isfinite(v) or v <= 0:
        raise ConfigError(f"{name} must be a finite positive number, got {v!r}")


@dataclass(frozen=True)
class RunConfig:
    n: int
    horizon: float
    step: float
    store_every: float
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("run.n must be >= 1")
        _positive("run.horizon", self.horizon)
        _positive("run.step", self.step)
        _positive("run.store_every", self.store_every)
        if not 0 <= self.seed < 2**64:
            raise ConfigError("run.seed must fit in 64 unsigned bits")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("run.workers must be >= 1")

    @property
    def record_times(self) -> list:
        k = int(np.floor(self.horizon / self.store_every + 1e-9))
        times = [round(i * self.store_every, 12) for i in range(k + 1)]
        if times[-1] < self.horizon - 1e-12:
            times.append(self.horizon)
        return times


@dataclass(frozen=True)
class VerifyConfig:
    checks: tuple = ("kernel", "continuity")
    bins: tuple = (100,)
    tau_bins: int = 20
    tau_max: float | None = None  # defaults to the check time
    t_check: float | None = None  # defaults to the run horizon minus dt_continuity
    dt_continuity: float | None = None  # defaults to run.store_every
    k_noise: float = 4.0

    def __post_init__(self):
        bad = set(self.checks) - set(CHECKS)
        if bad:
            raise ConfigError(f"unknown checks {sorted(bad)}; choose from {list(CHECKS)}")
        if any(int(b) < 3 for b in self.bins):
            raise ConfigError("verify.bins must be >= 3 per axis")
        if self.tau_bins < 1:
            raise ConfigError("verify.tau_bins must be >= 1")
        for name in ("tau_max", "t_check", "dt_continuity"):
            v = getattr(self, name)
            if v is not None:
                _positive(f"verify.{name}", v)
        _positive("verify.k_noise", self.k_noise)


@dataclass(frozen=True, eq=False)
class BreadthConfig:
    generators: SwitchingGeneratorSet
    states: np.ndarray  # (k, n) complex, rows are thread vectors
    dt: float
    steps: int
    paths: int = 1
    phi0: int = 0
    seed: int = 0
    stride: int = 1

    def __post_init__(self):
        _positive("breadth.dt", self.dt)
        if self.steps < 1 or self.paths < 1 or self.stride < 1:
            raise ConfigError("breadth.steps, paths and stride must be >= 1")
        if self.generators.switch_rate * self.dt >= 1:
            raise ConfigError("breadth switch_rate * dt must be < 1")
        if self.states.ndim != 2 or self.states.shape[1] != self.generators.n:
            raise ConfigError(f"breadth.states must be a list of length-{self.generators.n} vectors")
        if not 0 <= self.phi0 < self.generators.m:
            raise ConfigError("breadth.phi0 out of range")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    formats: tuple = ("csv", "json")
    snapshot: bool = True
    jumps: bool = True

    def __post_init__(self):
        bad = set(self.formats) - {"csv", "json", "npz"}
        if bad:
            raise ConfigError(f"unsupported output formats {sorted(bad)}")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    model: ModelSpec | None
    run: RunConfig | None
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    breadth: BreadthConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)
    document: dict = field(default_factory=dict)

    @property
    def t_check(self) -> float:
        if self.verify.t_check is not None:
            return self.verify.t_check
        return self.run.horizon - self.dt_continuity

    @property
    def dt_continuity(self) -> float:
        return self.verify.dt_continuity or self.run.store_every

    @property
    def tau_max(self) -> float:
        return self.verify.tau_max or self.t_check

    def canonical(self) -> dict:
        """The config document without the output location, which never affects results."""
        doc = copy.deepcopy(self.document)
        doc.get("output", {}).pop("dir", None)
        return doc

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed=None, workers=None, out=None) -> "ExperimentConfig":
        """Apply command-line overrides; the digest tracks the effective config."""
        doc = copy.deepcopy(self.document)
        if seed is not None:
            if "run" in doc:
                doc["run"]["seed"] = int(seed)
            if "breadth" in doc:
                doc["breadth"]["seed"] = int(seed)
        if out is not None:
            doc.setdefault("output", {})["dir"] = str(out)
        cfg = config_from_dict(doc)
        if workers is not None and cfg.run is not None:
            # the worker count never changes results, so it stays out of the digest
            cfg = ExperimentConfig(
                cfg.name, cfg.model, _replace_workers(cfg.run, workers), cfg.verify, cfg.breadth, cfg.output, cfg.document
            )
        return cfg


def _replace_workers(run: RunConfig, workers: int) -> RunConfig:
    return RunConfig(run.n, run.horizon, run.step, run.store_every, run.seed, int(workers))


def _complex_rows(a, where: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ConfigError(f"{where} must be a list of vectors of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _reject(doc, {"name", "model", "run", "verify", "breadth", "output"}, "config")
    try:
        if doc.get("breadth") is None or "model" in doc or "run" in doc:
            for key in ("model", "run"):
                if key not in doc:
                    raise ConfigError(f"config needs a {key!r} section")
        model, run, verify = None, None, VerifyConfig()
        if "model" in doc:
            model, run, verify = _depth_sections(doc)
        breadth = None
        if doc.get("breadth") is not None:
            bd = dict(doc["breadth"])
            _reject(bd, {"generators", "states", "dt", "steps", "paths", "phi0", "seed", "stride"}, "breadth")
            breadth = BreadthConfig(
                generators=generators_from_dict(bd["generators"]),
                states=_complex_rows(bd["states"], "breadth.states"),
                dt=float(bd["dt"]),
                steps=int(bd["steps"]),
                paths=int(bd.get("paths", 1)),
                phi0=int(bd.get("phi0", 0)),
                seed=int(bd.get("seed", run.seed if run else 0)),
                stride=int(bd.get("stride", 1)),
            )
        od = dict(doc.get("output", {}))
        _reject(od, {"dir", "formats", "snapshot", "jumps"}, "output")
        output = OutputConfig(
            dir=str(od.get("dir", "out")),
            formats=tuple(od.get("formats", ("csv", "json"))),
            snapshot=bool(od.get("snapshot", True)),
            jumps=bool(od.get("jumps", True)),
        )
    except (ModelError, BreadthError) as exc:
        raise ConfigError(str(exc)) from exc
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed config: {exc}") from exc

    cfg = ExperimentConfig(str(doc.get("name", "experiment")), model, run, verify, breadth, output, copy.deepcopy(doc))
    if model is not None:
        _cross_check(cfg)
    return cfg


def _depth_sections(doc: dict):
    model = model_from_dict(doc["model"])
    rd = dict(doc["run"])
    _reject(rd, {"n", "horizon", "step", "store_every", "seed", "workers"}, "run")
    run = RunConfig(
        n=int(rd["n"]),
        horizon=float(rd["horizon"]),
        step=float(rd["step"]),
        store_every=float(rd.get("store_every", rd["step"])),
        seed=int(rd.get("seed", 0)),
        workers=None if rd.get("workers") is None else int(rd["workers"]),
    )
    vd = dict(doc.get("verify", {}))
    _reject(vd, {"checks", "bins", "tau_bins", "tau_max", "t_check", "dt_continuity", "k_noise"}, "verify")
    bins = vd.get("bins", [100] * model.dim)
    bins = (int(bins),) * model.dim if np.isscalar(bins) else tuple(int(b) for b in bins)
    if len(bins) != model.dim:
        raise ConfigError(f"verify.bins needs {model.dim} entries")
    verify = VerifyConfig(
        checks=tuple(vd.get("checks", ("kernel", "continuity"))),
        bins=bins,
        tau_bins=int(vd.get("tau_bins", 20)),
        tau_max=None if vd.get("tau_max") is None else float(vd["tau_max"]),
        t_check=None if vd.get("t_check") is None else float(vd["t_check"]),
        dt_continuity=None if vd.get("dt_continuity") is None else float(vd["dt_continuity"]),
        k_noise=float(vd.get("k_noise", 4.0)),
    )
    return model, run, verify


def _cross_check(cfg: ExperimentConfig) -> None:
    report = validate_model(cfg.model)
    if not report.ok:
        raise ConfigError("; ".join(f"{n}: {d}" for n, _, d in report.failures()))
    run = cfg.run
    if cfg.t_check <= 0:
        raise ConfigError("check time must be > 0; raise run.horizon or set verify.t_check")
    if "continuity" in cfg.verify.checks and cfg.t_check + cfg.dt_continuity > run.horizon + 1e-9:
        raise ConfigError("run.horizon must cover t_check + dt_continuity")
    if cfg.t_check > run.horizon + 1e-9:
        raise ConfigError("verify.t_check exceeds run.horizon")
    ratio = cfg.dt_continuity / run.store_every
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("dt_continuity must be a multiple of run.store_every")
    if cfg.model.time_origin == "jump-at-zero" and cfg.tau_max > cfg.t_check + 1e-12:
        raise ConfigError("tau_max cannot exceed the check time in jump-at-zero mode")


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
