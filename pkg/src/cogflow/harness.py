"""Configuration-driven runs: simulate, estimate, verify, export, manifest."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .breadth import (
    density_from_states,
    evolve_density_expected,
    evolve_density_stochastic,
    evolve_thread,
    ThreadBatchState,
    write_path_csv,
)
from .config import ConfigError, ExperimentConfig, load_config
from .density import (
    DensityGrid,
    DensityHistory,
    GridConfig,
    ResidualReport,
    continuity_residual,
    kernel_equation_check,
    load_grids,
    rhs_form_difference,
    save_grids,
    write_grid_csv,
    write_long_csv,
)
from .pdmp import resolve_workers, simulate_ensemble, write_jump_log_csv, write_snapshot_csv

__all__ = ["RunManifest", "RunError", "run_experiment", "export", "sha256_file", "STAGES"]

STAGES = ("simulate", "verify", "breadth")
MANIFEST = "manifest.json"


class RunError(RuntimeError):
    """A stage failed; ``manifest`` holds the partial record."""

    def __init__(self, message: str, manifest: "RunManifest"):
        super().__init__(message)
        self.manifest = manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    name: str
    config_digest: str
    code_version: str
    started: str
    status: str = "running"
    wall_clock: float = 0.0
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # relative path -> {sha256, bytes}
    verification: dict = field(default_factory=dict)  # check -> passed
    workers: int = 1
    error: str | None = None

    @property
    def passed(self) -> bool:
        return all(self.verification.values())

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out: Path) -> None:
        (out / MANIFEST).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


class _Run:
    def __init__(self, cfg: ExperimentConfig, out: Path, manifest: RunManifest):
        self.cfg = cfg
        self.out = out
        self.manifest = manifest
        self.grids: list[DensityGrid] = []

    def file(self, name: str) -> Path:
        path = self.out / name
        self.manifest.files[name] = None  # filled by _inventory
        return path

    def wants(self, fmt: str) -> bool:
        return fmt in self.cfg.output.formats

    # -- stages ------------------------------------------------------------------

    def simulate(self) -> None:
        cfg, run = self.cfg, self.cfg.run
        spec = cfg.model
        grid_cfg = GridConfig.for_model(spec, cfg.verify.bins, cfg.verify.tau_bins, cfg.tau_max, overflow=True)
        res = simulate_ensemble(
            spec,
            run.n,
            run.seed,
            run.horizon,
            run.step,
            record_times=run.record_times,
            record_fn=grid_cfg,
            record_jumps=cfg.output.jumps,
            workers=self.manifest.workers,
        )
        self.grids = [DensityGrid(grid_cfg, c, run.n, t) for t, c in res.records.items()]
        if self.wants("csv"):
            if cfg.output.snapshot:
                write_snapshot_csv(res.final, self.file("snapshot.csv"))
            if cfg.output.jumps:
                write_jump_log_csv(res.jumps, self.file("jumps.csv"))
            write_long_csv(self.grids, self.file("density_long.csv"))
        if self.wants("npz"):
            save_grids(self.grids, self.file("grids.npz"))

    def verify(self) -> None:
        cfg = self.cfg
        if not self.grids:
            raise RuntimeError("verify stage needs the simulate stage")
        spec = cfg.model
        history = DensityHistory(self.grids, 0.5 * cfg.run.store_every)
        t_start = 0.0
        g = history.at(cfg.t_check)
        reports: dict[str, ResidualReport | dict] = {}
        if "kernel" in cfg.verify.checks:
            reports["kernel"] = kernel_equation_check(spec, g, history, cfg.run.step, cfg.verify.k_noise, t_start)
            if self.wants("csv"):
                write_grid_csv(g, self.file("grid_joint.csv"), which="joint")
        if "continuity" in cfg.verify.checks:
            g2 = history.at(cfg.t_check + cfg.dt_continuity)
            reports["continuity"] = continuity_residual(g, g2, spec, cfg.verify.k_noise)
            if self.wants("csv"):
                write_grid_csv(g, self.file("grid_x.csv"), which="x")
        if "rhs-forms" in cfg.verify.checks:
            reports["rhs-forms"] = rhs_form_difference(spec, g, history, cfg.run.step, t_start)
        for key, rep in reports.items():
            if isinstance(rep, ResidualReport):
                self.manifest.verification[key] = rep.passed
                rep.write_json(self.file(f"report_{key}.json"))
            else:
                self.file(f"report_{key}.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")

    def breadth(self) -> None:
        b = self.cfg.breadth
        if b is None:
            raise RuntimeError("config has no breadth section")
        gens = b.generators
        # all threads share the generator path and the Brownian increments
        paths = [
            evolve_thread(ThreadBatchState(s, b.phi0), gens, b.dt, b.steps, b.seed, paths=b.paths, stride=b.stride)
            for s in b.states
        ]
        dB, phi = paths[0].dB, paths[0].phi
        # with psi-dependent switching each thread draws its own generator path,
        # so the thread-built matrix is only comparable for a fixed kernel
        shared = gens.switch_kernel is not None
        rho0 = density_from_states(b.states).rho
        stoch = evolve_density_stochastic(rho0, gens, phi[:, :-1], b.dt, b.steps, dB=dB, stride=b.stride)
        expected = evolve_density_expected(rho0, gens, phi[0, :-1], b.dt, b.steps, stride=b.stride)
        summary = {
            "n": gens.n,
            "m": gens.m,
            "paths": b.paths,
            "dt": b.dt,
            "steps": b.steps,
            "hermiticity_drift_stochastic": stoch.hermiticity_drift(),
            "hermiticity_drift_expected": expected.hermiticity_drift(),
            "trace_drift_stochastic": stoch.trace_drift(),
            "trace_drift_expected": expected.trace_drift(),
            "switches_path0": int(np.count_nonzero(np.diff(phi[0]))),
        }
        if shared:
            psi = np.stack([p.psi for p in paths])  # (k, K, M, n)
            built = np.einsum("jtmi,jtmn->tmin", psi, psi.conj())
            summary["thread_vs_matrix_max_frobenius"] = float(np.linalg.norm(built - stoch.rho, axis=(-2, -1)).max())
        if gens.m == 1 or np.all(phi == phi[0]):
            final = stoch.rho[-1]
            mean = final.mean(axis=0)
            se = float(np.sqrt(np.sum(np.var(final, axis=0, ddof=1)) / len(final))) if len(final) > 1 else None
            summary["mean_vs_expected_frobenius"] = float(np.linalg.norm(mean - expected.rho[-1]))
            summary["mean_standard_error"] = se
        (self.file("breadth_summary.json")).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if self.wants("csv"):
            write_path_csv(stoch, self.file("breadth_stochastic_path0.csv"), which=0)
            write_path_csv(expected, self.file("breadth_expected.csv"))


def _inventory(run: _Run) -> None:
    for name in list(run.manifest.files):
        path = run.out / name
        if path.exists():
            run.manifest.files[name] = {"sha256": sha256_file(path), "bytes": path.stat().st_size}
        else:
            del run.manifest.files[name]


def run_experiment(
    config,
    stages=None,
    seed: int | None = None,
    workers: int | None = None,
    out=None,
) -> RunManifest:
    """Run the configured stages and write every artifact plus ``manifest.json``.

    ``config`` is a path or an :class:`ExperimentConfig`. Configuration errors
    raise :class:`ConfigError` before anything is written. A failing stage
    writes a manifest with ``status = "failed"`` and raises :class:`RunError`.
    Verification outcomes are recorded in ``manifest.verification``.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    cfg = cfg.with_overrides(seed=seed, workers=workers, out=out)
    if stages is None:
        stages = [s for s in STAGES if (s != "breadth" or cfg.breadth is not None) and (s == "breadth" or cfg.model is not None)]
    stages = list(stages)
    bad = set(stages) - set(STAGES)
    if bad:
        raise ConfigError(f"unknown stages {sorted(bad)}")
    if cfg.model is None and {"simulate", "verify"} & set(stages):
        raise ConfigError("simulate/verify need model and run sections")
    if "verify" in stages and "simulate" not in stages:
        stages.insert(0, "simulate")
    if "breadth" in stages and cfg.breadth is None:
        raise ConfigError("breadth stage needs a breadth section")

    out_dir = Path(cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        name=cfg.name,
        config_digest=cfg.digest(),
        code_version=__version__,
        started=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        workers=resolve_workers(cfg.run.workers if cfg.run is not None else workers),
    )
    (out_dir / "config.json").write_text(json.dumps(cfg.canonical(), indent=2, sort_keys=True) + "\n")
    manifest.files["config.json"] = None
    run = _Run(cfg, out_dir, manifest)
    t_all = time.perf_counter()
    try:
        for stage in STAGES:
            if stage not in stages:
                continue
            t0 = time.perf_counter()
            getattr(run, stage)()
            manifest.timings[stage] = time.perf_counter() - t0
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.wall_clock = time.perf_counter() - t_all
        _inventory(run)
        manifest.write(out_dir)
        raise RunError(manifest.error, manifest) from exc
    manifest.status = "ok"
    manifest.wall_clock = time.perf_counter() - t_all
    _inventory(run)
    manifest.write(out_dir)
    return manifest


# -- export ------------------------------------------------------------------------

EXPORT_FORMATS = ("json", "csv", "long-csv")


def export(source, fmt: str, dest=None, which: str = "x") -> Path:
    """Convert a stored artifact.

    ``source`` may be a :class:`ResidualReport`, a :class:`DensityGrid`, or
    a path to a report JSON, a grid ``.npz`` or a jump-log CSV. Reports go
    to JSON; grids to CSV (``which`` selects the view) or long CSV; jump
    logs are re-sorted by (particle, time).
    """
    if fmt not in EXPORT_FORMATS:
        raise ValueError(f"unsupported format {fmt!r}; choose from {list(EXPORT_FORMATS)}")
    if isinstance(source, (str, Path)):
        src = Path(source)
        if src.suffix == ".json":
            source = ResidualReport.from_dict(json.loads(src.read_text()))
        elif src.suffix == ".npz":
            grids = load_grids(src)
            if fmt == "long-csv":
                dest = Path(dest or src.with_suffix(".long.csv"))
                write_long_csv(grids, dest)
                return dest
            source = grids[-1]
        elif src.suffix == ".csv":
            return _export_jump_csv(src, fmt, dest)
        else:
            raise ValueError(f"cannot export {src}")
    if isinstance(source, ResidualReport):
        if fmt != "json":
            raise ValueError("residual reports export to json only")
        dest = Path(dest or f"report_{source.theorem_id}.json")
        source.write_json(dest)
        return dest
    if isinstance(source, DensityGrid):
        if fmt == "json":
            raise ValueError("density grids export to csv or long-csv")
        dest = Path(dest or f"grid_{which}.csv")
        if fmt == "csv":
            write_grid_csv(source, dest, which=which)
        else:
            write_long_csv([source], dest)
        return dest
    raise TypeError(f"cannot export object of type {type(source).__name__}")


def _export_jump_csv(src: Path, fmt: str, dest) -> Path:
    if fmt != "csv":
        raise ValueError("jump logs export to csv only")
    lines = src.read_text().splitlines()
    if not lines or not lines[0].startswith("particle,time"):
        raise ValueError(f"{src} is not a jump log")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    rows.sort(key=lambda r: (int(r[0]), float(r[1])))
    dest = Path(dest or src.with_name(src.stem + "_sorted.csv"))
    dest.write_text("\n".join([lines[0]] + [",".join(r) for r in rows]) + "\n")
    return dest
