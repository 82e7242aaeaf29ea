"""``cogflow`` command line: simulate, verify, breadth, export, validate.

Exit codes: 0 ok, 1 verification failure, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .config import ConfigError, load_config
from .harness import EXPORT_FORMATS, RunError, export, run_experiment
from .model import validate_model

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def bundled_configs() -> list:
    root = resources.files("cogflow") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config(name: str) -> Path:
    """A filesystem path, or the name of a bundled config (with or without ``.json``)."""
    path = Path(name)
    if path.exists():
        return path
    stem = name[:-5] if name.endswith(".json") else name
    if stem in bundled_configs():
        return Path(str(resources.files("cogflow") / "configs" / f"{stem}.json"))
    raise ConfigError(f"no config file {name!r} (bundled: {', '.join(bundled_configs())})")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cogflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def run_args(sp):
        sp.add_argument("-c", "--config", required=True, help="config path or bundled config name")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--workers", type=int, help="worker processes (default: COGFLOW_WORKERS or 1)")
        sp.add_argument("-o", "--out", help="output directory override")

    run_args(sub.add_parser("simulate", help="simulate the ensemble and write snapshots, jump log and densities"))
    run_args(sub.add_parser("verify", help="simulate, estimate densities and run the configured checks"))
    run_args(sub.add_parser("breadth", help="run the switching density-matrix experiment"))

    ex = sub.add_parser("export", help="convert a report, grid or jump log")
    ex.add_argument("input", help="report .json, grid .npz or jump-log .csv")
    ex.add_argument("--format", required=True, choices=EXPORT_FORMATS)
    ex.add_argument("--which", default="x", choices=("x", "xy", "joint"), help="grid view for csv")
    ex.add_argument("-o", "--out", help="destination file")

    va = sub.add_parser("validate", help="check a config and its model without running")
    va.add_argument("-c", "--config", required=True)
    sub.add_parser("configs", help="list bundled configs")
    return p


STAGES = {"simulate": ["simulate"], "verify": ["simulate", "verify"], "breadth": ["breadth"]}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "configs":
            print("\n".join(bundled_configs()))
            return EXIT_OK
        if args.command == "export":
            dest = export(args.input, args.format, args.out, which=args.which)
            print(dest)
            return EXIT_OK
        cfg = load_config(resolve_config(args.config))
        if args.command == "validate":
            out = {"config_digest": cfg.digest(), "ok": True}
            if cfg.model is not None:
                rep = validate_model(cfg.model)
                out["model"] = rep.to_dict()
                out["ok"] = rep.ok
            print(json.dumps(out, indent=2))
            return EXIT_OK if out["ok"] else EXIT_CONFIG
        manifest = run_experiment(cfg, STAGES[args.command], seed=args.seed, workers=args.workers, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for check, ok in manifest.verification.items():
        print(f"{check}: {'pass' if ok else 'FAIL'}")
    print(f"manifest: {Path(manifest_dir(cfg, args.out)) / 'manifest.json'}")
    return EXIT_OK if manifest.passed else EXIT_VERIFY


def manifest_dir(cfg, out) -> str:
    return out if out is not None else cfg.output.dir


if __name__ == "__main__":
    sys.exit(main())
