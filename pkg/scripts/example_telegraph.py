#!/usr/bin/env python3
"""Two-state telegraph model: simulate, estimate densities and check both
equations at a reduced ensemble size, then print the reports.

Usage: python scripts/example_telegraph.py [N] [OUT_DIR]
"""

import json
import sys
from pathlib import Path

from cogflow.cli import resolve_config
from cogflow.harness import run_experiment


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
    out = Path(sys.argv[2] if len(sys.argv) > 2 else "out/example-telegraph")
    doc = json.loads(resolve_config("telegraph-2state").read_text())
    doc["run"]["n"] = n
    doc["output"].update(dir=str(out), formats=["csv", "json", "npz"])
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "input.json"
    cfg.write_text(json.dumps(doc, indent=2))
    man = run_experiment(cfg)
    for check in ("kernel", "continuity"):
        rep = json.loads((out / f"report_{check}.json").read_text())
        print(
            f"{rep['theorem_id']:26s} L1 {rep['residual']['l1']:.4f}  floor {rep['noise_floor']['l1']:.4f}  "
            f"{'pass' if rep['pass'] else 'FAIL'}"
        )
    aw = json.loads((out / "report_kernel.json").read_text())["extra"]["atom_weight"]
    print(f"never-jumped fraction {aw['measured']:.4f}: e^(-t) {aw['survival_exp_minus_rate_t']:.4f}, 1-e^(-t) {aw['complement_one_minus_exp']:.4f}")
    print(f"wall clock {man.wall_clock:.1f} s, files in {out}")


if __name__ == "__main__":
    main()
