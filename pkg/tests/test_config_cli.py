import copy
import json

import pytest

from cogflow import harness
from cogflow.cli import bundled_configs, main, resolve_config
from cogflow.config import ConfigError, config_from_dict, load_config
from cogflow.harness import RunError, export, run_experiment

SMALL = {
    "name": "small",
    "model": {
        "dim": 1,
        "domain": [[-3.0, 3.0]],
        "n_cognitive": 2,
        "velocity": {"family": "constant-per-y", "constants": [[0.3], [-0.3]]},
        "kernel": {"family": "fixed-weights", "weights": [0.4, 0.6]},
        "rate": 1.0,
        "initial": {"family": "gaussian", "mean": [0.0], "std": [0.4]},
    },
    "run": {"n": 20000, "horizon": 1.01, "step": 0.01, "seed": 3},
    "verify": {"bins": 30, "tau_bins": 5, "t_check": 1.0, "tau_max": 1.0},
    "output": {"formats": ["csv", "json", "npz"]},
}


def small(**over):
    doc = copy.deepcopy(SMALL)
    for k, v in over.items():
        doc[k] = {**doc.get(k, {}), **v} if isinstance(v, dict) else v
    return doc


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_bundled_configs_load_and_validate(capsys):
    names = bundled_configs()
    assert {"telegraph-2state", "zero-field", "telegraph-stationary", "breadth-4"} <= set(names)
    for n in names:
        load_config(resolve_config(n))
        assert main(["validate", "-c", n]) == 0
    assert '"ok": true' in capsys.readouterr().out


def test_missing_rate_is_config_error_and_writes_nothing(tmp_path, capsys):
    doc = small()
    del doc["model"]["rate"]
    out = tmp_path / "out"
    assert main(["verify", "-c", str(write(tmp_path, doc)), "-o", str(out)]) == 2
    assert "rate" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize(
    "change, message",
    [
        ({"run": {"step": -0.1}}, "run.step"),
        ({"run": {"n": 0}}, "run.n"),
        ({"verify": {"checks": ["nope"]}}, "unknown checks"),
        ({"verify": {"t_check": 1.01}}, "horizon"),
        ({"verify": {"tau_max": 1.5}}, "tau_max"),
        ({"verify": {"t_check": 0.9, "dt_continuity": 0.015}}, "multiple"),
        ({"output": {"formats": ["xml"]}}, "formats"),
        ({"extra": 1}, "unknown keys"),
        ({"model": {"kernel": {"family": "fixed-weights", "weights": [0.5, 0.6]}}}, "kernel"),
    ],
)
def test_config_rejections(change, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(small(**change))


def test_unreadable_configs(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(bad)
    assert main(["simulate", "-c", str(tmp_path / "missing.json")]) == 2


def test_digest_ignores_output_dir_and_workers():
    a = config_from_dict(small())
    b = a.with_overrides(out="elsewhere", workers=3)
    assert a.digest() == b.digest() and b.run.workers == 3
    assert a.with_overrides(seed=9).digest() != a.digest()
    assert a.t_check == 1.0 and a.dt_continuity == 0.01


@pytest.fixture(scope="module")
def verified_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(small()))
    code = main(["verify", "-c", str(cfg), "-o", str(root / "a")])
    return root, cfg, code


def test_verify_run_outputs(verified_run):
    root, _, code = verified_run
    assert code == 0
    out = root / "a"
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok"
    assert man["verification"] == {"kernel": True, "continuity": True}
    for name in ("config.json", "snapshot.csv", "jumps.csv", "density_long.csv", "grids.npz",
                 "report_kernel.json", "report_continuity.json", "grid_joint.csv", "grid_x.csv"):
        assert name in man["files"], name
        assert (out / name).exists()
        assert man["files"][name]["sha256"] == harness.sha256_file(out / name)
    rep = json.loads((out / "report_kernel.json").read_text())
    assert rep["pass"] and rep["theorem_id"] == "kernel-jump-at-zero"


def test_rerun_is_byte_identical(verified_run):
    root, cfg, _ = verified_run
    assert main(["verify", "-c", str(cfg), "-o", str(root / "b"), "--workers", "2"]) == 0
    a = json.loads((root / "a" / "manifest.json").read_text())
    b = json.loads((root / "b" / "manifest.json").read_text())
    assert a["config_digest"] == b["config_digest"]
    assert a["files"] == b["files"]


def test_seed_override_changes_outputs(verified_run, tmp_path):
    _, cfg, _ = verified_run
    man = run_experiment(cfg, ["simulate"], seed=4, out=tmp_path)
    ref = json.loads((verified_run[0] / "a" / "manifest.json").read_text())
    assert man.files["snapshot.csv"]["sha256"] != ref["files"]["snapshot.csv"]["sha256"]
    assert man.verification == {}


def test_export(verified_run, tmp_path, capsys):
    out = verified_run[0] / "a"
    assert main(["export", str(out / "report_kernel.json"), "--format", "json", "-o", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text()) == json.loads((out / "report_kernel.json").read_text())
    grid_csv = export(out / "grids.npz", "csv", tmp_path / "g.csv", which="xy")
    assert grid_csv.read_text().startswith("i0,x0,y,value")
    long_csv = export(out / "grids.npz", "long-csv", tmp_path / "l.csv")
    assert len(long_csv.read_text().splitlines()) == 1 + 102 * 30 * 2
    sorted_csv = export(out / "jumps.csv", "csv", tmp_path / "j.csv")
    assert sorted_csv.read_text() == (out / "jumps.csv").read_text()
    with pytest.raises(ValueError):
        export(out / "report_kernel.json", "csv")
    assert main(["export", str(out / "jumps.csv"), "--format", "json"]) == 3


def test_failed_stage_writes_failure_manifest(tmp_path, monkeypatch):
    def boom(self):
        raise FloatingPointError("synthetic failure")

    monkeypatch.setattr(harness._Run, "verify", boom)
    cfg = config_from_dict(small(run={"n": 500}))
    with pytest.raises(RunError) as err:
        run_experiment(cfg, ["verify"], out=tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "failed" and "synthetic failure" in man["error"]
    assert err.value.manifest.status == "failed"
    assert "snapshot.csv" in man["files"]


def test_zero_field_bundled_run(tmp_path):
    # all positions frozen: continuity residual vanishes exactly
    man = run_experiment(resolve_config("zero-field"), out=tmp_path)
    assert man.passed
    rep = json.loads((tmp_path / "report_continuity.json").read_text())
    assert rep["residual"]["l1"] == 0.0


def test_breadth_cli(tmp_path, capsys):
    doc = json.loads(resolve_config("breadth-4").read_text())
    doc["breadth"].update(steps=200, paths=20)
    assert main(["breadth", "-c", str(write(tmp_path, doc)), "-o", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "breadth_summary.json").read_text())
    assert summary["trace_drift_expected"] < 1e-12
    assert summary["hermiticity_drift_stochastic"] < 1e-12
    assert summary["thread_vs_matrix_max_frobenius"] < 0.05
    assert (tmp_path / "o" / "breadth_expected.csv").exists()
    assert main(["simulate", "-c", str(write(tmp_path, doc))]) == 2


def test_configs_command(capsys):
    assert main(["configs"]) == 0
    assert "breadth-4" in capsys.readouterr().out
