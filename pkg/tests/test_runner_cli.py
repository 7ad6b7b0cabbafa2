import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from vesicle_pf.cli import main
from vesicle_pf.io import read_raw, read_vti
from vesicle_pf.runner import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SYMBOL,
    ConfigError,
    execute,
    load_run,
    parse_config,
    read_diagnostics,
)

SMALL = ["--grid", "16", "--dt", "2e-7", "--set", "params.epsilon=0.06"]


def small_cfg(out, max_steps=60, **extra):
    flags = {"out": str(out), "grid": 16, "integrator.dt": 2e-7, "stopping.max_steps": max_steps,
             "output.diag_every": 10, "output.snapshot_every": 30, "output.checkpoint_every": 20}
    flags.update(extra)
    return parse_config(preset_name="discocyte", overrides=["params.epsilon=0.06"], flags=flags)


class TestParseConfig:
    def test_preset_values(self, tmp_path):
        cfg = parse_config(preset_name="discocyte", flags={"out": str(tmp_path)})
        assert cfg.params.beta == 0.4880 and cfg.grid.shape == (64, 64, 64)
        assert cfg.integrator.dt == 5e-7 and cfg.integrator.scheme == "semi_implicit"

    def test_override_recorded_in_provenance(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"preset": "gourd", "out": str(tmp_path / "o"), "params": {"dA0": 0.2}}))
        cfg = parse_config(path)
        assert cfg.params.dA0 == 0.2
        entry = next(e for e in cfg.provenance if e["key"] == "params.dA0")
        assert entry == {"key": "params.dA0", "value": 0.2, "source": "config", "preset_value": 0.2253}

    def test_negative_penalty_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"preset": "discocyte", "out": "x", "params": {"M1": -1}}))
        with pytest.raises(ConfigError) as info:
            parse_config(path)
        assert info.value.key == "params.M1" and "ModelParams" in str(info.value)

    @pytest.mark.parametrize("data,key", [
        ({"preset": "discocyte", "out": "x", "colour": 1}, "colour"),
        ({"preset": "discocyte", "out": "x", "params": {"epsilonn": 0.1}}, "params.epsilonn"),
        ({"preset": "discocyte", "out": "x", "output": {"formats": ["png"]}}, "output.formats"),
        ({"preset": "discocyte", "out": "x", "output": {"diag_every": 0}}, "output.diag_every"),
        ({"preset": "nope", "out": "x"}, "preset"),
    ])
    def test_fail_closed(self, tmp_path, data, key):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(data))
        with pytest.raises(ConfigError) as info:
            parse_config(path)
        assert info.value.key == key

    def test_inline_scenario(self, tmp_path):
        data = {
            "out": str(tmp_path / "o"),
            "grid": 8,
            "params": {"epsilon": 0.2, "alpha": 0.1, "beta": 0.5},
            "init": {"center": [0.5, 0.5, 0.5], "divisors": [0.1, 0.1, 0.1], "R": 0.2},
            "integrator": {"dt": 1e-6},
        }
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(data))
        cfg = parse_config(path)
        assert cfg.preset is None and cfg.grid.shape == (8, 8, 8)

    def test_inline_missing_init(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"out": "o", "grid": 8, "params": {"epsilon": 0.2, "beta": 1},
                                        "integrator": {"dt": 1e-6}}))
        with pytest.raises(ConfigError) as info:
            parse_config(path)
        assert info.value.key.startswith("init.")

    def test_set_parsing(self, tmp_path):
        cfg = parse_config(preset_name="torus", overrides=["init.divisors=[0.1, 0.1, 0.2]", "params.M2=1e3"],
                           flags={"out": str(tmp_path)})
        assert cfg.init.divisors == (0.1, 0.1, 0.2) and cfg.params.M2 == 1000.0
        with pytest.raises(ConfigError):
            parse_config(preset_name="torus", overrides=["params"], flags={"out": str(tmp_path)})


class TestExecute:
    def test_artifacts(self, tmp_path):
        cfg = small_cfg(tmp_path / "run", **{"output.formats": ["raw", "vti"]})
        out = execute(cfg)
        assert out.status == EXIT_OK and out.steps == 60 and out.reason == "max_steps"
        run = tmp_path / "run"
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["status"] == "finished" and manifest["converged"] is False
        assert manifest["config"]["domain"]["nx"] == 16
        assert any(e["key"] == "domain.nx" for e in manifest["provenance"])
        rows = read_diagnostics(run / "diagnostics.csv")
        assert [r["step"] for r in rows] == [0, 10, 20, 30, 40, 50, 60]
        for r in rows:
            assert r["E_M"] == ((r["W"] + r["G"]) + r["T1"]) + r["T2"]
        header = (run / "diagnostics.csv").read_text().splitlines()[0]
        assert header == "step,time,E_M,W,G,T1,T2,V,A,dA,rate"
        snaps = sorted(p.name for p in (run / "snapshots").iterdir())
        assert "phi_00000030.raw" in snaps and "phi_00000060.vti" in snaps
        field, _ = read_vti(run / "snapshots" / "phi_00000060.vti")
        assert -1.1 <= field.values.min() and field.values.max() <= 1.1

    def test_manifest_reexecutes_identically(self, tmp_path):
        execute(small_cfg(tmp_path / "a", 30))
        again = load_run(tmp_path / "a")
        again.resolved["out"] = str(tmp_path / "b")
        from vesicle_pf.runner import validate
        execute(validate(again.resolved))
        assert (tmp_path / "a/diagnostics.csv").read_bytes() == (tmp_path / "b/diagnostics.csv").read_bytes()

    @pytest.mark.parametrize("cut", [40, 45])
    def test_resume_is_bit_identical(self, tmp_path, cut):
        execute(small_cfg(tmp_path / "full", 60))
        # stopping at 45 leaves an off-cadence closing row and checkpoint
        execute(small_cfg(tmp_path / "part", cut))
        out = execute(load_run(tmp_path / "part", max_steps=60), resume=True)
        assert out.status == EXIT_OK and out.steps == 60
        a, _ = read_raw(tmp_path / "full/checkpoint/checkpoint.raw")
        b, _ = read_raw(tmp_path / "part/checkpoint/checkpoint.raw")
        np.testing.assert_array_equal(a.values, b.values)
        assert (tmp_path / "full/diagnostics.csv").read_bytes() == (tmp_path / "part/diagnostics.csv").read_bytes()

    def test_inadmissible_dt_exit_code_before_stepping(self, tmp_path):
        cfg = small_cfg(tmp_path / "bad", **{"integrator.dt": 1e-3})
        out = execute(cfg)
        assert out.status == EXIT_SYMBOL
        manifest = json.loads((tmp_path / "bad/manifest.json").read_text())
        assert manifest["status"] == "failed" and manifest["reason"] == "NonPositiveSymbol"
        assert not (tmp_path / "bad/diagnostics.csv").exists()


class TestCli:
    def test_presets(self, capsys):
        assert main(["presets"]) == EXIT_OK
        first = capsys.readouterr().out
        records = json.loads(first)
        assert len(records) == 13
        cyl = next(r for r in records if r["name"] == "cylinder")
        assert (cyl["beta"], cyl["dA0"]) == (0.2390, 0.2426)
        main(["presets"])
        assert capsys.readouterr().out == first

    def test_run_and_resume(self, tmp_path, capsys):
        out = str(tmp_path / "r")
        code = main(["run", "--preset", "discocyte", "--out", out, "--max-steps", "20",
                     "--diag-every", "5", *SMALL])
        assert code == EXIT_OK
        assert main(["resume", out, "--max-steps", "30"]) == EXIT_OK
        rows = read_diagnostics(tmp_path / "r" / "diagnostics.csv")
        assert rows[-1]["step"] == 30

    def test_config_error_exit(self, tmp_path, capsys):
        assert main(["run", "--preset", "discocyte", "--out", str(tmp_path), "--set", "params.M1=-1"]) == EXIT_CONFIG
        assert "params.M1" in capsys.readouterr().err
        assert main(["run", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_symbol_exit(self, tmp_path):
        assert main(["run", "--preset", "discocyte", "--out", str(tmp_path), "--dt", "1e-3"]) == EXIT_SYMBOL

    def test_verify(self, tmp_path, capsys):
        report = tmp_path / "report.json"
        main(["verify", "--report", str(report)])
        data = json.loads(report.read_text())
        assert {c["name"] for c in data["checks"]} >= {"spectral plane waves", "variational derivative vs FD"}
        assert "PASS" in capsys.readouterr().out

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "vesicle_pf.cli", "presets"], capture_output=True, text=True)
        assert proc.returncode == 0 and len(json.loads(proc.stdout)) == 13
