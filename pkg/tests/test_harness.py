"""Tests for configuration parsing, the CLI, and run artifacts."""

import json
import os

import numpy as np
import pytest

from ipmsim.cli import main
from ipmsim.config import ConfigError, apply_overrides, parse_config
from ipmsim.stepper import checkpoint, run_simulation


class TestConfigValidation:
    def test_minimal_config_gets_defaults(self):
        cfg = parse_config({"grid": {"n_x": 16, "n_z": 12},
                            "profile": {"kind": "constant", "c": 1.0}})
        assert cfg.raw["stepper"]["scheme"] == "imex"
        assert cfg.raw["thresholds"]["a_frak"] > 0

    def test_low_regularity_index_rejected(self):
        with pytest.raises(ConfigError, match=r"stepper\.s_index"):
            parse_config({"stepper": {"s_index": 1.0}})

    def test_negative_depth_rejected(self):
        with pytest.raises(ConfigError, match=r"depth\.H"):
            parse_config({"depth": {"H": -1.0}})

    def test_odd_nx_rejected(self):
        with pytest.raises(ConfigError, match=r"grid\.n_x"):
            parse_config({"grid": {"n_x": 17}})

    def test_unknown_field_has_path(self):
        with pytest.raises(ConfigError, match="stepper.bogus"):
            parse_config({"stepper": {"bogus": 1}})

    def test_mu_range(self):
        with pytest.raises(ConfigError, match=r"picard\.mu"):
            parse_config({"picard": {"mu": 0.9}})

    def test_error_collects_multiple(self):
        with pytest.raises(ConfigError) as err:
            parse_config({"grid": {"n_x": 3}, "depth": {"H": 0.0}})
        assert len(err.value.errors) >= 2

    def test_config_hash_stable(self):
        a = parse_config({"grid": {"n_x": 16}})
        b = parse_config({"grid": {"n_x": 16}})
        c = parse_config({"grid": {"n_x": 32}})
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()


class TestOverrides:
    def test_dotted_paths_typed(self):
        data = apply_overrides({}, ["stepper.dt=0.002", "depth.mode=infinite",
                                    "picard.enabled=true"])
        assert data["stepper"]["dt"] == 0.002
        assert data["depth"]["mode"] == "infinite"
        assert data["picard"]["enabled"] is True

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["stepper.dt"])

    def test_cli_style_roundtrip(self):
        cfg = parse_config({}, ["grid.n_x=16", "grid.n_z=12"])
        assert cfg.raw["grid"]["n_x"] == 16


class TestBuildInitial:
    def test_mode_list(self):
        cfg = parse_config({
            "grid": {"n_x": 32, "n_z": 12},
            "initial": {"f_constant": 0.1, "f_modes": {"2": [0.05, 0.5]}},
        })
        grid = cfg.build_grid()
        f, g = cfg.build_initial(grid)
        x = grid.x_grid.x
        expect = 0.1 + 0.05 * np.cos(2 * x + 0.5)
        assert np.allclose(f.values, expect, atol=1e-14)
        assert g.max_abs() == 0.0

    def test_gaussian_density(self):
        cfg = parse_config({
            "grid": {"n_x": 32, "n_z": 16},
            "initial": {"g_kind": "gaussian", "g_amplitude": 0.02,
                        "g_center": [np.pi, -0.5], "g_width": [0.5, 0.2]},
        })
        grid = cfg.build_grid()
        _, g = cfg.build_initial(grid)
        assert g.max_abs() == pytest.approx(0.02, rel=0.05)


class TestRunArtifacts:
    def _quick_config(self):
        return {
            "grid": {"n_x": 16, "n_z": 12},
            "initial": {"f_modes": {"1": [0.01, 0.0]}},
            "stepper": {"dt": 0.01, "t_end": 0.05},
            "thresholds": {"a_frak": 1e-3},
            "output": {"interval": 0.01},
        }

    def test_run_writes_all_artifacts(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(self._quick_config()))
        out = tmp_path / "out"
        code = main(["run", "--config", str(cfg_path), "--out", str(out),
                     "--quiet"])
        assert code == 0
        assert (out / "config.echo.json").exists()
        assert (out / "diagnostics.csv").exists()
        assert (out / "summary.json").exists()
        header = (out / "diagnostics.csv").read_text().splitlines()[0]
        assert header == ("t,Hs_f,Hs_g,taylor_min,separation_min,mean_f,"
                          "total_density,dt,step_status")

    def test_determinism_bit_identical_csv(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(self._quick_config()))
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["run", "--config", str(cfg_path), "--out", str(out),
                         "--quiet"]) == 0
            outs.append((out / "diagnostics.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"grid": {"n_x": 3}}))
        code = main(["run", "--config", str(cfg_path), "--quiet"])
        assert code == 2
        assert "grid.n_x" in capsys.readouterr().err

    def test_validate_config_echo(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(self._quick_config()))
        assert main(["validate-config", "--config", str(cfg_path)]) == 0
        echoed = json.loads(capsys.readouterr().out)
        assert echoed["grid"]["n_x"] == 16

    def test_describe_checkpoint(self, tmp_path, capsys):
        cfg = parse_config(self._quick_config())
        ctx, control, f0, g0, t_end, interval = cfg.build_context()
        res = run_simulation(ctx, control, f0, g0, t_end)
        blob = checkpoint(res.state, cfg.config_hash(), s_index=ctx.s_index)
        path = tmp_path / "state.ckpt"
        path.write_bytes(blob)
        assert main(["describe", str(path)]) == 0
        text = capsys.readouterr().out
        assert "taylor_min" in text
        assert cfg.config_hash()[:12] in text or "config hash" in text

    def test_describe_corrupt_checkpoint(self, tmp_path, capsys):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all, nope" * 4)
        assert main(["describe", str(path)]) == 3
        assert "bad checkpoint" in capsys.readouterr().err

    def test_preset_unknown_rejected(self):
        with pytest.raises(SystemExit):
            main(["preset", "not-a-preset"])


class TestPresetSmoke:
    def test_dn_flat_writes_summary(self, tmp_path):
        code = main(["preset", "dn-flat", "--out", str(tmp_path / "dn"),
                     "--quiet"])
        assert code == 0
        summary = json.loads((tmp_path / "dn" / "summary.json").read_text())
        crit = summary["criteria"]["flat_dn_operator"]
        assert crit["pass"] is True
        assert crit["max_rel_error"] <= 1e-4

    def test_thread_cap_respected(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IPM_SIM_THREADS", "1")
        code = main(["preset", "dn-flat", "--out", str(tmp_path / "dn1"),
                     "--quiet"])
        assert code == 0
