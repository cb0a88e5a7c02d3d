"""Config grammar, validation, and the scenario CLI."""

import hashlib
import json
import math
from pathlib import Path

import pytest

from nsfarfield import cli
from nsfarfield.config import ConfigError, parse_config

QUICK = """\
[scenario]
name = quick
dimension = 2

[grid]
half_width = 16.0
points = 64

[time]
horizon = 0.5
slices = 16

[force]
kind = gaussian_bump
amplitude = 0.002 0.0
width = 1.0
time_profile = smooth_bump
time_on = 0.0
time_off = 0.25

[checks]
run = lemlog
window_radii = 16 24 32 48 64

[output]
directory = out
"""


class TestParseConfig:
    def test_minimal_config_fills_defaults(self):
        cfg = parse_config("[scenario]\ndimension = 2\n")
        assert cfg.points == 256
        assert cfg.half_width == 32.0
        assert cfg.tolerance == 1e-10
        assert cfg.sweep_pairs == ((0.0, math.inf), (1.0, math.inf), (0.0, 2.0))

    def test_truncation_guard(self):
        with pytest.raises(ConfigError, match="half_width/8"):
            parse_config("[grid]\nhalf_width = 16.0\n[time]\nhorizon = 8.0\n")

    def test_regime_tagging(self):
        with pytest.raises(ConfigError, match="divergence_pairs"):
            parse_config("[checks]\nsweep_pairs = 1:1\n")
        with pytest.raises(ConfigError, match="sweep_pairs"):
            parse_config("[checks]\ndivergence_pairs = 0:4\n")

    def test_collects_all_violations(self):
        bad = "[scenario]\ndimension = 7\n[grid]\npoints = 100\n[solver]\ntolerance = -1\n"
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert len(err.value.problems) == 3

    def test_syntax_errors_carry_line_numbers(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("[scenario]\nthis line has no equals sign\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[nonsense]\nkey = 1\n")
        with pytest.raises(ConfigError, match="outside a"):
            parse_config("key = value\n")

    def test_unknown_key_and_check(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("[scenario]\nflavor = vanilla\n")
        with pytest.raises(ConfigError, match="unknown check"):
            parse_config("[checks]\nrun = profile suchcheck\n")

    def test_window_radii_validity_region(self):
        text = "[checks]\nrun = window\nwindow_time = 4.0\nwindow_radii = 5 48 64 96 128\n"
        with pytest.raises(ConfigError, match="e sqrt"):
            parse_config(text)

    def test_hash_source_excludes_output(self):
        c1 = parse_config(QUICK)
        c2 = parse_config(QUICK.replace("directory = out", "directory = elsewhere"))
        assert c1.hash_source() == c2.hash_source()


class TestScenarioBuild:
    def test_gaussian_force(self):
        cfg = parse_config(QUICK)
        grid, data, force, opts, digest = cli.build_scenario(cfg)
        assert grid.n == 64 and force.kind == "separable"
        assert len(force.terms) == 1
        assert len(digest) == 16

    def test_dipole_pair_is_mean_free(self):
        from nsfarfield.forcing import first_moment, force_integral
        import numpy as np

        text = QUICK.replace("kind = gaussian_bump", "kind = dipole_pair")
        cfg = parse_config(text)
        _, _, force, _, _ = cli.build_scenario(cfg)
        assert len(force.terms) == 2
        assert np.linalg.norm(force_integral(force, 10.0)) < 1e-15
        assert np.abs(first_moment(force, 10.0)).max() > 0

    def test_quadrupole_kills_first_moment(self):
        from nsfarfield.forcing import first_moment, force_integral
        import numpy as np

        text = QUICK.replace("kind = gaussian_bump", "kind = quadrupole")
        cfg = parse_config(text)
        _, _, force, _, _ = cli.build_scenario(cfg)
        assert np.linalg.norm(force_integral(force, 10.0)) < 1e-15
        assert np.abs(first_moment(force, 10.0)).max() < 1e-15


class TestCli:
    def test_kernel_check(self, tmp_path):
        code = cli.main(["kernel-check", "--out", str(tmp_path)])
        assert code == cli.EXIT_PASS
        assert (tmp_path / "kernel_envelopes_d2.csv").exists()
        payload = json.loads((tmp_path / "kernel_check_d2.json").read_text())
        assert payload["passed"]
        assert 0 < payload["oseen_envelope_constant"] < 10

    def test_config_error_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[grid]\npoints = 100\n")
        assert cli.main(["simulate", "--config", str(cfg)]) == cli.EXIT_CONFIG_ERROR

    def test_missing_config(self):
        assert cli.main(["simulate", "--config", "/nonexistent.cfg"]) == cli.EXIT_CONFIG_ERROR

    def test_unknown_only_check(self, tmp_path):
        cfg = tmp_path / "quick.cfg"
        cfg.write_text(QUICK)
        code = cli.main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o"),
                         "--only", "nonsense"])
        assert code == cli.EXIT_CONFIG_ERROR

    def test_zero_scenario_passes(self, tmp_path):
        text = QUICK.replace("kind = gaussian_bump", "kind = zero")
        text = text.replace("run = lemlog", "run = lemlog profile")
        text += "\n[checks]\nprofile_radii = 8 11 16 23 32\nprofile_time = 0.5\n"
        cfg = tmp_path / "zero.cfg"
        cfg.write_text(text)
        out = tmp_path / "out"
        code = cli.main(["all", "--config", str(cfg), "--out", str(out)])
        assert code == cli.EXIT_PASS
        reports = list(out.glob("report_*.json"))
        assert len(reports) == 1
        verdict = json.loads(reports[0].read_text())
        assert verdict["overall"] == "pass"

    def test_deterministic_rerun(self, tmp_path):
        cfg = tmp_path / "quick.cfg"
        cfg.write_text(QUICK)

        def run(out):
            code = cli.main(["all", "--config", str(cfg), "--out", str(out)])
            assert code == cli.EXIT_PASS
            return {
                p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(Path(out).rglob("*"))
                if p.is_file() and p.name != "run.log"
            }

        h1 = run(tmp_path / "o1")
        h2 = run(tmp_path / "o2")
        assert h1 == h2

    def test_env_override(self, tmp_path, monkeypatch):
        cfg = tmp_path / "quick.cfg"
        cfg.write_text(QUICK)
        out = tmp_path / "envout"
        monkeypatch.setenv("NSFF_CONFIG", str(cfg))
        monkeypatch.setenv("NSFF_OUT", str(out))
        code = cli.main(["verify"])
        assert code == cli.EXIT_PASS
        assert list(out.glob("lemlog_*.json"))

    def test_report_without_verify(self, tmp_path):
        cfg = tmp_path / "quick.cfg"
        cfg.write_text(QUICK)
        code = cli.main(["report", "--config", str(cfg), "--out", str(tmp_path / "empty")])
        assert code == cli.EXIT_CONFIG_ERROR

    def test_verify_runs_only_selected(self, tmp_path):
        cfg = tmp_path / "quick.cfg"
        cfg.write_text(QUICK)
        out = tmp_path / "sel"
        code = cli.main(["verify", "--config", str(cfg), "--out", str(out),
                         "--only", "lemlog"])
        assert code == cli.EXIT_PASS
        summary = json.loads(next(out.glob("verify_*.json")).read_text())
        assert list(summary["checks"]) == ["lemlog"]
