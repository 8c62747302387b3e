import math

import numpy as np
import pytest

from affinestop.cli import ConfigError, RunConfig, main, parse_config, run

GBM_CONFIG = """\
# flagship diffusion, a hair inside the psi(1) < r screen
model.r = 1.0
model.sigma = 1.4142135
payoff.alpha = 1
payoff.c = 1
solver = closed
"""

LATTICE_CONFIG = """\
model.r = 1.0
model.sigma = 1.4142135
payoff.alpha = 1
payoff.c = 1
solver = lattice
grid.v_min = 1e-4
grid.v_max = 8.0
grid.n_states = 300
grid.dt = 0.01
"""

MC_CONFIG = """\
model.r = 1.0
model.sigma = 1.4142135
payoff.alpha = 1
payoff.c = 1
solver = mc
grid.v_min = 0.05
grid.v_max = 4.0
mc.n_paths = 2000
mc.t_max = 5.0
mc.dt = 0.01
mc.seed = 11
"""

ORACLE_CONFIG = """\
model.r = 0.05
model.sigma = 0.3
payoff.alpha = 1
payoff.c = 1
solver = oracle
oracle.depth = 5
grid.dt = 0.1
"""


class TestParseConfig:
    def test_minimal_valid(self):
        cfg = parse_config(GBM_CONFIG)
        assert cfg.solver == "closed"
        assert cfg.model.sigma == 1.4142135
        assert cfg.payoff.alpha == 1.0
        assert cfg.grid_n_states == 2000  # default
        assert cfg.output == "out"

    def test_negative_rate_rejected(self):
        with pytest.raises(ConfigError, match="r must be > 0"):
            parse_config("model.r = -1\npayoff.alpha = 1\npayoff.c = 1\nsolver = closed")

    def test_unknown_key_with_line_number(self):
        with pytest.raises(ConfigError, match="line 1: unknown key 'model.rr'"):
            parse_config("model.rr = 1")

    def test_duplicate_key(self):
        text = "model.r = 1\nmodel.r = 2\npayoff.alpha = 1\npayoff.c = 1\nsolver = closed"
        with pytest.raises(ConfigError, match="line 2: duplicate"):
            parse_config(text)

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="model.r: required"):
            parse_config("payoff.alpha = 1\npayoff.c = 1\nsolver = closed")

    def test_bad_number_and_bad_int(self):
        base = "model.r = 1\npayoff.alpha = 1\npayoff.c = 1\nsolver = lattice\n"
        with pytest.raises(ConfigError, match="not a number"):
            parse_config(base + "grid.dt = fast")
        with pytest.raises(ConfigError, match="must be an integer"):
            parse_config(base + "grid.n_states = 10.5")

    def test_unknown_solver(self):
        with pytest.raises(ConfigError, match="solver: must be one of"):
            parse_config("model.r = 1\npayoff.alpha = 1\npayoff.c = 1\nsolver = pde")

    def test_comments_and_blank_lines(self):
        cfg = parse_config("\n# comment\nmodel.r = 2.0  # trailing\n"
                           "payoff.alpha = 1\npayoff.c = 1\nsolver = closed\n")
        assert cfg.model.r == 2.0


class TestRunClosed:
    def test_flagship_exit_zero_and_summary(self, tmp_path):
        cfg = parse_config(GBM_CONFIG)
        out = tmp_path / "o"
        assert run(cfg, out_dir=str(out)) == 0
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "b_star,value_at_v0,solver,residual_or_stderr"
        b_star, value, solver, resid = summary[1].split(",")
        assert solver == "closed"
        assert abs(float(b_star) - 0.5) < 1e-6
        assert abs(float(value) - 0.25) < 1e-6
        report = (out / "report.txt").read_text()
        assert "result=PASS" in report
        assert "check=convexity status=PASS" in report
        assert (out / "value_function.csv").exists()
        assert (out / "policy.csv").read_text().startswith(
            "b_star,value_at_v,stderr,n_paths,bias_bound")

    def test_byte_identical_reruns(self, tmp_path):
        cfg = parse_config(GBM_CONFIG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(cfg, out_dir=str(out1)) == 0
        assert run(cfg, out_dir=str(out2)) == 0
        for name in ("value_function.csv", "summary.csv", "policy.csv", "report.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestHypothesisScreen:
    def test_boundary_refused_with_exit_2(self, tmp_path):
        # exact float boundary: psi(1) = 0.5 + 0.5 = 1.0 == r
        text = ("model.r = 1.0\nmodel.mu = 0.5\nmodel.sigma = 1.0\n"
                "payoff.alpha = 1\npayoff.c = 1\nsolver = closed")
        assert run(parse_config(text), out_dir=str(tmp_path / "o")) == 2
        assert not (tmp_path / "o" / "summary.csv").exists()

    def test_sqrt_two_sigma_refused(self, tmp_path):
        # sigma = sqrt(2) in floats puts psi(1) a hair above r = 1
        text = (f"model.r = 1.0\nmodel.sigma = {math.sqrt(2.0)!r}\n"
                "payoff.alpha = 1\npayoff.c = 1\nsolver = closed")
        assert run(parse_config(text), out_dir=str(tmp_path / "o")) == 2

    def test_lowering_r_flips_acceptance_to_refusal(self, tmp_path):
        cfg_ok = parse_config(GBM_CONFIG)
        assert run(cfg_ok, out_dir=str(tmp_path / "ok")) == 0
        lowered = GBM_CONFIG.replace("model.r = 1.0", "model.r = 0.9")
        assert run(parse_config(lowered), out_dir=str(tmp_path / "no")) == 2

    def test_force_proceeds(self, tmp_path):
        text = ("model.r = 1.0\nmodel.mu = 0.5\nmodel.sigma = 1.0\n"
                "payoff.alpha = 1\npayoff.c = 1\nsolver = closed")
        with pytest.warns(UserWarning):
            code = run(parse_config(text), force=True, out_dir=str(tmp_path / "o"))
        assert code == 0
        report = (tmp_path / "o" / "report.txt").read_text()
        assert "forced past the screen" in report


class TestRunLattice:
    def test_pipeline(self, tmp_path):
        cfg = parse_config(LATTICE_CONFIG)
        out = tmp_path / "o"
        assert run(cfg, out_dir=str(out)) == 0
        report = (out / "report.txt").read_text()
        assert "check=put_equivalence status=PASS" in report
        assert "check=limit_at_zero status=PASS" in report
        assert "check=threshold_extraction status=PASS" in report
        summary = (out / "summary.csv").read_text().splitlines()[1].split(",")
        assert summary[2] == "lattice"
        # coarse grid and step, but the threshold must land near 0.5
        assert 0.4 < float(summary[0]) < 0.65
        assert abs(float(summary[1]) - 0.25) < 0.02

    def test_v0_outside_grid_is_usage_error(self, tmp_path):
        cfg = parse_config(LATTICE_CONFIG + "v0 = 100.0\n")
        assert run(cfg, out_dir=str(tmp_path / "o")) == 3


class TestRunMc:
    def test_pipeline_and_determinism(self, tmp_path):
        cfg = parse_config(MC_CONFIG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(cfg, out_dir=str(out1)) == 0
        assert run(cfg, out_dir=str(out2)) == 0
        for name in ("value_function.csv", "summary.csv", "policy.csv", "report.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        b_star, value, solver, stderr = (
            (out1 / "summary.csv").read_text().splitlines()[1].split(","))
        assert solver == "mc"
        assert 0.3 < float(b_star) < 0.7
        assert abs(float(value) - 0.25) < 0.05
        assert float(stderr) > 0.0

    def test_different_seed_changes_output(self, tmp_path):
        cfg = parse_config(MC_CONFIG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        from dataclasses import replace
        assert run(cfg, out_dir=str(out1)) == 0
        assert run(replace(cfg, mc_seed=12), out_dir=str(out2)) == 0
        assert ((out1 / "summary.csv").read_bytes()
                != (out2 / "summary.csv").read_bytes())


class TestRunOracle:
    def test_pipeline(self, tmp_path):
        cfg = parse_config(ORACLE_CONFIG)
        out = tmp_path / "o"
        assert run(cfg, out_dir=str(out)) == 0
        report = (out / "report.txt").read_text()
        assert "check=exhaustive_equals_backward status=PASS" in report
        assert "check=smallest_rule_first_contact status=PASS" in report
        assert "check=threshold_form_downset status=PASS" in report
        thresholds = (out / "thresholds.csv").read_text().splitlines()
        assert thresholds[0] == "level,threshold"
        assert len(thresholds) == 7  # header + levels 0..5

    def test_depth_six_hits_guard(self, tmp_path):
        cfg = parse_config(ORACLE_CONFIG.replace("oracle.depth = 5",
                                                 "oracle.depth = 6"))
        assert run(cfg, out_dir=str(tmp_path / "o")) == 3


class TestMainEntry:
    def test_run_subcommand(self, tmp_path):
        cfg_path = tmp_path / "cfg"
        cfg_path.write_text(GBM_CONFIG)
        out = tmp_path / "o"
        code = main(["run", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        assert (out / "summary.csv").exists()

    def test_solve_subcommand_overrides_solver(self, tmp_path):
        cfg_path = tmp_path / "cfg"
        cfg_path.write_text(GBM_CONFIG.replace("solver = closed", "solver = lattice"))
        out = tmp_path / "o"
        assert main(["solve", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert "closed" in (out / "summary.csv").read_text()

    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent")]) == 3

    def test_bad_flag_is_usage_error(self):
        assert main(["run", "--bogus"]) == 3

    def test_seed_override(self, tmp_path):
        cfg_path = tmp_path / "cfg"
        cfg_path.write_text(MC_CONFIG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["mc", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert main(["mc", "--config", str(cfg_path), "--out", str(out2),
                     "--seed", "999"]) == 0
        assert ((out1 / "summary.csv").read_bytes()
                != (out2 / "summary.csv").read_bytes())

    def test_verify_subcommand(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg"
        cfg_path.write_text(GBM_CONFIG)
        out = tmp_path / "o"
        assert main(["solve", "--config", str(cfg_path), "--out", str(out)]) == 0
        csv_path = out / "value_function.csv"
        assert main(["verify", str(csv_path), "--alpha", "1", "--c", "1"]) == 0
        assert "result=PASS" in capsys.readouterr().out

        broken = tmp_path / "broken.csv"
        lines = csv_path.read_text().splitlines()
        v0, s0, rest = lines[1].split(",", 2)
        lines[1] = ",".join([v0, repr(float(s0) + 0.5), rest])
        broken.write_text("\n".join(lines) + "\n")
        assert main(["verify", str(broken), "--alpha", "1", "--c", "1"]) == 1
        assert "status=FAIL" in capsys.readouterr().out

    def test_verify_missing_columns(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(["verify", str(bad), "--alpha", "1", "--c", "1"]) == 3
