import re

import numpy as np
import pytest

from mcem.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, KEYS, build_parser, main, parse_config
from mcem.diagnostics import trace_read
from mcem.exceptions import ConfigError

EM_CFG = "model = lmm\nalgorithm = em\nseed = 42\n"


def _cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _help(*argv, capsys):
    assert main([*argv, "--help"]) == EXIT_OK
    return capsys.readouterr().out


class TestParseConfig:
    def test_minimal(self):
        cfg = parse_config(EM_CFG)
        assert cfg.model == "lmm" and cfg.algorithm == "em" and cfg.seed == 42
        assert cfg.max_iter == 500 and cfg.delta == 1e-3 and cfg.epsilon == 1e-6

    def test_comments_and_blanks(self):
        cfg = parse_config("# header\n\nmodel = lmm   # trailing\n  m0=50\n")
        assert cfg.m0 == 50

    def test_alpha_rejected(self):
        with pytest.raises(ConfigError, match=r"line 3.*alpha"):
            parse_config("model = lmm\nschedule = polynomial\nalpha = 0.5\n")

    def test_duplicate_names_both_lines(self):
        with pytest.raises(ConfigError, match=r"line 3.*seed.*line 1"):
            parse_config("seed = 1\nmodel = lmm\nseed = 2\n")

    @pytest.mark.parametrize("text,pattern", [
        ("model = lmm\nfoo = 1\n", r"line 2.*foo"),
        ("model = lmm\nm0 = many\n", r"line 2.*m0"),
        ("model = lmm\njust words\n", r"line 2"),
        ("algorithm = em\n", r"model"),
        ("model = lmm\nalgorithm = mcem\n", r"seed"),
        ("model = glmm\nalgorithm = em\n", r"line 2.*algorithm"),
        ("model = lmm\ntheta0 = 1,2\n", r"line 2.*theta0"),
        ("model = lmm\nmax_iter = 0\n", r"line 2.*max_iter"),
    ])
    def test_errors_name_key_and_line(self, text, pattern):
        with pytest.raises(ConfigError, match=pattern):
            parse_config(text)

    def test_overrides(self):
        cfg = parse_config(EM_CFG, {"seed": 7, "output": "x.csv"})
        assert cfg.seed == 7 and cfg.output == "x.csv"


class TestHelp:
    def test_every_key_documented_and_accepted(self, capsys):
        text = _help("run", capsys=capsys)
        documented = re.findall(r"^  (\w+)\s+default ", text, flags=re.M)
        assert documented == list(KEYS)
        for key in documented:
            default = KEYS[key][1]
            if default is None or key == "model":
                continue
            value = ",".join(map(str, default)) if isinstance(default, tuple) else str(default)
            parse_config(f"model = lmm\n{key} = {value}\n")

    def test_undocumented_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("model = lmm\nverbose = 1\n")

    def test_experiment_help_lists_schemas(self, capsys):
        text = _help("experiment", capsys=capsys)
        assert "m,runs,T0,epsilon,hits,fraction" in text
        assert "iterations,median_rate,cv,spectral_radius" in text

    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK

    def test_parser_builds(self):
        assert build_parser().prog == "mcem"


class TestRun:
    def test_bulls_em(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        assert main(["run", "--config", _cfg(tmp_path, EM_CFG), "--out", str(out)]) == EXIT_OK
        line = capsys.readouterr().out
        assert "mu=53.318" in line and "converged=" in line
        tr = trace_read(out)
        assert np.allclose(tr.final.values, [53.318, 54.822, 249.223], atol=5e-3)

    def test_malformed_config(self, tmp_path):
        assert main(["run", "--config", _cfg(tmp_path, "model lmm\n")]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.cfg")]) == EXIT_CONFIG
        assert main(["run"]) == EXIT_CONFIG

    def test_bad_flag(self):
        assert main(["run", "--bogus"]) == EXIT_CONFIG
        assert main([]) == EXIT_CONFIG

    def test_em_without_convergence_fails(self, tmp_path):
        cfg = _cfg(tmp_path, EM_CFG + f"max_iter = 3\noutput = {tmp_path / 't.csv'}\n")
        assert main(["run", "--config", cfg]) == EXIT_FAILURE

    def test_seed_flag_overrides(self, tmp_path):
        text = f"model = lmm\nalgorithm = mcem\nm0 = 200\nmax_iter = 5\n"
        cfg = _cfg(tmp_path, text)
        assert main(["run", "--config", cfg]) == EXIT_CONFIG
        assert main(["run", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "a.csv")]) == EXIT_OK

    @pytest.mark.parametrize("algorithm", ["mcem", "stable-mcem", "mcem-adaptive", "em-gradient"])
    def test_byte_identical(self, tmp_path, algorithm):
        text = (f"model = lmm\nalgorithm = {algorithm}\nseed = 11\nm0 = 300\n"
                "schedule = polynomial\nmax_iter = 8\nr0 = 0.2\n")
        cfg = _cfg(tmp_path, text)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        codes = {main(["run", "--config", cfg, "--out", str(p)]) for p in (a, b)}
        assert codes <= {EXIT_OK, EXIT_FAILURE}
        assert a.read_bytes() == b.read_bytes()

    def test_dataset_path(self, tmp_path):
        data = tmp_path / "bulls.csv"
        assert main(["gen-data", "--model", "lmm", "--out", str(data)]) == EXIT_OK
        cfg = _cfg(tmp_path, EM_CFG + f"dataset = {data}\n")
        out = tmp_path / "t.csv"
        assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert main(["run", "--config", cfg.replace("run.cfg", "x"), "--out", str(out)]) == EXIT_CONFIG

    def test_glmm_figure_setup(self, tmp_path, capsys):
        text = ("model = glmm\nalgorithm = mcem\ntheta0 = 2,1\nm0 = 10000\nmax_iter = 35\n"
                "epsilon = 1e-300\nseed = 5\n")
        out = tmp_path / "g.csv"
        assert main(["run", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "t,m,p,loglik,beta,sigma2" and len(lines) == 36


class TestExperiment:
    def test_rate(self, tmp_path):
        out = tmp_path / "r.csv"
        assert main(["experiment", "rate", "--config", _cfg(tmp_path, EM_CFG), "--out", str(out)]) == EXIT_OK
        header, row = out.read_text().splitlines()
        assert header == "iterations,median_rate,cv,spectral_radius"
        _, rate, cv, rho = map(float, row.split(","))
        assert 0.01 < rate < 0.999 and cv < 0.1 and abs(rate - rho) < 0.1 * rho

    def test_hit_prob_shape_and_determinism(self, tmp_path):
        text = EM_CFG + "hit_ms = 50,500\nhit_runs = 4\nhit_t0 = 5\n"
        cfg = _cfg(tmp_path, text)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert main(["experiment", "hit-prob", "--config", cfg, "--out", str(p)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text().splitlines()
        assert lines[0] == "m,runs,T0,epsilon,hits,fraction" and len(lines) == 3

    def test_error_scaling(self, tmp_path):
        text = EM_CFG + "scaling_ms = 100,1000\nscaling_replicates = 3\n"
        out = tmp_path / "s.csv"
        assert main(["experiment", "mcem-error-scaling", "--config", _cfg(tmp_path, text),
                     "--out", str(out)]) == EXIT_OK
        assert out.read_text().splitlines()[0] == "m,replicates,dev_mu,dev_sigma_u2,dev_sigma_e2"

    def test_unknown_kind(self, tmp_path):
        assert main(["experiment", "bogus", "--config", _cfg(tmp_path, EM_CFG)]) == EXIT_CONFIG

    def test_rate_needs_lmm(self, tmp_path):
        cfg = _cfg(tmp_path, "model = glmm\nalgorithm = mcem\nseed = 1\n")
        assert main(["experiment", "rate", "--config", cfg]) == EXIT_CONFIG


class TestGenDataAndPlot:
    def test_gen_data_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert main(["gen-data", "--seed", "27", "--out", str(p)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text().splitlines()
        assert lines[0] == "group,x,y" and len(lines) == 151

    def test_gen_data_needs_seed_and_out(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "a.csv")]) == EXIT_CONFIG
        assert main(["gen-data", "--seed", "1"]) == EXIT_CONFIG
        assert main(["gen-data", "--seed", "1", "--sigma2", "0", "--out", str(tmp_path / "a.csv")]) == EXIT_CONFIG

    def test_plot_script(self, tmp_path, capsys):
        assert main(["plot-script", "--trace", "t.csv"]) == EXIT_OK
        compile(capsys.readouterr().out, "plot.py", "exec")
        assert main(["plot-script", "--trace", "t.csv", "--out", str(tmp_path / "p.py")]) == EXIT_OK
        assert (tmp_path / "p.py").exists()
        assert main(["plot-script"]) == EXIT_CONFIG
