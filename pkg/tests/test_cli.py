import json
from pathlib import Path

import numpy as np
import pytest

from whcpd import cli
from whcpd.config import ConfigError, load_config, validate
from whcpd.montecarlo import McConfig, run_sweep
from whcpd.multilinear import multiset_domain, scatter_symmetric
from whcpd.whmodel import WhParams, volterra_kernel

REF_MODEL = """\
[model]
w = [1.0, 0.538, 1.834, -2.259, 0.862]
h = [1.594, -6.538, -2.168]
p = 3
"""


def write_config(tmp_path, body, name="run.toml"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


@pytest.fixture
def ref_cfg(tmp_path):
    return write_config(tmp_path, REF_MODEL + """
[experiment]
snr_db = [10, 20, 30, 40, 50, 60]
trials = 2
seed = 3
estimators = [{ name = "cptoep" }, { name = "cptoep_qn" }]

[output]
dir = "%s"
""" % (tmp_path / "out").as_posix())


class TestConfig:
    def test_shipped_config(self):
        cfg = load_config(Path(__file__).parents[1] / "configs" / "reference.toml")
        assert cfg.params().M == 7
        assert [e.label for e in cfg.mc_config().estimators] == [
            "1-CALS", "5-CALS", "10-CALS", "CPTOEP", "CPTOEP-CALS", "CPTOEP-QN"]

    def test_defaults(self):
        cfg = validate({"model": {"w": [1.0], "h": [1.0]}})
        assert cfg.snr_db == [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
        assert cfg.trials == 100 and cfg.seed == 0 and cfg.params().p == 3

    @pytest.mark.parametrize("data,where", [
        ({"model": {"w": [1.0], "h": [1.0], "q": 1}}, "model"),
        ({"model": {"w": [1.0], "h": [1.0]}, "extra": {}}, "<root>"),
        ({"model": {"w": [1.0], "h": [1.0]}, "experiment": {"trials": 0}}, "experiment.trials"),
        ({"model": {"w": [1.0], "h": "x"}}, "model.h"),
        ({"model": {"w": [1.0], "h": [1.0]},
          "experiment": {"estimators": [{"name": "als"}]}}, "experiment.estimators.0.name"),
        ({"model": {"w": [0.0], "h": [1.0]}}, "model"),
    ])
    def test_rejections_name_location(self, data, where):
        with pytest.raises(ConfigError) as info:
            validate(data, "f.toml")
        assert f"f.toml: {where}" in str(info.value)

    def test_missing_model(self):
        with pytest.raises(ConfigError, match="model"):
            validate({})

    def test_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, "[model\n"))


class TestSynth:
    def test_reference_kernel(self, tmp_path, ref_cfg):
        out = tmp_path / "k.json"
        assert cli.main(["synth", "--config", ref_cfg, "--kernel", str(out)]) == 0
        data = json.loads(out.read_text())
        assert (data["M"], data["p"], data["order"]) == (7, 3, "lexicographic-multiset")
        assert len(data["values"]) == 84

    def test_round_trip(self, tmp_path, ref_cfg, ref_tensor):
        out = tmp_path / "k.json"
        cli.main(["synth", "--config", ref_cfg, "--kernel", str(out)])
        X, model = cli.read_kernel(out)
        np.testing.assert_array_equal(X, ref_tensor)
        assert model["w"][1] == 0.538

    def test_trivial(self, tmp_path):
        cfg = write_config(tmp_path, "[model]\nw = [1.0]\nh = [1.0]\np = 3\n")
        out = tmp_path / "k.json"
        assert cli.main(["synth", "--config", cfg, "--kernel", str(out)]) == 0
        assert json.loads(out.read_text())["values"] == [1.0]

    def test_default_location(self, tmp_path, ref_cfg):
        assert cli.main(["synth", "--config", ref_cfg, "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "kernel.json").exists()


class TestCrb:
    def test_reference_row(self, ref_cfg, capsys):
        assert cli.main(["crb", "--config", ref_cfg, "--format", "json"]) == 0
        rows = json.loads(capsys.readouterr().out)["rows"]
        expected = [-20.18, -30.18, -40.18, -50.18, -60.18, -70.18]
        assert all(abs(r["trace_db"] - e) < 0.05 for r, e in zip(rows, expected))

    def test_table_and_csv(self, ref_cfg, tmp_path, capsys):
        assert cli.main(["crb", "--config", ref_cfg]) == 0
        assert "-20.19" in capsys.readouterr().out
        assert cli.main(["crb", "--config", ref_cfg, "--format", "csv",
                         "--out", str(tmp_path / "c")]) == 0
        assert (tmp_path / "c" / "crb.csv").read_text().startswith("snr_db,trace_db,crb_w1")

    def test_order_one_refused(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "[model]\nw = [1.0, 0.5]\nh = [1.0, 2.0]\np = 1\n")
        assert cli.main(["crb", "--config", cfg]) == cli.EXIT_CONFIG
        assert "not identifiable" in capsys.readouterr().err

    def test_non_canonical_refused(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "[model]\nw = [2.0, 1.0]\nh = [1.0, 2.0]\n")
        assert cli.main(["crb", "--config", cfg]) == cli.EXIT_CONFIG
        assert "canonical" in capsys.readouterr().err

    def test_singular_fim(self, tmp_path, capsys):
        # every h tap is nonzero, but so small that the w columns of J vanish
        cfg = write_config(tmp_path, "[model]\nw = [1.0, 0.5]\nh = [1e-9, 1e-9]\np = 3\n")
        assert cli.main(["crb", "--config", cfg]) == cli.EXIT_NUMERIC
        assert "w=" in capsys.readouterr().err


class TestEstimate:
    def test_noiseless_cptoep(self, tmp_path, ref_cfg, capsys):
        kern = tmp_path / "k.json"
        cli.main(["synth", "--config", ref_cfg, "--kernel", str(kern)])
        capsys.readouterr()
        assert cli.main(["estimate", "--kernel", str(kern), "--method", "cptoep"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["eps_eta"] < 1e-12 and out["status"] == "converged"

    def test_missing_file(self, tmp_path):
        assert cli.main(["estimate", "--kernel", str(tmp_path / "nope.json")]) == cli.EXIT_IO

    def test_missing_config(self, tmp_path):
        assert cli.main(["crb", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_IO

    def test_bad_kernel_container(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"M": 2, "p": 2, "order": "lexicographic-multiset",
                                   "values": [1.0]}))
        assert cli.main(["estimate", "--kernel", str(bad), "--lw", "1"]) == cli.EXIT_CONFIG

    def test_lw_required_without_model(self, tmp_path):
        D = multiset_domain(3, 3)
        X = volterra_kernel(WhParams([1.0, 0.5], [1.0, -2.0], 1.0, 3))
        path = tmp_path / "k.json"
        path.write_text(json.dumps(cli.kernel_container(X)))
        assert cli.main(["estimate", "--kernel", str(path)]) == cli.EXIT_CONFIG
        assert cli.main(["estimate", "--kernel", str(path), "--lw", "2"]) == 0
        np.testing.assert_array_equal(cli.read_kernel(path)[0],
                                      scatter_symmetric(np.array(json.loads(path.read_text())["values"]), D))

    def test_numerical_failure(self, tmp_path, capsys):
        # a rank-deficient kernel (one nonzero output tap of two) defeats cptoep
        X = volterra_kernel(WhParams([1.0, 0.5], [1.0, 0.0], 1.0, 3))
        path = tmp_path / "k.json"
        path.write_text(json.dumps(cli.kernel_container(X)))
        assert cli.main(["estimate", "--kernel", str(path), "--lw", "2",
                         "--method", "cptoep"]) == cli.EXIT_NUMERIC
        assert json.loads(capsys.readouterr().out)["reason"] == "rank_deficient"

    def test_n_cals_reproducible(self, ref_cfg, capsys):
        argv = ["estimate", "--config", ref_cfg, "--method", "n_cals", "--starts", "10",
                "--snr-db", "30", "--seed", "4"]
        assert cli.main(argv) == 0
        first = json.loads(capsys.readouterr().out)
        assert cli.main(argv) == 0
        assert json.loads(capsys.readouterr().out)["eta_hat"] == first["eta_hat"]

    def test_needs_input(self):
        assert cli.main(["estimate"]) == cli.EXIT_CONFIG


class TestMc:
    def test_smoke_and_files(self, tmp_path, ref_cfg):
        out = tmp_path / "mc"
        assert cli.main(["mc", "--config", ref_cfg, "--trials", "1", "--out", str(out)]) == 0
        assert {p.name for p in out.iterdir()} == {"table.txt", "results.csv", "plot.csv",
                                                   "report.json"}

    def test_byte_identical(self, tmp_path, ref_cfg):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["mc", "--config", ref_cfg, "--out", str(a)])
        cli.main(["mc", "--config", ref_cfg, "--out", str(b)])
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()

    def test_format_override(self, tmp_path, ref_cfg):
        out = tmp_path / "j"
        cli.main(["mc", "--config", ref_cfg, "--trials", "1", "--format", "json",
                  "--out", str(out)])
        assert [p.name for p in out.iterdir()] == ["report.json"]

    def test_unknown_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path, REF_MODEL + "[experiment]\ntrails = 3\n")
        assert cli.main(["mc", "--config", cfg]) == cli.EXIT_CONFIG
        assert "experiment" in capsys.readouterr().err

    def test_unwritable_output(self, tmp_path, ref_cfg):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["mc", "--config", ref_cfg, "--trials", "1",
                         "--out", str(blocker / "sub")]) == cli.EXIT_IO

    def test_interrupt_gives_partial_report(self, ref_params):
        def stop(done, total):
            if done == 2:
                raise KeyboardInterrupt

        rep = run_sweep(McConfig(ref_params, [10.0], 5, ["cptoep"]), stop)
        assert rep.partial and rep.n_trials == 2
        assert len(rep.records) == 2
