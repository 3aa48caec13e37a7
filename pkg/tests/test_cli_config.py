import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from homcorr import cli
from homcorr.config import ConfigError, DEFAULTS, RunConfig, defaults_help, load_config, parse_config, parse_stack

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class TestConfig:
    def test_defaults_validate(self):
        RunConfig().validate()
        assert parse_config("").values == RunConfig().values

    def test_shipped_configs(self):
        assert load_config(CONFIGS / "example.ini").space == "s2"
        cfg = load_config(CONFIGS / "permtest.ini")
        assert cfg.space == "s2xr" and cfg.dilated_spec().stack.receptive_field == 3

    @pytest.mark.parametrize("text", [
        "[model]\nwidth = 3\n",
        "[extras]\nx = 1\n",
        "[model]\nspace = so3\n",
        "[model]\nbandwidths = 4 3\nchannels = 2\n",
        "[model]\nkernel_bandwidths = 12\n",
        "[model]\norder = 3\n",
        "[model]\nlearn_mix = maybe\n",
        "[train]\nlr = -1\n",
        "[permtest]\nn_perm = 10\n",
        "[model]\nspace = s2xr\n[dilated]\nstack = 2:1\n",
        "[model]\nspace = s2xr\n[dilated]\nstride = 4\n",
        "not an ini file",
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_model_spec_chain(self):
        cfg = parse_config("[model]\ninput_bandwidth = 6\nbandwidths = 4 2\nchannels = 3 2\n"
                           "batchnorm = true\n")
        kinds = [l.kind for l in cfg.model_spec().layers]
        assert kinds == ["corr2_s2", "batchnorm", "relu", "corr2_so3", "batchnorm", "relu",
                         "invariant", "fc"]

    def test_stack_parser(self):
        assert parse_stack("5:1:8, 5:2:8,5:4:2").layers == ((5, 1, 8), (5, 2, 8), (5, 4, 2))
        with pytest.raises(ConfigError):
            parse_stack(" , ")

    def test_help_lists_every_default(self):
        text = defaults_help()
        for section, kv in DEFAULTS.items():
            assert f"[{section}]" in text
            for key in kv:
                assert f"{key} = " in text


class TestVerify:
    def test_transforms_suite(self, capsys):
        assert cli.main(["verify", "--suite", "transforms", "--seed", "1"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] and report["first_failure"] is None
        assert all(p["max_error"] < 1e-9 for p in report["properties"])

    def test_byte_identical_reports(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert cli.main(["verify", "--suite", "dilated", "--report", str(a)]) == 0
        assert cli.main(["verify", "--suite", "dilated", "--report", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_injected_fault_fails(self, tmp_path, capsys):
        path = tmp_path / "r.json"
        code = cli.main(["verify", "--suite", "equivariance", "--inject-fault", "wigner_sign",
                         "--report", str(path)])
        assert code == 1
        assert "FAIL equivariance." in capsys.readouterr().err
        report = json.loads(path.read_text())
        assert report["first_failure"] is not None
        # the fault is removed afterwards
        assert cli.main(["verify", "--suite", "equivariance", "--report", str(path)]) == 0


class TestPipeline:
    def test_gen_train_eval(self, tmp_path, capsys):
        train_path, test_path = tmp_path / "train.hdsb", tmp_path / "test.hdsb"
        assert cli.main(["gen-data", "--out", str(train_path), "--bandwidth", "4",
                         "--per-class", "6", "--seed", "1"]) == 0
        assert cli.main(["gen-data", "--out", str(test_path), "--bandwidth", "4",
                         "--per-class", "3", "--seed", "2"]) == 0
        cfg = tmp_path / "c.ini"
        cfg.write_text("[model]\ninput_bandwidth = 4\nbandwidths = 3\nchannels = 2\n"
                       "[train]\nepochs = 2\nbatch_size = 8\n")
        logs = []
        for run in range(2):
            log = tmp_path / f"log{run}.jsonl"
            ck = tmp_path / f"m{run}.hckp"
            assert cli.main(["train", "--config", str(cfg), "--dataset", str(train_path),
                             "--checkpoint", str(ck), "--log", str(log)]) == 0
            logs.append(log.read_bytes())
        assert logs[0] == logs[1] and len(logs[0].splitlines()) == 2
        assert (tmp_path / "m0.hckp").read_bytes() == (tmp_path / "m1.hckp").read_bytes()
        capsys.readouterr()
        for regime in ("NR", "R"):
            assert cli.main(["eval", "--checkpoint", str(tmp_path / "m0.hckp"), "--dataset",
                             str(test_path), "--regime", regime]) == 0
            row = json.loads(capsys.readouterr().out)
            assert row["regime"] == regime and row["n"] == 12 and 0 <= row["accuracy"] <= 1

    def test_permtest(self, tmp_path):
        seqs = tmp_path / "s.hseq"
        assert cli.main(["gen-data", "--kind", "sequences", "--out", str(seqs), "--per-cell", "2",
                         "--length", "3", "--bandwidth", "3", "--group-effect", "1"]) == 0
        cfg = tmp_path / "p.ini"
        cfg.write_text("[model]\nspace = s2xr\ninput_bandwidth = 3\nn_classes = 2\n"
                       "[permtest]\ntrain_budget = 5\n")
        outs = []
        for run in range(2):
            out = tmp_path / f"p{run}.json"
            assert cli.main(["permtest", "--config", str(cfg), "--dataset", str(seqs),
                             "--n-perm", "19", "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        res = json.loads(outs[0])
        assert set(res) >= {"observed_d", "n_perm", "p_smoothed", "p_raw", "d_perm"}
        assert len(res["d_perm"]) == 19

    def test_info(self, capsys):
        assert cli.main(["info", "--config", str(CONFIGS / "example.ini")]) == 0
        out = capsys.readouterr().out
        assert "corr2_s2" in out and "total" in out


class TestExitCodes:
    def test_usage_errors(self, tmp_path, capsys):
        assert cli.main([]) == 2
        assert cli.main(["nope"]) == 2
        assert cli.main(["verify", "--suite", "bogus"]) == 2
        bad = tmp_path / "bad.ini"
        bad.write_text("[model]\ncolour = red\n")
        assert cli.main(["train", "--config", str(bad)]) == 2
        assert "unknown key" in capsys.readouterr().err
        assert cli.main(["bench", "--brute-max", "17"]) == 2
        seq_cfg = tmp_path / "s.ini"
        seq_cfg.write_text("[model]\nspace = s2xr\n")
        assert cli.main(["train", "--config", str(seq_cfg), "--dataset", "x"]) == 2

    def test_io_errors(self, tmp_path):
        assert cli.main(["train", "--config", str(tmp_path / "missing.ini")]) == 3
        junk = tmp_path / "junk.hckp"
        junk.write_bytes(b"junk")
        data = tmp_path / "d.hdsb"
        assert cli.main(["gen-data", "--out", str(data), "--bandwidth", "2", "--per-class", "1"]) == 0
        assert cli.main(["eval", "--checkpoint", str(junk), "--dataset", str(data)]) == 3
        assert cli.main(["gen-data", "--out", str(tmp_path / "no" / "x.hdsb")]) == 3

    def test_help(self, capsys):
        assert cli.main(["--help"]) == 0
        assert cli.main(["train", "--help"]) == 0
        assert "input_bandwidth = 10" in capsys.readouterr().out

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "homcorr", "info"], capture_output=True,
                             text=True, check=True)
        assert out.stdout.startswith("homcorr ")


class TestBench:
    def test_csv_round_trip(self):
        rows = [{"B": 2, "spectral_s": 1.25e-4, "bruteforce_s": 0.1},
                {"B": 3, "spectral_s": 0.1 + 0.2, "bruteforce_s": float("nan")}]
        back = cli.csv_to_rows(cli.rows_to_csv(rows))
        assert back[0] == rows[0]
        assert back[1]["spectral_s"] == rows[1]["spectral_s"] and np.isnan(back[1]["bruteforce_s"])
        assert cli.crossover(rows) == 2
        assert cli.crossover([{"B": 2, "spectral_s": 1.0, "bruteforce_s": 0.5}]) is None

    @pytest.mark.slow
    def test_spectral_is_faster_and_costs_grow(self):
        rows = cli.bench_rows(2, 8, 8, repeats=5)
        brute = [r["bruteforce_s"] for r in rows]
        assert all(b2 >= b1 for b1, b2 in zip(brute, brute[1:]))
        spectral = {r["B"]: r["spectral_s"] for r in rows}
        assert spectral[8] >= spectral[2]
        at8 = rows[-1]
        assert at8["bruteforce_s"] >= 10 * at8["spectral_s"]

    def test_bench_command(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        assert cli.main(["bench", "--b-min", "2", "--b-max", "3", "--brute-max", "2",
                         "--repeats", "1", "--out", str(out)]) == 0
        rows = cli.csv_to_rows(out.read_text())
        assert [r["B"] for r in rows] == [2, 3] and np.isnan(rows[1]["bruteforce_s"])
        assert "crossover" in capsys.readouterr().err
