import csv
import math

import numpy as np
import pytest

from spm.cli import (
    ConfigError,
    RunConfig,
    main,
    parse_config,
    run_experiment,
)

TIMING_FILES = {"timing.csv", "run_timing.csv"}


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestParseConfig:
    def test_valid_benchmark(self, tmp_path):
        path = _write(
            tmp_path,
            "experiment = benchmark_1d\nn = 1000000\nh = 0.01\n"
            "tau = 0.01\nT = 1\nstrategy = A\n",
        )
        cfg = parse_config(path)
        assert cfg.experiment == "benchmark_1d"
        assert cfg.n == 1_000_000
        assert cfg.strategy == "A"

    def test_comments_and_blank_lines(self, tmp_path):
        path = _write(
            tmp_path, "# header\nexperiment = vug_static\n\nn = 100  # inline\n"
        )
        cfg = parse_config(path)
        assert cfg.n == 100

    def test_hjb_with_strategy_A_rejected(self, tmp_path):
        path = _write(tmp_path, "experiment = hjb_7d\nn = 100\nstrategy = A\n")
        with pytest.raises(ConfigError, match="strategy=B"):
            parse_config(path)

    def test_non_integer_step_count_rejected(self, tmp_path):
        path = _write(
            tmp_path, "experiment = benchmark_1d\nn = 100\ntau = 0.3\nT = 1\n"
        )
        with pytest.raises(ConfigError, match="multiple"):
            parse_config(path)

    def test_unknown_key_named(self, tmp_path):
        path = _write(tmp_path, "experiment = benchmark_1d\nn = 10\nfoo = 1\n")
        with pytest.raises(ConfigError, match="foo"):
            parse_config(path)

    def test_bad_value_named(self, tmp_path):
        path = _write(tmp_path, "experiment = benchmark_1d\nn = lots\n")
        with pytest.raises(ConfigError, match="'n'"):
            parse_config(path)

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            parse_config(None, {"experiment": "frobnicate", "n": 10})

    def test_missing_experiment_rejected(self, tmp_path):
        path = _write(tmp_path, "n = 10\n")
        with pytest.raises(ConfigError, match="experiment"):
            parse_config(path)

    def test_flags_override_file(self, tmp_path):
        path = _write(tmp_path, "experiment = benchmark_1d\nn = 100\nseed = 1\n")
        cfg = parse_config(path, {"seed": 9, "n": 50})
        assert cfg.seed == 9
        assert cfg.n == 50

    def test_defaults_filled_per_experiment(self):
        cfg = parse_config(None, {"experiment": "allen_cahn_6d", "n": 10})
        assert cfg.h == 0.4
        assert cfg.tau == 0.1
        assert cfg.c == 1.0
        assert cfg.d == 6

    def test_nonpositive_n_rejected(self):
        with pytest.raises(ConfigError, match="n must"):
            RunConfig(experiment="vug_static", n=0)


class TestRunExperiment:
    def _bench_cfg(self, tmp_path, seed=0, **kw):
        args = dict(
            experiment="benchmark_1d", n=20_000, h=0.05, tau=0.02, T=0.1,
            strategy="A", seed=seed, workers=2, output_dir=str(tmp_path),
        )
        args.update(kw)
        return RunConfig(**args)

    def test_benchmark_artifacts(self, tmp_path):
        summary = run_experiment(self._bench_cfg(tmp_path / "a"))
        out = tmp_path / "a"
        for name in ("steps.csv", "timing.csv", "projection_1d.csv",
                     "summary.csv", "run_timing.csv", "manifest.txt"):
            assert (out / name).exists()
        assert summary["error_u"] < 1.0
        with (out / "steps.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        assert float(rows[-1]["t"]) == pytest.approx(0.1)

    def test_deterministic_artifacts(self, tmp_path):
        run_experiment(self._bench_cfg(tmp_path / "a", seed=3))
        run_experiment(self._bench_cfg(tmp_path / "b", seed=3))
        names = {p.name for p in (tmp_path / "a").iterdir()} - TIMING_FILES
        assert names
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes(), name

    def test_manifest_contents(self, tmp_path):
        cfg = self._bench_cfg(tmp_path)
        run_experiment(cfg)
        text = (tmp_path / "manifest.txt").read_text()
        assert "config_hash=" in text
        assert "experiment=benchmark_1d" in text
        assert "seed=0" in text

    def test_vug_static_summary(self, tmp_path):
        cfg = RunConfig(experiment="vug_static", n=50_000, d=2, h=0.0625,
                        output_dir=str(tmp_path))
        summary = run_experiment(cfg)
        assert 0 < summary["alpha_occ"] <= 1
        assert summary["error_p"] < 1.0
        assert summary["stored_cells"] <= 50_000

    def test_nonlocal_linear_observables(self, tmp_path):
        cfg = RunConfig(experiment="nonlocal_linear_hd", n=2000, d=5,
                        tau=0.1, T=1.0, output_dir=str(tmp_path))
        summary = run_experiment(cfg)
        assert summary["o1_exact"] == pytest.approx(-1.0)
        assert abs(summary["o1"] - (-1.0)) < 0.3
        with (tmp_path / "observables.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 11
        assert float(rows[0]["o1"]) == 0.0

    def test_csv_round_trips(self, tmp_path):
        run_experiment(self._bench_cfg(tmp_path))
        with (tmp_path / "projection_1d.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        vals = np.array([float(r["num"]) for r in rows])
        assert np.all(np.isfinite(vals))
        # repr-formatted floats round-trip exactly
        text = (tmp_path / "projection_1d.csv").read_text().splitlines()[1]
        assert repr(float(text.split(",")[1])) == text.split(",")[1]


class TestMain:
    def test_list_experiments(self, capsys):
        assert main(["list-experiments"]) == 0
        out = capsys.readouterr().out
        assert "benchmark_1d" in out
        assert "hjb_7d" in out

    def test_run_exit_zero(self, tmp_path, capsys):
        rc = main([
            "run", "--experiment", "benchmark_1d", "--n", "5000",
            "--h", "0.05", "--tau", "0.05", "--T", "0.1",
            "--output-dir", str(tmp_path),
        ])
        assert rc == 0
        assert "error_u=" in capsys.readouterr().out

    def test_bad_config_exit_one(self, capsys):
        rc = main(["run", "--experiment", "hjb_7d", "--n", "10",
                   "--strategy", "A"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err
