import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrfdetect.cli import (
    CSV_COLUMNS,
    FEASIBILITY_COLUMNS,
    build_scenario,
    main,
    parse_config,
    parse_model_file,
    serialize_config,
)
from mrfdetect.errors import ConfigError

MINIMAL = """
[experiment]
alpha = 0.1
beta = 0.1

[scenario]
generator = replicated
copies = 4
"""


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.trials == 1000
        assert cfg.max_subset_size == 4
        assert cfg.policy == "correlation"
        assert cfg.seed is None
        assert cfg.scenario_params == {"copies": 4, "strong_corr": 0.5, "weak_corr": 0.1}

    def test_range_error_names_field(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL.replace("alpha = 0.1", "alpha = 1.5"), source="exp.ini")
        (msg,) = exc.value.errors
        assert "alpha" in msg and "exp.ini:line 3" in msg

    def test_all_errors_collected(self):
        text = """
[experiment]
alpha = 1.5
trials = -3
colour = blue

[scenario]
generator = tree
sigma = 2
"""
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        errs = exc.value.errors
        joined = "\n".join(errs)
        for key in ("alpha", "beta", "trials", "colour", "sigma", "] n:"):
            assert key in joined
        assert len(errs) == 6

    def test_unknown_generator_and_section(self):
        text = MINIMAL.replace("replicated", "lattice") + "\n[extra]\nx = 1\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        joined = "\n".join(exc.value.errors)
        assert "generator" in joined and "[extra]" in joined

    def test_cluster_p_bounds(self):
        text = MINIMAL.replace("generator = replicated\ncopies = 4",
                               "generator = two-cluster\nn = 10\np = 10\na_corr = 0.5\nb_corr = 0.2")
        with pytest.raises(ConfigError, match=r"\] p:"):
            parse_config(text)

    @settings(max_examples=40, deadline=None)
    @given(
        alpha=st.floats(0.001, 0.999),
        beta=st.floats(0.001, 0.999),
        trials=st.integers(1, 10**6),
        seed=st.none() | st.integers(0, 2**40),
        cap=st.none() | st.integers(1, 8),
        policy=st.sampled_from(["chernoff", "correlation", "correlation-exhaustive", "random"]),
        gen=st.sampled_from(["tree", "nearest-neighbor", "cluster"]),
    )
    def test_round_trip(self, alpha, beta, trials, seed, cap, policy, gen):
        scen = {"tree": "n = 12\nsigma = 0.3",
                "nearest-neighbor": "n = 9\nM = 0.25\na = 1.5",
                "cluster": "n = 20\np = 5\nsigma_A = 0.7"}[gen]
        seed_line = "" if seed is None else f"seed = {seed}\n"
        text = (f"[experiment]\nalpha = {alpha!r}\nbeta = {beta!r}\ntrials = {trials}\n{seed_line}"
                f"max_subset_size = {'none' if cap is None else cap}\npolicy = {policy}\n\n"
                f"[scenario]\ngenerator = {gen}\n{scen}\n")
        cfg = parse_config(text)
        assert parse_config(serialize_config(cfg)) == cfg


class TestModelFile:
    def test_tree_file(self):
        m = parse_model_file("n 3\nvariances 1 2 1\ntree\n0 1 0.5\n1 2 -0.4  # comment\n")
        assert m.covariance[0, 1] == pytest.approx(0.5 * np.sqrt(2))
        assert m.covariance[0, 2] == pytest.approx(0.5 * -0.4)
        assert m.dependency_graph.is_acyclic()

    def test_dense_file(self):
        m = parse_model_file("n 2\nmean 1 -1\ncovariance\n1 0.3\n0.3 1\n")
        np.testing.assert_array_equal(m.mean, [1.0, -1.0])
        assert m.covariance[0, 1] == 0.3

    @pytest.mark.parametrize("text, needle", [
        ("mean 0 0\n", "missing 'n'"),
        ("n 2\nmean 0\n", "mean has 1"),
        ("n 2\ntree\n0 1\n", "line 3"),
        ("n 2\ncovariance\n1 x\n0 1\n", "line 3"),
        ("n 2\ncovariance\n1 2\n2 1\n", "model"),
    ])
    def test_errors(self, text, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_model_file(text, "model")

    def test_file_scenario(self, tmp_path):
        (tmp_path / "m.txt").write_text("n 3\ntree\n0 1 0.6\n1 2 0.6\n")
        cfg = parse_config(MINIMAL.replace("generator = replicated\ncopies = 4",
                                           "generator = file\nmodel = m.txt"),
                           base_dir=str(tmp_path))
        sc = build_scenario(cfg)
        np.testing.assert_array_equal(sc.pair.f0.covariance, np.eye(3))
        assert sc.pair.f1.covariance[0, 2] == pytest.approx(0.36)


class TestCommands:
    def test_simulate_to_file_and_exit_code(self, tmp_path, capsys):
        cfg = _write(tmp_path, MINIMAL)
        out = tmp_path / "o.csv"
        assert main(["simulate", "--config", cfg, "--seed", "3", "--trials", "10",
                     "--out", str(out)]) == 0
        rows = _rows(out.read_text())
        assert list(rows[0]) == list(CSV_COLUMNS)
        assert rows[0]["trials"] == "10" and rows[0]["policy"] == "correlation"
        assert capsys.readouterr().out == ""

    def test_missing_seed_names_flag(self, tmp_path, capsys):
        assert main(["simulate", "--config", _write(tmp_path, MINIMAL)]) == 2
        assert "--seed" in capsys.readouterr().err

    def test_bad_flag_names_flag(self, tmp_path, capsys):
        assert main(["simulate", "--config", _write(tmp_path, MINIMAL), "--seed", "1",
                     "--alpha", "2"]) == 2
        assert "--alpha" in capsys.readouterr().err

    def test_config_error_has_line(self, tmp_path, capsys):
        path = _write(tmp_path, MINIMAL.replace("beta = 0.1", "beta = zero"))
        assert main(["simulate", "--config", path, "--seed", "1"]) == 2
        err = capsys.readouterr().err
        assert f"{path}:line 4: [experiment] beta" in err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "nope.ini"), "--seed", "1"]) == 2
        assert "--config" in capsys.readouterr().err

    def test_cyclic_pair_rejects_neighbourhood_policy(self, tmp_path, capsys):
        (tmp_path / "m.txt").write_text("n 3\ncovariance\n1 0.3 0.3\n0.3 1 0.3\n0.3 0.3 1\n")
        text = MINIMAL.replace("generator = replicated\ncopies = 4", "generator = file\nmodel = m.txt")
        path = _write(tmp_path, text)
        assert main(["simulate", "--config", path, "--seed", "1", "--trials", "2"]) == 2
        assert "correlation-exhaustive" in capsys.readouterr().err
        assert main(["simulate", "--config", path, "--seed", "1", "--trials", "2",
                     "--policy", "correlation-exhaustive"]) == 0

    def test_feasibility_identical_models(self, tmp_path, capsys):
        text = MINIMAL.replace("generator = replicated\ncopies = 4",
                               "generator = nearest-neighbor\nseed = 4\nn = 20\nM = 0\na = 1")
        assert main(["feasibility", "--config", _write(tmp_path, text)]) == 0
        (row,) = _rows(capsys.readouterr().out)
        assert list(row) == list(FEASIBILITY_COLUMNS)
        assert float(row["lower_bound"]) == 0.0
        assert float(row["bhattacharyya"]) == 1.0

    def test_feasibility_random_scenario_needs_seed(self, tmp_path, capsys):
        text = MINIMAL.replace("generator = replicated\ncopies = 4",
                               "generator = tree\nn = 20\nsigma = 0.5")
        assert main(["feasibility", "--config", _write(tmp_path, text)]) == 2
        assert "--seed" in capsys.readouterr().err

    def test_compare_policies_reproducible(self, tmp_path, capsys):
        path = _write(tmp_path, MINIMAL)
        args = ["compare-policies", "--config", path, "--seed", "11", "--trials", "15"]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        assert capsys.readouterr().out == first
        rows = _rows(first)
        assert [r["policy"] for r in rows] == ["chernoff", "correlation", "random"]

    def test_sweep_monotone(self, tmp_path, capsys):
        text = MINIMAL.replace("copies = 4", "copies = 40")
        assert main(["sweep", "--config", _write(tmp_path, text), "--seed", "2",
                     "--trials", "150"]) == 0
        rows = _rows(capsys.readouterr().out)
        assert [float(r["alpha"]) for r in rows] == [0.3, 0.2, 0.1, 0.05]
        delays = [(float(r["avg_delay_h0"]) + float(r["avg_delay_h1"])) / 2 for r in rows]
        assert delays == sorted(delays)
