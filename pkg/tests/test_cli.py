"""End-to-end checks of the command-line interface."""

import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cppgen.cli import main
from cppgen.kernel import ClosedFormTail, closed_form_F
from cppgen.ksample import full_loglikelihood, ksample_loglikelihood
from cppgen.model import newick_to_tree


@pytest.fixture
def model_path(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"kind": "constant", "lambda": 1.0, "mu": 0.5, "T": 2.0}))
    return str(path)


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSimulate:
    def test_newick_output(self, capsys, model_path):
        code, out, _ = _run(
            capsys, "simulate", "--model", model_path, "--scheme", "full",
            "--reps", "5", "--seed", "42",
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 5
        for line in lines:
            tree = newick_to_tree(line)
            assert tree.height == pytest.approx(2.0, rel=1e-9)

    def test_worker_count_invariance(self, capsys, model_path):
        outs = []
        for workers in ("1", "3"):
            code, out, _ = _run(
                capsys, "simulate", "--model", model_path, "--scheme", "k:4",
                "--reps", "12", "--seed", "7", "--workers", workers,
            )
            assert code == 0
            outs.append(out)
        assert outs[0] == outs[1]

    def test_csv_output(self, capsys, model_path):
        code, out, _ = _run(
            capsys, "simulate", "--model", model_path, "--scheme", "full",
            "--reps", "3", "--seed", "1", "--format", "csv",
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "rep,index,depth"
        for line in lines[1:]:
            rep, idx, depth = line.split(",")
            assert 0 <= int(rep) < 3
            assert 0.0 < float(depth) < 2.0

    def test_bernoulli_scheme(self, capsys, model_path):
        code, out, _ = _run(
            capsys, "simulate", "--model", model_path, "--scheme", "bernoulli:0.5",
            "--reps", "4", "--seed", "3",
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 4

    def test_forward_simulator(self, capsys, model_path):
        code, out, _ = _run(
            capsys, "simulate", "--model", model_path, "--scheme", "full",
            "--reps", "3", "--seed", "5", "--forward", "--workers", "1",
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 3


class TestLikelihood:
    def test_matches_library(self, capsys, model_path, tmp_path):
        trees = tmp_path / "trees.nwk"
        trees.write_text("((0:0.3,1:0.3):0.3,(2:0.2,3:0.2):0.4):1.4;\n(0:0.5,1:0.5):1.5;\n")
        code, out, _ = _run(
            capsys, "likelihood", "--tree", str(trees), "--model", model_path,
            "--scheme", "full",
        )
        assert code == 0
        payload = json.loads(out)
        F = ClosedFormTail(1.0, 0.5, 2.0)
        expect = sum(
            full_loglikelihood(newick_to_tree(line), F)
            for line in trees.read_text().splitlines()
        )
        assert_allclose(payload["logL"], expect, rtol=1e-9)
        assert payload["n_trees"] == 2
        assert payload["scheme"] == "full"

    def test_ksample_scheme(self, capsys, model_path, tmp_path):
        trees = tmp_path / "trees.nwk"
        trees.write_text("(0:0.5,1:0.5):1.5;\n")
        code, out, _ = _run(
            capsys, "likelihood", "--tree", str(trees), "--model", model_path,
            "--scheme", "k:2",
        )
        assert code == 0
        payload = json.loads(out)
        F = ClosedFormTail(1.0, 0.5, 2.0)
        tree = newick_to_tree("(0:0.5,1:0.5):1.5;")
        assert_allclose(payload["logL"], ksample_loglikelihood(tree, F, 2), rtol=1e-9)
        assert payload["quad_nodes"] == 64


class TestFit:
    def test_round_trip(self, capsys, model_path, tmp_path):
        code, out, _ = _run(
            capsys, "simulate", "--model", model_path, "--scheme", "full",
            "--reps", "100", "--seed", "11", "--out", str(tmp_path / "sim.nwk"),
        )
        assert code == 0
        code, out, _ = _run(
            capsys, "fit", "--trees", str(tmp_path / "sim.nwk"), "--scheme", "full",
            "--init", "lam=0.8,mu=0.4",
        )
        assert code == 0
        payload = json.loads(out)
        assert abs(payload["lambda"] - 1.0) < 0.3
        assert abs(payload["mu"] - 0.5) < 0.3
        assert payload["converged"] is True


class TestDumpF:
    def test_matches_closed_form(self, capsys, model_path):
        code, out, _ = _run(
            capsys, "dump-f", "--model", model_path, "--step", "1e-2",
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "t,F"
        data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        assert_allclose(data[:, 1], closed_form_F(1.0, 0.5, data[:, 0]), rtol=1e-4)


class TestExitCodes:
    def test_missing_model_file(self, capsys):
        code, _, err = _run(
            capsys, "simulate", "--model", "/nonexistent.json", "--scheme", "full",
            "--reps", "1", "--seed", "0",
        )
        assert code == 2
        assert "error" in err

    def test_bad_scheme(self, capsys, model_path):
        code, _, err = _run(
            capsys, "simulate", "--model", model_path, "--scheme", "bogus",
            "--reps", "1", "--seed", "0",
        )
        assert code == 2

    def test_usage_error(self, capsys):
        code, _, _ = _run(capsys, "simulate")  # missing required flags
        assert code == 2

    def test_version(self, capsys):
        code, out, err = _run(capsys, "--version")
        assert code == 0


class TestValidate:
    def test_quick_tier_passes(self, capsys):
        code, out, _ = _run(capsys, "validate", "--quick")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("1..")
        assert all(line.startswith("ok") for line in lines[1:])
