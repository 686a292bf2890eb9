import json

import pytest

from bbmlab import operations
from bbmlab.cli import main
from bbmlab.errors import ConfigurationError
from bbmlab.harness import report, run_experiment, spec_from_config

CFG = """
[experiment]
name = demo
operation = spectrum
seed = 1
replicates = 1

[params]
n_max = 2

[ladder]
alpha = 0.9,1.1
"""


class TestSpec:
    def test_parse(self):
        spec = spec_from_config(CFG)
        assert spec.operation == "spectrum"
        assert spec.ladders == {"alpha": [0.9, 1.1]}
        assert len(spec.cells()) == 2

    def test_unknown_operation(self):
        with pytest.raises(ConfigurationError):
            spec_from_config(CFG.replace("spectrum", "frobnicate"))

    def test_unknown_parameter(self):
        with pytest.raises(ConfigurationError):
            spec_from_config(CFG.replace("n_max", "wings"))

    def test_invalid_ladder_value_rejected_before_running(self):
        with pytest.raises(ConfigurationError):
            spec_from_config(CFG.replace("0.9,1.1", "-1.0,1.1"))

    def test_hash_stable(self):
        a, b = spec_from_config(CFG), spec_from_config(CFG)
        assert a.spec_hash() == b.spec_hash()


class TestRun:
    def test_run_and_report(self, tmp_path):
        spec = spec_from_config(CFG)
        rec = run_experiment(spec, root=tmp_path)
        assert rec.status == "complete"
        assert len(rec.digests) == 4  # 2 cells x (csv + json)
        text, code = report(tmp_path)
        assert code == 0 and "ok" in text

    def test_idempotent_rerun(self, tmp_path):
        spec = spec_from_config(CFG)
        rec1 = run_experiment(spec, root=tmp_path)
        mtimes = {p: p.stat().st_mtime_ns for p in tmp_path.rglob("*.csv")}
        rec2 = run_experiment(spec, root=tmp_path)
        assert rec1.digests == rec2.digests
        assert mtimes == {p: p.stat().st_mtime_ns for p in tmp_path.rglob("*.csv")}

    def test_tamper_flagged(self, tmp_path):
        spec = spec_from_config(CFG)
        run_experiment(spec, root=tmp_path)
        victim = next(tmp_path.rglob("*.csv"))
        victim.write_text("tampered\n")
        text, code = report(tmp_path)
        assert code == 1 and "DIGEST-MISMATCH" in text

    def test_empty_dir_report(self, tmp_path):
        text, code = report(tmp_path)
        assert code == 1 and "no experiments" in text


class TestCli:
    def test_exit_codes(self, tmp_path, capsys):
        assert main(["mass", "--s", "4", "--t-end", "8", "--alpha", "1",
                     "--n", "500", "--step", "0.1",
                     "--out", str(tmp_path)]) == 1  # missing seed
        assert main(["spectrum", "--alpha", "2.0", "--n-max", "2",
                     "--out", str(tmp_path)]) == 0

    def test_numerical_failure_exit(self, tmp_path, capsys):
        # T too close to 1 for the step budget
        code = main(["pde", "--xi", "0", "--t-end", "0.999999", "--rho", "50000",
                     "--alpha", "1.0", "--dx", "0.05", "--out", str(tmp_path)])
        assert code == 2

    def test_cli_covers_every_operation(self):
        import argparse

        from bbmlab import cli

        parser = argparse.ArgumentParser()
        sub = parser.add_subparsers(dest="command")
        cli._add_operation_parsers(sub)
        covered = set(sub.choices)
        assert covered == set(operations.REGISTRY)

    def test_registry_covers_spec_surface(self):
        expected = {"spectrum", "weyl", "pde", "barriers", "galerkin", "kernel-g",
                    "mass", "gtilde", "alpha2", "simulate", "couple", "discrete",
                    "mto1", "mto2", "porism"}
        assert expected.issubset(set(operations.REGISTRY))

    def test_stochastic_outputs_reproducible(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["simulate", "--alpha", "1.0", "--t-end", "3",
                         "--snapshots", "1.5,3", "--seed", "9",
                         "--out", str(out)]) == 0
        f1 = (out1 / "simulate" / "snapshots.csv").read_bytes()
        f2 = (out2 / "simulate" / "snapshots.csv").read_bytes()
        assert f1 == f2
