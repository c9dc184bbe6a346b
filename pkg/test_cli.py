#!/usr/bin/env python3
"""
End-to-end tests of the lifetime_cli subcommands and their exit codes.
"""

import json
import os
import sys
import tempfile

import numpy as np

from geometry import PointCloud
from lifetime_cli import EXIT_OK, EXIT_STAT_FAIL, EXIT_USAGE, main
from persistence import diagram_from_csv
from pointprocess import read_cloud_csv, write_cloud_csv
from testkit import fish_points, run_tests


def _manifest(path):
    with open(os.path.splitext(path)[0] + ".manifest.json", encoding="utf-8") as f:
        return json.load(f)


def test_sample_writes_cloud_and_manifest():
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["sample", "--n", "80", "--window", "torus", "--seed", "3", "--out", "cloud.csv", "--out-dir", tmp])
        assert code == EXIT_OK
        path = os.path.join(tmp, "cloud.csv")
        cloud = read_cloud_csv(path, torus=True)
        manifest = _manifest(path)
        assert manifest["command"] == "sample"
        assert manifest["seed"] == 3
        assert manifest["config"]["window"] == "torus"
        assert manifest["results"]["points"] == len(cloud)

        again = os.path.join(tmp, "again.csv")
        assert main(["sample", "--n", "80", "--window", "torus", "--seed", "3", "--out", again]) == EXIT_OK
        assert np.array_equal(read_cloud_csv(again, torus=True).points, cloud.points)


def test_persist_fish():
    with tempfile.TemporaryDirectory() as tmp:
        source = write_cloud_csv(PointCloud.euclidean(fish_points()), os.path.join(tmp, "fish.csv"))
        for filtration, expected in (("cech", 2), ("vr", 1), ("alpha", 2)):
            out = f"{filtration}.csv"
            code = main(["persist", "--in", source, "--filtration", filtration, "--out", out, "--out-dir", tmp])
            assert code == EXIT_OK
            records = diagram_from_csv(os.path.join(tmp, out))
            assert len(records) == expected, filtration
            assert _manifest(os.path.join(tmp, out))["inputs"] == [source]


def test_persist_torus_cloud():
    with tempfile.TemporaryDirectory() as tmp:
        assert main(["sample", "--n", "60", "--window", "torus", "--out", "t.csv", "--out-dir", tmp]) == EXIT_OK
        assert main(["persist", "--in", "t.csv", "--out", "t_diagram.csv", "--out-dir", tmp]) == EXIT_OK
        manifest = _manifest(os.path.join(tmp, "t_diagram.csv"))
        assert manifest["config"]["torus"] is True
        for record in diagram_from_csv(os.path.join(tmp, "t_diagram.csv")):
            assert all(0.0 <= c < 1.0 for c in record.center)


def test_threshold_analytic():
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["threshold", "--n", "1000", "--rn-exp", "0.7", "--alpha", "0", "--analytic", "--out-dir", tmp])
        assert code == EXIT_OK
        results = _manifest(os.path.join(tmp, "threshold.csv"))["results"]
        assert results["u"] == 0.0
        assert results["lmax_provenance"] == "proven"

        code = main(["threshold", "--n", "1000", "--rn-exp", "0.7", "--alpha", "1", "--analytic", "--out-dir", tmp])
        assert code == EXIT_OK
        results = _manifest(os.path.join(tmp, "threshold.csv"))["results"]
        assert 0.0 < results["u"] < results["lmax"]


def test_exit_codes():
    with tempfile.TemporaryDirectory() as tmp:
        assert main(["threshold", "--n", "1000", "--rn-exp", "0.7", "--alpha", "1e6", "--analytic",
                     "--out-dir", tmp]) == 3
        assert main(["threshold", "--rn-exp", "0.7"]) == EXIT_USAGE
        assert main(["threshold", "--n", "10", "--rn", "0.1", "--rn-exp", "0.7"]) == EXIT_USAGE
        assert main(["threshold", "--n", "1000", "--rn", "0.01", "--m", "4", "--analytic", "--out-dir", tmp]) == EXIT_USAGE
        assert main(["persist", "--in", "missing.csv", "--out-dir", tmp]) == EXIT_USAGE
        assert main(["sample", "--n", "-5", "--out", "x.csv", "--out-dir", tmp]) == EXIT_USAGE
        assert main(["sample", "--n", "5", "--window", "sphere", "--out", "x.csv", "--out-dir", tmp]) == EXIT_USAGE

        assert main(["sample", "--n", "20", "--dim", "3", "--out", "c3.csv", "--out-dir", tmp]) == EXIT_OK
        assert main(["persist", "--in", "c3.csv", "--filtration", "alpha", "--out-dir", tmp]) == EXIT_USAGE


def test_experiment_command():
    with tempfile.TemporaryDirectory() as tmp:
        config = os.path.join(tmp, "anneal.json")
        with open(config, "w", encoding="utf-8") as f:
            json.dump({"m": 3, "iterations": 200, "restarts": 2}, f)
        assert main(["experiment", "anneal", "--config", config, "--seed", "4", "--out-dir", tmp]) == EXIT_OK
        assert os.path.exists(os.path.join(tmp, "anneal", "report.json"))
        assert os.path.exists(os.path.join(tmp, "anneal", "lifetimes.csv"))
        with open(os.path.join(tmp, "anneal", "report.manifest.json"), encoding="utf-8") as f:
            assert json.load(f)["seed"] == 4

        with open(config, "w", encoding="utf-8") as f:
            json.dump({"m": 3, "iterations": 200, "restarts": 2, "min_lifetime": {"3": 1.0}}, f)
        assert main(["experiment", "anneal", "--config", config, "--out-dir", tmp]) == EXIT_STAT_FAIL

        with open(config, "w", encoding="utf-8") as f:
            f.write("{not json")
        assert main(["experiment", "anneal", "--config", config, "--out-dir", tmp]) == EXIT_USAGE
        assert main(["experiment", "nonsense", "--out-dir", tmp]) == EXIT_USAGE


def main_tests():
    return run_tests("CLI Tests", [
        ("sample", test_sample_writes_cloud_and_manifest),
        ("persist fish", test_persist_fish),
        ("persist torus", test_persist_torus_cloud),
        ("threshold", test_threshold_analytic),
        ("exit codes", test_exit_codes),
        ("experiment", test_experiment_command),
    ])


if __name__ == "__main__":
    sys.exit(main_tests())
