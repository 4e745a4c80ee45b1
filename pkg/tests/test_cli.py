import csv
import io
import json

import pytest

from curv_bench.cli import main, parse_args, print_verdicts
from curv_bench.error_handler import ConfigError
from curv_bench.sweep_harness import SweepReport

from .helpers import fixture_path


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "out")


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["nonsense", fixture_path("flat")]) == 1
    with pytest.raises(ConfigError):
        parse_args(["validate"])


def test_missing_config_exits_one(tmp_path):
    assert main(["validate", str(tmp_path / "absent.json")]) == 1


def test_malformed_config_exits_one(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{\"tau\": [0, 1],", encoding="utf-8")
    assert main(["validate", str(broken)]) == 1
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"tau": [0, 1], "colour": "red"}), encoding="utf-8")
    assert main(["validate", str(unknown)]) == 1


def test_validate_writes_a_report(out_dir):
    assert main(["validate", fixture_path("flat"), "--out", out_dir]) == 0
    with open(f"{out_dir}/report.json", encoding="utf-8") as handle:
        report = json.load(handle)
    assert report["passed"] is True
    assert report["verdicts"]["validation"]["passed"] is True


def test_validate_reports_a_bad_grid(out_dir, capsys):
    assert main(["validate", fixture_path("flat"), "--grid-n", "15", "--out", out_dir]) == 2
    assert "verification failed" in capsys.readouterr().err
    with open(f"{out_dir}/report.json", encoding="utf-8") as handle:
        assert json.load(handle)["passed"] is False


def test_identities_on_the_flat_fixture(out_dir):
    assert main(["identities", fixture_path("flat"), "--k", "4", "--levels", "8", "--out", out_dir]) == 0
    with open(f"{out_dir}/report.json", encoding="utf-8") as handle:
        report = json.load(handle)
    assert {"norm_identities", "fiber_identities", "resolvent_identity", "quadratic_form_refinement"} <= set(report["verdicts"])
    refinement = report["identities"]["quadratic_identity_refinement"]
    assert refinement["fine"]["levels"] == 16 and refinement["fine"]["grid_n"] == 128
    assert [entry["k"] for entry in report["spectral"]] == [4]


def test_curvature_writes_both_methods(out_dir):
    assert main(["curvature", fixture_path("flat"), "--k", "4", "--levels", "8", "--out", out_dir]) == 0
    with open(f"{out_dir}/report.csv", encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["method"] for row in rows] == ["fd", "berndtsson"]
    assert all(row["k"] == "4" for row in rows)


def test_unwritable_output_exits_three(tmp_path):
    occupied = tmp_path / "occupied"
    occupied.write_text("x", encoding="utf-8")
    assert main(["validate", fixture_path("flat"), "--out", str(occupied)]) == 3


def test_print_verdicts():
    report = SweepReport(model_name="flat")
    report.add_verdict("side_equality", 0.0, 1e-10)
    report.add_verdict("cross_method", 0.5, 1e-2)
    stream = io.StringIO()
    print_verdicts(report, stream)
    lines = stream.getvalue().splitlines()
    assert lines[0] == "flat: FAIL"
    assert lines[1].split()[0] == "side_equality" and lines[1].endswith("ok")
    assert lines[2].endswith("FAIL")
