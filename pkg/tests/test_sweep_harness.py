import csv
import json

import numpy as np
import pytest

from curv_bench.config import DEFAULT_TOLERANCES, SCHEMA_VERSION, load_document
from curv_bench.curvature_engines import CurvaturePoint, l2_expansion
from curv_bench.error_handler import ConfigError, IoFailure
from curv_bench.sweep_harness import (
    CSV_COLUMNS,
    FIT_POWERS,
    LEADING_LAW_SIGNS,
    TAIL_FIT_POWERS,
    SweepConfig,
    SweepReport,
    _fit_rows,
    _jsonable,
    emit,
    fit_powers,
    leading_law_limits,
    point_row,
    run_sweep,
)

from .helpers import FIXTURE_NAMES, fixture_path

FLAT_VERDICTS = {
    "top_coefficient", "mid_coefficient", "low_coefficient", "resolvent_ablation", "side_equality",
    "torsion_decay", "torsion_bounded", "cross_method", "resolvent_identity", "quadratic_form_identity",
    "norm_identities", "fiber_identities", "bergman_trace", "bergman_flat",
}


def _small_flat_config(tmp_path, **sweep):
    doc = load_document(fixture_path("flat"))
    doc["sweep"].update({"k_list": [4, 6, 8, 10], "galerkin_levels": 8, **sweep})
    return SweepConfig.from_document(doc, output=str(tmp_path / "out"))


def test_point_row_splits_known_columns():
    point = CurvaturePoint(8, 1.5, "fd", {"fd_step": 0.01, "richardson": 1e-9, "wall_time_ms": 3.0})
    row = point_row(point)
    assert row["fd_step"] == 0.01
    assert row["resolvent_residual"] == ""
    assert row["richardson"] == 1e-9
    assert point_row(point, fd_step=0.02)["fd_step"] == 0.02


def test_verdicts_decide_the_outcome():
    report = SweepReport(model_name="m")
    report.add_verdict("a", 1e-9, 1e-8)
    assert report.passed
    report.add_verdict("b", float("nan"), 1.0)
    assert not report.verdicts["b"]["passed"]
    assert not report.passed
    report = SweepReport(model_name="m", failures=[{"k": 4, "engine": "fd"}])
    assert not report.passed


def test_jsonable_plain_values():
    assert _jsonable({1: np.float64(0.5), "c": 1 + 2j, "n": float("nan"), "a": np.arange(2)}) == {
        "1": 0.5, "c": [1.0, 2.0], "n": None, "a": [0, 1]}
    assert _jsonable(np.bool_(True)) is True


def test_emit_writes_json_and_csv(tmp_path):
    report = SweepReport(model_name="m")
    report.rows.append(point_row(CurvaturePoint(4, 0.1, "fd", {"fd_step": 0.01})))
    report.add_verdict("a", 0.0, 1.0)
    written = emit(report, str(tmp_path))
    assert len(written) == 2
    with open(tmp_path / "report.json", encoding="utf-8") as handle:
        document = json.load(handle)
    assert document["schema_version"] == SCHEMA_VERSION
    assert document["passed"] is True
    with open(tmp_path / "report.csv", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1][:4] == ["4", "fd", "0.10000000000000001", "0.01"]


def test_emit_into_a_file_is_an_io_failure(tmp_path):
    target = tmp_path / "occupied"
    target.write_text("x", encoding="utf-8")
    with pytest.raises(IoFailure):
        emit(SweepReport(model_name="m"), str(target))


def test_config_from_document(tmp_path):
    config = _small_flat_config(tmp_path, tolerances={"cross_method": 0.5})
    assert config.k_list == [4, 6, 8, 10]
    assert config.levels == 8
    assert config.tolerances["cross_method"] == 0.5
    assert config.tolerances["side_equality"] == DEFAULT_TOLERANCES["side_equality"]
    assert config.output.endswith("out")


def test_short_k_list_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        _small_flat_config(tmp_path, k_list=[4, 8, 16])


def test_flat_sweep_passes(tmp_path):
    report = run_sweep(_small_flat_config(tmp_path))
    assert report.passed, report.verdicts
    assert FLAT_VERDICTS <= set(report.verdicts)
    assert {row["method"] for row in report.rows} == {"fd", "berndtsson", "berndtsson_no_resolvent", "grr"}
    assert len(report.rows) == 4 * 4
    assert [entry["k"] for entry in report.spectral] == [4, 6, 8, 10]
    assert all(entry["value"] == 0.0 for entry in report.torsion)


@pytest.mark.slow
@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_sweeps_pass(tmp_path, name):
    config = SweepConfig.from_document(load_document(fixture_path(name)), output=str(tmp_path))
    report = run_sweep(config)
    assert report.passed, {key: v for key, v in report.verdicts.items() if not v["passed"]}
    written = emit(report, config.output)
    assert len(written) == 2


def test_fit_powers_add_a_tail_with_enough_levels():
    assert fit_powers(4) == FIT_POWERS
    assert fit_powers(5) == TAIL_FIT_POWERS
    assert fit_powers(6) == TAIL_FIT_POWERS


def test_tail_term_keeps_the_constant_clean():
    ks = [8, 12, 16, 24, 32, 48]
    top, mid, low = 0.05, 0.01, -7e-4
    report = SweepReport(model_name="m")
    for k in ks:
        report.rows.append({"k": k, "method": "fd", "value": top * k ** 2 + mid * k + low + 0.02 / k})
    fits = _fit_rows(report, "fd")
    assert fits["unweighted"].powers == TAIL_FIT_POWERS
    assert fits["unweighted"].coefficient(0) == pytest.approx(low, rel=1e-6)
    assert fits["weighted"].coefficient(0) == pytest.approx(low, rel=1e-6)
    three_term = _fit_rows(report, "fd", powers=FIT_POWERS)["unweighted"].coefficient(0)
    assert abs(three_term - low) > 0.1 * abs(low)


def test_leading_law_limits_remove_the_inverse_k_drift():
    ks = [8, 12, 16, 24, 32, 48]
    ratios = {p: [sign + 3.0 * p / k - 5.0 / k ** 2 for k in ks] for p, sign in LEADING_LAW_SIGNS.items()}
    limits = leading_law_limits(ks, ratios)
    for p, sign in LEADING_LAW_SIGNS.items():
        assert limits[p] == pytest.approx(sign, abs=1e-8)
        assert abs(ratios[p][-1] - sign) > 0.1
    assert leading_law_limits([16, 32], {2: [1.5, 1.2]}) == {2: 1.2}


def test_fd_sweep_on_the_perturbed_fixture(tmp_path):
    doc = load_document(fixture_path("zplusbar_profile"))
    doc["sweep"]["engines"] = ["fd"]
    config = SweepConfig.from_document(doc, output=str(tmp_path))
    report = run_sweep(config)
    for name in ("top_coefficient", "mid_coefficient", "low_coefficient", "torsion_decay", "torsion_bounded"):
        assert report.verdicts[name]["passed"], report.verdicts[name]
    assert report.fits["fd"]["unweighted"]["powers"] == TAIL_FIT_POWERS
    expected = l2_expansion(config.model).t_low
    assert report.fits["fd"]["unweighted"]["coefficients"]["0"] == pytest.approx(expected, rel=0.1)
    assert report.bergman["k_list"] == [8, 12, 16, 24, 32]
