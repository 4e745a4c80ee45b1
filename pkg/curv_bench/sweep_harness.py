import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .config import (
    DEFAULT_SETTINGS,
    SCHEMA_VERSION,
    ModelDocument,
    check_k_list,
    get_tolerances,
    max_workers,
    sweep_settings,
)
from .curvature_engines import (
    CurvaturePoint,
    bergman_tyz_check,
    curvature_berndtsson,
    curvature_fd,
    grr_polynomial,
    identity_suite,
    l2_expansion,
    leading_law_targets,
    quillen_expansion,
)
from .error_handler import IoFailure
from .jet_core import relative_gap
from .spectral_ops import (
    FormVector,
    GalerkinSpace,
    assemble_contracted,
    bochner_identity_residual,
    quadratic_forms,
    resolvent_expansion_check,
    resolvent_term_traces,
)
from .torus_model import TorusFibration, validate
from .utils.async_executor import AsyncExecutor
from .utils.fitting import FitResult, fit_power_series, next_order_exponent

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("k", "method", "value", "fd_step", "resolvent_residual", "wall_time_ms")
WALL_TIME_BUDGET_S = 600.0
# the k^{-1} tail term joins once the sweep has a redundant point for it
FIT_POWERS = [2, 1, 0]
TAIL_FIT_POWERS = [2, 1, 0, -1]
LEADING_LAW_POWERS = [0, -1, -2, -3]
LEADING_LAW_SIGNS = {2: 1.0, 3: -1.0, 4: 1.0}


@dataclass
class SweepConfig:
    model: TorusFibration
    k_list: List[int]
    engines: List[str]
    fd_step: float
    levels: int
    tolerances: Dict[str, float]
    tolerance_scale: float = 1.0
    output: str = DEFAULT_SETTINGS["output"]
    workers: int = DEFAULT_SETTINGS["max_workers"]
    document: Optional[ModelDocument] = None

    @classmethod
    def from_document(cls, doc: ModelDocument, tolerance_scale: float = 1.0, output: Optional[str] = None) -> "SweepConfig":
        settings = sweep_settings(doc)
        check_k_list(settings["k_list"])
        overrides = tuple(sorted(settings["tolerances"].items())) or None
        return cls(
            model=TorusFibration.from_document(doc),
            k_list=settings["k_list"],
            engines=settings["engines"],
            fd_step=settings["fd_step"],
            levels=settings["galerkin_levels"],
            tolerances=get_tolerances(tolerance_scale, overrides),
            tolerance_scale=tolerance_scale,
            output=output or settings["output"],
            workers=max_workers(),
            document=doc,
        )


@dataclass
class SweepReport:
    model_name: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    fits: Dict[str, Any] = field(default_factory=dict)
    expansions: Dict[str, Any] = field(default_factory=dict)
    identities: Dict[str, float] = field(default_factory=dict)
    torsion: List[Dict[str, float]] = field(default_factory=list)
    bergman: Dict[str, Any] = field(default_factory=dict)
    spectral: List[Dict[str, Any]] = field(default_factory=list)
    verdicts: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    tolerance_scale: float = 1.0

    @property
    def passed(self) -> bool:
        return not self.failures and all(v["passed"] for v in self.verdicts.values())

    def add_verdict(self, name: str, value: float, target: float, passed: Optional[bool] = None, **extra) -> None:
        if passed is None:
            passed = bool(np.isfinite(value) and value <= target)
        self.verdicts[name] = {"value": value, "target": target, "passed": bool(passed), **extra}

    def rows_for(self, method: str) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row["method"] == method]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model_name,
            "config": self.config,
            "tolerance_scale": self.tolerance_scale,
            "rows": self.rows,
            "fits": self.fits,
            "expansions": self.expansions,
            "identities": self.identities,
            "torsion": self.torsion,
            "bergman": self.bergman,
            "spectral": self.spectral,
            "verdicts": self.verdicts,
            "failures": self.failures,
            "passed": self.passed,
        }


def probe_vector(space: GalerkinSpace) -> FormVector:
    """Fixed low-ladder test form Σ_ℓ β_{0,ℓ}/(ℓ+1), ℓ ≤ 3"""
    coefficients = np.zeros(space.size, dtype=complex)
    for level in range(4):
        coefficients[space.basis_index(0, level)] = 1.0 / (level + 1)
    return FormVector(coefficients, space.k, "probe")


def spectral_task(model: TorusFibration, k: int, levels: int) -> Dict[str, Any]:
    """Everything one Galerkin space at level k feeds: curvature, ablation, traces, quadratic forms"""
    grid = model.grid()
    space, forms = assemble_contracted(model, model.base_point, k, levels, grid)
    point = curvature_berndtsson(model, model.base_point, k, space=space)
    ablation = curvature_berndtsson(model, model.base_point, k, space=space, include_resolvent=False)
    quadratic = {p: 0.0 for p in (1, 2, 3, 4)}
    for form in forms:
        for p, value in quadratic_forms(space, form, [1, 2, 3, 4]).items():
            quadratic[p] += value
    probes = [probe_vector(space)] + [form for form in forms[:1] if np.any(form.coefficients)]
    identity_residual = max(resolvent_expansion_check(space, float(k), g)["residual"] for g in probes)
    return {
        "k": k,
        "point": point,
        "ablation": ablation,
        "traces": resolvent_term_traces(space, forms),
        "quadratic": quadratic,
        "targets": leading_law_targets(space),
        "resolvent_identity": identity_residual,
        "bochner": bochner_identity_residual(space, probes[0]),
        "mass_condition": space.mass_condition,
        "levels": space.levels,
    }


def point_row(point: CurvaturePoint, fd_step: Optional[float] = None) -> Dict[str, Any]:
    diagnostics = point.diagnostics
    return {
        "k": point.k,
        "method": point.method,
        "value": point.value,
        "fd_step": fd_step if fd_step is not None else diagnostics.get("fd_step", ""),
        "resolvent_residual": diagnostics.get("resolvent_residual", ""),
        "wall_time_ms": diagnostics.get("wall_time_ms", ""),
        **{key: value for key, value in diagnostics.items()
           if key not in ("fd_step", "resolvent_residual", "wall_time_ms")},
    }


def _coefficient_error(fitted: float, target: float, floor: float) -> float:
    return abs(fitted - target) / max(abs(target), floor)


def fit_powers(count: int) -> List[int]:
    return TAIL_FIT_POWERS if count >= len(TAIL_FIT_POWERS) + 1 else FIT_POWERS


def _fit_rows(report: SweepReport, method: str, powers: Optional[Sequence[int]] = None) -> Optional[Dict[str, FitResult]]:
    rows = sorted(report.rows_for(method), key=lambda row: row["k"])
    powers = list(powers or fit_powers(len(rows)))
    if len(rows) < len(powers) + 1:
        return None
    ks = [row["k"] for row in rows]
    values = [row["value"] for row in rows]
    return {
        "unweighted": fit_power_series(ks, values, powers),
        "weighted": fit_power_series(ks, values, powers, weight_power=max(powers)),
    }


def _run_tasks(config: SweepConfig, report: SweepReport) -> List[Dict[str, Any]]:
    model = config.model
    tasks, labels = [], []
    for k in config.k_list:
        if "fd" in config.engines:
            tasks.append((curvature_fd, (model, model.base_point, k, config.fd_step)))
            labels.append((k, "fd"))
        if "berndtsson" in config.engines:
            tasks.append((spectral_task, (model, k, config.levels)))
            labels.append((k, "berndtsson"))
    with AsyncExecutor(max_workers=config.workers) as executor:
        results = executor.map_tasks(tasks)
    spectral = []
    for (k, engine), result in zip(labels, results):
        if isinstance(result, Exception):
            logger.error(f"k={k} engine={engine} failed: {result}", exc_info=result)
            report.failures.append({
                "k": k, "engine": engine, "error": type(result).__name__, "message": str(result),
                "check": getattr(result, "check", ""), "value": getattr(result, "value", None),
            })
        elif engine == "fd":
            report.rows.append(point_row(result))
        else:
            report.rows.append(point_row(result["point"]))
            report.rows.append(point_row(result["ablation"]))
            spectral.append(result)
    return spectral


def run_sweep(config: SweepConfig) -> SweepReport:
    """Per-k curvature by every engine, fits, closed-form terms, identities and verdicts"""
    started = time.perf_counter()
    model = config.model
    report = SweepReport(model_name=model.name, tolerance_scale=config.tolerance_scale, config={
        "k_list": list(config.k_list), "engines": list(config.engines), "fd_step": config.fd_step,
        "galerkin_levels": config.levels, "tolerances": dict(config.tolerances), "grid_n": model.grid_n,
        "document": config.document,
    })
    validation = validate(model, step=config.fd_step)
    if not validation.passed:
        validation.raise_first()
    tol = config.tolerances

    spectral = _run_tasks(config, report)
    l2 = l2_expansion(model)
    quillen = quillen_expansion(model)
    polynomial = grr_polynomial(model)
    report.expansions = {"l2": l2.to_dict(), "quillen": quillen.to_dict(), "grr": polynomial.to_dict()}
    for k in config.k_list:
        report.rows.append({"k": k, "method": "grr", "value": polynomial.evaluate(k), "fd_step": "",
                            "resolvent_residual": "", "wall_time_ms": ""})
    report.rows.sort(key=lambda row: (row["k"], row["method"]))
    report.identities = identity_suite(model)
    report.bergman = bergman_tyz_check(model, k_list=config.k_list)

    _fits_and_verdicts(config, report, l2, quillen, polynomial)
    _spectral_verdicts(report, spectral, tol)
    identity_verdicts(report, tol)

    elapsed = time.perf_counter() - started
    if elapsed > WALL_TIME_BUDGET_S:
        logger.warning(f"Sweep took {elapsed:.1f}s, above the {WALL_TIME_BUDGET_S:.0f}s budget")
    logger.info(f"Sweep of {model.name} finished in {elapsed:.1f}s: "
                f"{sum(v['passed'] for v in report.verdicts.values())}/{len(report.verdicts)} verdicts pass")
    return report


def _fits_and_verdicts(config: SweepConfig, report: SweepReport, l2, quillen, polynomial) -> None:
    tol = config.tolerances
    floor = 1e-6 * max(1.0, abs(l2.t_top))
    targets = {2: l2.t_top, 1: l2.t_mid, 0: l2.t_low}
    names = {2: "top_coefficient", 1: "mid_coefficient", 0: "low_coefficient"}
    for method in ("fd", "berndtsson", "berndtsson_no_resolvent", "grr"):
        fits = _fit_rows(report, method)
        if fits is None:
            continue
        rows = sorted(report.rows_for(method), key=lambda row: row["k"])
        ks = [row["k"] for row in rows]
        tails = [row["value"] - l2.evaluate(row["k"]) for row in rows]
        report.fits[method] = {
            "unweighted": fits["unweighted"].to_dict(),
            "weighted": fits["weighted"].to_dict(),
            "next_order_exponent": next_order_exponent(ks, tails),
        }
    primary = "fd" if "fd" in report.fits else ("berndtsson" if "berndtsson" in report.fits else None)
    if primary is not None:
        fitted = report.fits[primary]["unweighted"]["coefficients"]
        for power, name in names.items():
            error = _coefficient_error(fitted[str(power)], targets[power], floor)
            report.add_verdict(name, error, tol[name], method=primary)
    if "berndtsson" in report.fits and "berndtsson_no_resolvent" in report.fits:
        shift = (report.fits["berndtsson"]["unweighted"]["coefficients"]["1"]
                 - report.fits["berndtsson_no_resolvent"]["unweighted"]["coefficients"]["1"])
        expected = l2.details["half_mu_norm2_term"]
        report.fits["resolvent_ablation"] = {"mid_shift": shift, "expected": expected}
        report.add_verdict("resolvent_ablation", _coefficient_error(shift, expected, floor), tol["leading_laws"])

    report.add_verdict("side_equality", l2.max_gap(quillen), tol["side_equality"])

    fd_rows = {row["k"]: row["value"] for row in report.rows_for("fd")}
    for k, value in sorted(fd_rows.items()):
        report.torsion.append({"k": k, "value": polynomial.evaluate(k) - value})
    torsion_verdicts(report, tol, polynomial)

    berndtsson_rows = {row["k"]: row["value"] for row in report.rows_for("berndtsson")}
    gaps = [abs(berndtsson_rows[k] - fd_rows[k]) / max(abs(fd_rows[k]), 1e-6)
            for k in sorted(fd_rows) if k in berndtsson_rows]
    if gaps:
        report.add_verdict("cross_method", max(gaps), tol["cross_method"])


def torsion_verdicts(report: SweepReport, tol: Dict[str, float], polynomial) -> None:
    series = {entry["k"]: entry["value"] for entry in report.torsion}
    if len(series) < 2:
        return
    noise = {k: 1e-8 * max(1.0, abs(polynomial.evaluate(k))) for k in series}
    ratios = []
    for k, value in series.items():
        if 2 * k in series and abs(value) > noise[k]:
            ratios.append(abs(series[2 * k]) / abs(value))
    worst = max(ratios) if ratios else 0.0
    report.add_verdict("torsion_decay", worst, tol["torsion_ratio"], pairs=len(ratios))
    scaled = [abs(v) * k for k, v in series.items()]
    k_min = min(series)
    bound = 2.0 * max(scaled[0], noise[k_min] * k_min)
    report.add_verdict("torsion_bounded", max(scaled), bound, passed=max(scaled) <= bound)


def _spectral_verdicts(report: SweepReport, spectral: List[Dict[str, Any]], tol: Dict[str, float]) -> None:
    if not spectral:
        return
    spectral = sorted(spectral, key=lambda item: item["k"])
    for item in spectral:
        k = item["k"]
        targets = item["targets"]
        entry = {
            "k": k,
            "resolvent_identity": item["resolvent_identity"],
            "bochner": item["bochner"],
            "mass_condition": item["mass_condition"],
            "levels": item["levels"],
            "traces": item["traces"],
            "k2_trace_IV": k ** 2 * item["traces"]["IV"],
            "k2_trace_VII": k ** 2 * item["traces"]["VII"],
            "quadratic": {str(p): v for p, v in item["quadratic"].items()},
            **targets,
            "quadratic_identity_gap": relative_gap(item["quadratic"][1], targets["quadratic_identity_rhs"]),
        }
        weighted = targets["antiholo_weighted"]
        if weighted > 0:
            entry["leading_ratios"] = {str(p): item["quadratic"][p] / (k ** (p - 1) * weighted) for p in (2, 3, 4)}
        report.spectral.append(entry)
    report.add_verdict("resolvent_identity", max(e["resolvent_identity"] for e in report.spectral),
                       tol["resolvent_identity"])
    report.add_verdict("quadratic_form_identity", max(e["quadratic_identity_gap"] for e in report.spectral),
                       tol["quadratic_form_identity"])
    with_ratios = [entry for entry in report.spectral if "leading_ratios" in entry]
    if with_ratios:
        limits = leading_law_limits([e["k"] for e in with_ratios],
                                    {p: [e["leading_ratios"][str(p)] for e in with_ratios] for p in LEADING_LAW_SIGNS})
        report.fits["leading_laws"] = {str(p): limit for p, limit in limits.items()}
        worst = max(abs(limits[p] - sign) for p, sign in LEADING_LAW_SIGNS.items())
        report.add_verdict("leading_laws", worst, tol["leading_laws"], k_list=[e["k"] for e in with_ratios])


def leading_law_limits(ks: Sequence[int], ratios: Dict[int, Sequence[float]]) -> Dict[int, float]:
    """k → ∞ limit of each ratio Q_p/(k^{p-1}W), fitted against 1, 1/k, 1/k², ... over the sweep.

    With fewer than three k the last raw ratio is the estimate.
    """
    if len(ks) < 3:
        return {p: float(values[-1]) for p, values in ratios.items()}
    powers = LEADING_LAW_POWERS[:min(len(LEADING_LAW_POWERS), len(ks) - 1)]
    return {p: float(fit_power_series(ks, values, powers).coefficient(0)) for p, values in ratios.items()}


def identity_verdicts(report: SweepReport, tol: Dict[str, float]) -> None:
    identities = report.identities
    report.add_verdict("norm_identities", max(identities["akizuki_nakano"], identities["antiholomorphic_gradient"]),
                       tol["norm_identities"])
    report.add_verdict("fiber_identities", max(identities["le1"], identities["le2"]), tol["fiber_identities"])
    if report.bergman:
        bergman_verdicts(report, tol)


def bergman_verdicts(report: SweepReport, tol: Dict[str, float]) -> None:
    bergman = report.bergman
    report.add_verdict("bergman_trace", bergman["trace_residual"], tol["bergman_flat"])
    if bergman["interior_nodes"] == 0:
        report.add_verdict("bergman_flat", bergman["density_deviation"], tol["bergman_flat"])
    else:
        report.add_verdict("bergman_subleading", bergman["subleading_error"], tol["bergman_subleading"])


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [_jsonable(value.real), _jsonable(value.imag)]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _csv_field(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def emit(report: SweepReport, out_dir: str, formats: Sequence[str] = ("json", "csv")) -> List[str]:
    """Write report.json (full, schema-versioned) and report.csv (one row per k and method)"""
    written = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        if "json" in formats:
            path = os.path.join(out_dir, "report.json")
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(_jsonable(report.to_dict()), handle, indent=2, sort_keys=True, ensure_ascii=False)
                handle.write("\n")
            written.append(path)
        if "csv" in formats and report.rows:
            path = os.path.join(out_dir, "report.csv")
            with open(path, "w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(CSV_COLUMNS)
                for row in report.rows:
                    writer.writerow([_csv_field(row.get(column, "")) for column in CSV_COLUMNS])
            written.append(path)
    except OSError as e:
        raise IoFailure(f"cannot write report: {e.strerror}", check="emit", value=out_dir) from e
    logger.info(f"Report written to {', '.join(written)}")
    return written
