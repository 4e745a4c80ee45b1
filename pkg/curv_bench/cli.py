import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from .config import DEFAULT_SETTINGS, apply_overrides, get_tolerances, load_document, log_file, sweep_settings
from .curvature_engines import (
    ROUNDOFF_GAP,
    bergman_tyz_check,
    curvature_berndtsson,
    curvature_fd,
    grr_polynomial,
    identity_suite,
    l2_expansion,
    leading_law_targets,
    quadratic_identity_refinement,
    quillen_expansion,
    torsion_variation,
    trace_rr_identity,
)
from .error_handler import EXIT_OK, ConfigError, ErrorHandler, VerificationFailed, WorkbenchError
from .jet_core import relative_gap
from .spectral_ops import assemble_contracted, bochner_identity_residual, quadratic_forms, resolvent_expansion_check
from .sweep_harness import (
    SweepConfig,
    SweepReport,
    bergman_verdicts,
    emit,
    identity_verdicts,
    point_row,
    probe_vector,
    run_sweep,
    torsion_verdicts,
)
from .torus_model import TorusFibration, validate

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("validate", "identities", "bergman", "curvature", "quillen", "torsion", "sweep")
IDENTITY_LEVELS = (4, 8, 16)


class WorkbenchArgumentParser(argparse.ArgumentParser):
    """Usage errors surface as ConfigError (exit 1) instead of argparse's exit 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message, check="arguments")


def setup_logging(debug: bool = False):
    """Log to the workbench log file and stderr"""
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file()),
            logging.StreamHandler()
        ]
    )


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments"""
    parser = WorkbenchArgumentParser(description='Direct image curvature verification workbench')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=f'run the {name} checks')
        sub.add_argument('config', help='model / sweep JSON document')
        sub.add_argument('--k', type=int, help='bundle power for fixed-k subcommands')
        sub.add_argument('--grid-n', type=int, help='fiber grid resolution (even, >= 16)')
        sub.add_argument('--fd-step', type=float, help='finite-difference step on the base')
        sub.add_argument('--levels', type=int, help='Galerkin ladder truncation')
        sub.add_argument('--out', help='output directory for report.json / report.csv')
        sub.add_argument('--tolerance-scale', type=float, default=None, help='multiply every tolerance')
        sub.add_argument('--debug', action='store_true', help='enable debug logging')
    return parser.parse_args(argv)


def _new_report(model: TorusFibration, args: argparse.Namespace, tolerance_scale: float) -> SweepReport:
    return SweepReport(model_name=model.name, tolerance_scale=tolerance_scale,
                       config={"command": args.command, "config": args.config, "grid_n": model.grid_n})


def run_validate(model: TorusFibration, settings: Dict[str, Any], args, report: SweepReport) -> None:
    result = validate(model, step=settings["fd_step"])
    report.identities = dict(result.margins)
    report.failures.extend(result.failures)
    report.add_verdict("validation", len(result.failures), 0, passed=result.passed)


def run_identities(model: TorusFibration, settings: Dict[str, Any], args, report: SweepReport) -> None:
    tol = settings["tolerances"]
    report.identities = identity_suite(model)
    identity_verdicts(report, tol)
    report.add_verdict("decomposition", report.identities["decomposition"], tol["norm_identities"])
    report.add_verdict("side_equality", report.identities["side_equality"], tol["side_equality"])
    grid = model.grid()
    for k in ([args.k] if args.k else IDENTITY_LEVELS):
        space, forms = assemble_contracted(model, model.base_point, k, settings["galerkin_levels"], grid)
        probes = [probe_vector(space)] + [form for form in forms[:1] if np.any(form.coefficients)]
        lhs = sum(quadratic_forms(space, form, [1])[1] for form in forms)
        rhs = leading_law_targets(space)["quadratic_identity_rhs"]
        report.spectral.append({
            "k": k,
            "resolvent_identity": max(resolvent_expansion_check(space, float(k), g)["residual"] for g in probes),
            "quadratic_identity_lhs": lhs,
            "quadratic_identity_rhs": rhs,
            "quadratic_identity_gap": relative_gap(lhs, rhs),
            "bochner": bochner_identity_residual(space, probes[0]),
            "bochner_without_curvature": bochner_identity_residual(space, probes[0], include_curvature=False),
        })
    report.add_verdict("resolvent_identity", max(e["resolvent_identity"] for e in report.spectral),
                       tol["resolvent_identity"])
    report.add_verdict("quadratic_form_identity", max(e["quadratic_identity_gap"] for e in report.spectral),
                       tol["quadratic_form_identity"])
    refinement = quadratic_identity_refinement(model, None, args.k or min(IDENTITY_LEVELS),
                                               settings["galerkin_levels"])
    report.identities["quadratic_identity_refinement"] = refinement
    report.add_verdict("quadratic_form_refinement", refinement["fine"]["gap"],
                       max(refinement["coarse"]["gap"] / 10.0, ROUNDOFF_GAP), passed=refinement["improved"])


def run_bergman(model: TorusFibration, settings: Dict[str, Any], args, report: SweepReport) -> None:
    report.bergman = bergman_tyz_check(model, k_list=settings["k_list"])
    bergman_verdicts(report, settings["tolerances"])


def run_curvature(model: TorusFibration, settings: Dict[str, Any], args, report: SweepReport) -> None:
    k = settings["k"]
    fd = curvature_fd(model, model.base_point, k, settings["fd_step"])
    berndtsson = curvature_berndtsson(model, model.base_point, k, levels=settings["galerkin_levels"])
    report.rows.extend([point_row(fd), point_row(berndtsson)])
    gap = abs(berndtsson.value - fd.value) / max(abs(fd.value), 1e-6)
    report.add_verdict("cross_method", gap, settings["tolerances"]["cross_method"], k=k)


def run_quillen(model: TorusFibration, settings: Dict[str, Any], args, report: SweepReport) -> None:
    l2, quillen = l2_expansion(model), quillen_expansion(model)
    polynomial = grr_polynomial(model)
    report.expansions = {"l2": l2.to_dict(), "quillen": quillen.to_dict(), "grr": polynomial.to_dict()}
    report.identities = {"trace_rr": trace_rr_identity(model)["residual"],
                         "grr_direct": polynomial.a0_gap()}
    report.add_verdict("side_equality", l2.max_gap(quillen), settings["tolerances"]["side_equality"])


def run_torsion(model: TorusFibration, settings: Dict[str, Any], args, report: SweepReport) -> None:
    polynomial = grr_polynomial(model)
    for k in settings["k_list"]:
        fd = curvature_fd(model, model.base_point, k, settings["fd_step"])
        report.rows.append(point_row(fd))
        report.torsion.append({"k": k, "value": torsion_variation(model, None, k, fd, polynomial)})
    torsion_verdicts(report, settings["tolerances"], polynomial)


COMMANDS: Dict[str, Callable] = {
    "validate": run_validate,
    "identities": run_identities,
    "bergman": run_bergman,
    "curvature": run_curvature,
    "quillen": run_quillen,
    "torsion": run_torsion,
}


def print_verdicts(report: SweepReport, stream=None) -> None:
    stream = stream or sys.stdout
    print(f"{report.model_name}: {'PASS' if report.passed else 'FAIL'}", file=stream)
    for name, verdict in report.verdicts.items():
        status = "ok" if verdict["passed"] else "FAIL"
        print(f"  {name:<26} {verdict['value']:<24.6e} <= {verdict['target']:<12.3e} {status}", file=stream)
    for failure in report.failures:
        print(f"  failure: {failure}", file=stream)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; the return value is the process exit code"""
    command = "arguments"
    try:
        args = parse_args(argv)
        command = args.command
        setup_logging(args.debug)
        load_dotenv()
        doc = load_document(args.config)
        doc = apply_overrides(doc, {
            "k": args.k,
            "grid_n": args.grid_n,
            "fd_step": args.fd_step,
            "galerkin_levels": args.levels,
            "tolerance_scale": args.tolerance_scale,
        })
        tolerance_scale = args.tolerance_scale or 1.0
        settings = sweep_settings(doc)
        settings["k"] = doc.get("k", DEFAULT_SETTINGS["k"])
        settings["tolerances"] = get_tolerances(tolerance_scale, tuple(sorted(settings["tolerances"].items())) or None)
        out_dir = args.out or settings["output"]
        if command == "sweep":
            report = run_sweep(SweepConfig.from_document(doc, tolerance_scale=tolerance_scale, output=out_dir))
        else:
            model = TorusFibration.from_document(doc)
            if command != "validate":
                validate(model, step=settings["fd_step"]).raise_first()
            report = _new_report(model, args, tolerance_scale)
            COMMANDS[command](model, settings, args, report)
        emit(report, out_dir)
        print_verdicts(report)
        if not report.passed:
            failed = [name for name, verdict in report.verdicts.items() if not verdict["passed"]]
            raise VerificationFailed(", ".join(failed) or "run failures", check=command,
                                     value=len(failed) + len(report.failures))
        return EXIT_OK
    except WorkbenchError as e:
        ErrorHandler.log_error(e, context=command)
        print(ErrorHandler.handle_error(e), file=sys.stderr)
        return ErrorHandler.exit_code(e)
    except Exception as e:
        logging.critical(f"{command} failed: {str(e)}", exc_info=True)
        print(ErrorHandler.handle_error(e), file=sys.stderr)
        return ErrorHandler.exit_code(e)
