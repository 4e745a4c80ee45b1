"""Curvature of the direct image bundle at one base point, by independent routes.

- curvature_fd: -(1/2π)∂_z∂_z̄ log det H from a 5x5 stencil of Gram matrices
- curvature_berndtsson: the fixed-k trace formula with Galerkin resolvent solves
- l2_expansion / quillen_expansion: closed-form k², k, k⁰ coefficients from two separate integrand assemblies
- grr_polynomial, bergman_tyz_check, torsion_variation and the fiber-integral identities
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy import linalg

from .config import DEFAULT_SETTINGS
from .error_handler import ModelError, NoisyDifference, StencilFailure
from .jet_core import (
    curvature_scalars,
    decomposition_residual,
    frame_components,
    geodesic_curvature,
    jet_norms,
    log_metric_hessian,
    relative_gap,
)
from .spectral_ops import (
    GalerkinSpace,
    assemble,
    assemble_contracted,
    contract_all,
    quadratic_forms,
    resolvent_images,
)
from .torus_model import FiberGrid, TorusFibration, quadrature, sample_jets, theta_sections
from .utils.fitting import fit_power_series

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
RICHARDSON_TOLERANCE = 1e-3
TYZ_MAX_K = 32
TYZ_MAX_POWERS = 5
INTERIOR_FRACTION = 0.1
ROUNDOFF_GAP = 1e-13

# fourth-order central second difference on offsets -2..2
_SECOND_DIFFERENCE = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


@dataclass
class CurvaturePoint:
    """-√-1 c₁(Eᵏ)(ζ, ζ̄) at the base point, ζ = ∂/∂z"""

    k: int
    value: float
    method: str
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"k": self.k, "method": self.method, "value": self.value, **self.diagnostics}


@dataclass
class ExpansionTerms:
    t_top: float
    t_mid: float
    t_low: float
    side: str
    details: Dict[str, float] = field(default_factory=dict)

    def as_tuple(self):
        return self.t_top, self.t_mid, self.t_low

    def evaluate(self, k: float) -> float:
        return self.t_top * k ** 2 + self.t_mid * k + self.t_low

    def max_gap(self, other: "ExpansionTerms") -> float:
        """Largest coefficient mismatch, relative to max(|a|, |b|, 1)"""
        return max(abs(a - b) / max(abs(a), abs(b), 1.0) for a, b in zip(self.as_tuple(), other.as_tuple()))

    def to_dict(self) -> Dict[str, Any]:
        return {"side": self.side, "t_top": self.t_top, "t_mid": self.t_mid, "t_low": self.t_low, **self.details}


def _grid(model: TorusFibration, grid: Optional[FiberGrid]) -> FiberGrid:
    return grid or model.grid()


def gram(model: TorusFibration, z: complex, k: int, grid: Optional[FiberGrid] = None) -> np.ndarray:
    """H_ij(z) = ∫u_iū_je^{-kφ}√-1dv∧dv̄"""
    return theta_sections(model, z, k, _grid(model, grid), check_periodicity=False).gram


def log_det_gram(model: TorusFibration, z: complex, k: int, grid: FiberGrid) -> float:
    try:
        factor = linalg.cholesky(gram(model, z, k, grid), lower=True)
    except (linalg.LinAlgError, ModelError) as e:
        raise StencilFailure(f"Gram evaluation failed: {e}", check="curvature_fd", value=z) from e
    return float(2.0 * np.sum(np.log(np.real(np.diag(factor)))))


def _stencil_laplacians(model: TorusFibration, z0: complex, k: int, h: float, grid: FiberGrid,
                        cache: Dict[tuple, float]) -> Dict[str, float]:
    """(∂_x² + ∂_y²) log det H along the axes and along the diagonals, step h; cache keyed by stencil index"""

    def sample(mx: int, my: int) -> float:
        if (mx, my) not in cache:
            cache[(mx, my)] = log_det_gram(model, z0 + h * complex(mx, my), k, grid)
        return cache[(mx, my)]

    along = {
        "axes": [(1, 0), (0, 1)],
        "diagonals": [(1, 1), (1, -1)],
    }
    result = {}
    for name, directions in along.items():
        total = 0.0
        for dx, dy in directions:
            step = h * np.hypot(dx, dy)
            values = np.array([sample(m * dx, m * dy) for m in range(-2, 3)])
            total += float(_SECOND_DIFFERENCE @ values) / step ** 2
        result[name] = total
    return result


def curvature_fd(model: TorusFibration, z0: complex, k: int, h: float = DEFAULT_SETTINGS["fd_step"],
                 grid: Optional[FiberGrid] = None) -> CurvaturePoint:
    """-(1/2π)∂_z∂_z̄ log det H by fourth-order differences, with a Richardson check at h/2"""
    grid = _grid(model, grid)
    started = time.perf_counter()
    cache: Dict[tuple, float] = {}
    coarse = _stencil_laplacians(model, z0, k, h, grid, cache)
    fine = _stencil_laplacians(model, z0, k, h / 2, grid, {(0, 0): cache[(0, 0)]})

    def curvature(laplacians):
        # ∂_z∂_z̄ = Δ/4, averaged over the two stencil orientations
        return -0.5 * (laplacians["axes"] + laplacians["diagonals"]) / 4.0 / TWO_PI

    value_h, value_half = curvature(coarse), curvature(fine)
    extrapolated = (16.0 * value_half - value_h) / 15.0
    disagreement = abs(value_h - value_half) / max(abs(value_half), 1e-6 * k)
    orientation_gap = abs(fine["axes"] - fine["diagonals"]) / 4.0 / TWO_PI
    logger.debug(f"FD curvature k={k}: h={value_h:.12e}, h/2={value_half:.12e}, rel={disagreement:.2e}")
    if disagreement > RICHARDSON_TOLERANCE:
        raise NoisyDifference("Richardson disagreement between h and h/2", check="curvature_fd",
                              value={"k": k, "h": h, "relative": disagreement})
    return CurvaturePoint(k=k, value=extrapolated, method="fd", diagnostics={
        "fd_step": h,
        "value_h": value_h,
        "value_half_step": value_half,
        "richardson": disagreement,
        "orientation_gap": orientation_gap,
        "wall_time_ms": (time.perf_counter() - started) * 1e3,
    })


def curvature_berndtsson(model: TorusFibration, z0: complex, k: int, space: Optional[GalerkinSpace] = None,
                         levels: int = DEFAULT_SETTINGS["galerkin_levels"], grid: Optional[FiberGrid] = None,
                         include_resolvent: bool = True) -> CurvaturePoint:
    """(1/2π)Σ_j[k∫c(φ)|ũ_j|²e^{-kφ} + k⟨(k+Δ′)⁻¹i_μũ_j, i_μũ_j⟩]

    Without a prepared space, `levels` is the base truncation and the space is assembled by
    assemble_contracted, so small k get a deeper ladder.
    """
    started = time.perf_counter()
    forms = None
    if space is None:
        space, forms = assemble_contracted(model, z0, k, levels, _grid(model, grid))
    sections = space.sections
    density = np.sum(np.abs(sections.orthonormal_samples) ** 2, axis=0) * sections.weight
    c_term = k * float(quadrature(space.scalars.c_phi * density, space.grid).real)
    resolvent_term = 0.0
    worst_projection = 0.0
    worst_solve = 0.0
    if include_resolvent and not space.mu.is_zero:
        forms = forms if forms is not None else contract_all(space)
        for form, image in zip(forms, resolvent_images(space, float(k), forms)):
            worst_projection = max(worst_projection, form.projection_residual)
            worst_solve = max(worst_solve, image.solve_residual)
            resolvent_term += k * float(np.vdot(form.coefficients, space.mass @ image.coefficients).real)
    value = (c_term + resolvent_term) / TWO_PI
    logger.debug(f"Berndtsson k={k}: c-term={c_term:.12e}, resolvent term={resolvent_term:.12e}")
    return CurvaturePoint(k=k, value=value, method="berndtsson" if include_resolvent else "berndtsson_no_resolvent",
                          diagnostics={
                              "c_term": c_term / TWO_PI,
                              "resolvent_term": resolvent_term / TWO_PI,
                              "projection_residual": worst_projection,
                              "resolvent_residual": worst_solve,
                              "levels": space.levels,
                              "wall_time_ms": (time.perf_counter() - started) * 1e3,
                          })


def l2_expansion(model: TorusFibration, z0: Optional[complex] = None, grid: Optional[FiberGrid] = None) -> ExpansionTerms:
    """Closed-form k², k, k⁰ coefficients from c(φ), ρ, Δρ, μ and its norms"""
    grid = _grid(model, grid)
    z0 = model.base_point if z0 is None else z0
    scalars, mu, norms = jet_norms(sample_jets(model, z0, grid))
    g = scalars.metric
    mu2 = np.abs(mu.mu) ** 2
    c = scalars.c_phi
    scale = TWO_PI ** -2

    def integral(values):
        return float(quadrature(values, grid, g).real)

    t_top = scale * integral(c)
    t_mid = scale * integral(0.5 * mu2 - 0.5 * scalars.rho * c)
    t_low = scale * (integral(c * (-scalars.lap_rho / 6.0 + scalars.contraction_defect / 24.0)
                              - 0.25 * scalars.rho * mu2)
                     + norms.mu_ric / 12.0 + norms.grad_mu / 12.0 - norms.dbar_star_mu_norm2 / 4.0)
    return ExpansionTerms(t_top, t_mid, t_low, side="l2", details={
        "mu_norm2": norms.mu_norm2,
        "half_mu_norm2_term": scale * 0.5 * norms.mu_norm2,
        **{f"norm_{key}": value for key, value in norms.to_dict().items()},
    })


@dataclass
class GRRPolynomial:
    """-c₁(λ, ‖·‖_Q)(ζ, ζ̄) = a₂k² + a₁k + a₀ at fiber dimension one"""

    a2: float
    a1: float
    a0: float
    c2_split: float = 0.0
    a0_direct: float = 0.0
    # a₀ with absolute integrands, the comparison scale when the wedge cancels over the fiber
    a0_scale: float = 0.0

    def a0_gap(self) -> float:
        return relative_gap(self.a0, self.a0_direct, floor=self.a0_scale)

    def evaluate(self, k: float) -> float:
        return self.a2 * k ** 2 + self.a1 * k + self.a0

    def to_dict(self) -> Dict[str, float]:
        return {"a2": self.a2, "a1": self.a1, "a0": self.a0, "c2_split": self.c2_split, "a0_direct": self.a0_direct}


def _quillen_integrals(model: TorusFibration, z0: complex, grid: FiberGrid) -> Dict[str, float]:
    """Fiber integrals of c₁(L)∧c₁(K), c₁(K)² and the coordinate-frame wedge, all against dA"""
    jets = sample_jets(model, z0, grid)
    frame = frame_components(jets)
    g = jets.metric
    c = geodesic_curvature(jets)
    A, B, D = frame["A"], frame["B"], frame["D"]
    hessian = log_metric_hessian(jets)

    def integral(values):
        return float(quadrature(values, grid).real)

    return {
        "top": integral(c * g),
        "mixed": integral(A * g + D * c),
        "canonical_square": integral(2.0 * (A * D - np.abs(B) ** 2)),
        "canonical_square_abs": integral(2.0 * (np.abs(A * D) + np.abs(B) ** 2)),
        # the same wedge in the (dz, dv) coordinate frame, no horizontal lift
        "canonical_square_direct": integral(2.0 * (hessian["zz"] * hessian["vv"]
                                                    - hessian["zv"] * hessian["vz"]).real),
    }


def grr_polynomial(model: TorusFibration, z0: Optional[complex] = None, grid: Optional[FiberGrid] = None) -> GRRPolynomial:
    """Fiber integral of [Td(T_{X/M})·ch(Lᵏ)] in degree (1,1); c₂ of a line bundle vanishes"""
    grid = _grid(model, grid)
    z0 = model.base_point if z0 is None else z0
    integrals = _quillen_integrals(model, z0, grid)
    scale = TWO_PI ** -2
    c2_split = 0.0
    return GRRPolynomial(
        a2=scale * integrals["top"],
        a1=scale * 0.5 * integrals["mixed"],
        a0=scale * (integrals["canonical_square"] + c2_split) / 12.0,
        c2_split=c2_split,
        a0_direct=scale * integrals["canonical_square_direct"] / 12.0,
        a0_scale=scale * integrals["canonical_square_abs"] / 12.0,
    )


def quillen_expansion(model: TorusFibration, z0: Optional[complex] = None, grid: Optional[FiberGrid] = None) -> ExpansionTerms:
    polynomial = grr_polynomial(model, z0, grid)
    return ExpansionTerms(polynomial.a2, polynomial.a1, polynomial.a0, side="quillen",
                          details={"a0_direct": polynomial.a0_direct, "c2_split": polynomial.c2_split,
                                   "a0_gap": polynomial.a0_gap()})


def fiber_identities(model: TorusFibration, z0: Optional[complex] = None, grid: Optional[FiberGrid] = None) -> Dict[str, float]:
    """Residuals of the two fiber-integral identities relating the canonical curvature to ρ, c(φ) and μ"""
    grid = _grid(model, grid)
    z0 = model.base_point if z0 is None else z0
    jets = sample_jets(model, z0, grid)
    scalars, mu, norms = jet_norms(jets)
    frame = frame_components(jets)
    g = scalars.metric
    mu2 = np.abs(mu.mu) ** 2

    def against_omega(values):
        return float(quadrature(values, grid, g).real)

    A, D, c, rho = frame["A"], frame["D"], scalars.c_phi, scalars.rho
    canonical_wedge = float(quadrature(A * g + D * c, grid).real)
    first_rhs = -against_omega(rho * c) + norms.mu_norm2
    first_scale = float(quadrature(np.abs(A * g) + np.abs(D * c), grid).real) + against_omega(np.abs(rho * c)) + norms.mu_norm2
    second_lhs = against_omega(c * scalars.lap_rho)
    second_rhs = against_omega(rho * A) - against_omega(rho * mu2)
    second_scale = against_omega(np.abs(c * scalars.lap_rho) + np.abs(rho * A) + np.abs(rho) * mu2)
    residual_field = frame["geodesic_laplacian_residual"]
    return {
        "le1": relative_gap(canonical_wedge, first_rhs, floor=first_scale),
        "le2": relative_gap(second_lhs, second_rhs, floor=second_scale),
        "geodesic_laplacian_residual": float(np.max(np.abs(residual_field)) / max(1.0, float(np.max(np.abs(frame["A"]))))),
        "akizuki_nakano": norms.residuals["akizuki_nakano"],
        "antiholomorphic_gradient": norms.residuals["antiholomorphic_gradient"],
    }


def trace_rr_identity(model: TorusFibration, z0: Optional[complex] = None, grid: Optional[FiberGrid] = None) -> Dict[str, float]:
    """∫(√-1)²tr(R∧R)(ζ, ζ̄) from the frame against 2∫AD - 2‖∇′μ‖² + ∫(|Ric|² - |R|²)c(φ)ω"""
    grid = _grid(model, grid)
    z0 = model.base_point if z0 is None else z0
    jets = sample_jets(model, z0, grid)
    frame = frame_components(jets)
    scalars, _, norms = jet_norms(jets)
    AD, B2 = frame["A"] * frame["D"], np.abs(frame["B"]) ** 2
    defect = (scalars.ric_norm2 - scalars.r_norm2) * scalars.c_phi
    lhs = float(quadrature(2.0 * (AD - B2), grid).real)
    rhs = (2.0 * float(quadrature(AD, grid).real) - 2.0 * norms.grad_mu
           + float(quadrature(defect, grid, scalars.metric).real))
    scale = (float(quadrature(2.0 * (np.abs(AD) + B2), grid).real) + 2.0 * norms.grad_mu
             + float(quadrature(np.abs(defect), grid, scalars.metric).real))
    return {"lhs": lhs, "rhs": rhs, "residual": relative_gap(lhs, rhs, floor=scale)}


def tyz_coefficients(model: TorusFibration, z0: Optional[complex] = None, k_list: Sequence[int] = (8, 12, 16, 24, 32),
                     grid: Optional[FiberGrid] = None) -> Dict[str, Any]:
    """Per-node fit of 2π·B_k against k, 1, 1/k, ... with one power per level, at most TYZ_MAX_POWERS"""
    grid = _grid(model, grid)
    z0 = model.base_point if z0 is None else z0
    k_list = list(k_list)
    densities = []
    traces = []
    for k in k_list:
        system = theta_sections(model, z0, k, grid)
        densities.append(TWO_PI * system.bergman_density())
        traces.append(abs(system.trace() - k) / k)
    powers = [1 - i for i in range(max(3, min(len(k_list), TYZ_MAX_POWERS)))]
    fit = fit_power_series(k_list, np.stack(densities), powers, require_redundancy=False)
    scalars = curvature_scalars(sample_jets(model, z0, grid))
    return {
        "k_list": k_list,
        "densities": densities,
        "trace_residuals": traces,
        "A0": fit.coefficient(1),
        "A1": fit.coefficient(0),
        "A2": fit.coefficient(-1),
        "expected_A1": -0.5 * scalars.rho,
        "expected_A2": -scalars.lap_rho / 6.0 + scalars.contraction_defect / 24.0,
    }


def bergman_tyz_check(model: TorusFibration, z0: Optional[complex] = None, k_list: Sequence[int] = (8, 12, 16, 24, 32),
                      grid: Optional[FiberGrid] = None, max_k: int = TYZ_MAX_K) -> Dict[str, Any]:
    """Flatness and trace of B_k, and the fitted k⁰ coefficient of 2π·B_k against -ρ/2.

    Only levels k <= max_k enter the fit. The coefficient is compared at interior nodes, the nodes
    where |ρ| is at least INTERIOR_FRACTION of its peak over the fiber; elsewhere -ρ/2 is too close
    to zero for a relative error. A model with ρ ≡ 0 has no interior nodes and is judged on flatness.
    """
    k_list = [k for k in k_list if k <= max_k]
    fits = tyz_coefficients(model, z0, k_list, grid)
    flat_deviation = max(float(np.max(np.abs(d / k - 1.0))) for d, k in zip(fits["densities"], fits["k_list"]))
    expected = fits["expected_A1"]
    peak = float(np.max(np.abs(expected)))
    interior = np.abs(expected) >= INTERIOR_FRACTION * peak if peak > 0 else np.zeros_like(expected, dtype=bool)
    if np.any(interior):
        a1_error = float(np.max(np.abs(fits["A1"][interior] - expected[interior]) / np.abs(expected[interior])))
        a2_gap = float(np.max(np.abs(fits["A2"] - fits["expected_A2"])) / max(float(np.max(np.abs(fits["expected_A2"]))), 1e-300))
    else:
        a1_error = float(np.max(np.abs(fits["A1"])))
        a2_gap = float(np.max(np.abs(fits["A2"])))
    report = {
        "k_list": fits["k_list"],
        "density_deviation": flat_deviation,
        "trace_residual": max(fits["trace_residuals"]),
        "leading_coefficient_error": float(np.max(np.abs(fits["A0"] - 1.0))),
        "subleading_error": a1_error,
        "second_order_gap": a2_gap,
        "interior_nodes": int(np.count_nonzero(interior)),
    }
    logger.debug(f"TYZ check: {report}")
    return report


def torsion_variation(model: TorusFibration, z0: Optional[complex], k: int, fd_point: Optional[CurvaturePoint] = None,
                      polynomial: Optional[GRRPolynomial] = None, h: float = DEFAULT_SETTINGS["fd_step"],
                      grid: Optional[FiberGrid] = None) -> float:
    """(√-1/2π)∂∂̄ log τ_k² at (ζ, ζ̄), as the GRR polynomial minus the L² curvature"""
    z0 = model.base_point if z0 is None else z0
    fd_point = fd_point or curvature_fd(model, z0, k, h, grid)
    polynomial = polynomial or grr_polynomial(model, z0, grid)
    return float(polynomial.evaluate(k) - fd_point.value)


def leading_law_targets(space: GalerkinSpace) -> Dict[str, float]:
    """∫|∇̄μ|²B_kω and ∫(|μ|²_{R*} - |∇̄μ|²)B_kω from jets and the Bergman density"""
    sections = space.sections
    density = sections.bergman_density()
    mu = space.mu
    g = space.scalars.metric
    gradient = np.abs(mu.nabla_bar) ** 2 / g
    rstar = -space.scalars.rho * np.abs(mu.mu) ** 2
    return {
        "antiholo_weighted": float(quadrature(gradient * density, space.grid, g).real),
        "quadratic_identity_rhs": float(quadrature((rstar - gradient) * density, space.grid, g).real),
    }


def quadratic_identity_gap(space: GalerkinSpace, tolerance: float = np.inf) -> Dict[str, float]:
    """Σ_j⟨(k - Δ′)i_μũ_j, i_μũ_j⟩ against the jet integral ∫(|μ|²_{R*} - |∇̄μ|²)B_kω.

    The projection residual is reported, not enforced, unless `tolerance` is finite.
    """
    forms = contract_all(space, tolerance=tolerance)
    lhs = sum(quadratic_forms(space, form, [1])[1] for form in forms)
    rhs = leading_law_targets(space)["quadratic_identity_rhs"]
    return {
        "lhs": lhs,
        "rhs": rhs,
        "gap": relative_gap(lhs, rhs),
        "projection_residual": max((form.projection_residual for form in forms), default=0.0),
        "levels": space.levels,
        "grid_n": space.grid.n,
    }


def quadratic_identity_refinement(model: TorusFibration, z0: Optional[complex], k: int,
                                  levels: int = DEFAULT_SETTINGS["galerkin_levels"],
                                  grid_n: Optional[int] = None) -> Dict[str, Any]:
    """Quadratic-form identity gap at (grid_n, levels) and at (2·grid_n, 2·levels).

    `improved` holds when the refined gap is ten times smaller, or already at round-off.
    """
    z0 = model.base_point if z0 is None else z0
    grid_n = grid_n or model.grid_n
    coarse = quadratic_identity_gap(assemble(model, z0, k, levels, model.grid(grid_n)))
    fine = quadratic_identity_gap(assemble(model, z0, k, 2 * levels, model.grid(2 * grid_n)))
    improved = fine["gap"] <= max(coarse["gap"] / 10.0, ROUNDOFF_GAP)
    logger.debug(f"Quadratic identity k={k}: gap {coarse['gap']:.3e} -> {fine['gap']:.3e}")
    return {"k": k, "coarse": coarse, "fine": fine, "improved": improved}


def identity_suite(model: TorusFibration, z0: Optional[complex] = None, grid: Optional[FiberGrid] = None) -> Dict[str, float]:
    """Every fixed-k-free residual: decomposition, norm identities, fiber identities, tr(R∧R), side equality"""
    grid = _grid(model, grid)
    z0 = model.base_point if z0 is None else z0
    residuals = fiber_identities(model, z0, grid)
    residuals["decomposition"] = decomposition_residual(sample_jets(model, z0, grid))
    residuals["trace_rr"] = trace_rr_identity(model, z0, grid)["residual"]
    l2, quillen = l2_expansion(model, z0, grid), quillen_expansion(model, z0, grid)
    residuals["side_equality"] = l2.max_gap(quillen)
    residuals["grr_direct"] = quillen.details["a0_gap"]
    return residuals
