"""Galerkin surrogate of Δ′ = ∇′*∇′ on Lᵏ-valued (0,1)-forms over one fiber.

Basis: β_{j,ℓ} = Λ_ℓθ_j·dv̄, the flat Landau ladder over each level-k theta function, ℓ = 0..N_f.
Matrices are Hermitian forms M_ab = ⟨β_b, β_a⟩, so for coefficient vectors c, d the L² pairing is
⟨Σc_bβ_b, Σd_aβ_a⟩ = dᴴMc and the Galerkin operators are M⁻¹S (Δ′) and M⁻¹R (R*).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .error_handler import (
    AliasedField,
    ConfigError,
    IllConditionedMass,
    ProjectionResidualTooLarge,
    SolveFailure,
)
from .jet_core import JetField, MuField, ScalarPack, curvature_scalars, kodaira_spencer
from .torus_model import FiberGrid, SectionSystem, TorusFibration, ladder_samples, sample_jets, theta_sections

logger = logging.getLogger(__name__)

MASS_CONDITION_LIMIT = 1e10
SOLVE_TOLERANCE = 1e-10
PROJECTION_TOLERANCE = 1e-6

# galerkin_levels is the truncation at k >= REFERENCE_LEVEL_K; smaller k start higher and escalate by LADDER_STEP
REFERENCE_LEVEL_K = 16
LADDER_STEP = 8
MAX_LADDER_LEVELS = 64

TERM_NAMES = ("I", "II", "III", "IV", "V", "VI", "VII")


@dataclass
class FormVector:
    """Coefficients of an Lᵏ-valued (0,1)-form over the β basis"""

    coefficients: np.ndarray
    k: int
    tag: str = ""
    projection_residual: float = 0.0
    solve_residual: float = 0.0

    def norm2(self, space: "GalerkinSpace") -> float:
        return space.inner(self.coefficients, self.coefficients)


@dataclass
class GalerkinSpace:
    k: int
    levels: int
    grid: FiberGrid
    z: complex
    mass: np.ndarray
    stiffness: np.ndarray
    curvature: np.ndarray
    lowering: np.ndarray
    raising: np.ndarray
    weighted_basis: np.ndarray
    weight: np.ndarray
    sections: SectionSystem
    jets: JetField
    scalars: ScalarPack
    mu: MuField
    mass_condition: float
    _mass_factor: tuple = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    @property
    def mass_factor(self):
        if self._mass_factor is None:
            self._mass_factor = linalg.cho_factor(self.mass, lower=True)
        return self._mass_factor

    def inner(self, c: np.ndarray, d: np.ndarray) -> complex:
        """⟨c, d⟩ = dᴴMc; real part returned when c is d"""
        value = np.vdot(d, self.mass @ c)
        return float(value.real) if c is d else complex(value)

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.mass_factor, rhs)

    def laplacian(self, c: np.ndarray) -> np.ndarray:
        """Δ′_N c = M⁻¹Sc"""
        return self.mass_solve(self.stiffness @ c)

    def curvature_term(self, c: np.ndarray) -> np.ndarray:
        """R*_N c = M⁻¹Rc"""
        return self.mass_solve(self.curvature @ c)

    def low_spectrum(self, count: int) -> np.ndarray:
        """Lowest `count` eigenvalues of the pencil (S, M)"""
        count = min(count, self.size)
        return linalg.eigh(self.stiffness, self.mass, eigvals_only=True, subset_by_index=[0, count - 1])

    def basis_index(self, j: int, level: int) -> int:
        return j * (self.levels + 1) + level

    def ladder_vector(self, j: int, level: int, tag: str = "") -> FormVector:
        coefficients = np.zeros(self.size, dtype=complex)
        coefficients[self.basis_index(j, level)] = 1.0
        return FormVector(coefficients, self.k, tag or f"beta[{j},{level}]")


def _form_matrix(left: np.ndarray, right: np.ndarray, density: np.ndarray, grid: FiberGrid) -> np.ndarray:
    """A_ab = ∫ right_b·conj(left_a)·density dA from (basis, nodes) sample matrices"""
    return (left.conj() * density.reshape(1, -1)) @ right.T * (grid.area / grid.n ** 2)


def _hermitian(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def assemble(model: TorusFibration, z: complex, k: int, levels: int, grid: FiberGrid) -> GalerkinSpace:
    """Mass, stiffness, curvature and the two first-order surrogates at base point z and level k"""
    if levels < 4:
        raise ConfigError("ladder truncation must be >= 4", check="galerkin_levels", value=levels)
    if 2 * model.bandwidth >= grid.n:
        raise AliasedField("perturbation bandwidth reaches the grid Nyquist limit",
                           check="bandwidth", value={"bandwidth": model.bandwidth, "grid_n": grid.n})
    tau = complex(grid.tau)
    flat = model.flat_metric
    a, b = grid.nodes
    samples = ladder_samples(k, tau, a, b, levels + 1, normalized=True)
    size = k * (levels + 1)
    nodes = grid.n ** 2
    basis = samples[:, : levels + 1].reshape(size, nodes)
    upper = samples[:, 1: levels + 2].reshape(size, nodes)
    lower = np.zeros_like(samples[:, : levels + 1])
    lower[:, 1:] = samples[:, :levels]
    lower = lower.reshape(size, nodes)
    ladder = np.tile(np.arange(levels + 1), k)

    jets = sample_jets(model, z, grid)
    scalars = curvature_scalars(jets)
    mu = kodaira_spencer(jets)
    g = scalars.metric.reshape(1, -1)
    psi_v = model.psi_partial(z, grid, 1, 0).reshape(1, -1)
    log_g_vbar = (jets[(1, 2, 0, 0)] / jets.metric).reshape(1, -1)
    weight = np.exp(-k * model.psi(z, grid))

    # D = D₀ - kψ_v and ∇_v̄ = ∂_v̄ - ∂_v̄ log g on the ladder
    d_basis = np.sqrt(flat * k * (ladder + 1.0))[:, None] * upper - k * psi_v * basis
    vbar_basis = -np.sqrt(flat * k * ladder)[:, None] * lower - log_g_vbar * basis

    mass = _hermitian(_form_matrix(basis, basis, weight, grid))
    stiffness = _hermitian(_form_matrix(d_basis, d_basis, weight / g.reshape(weight.shape), grid))
    curvature = _hermitian(_form_matrix(basis, basis, weight * -scalars.rho, grid))
    lowering = _form_matrix(basis, vbar_basis, weight, grid)
    raising = _form_matrix(basis, d_basis / g, weight, grid)

    eigenvalues = np.linalg.eigvalsh(mass)
    condition = float(eigenvalues[-1] / eigenvalues[0]) if eigenvalues[0] > 0 else np.inf
    if condition > MASS_CONDITION_LIMIT:
        raise IllConditionedMass("mass matrix condition number above limit", check="assemble", value=condition)
    sections = theta_sections(model, z, k, grid)
    logger.debug(f"Assembled Galerkin space k={k}, levels={levels}, size={size}, cond(M)={condition:.3e}")
    return GalerkinSpace(k=k, levels=levels, grid=grid, z=z, mass=mass, stiffness=stiffness, curvature=curvature,
                         lowering=lowering, raising=raising, weighted_basis=basis, weight=weight, sections=sections,
                         jets=jets, scalars=scalars, mu=mu, mass_condition=condition)


def project(values: np.ndarray, space: GalerkinSpace, tag: str = "") -> FormVector:
    """M-orthogonal projection of weighted (0,1)-form samples; relative residual attached"""
    flat = values.reshape(1, -1)
    rhs = _form_matrix(space.weighted_basis, flat, space.weight, space.grid)[:, 0]
    coefficients = space.mass_solve(rhs)
    total = float(np.sum(np.abs(values) ** 2 * space.weight).real) * space.grid.area / space.grid.n ** 2
    captured = float(np.vdot(coefficients, rhs).real)
    residual = float(np.sqrt(max(total - captured, 0.0) / total)) if total > 0 else 0.0
    return FormVector(coefficients, space.k, tag, residual)


def contract_i_mu(section_index: int, mu_field: MuField, space: GalerkinSpace,
                  tolerance: float = PROJECTION_TOLERANCE) -> FormVector:
    """i_μũ_j = μ¹_{1̄}ũ_j dv̄ projected onto the ladder basis"""
    if mu_field.is_zero:
        return FormVector(np.zeros(space.size, dtype=complex), space.k, f"i_mu(u_{section_index})")
    section = space.sections.orthonormal_samples[section_index]
    vector = project(mu_field.mu * section, space, tag=f"i_mu(u_{section_index})")
    if vector.projection_residual > tolerance:
        raise ProjectionResidualTooLarge("raise the ladder truncation", check="contract_i_mu",
                                         value={"residual": vector.projection_residual, "levels": space.levels,
                                                "k": space.k})
    return vector


def contract_all(space: GalerkinSpace, mu_field: Optional[MuField] = None,
                 tolerance: float = PROJECTION_TOLERANCE) -> List[FormVector]:
    mu_field = mu_field or space.mu
    return [contract_i_mu(j, mu_field, space, tolerance) for j in range(space.k)]


def ladder_levels(k: int, base_levels: int) -> int:
    """Starting truncation at level k: base_levels for k >= 16, growing like √(16/k) below"""
    if k >= REFERENCE_LEVEL_K:
        return base_levels
    return max(base_levels, min(MAX_LADDER_LEVELS, math.ceil(base_levels * math.sqrt(REFERENCE_LEVEL_K / k))))


def assemble_contracted(model: TorusFibration, z: complex, k: int, base_levels: int,
                        grid: FiberGrid) -> Tuple[GalerkinSpace, List[FormVector]]:
    """Assemble at the starting truncation for k and project every i_μũ_j, raising the truncation
    by LADDER_STEP while a projection residual stays above tolerance"""
    levels = ladder_levels(k, base_levels)
    while True:
        space = assemble(model, z, k, levels, grid)
        try:
            return space, contract_all(space)
        except ProjectionResidualTooLarge as e:
            if levels >= MAX_LADDER_LEVELS:
                raise
            logger.info(f"k={k}: projection residual {e.value['residual']:.2e} at {levels} levels, "
                        f"retrying with {min(levels + LADDER_STEP, MAX_LADDER_LEVELS)}")
            levels = min(levels + LADDER_STEP, MAX_LADDER_LEVELS)


def _shifted_factor(space: GalerkinSpace, k_shift: float):
    if k_shift <= 0:
        raise ValueError(f"resolvent shift must be positive, got {k_shift}")
    try:
        return linalg.cho_factor(space.stiffness + k_shift * space.mass, lower=True)
    except linalg.LinAlgError as e:
        raise SolveFailure(f"Cholesky of S + kM failed: {e}", check="resolvent", value=k_shift) from e


def _resolve(space: GalerkinSpace, factor, k_shift: float, c: np.ndarray) -> Tuple[np.ndarray, float]:
    """(Δ′_N + k_shift)⁻¹c, i.e. the solution y of (S + k_shift·M)y = Mc, and its relative residual"""
    rhs = space.mass @ c
    y = linalg.cho_solve(factor, rhs)
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return y, 0.0
    residual = float(np.linalg.norm((space.stiffness + k_shift * space.mass) @ y - rhs) / scale)
    if not np.isfinite(residual) or residual > SOLVE_TOLERANCE:
        raise SolveFailure("resolvent residual above tolerance", check="resolvent", value=residual)
    return y, residual


def resolvent_apply(space: GalerkinSpace, k_shift: float, g: FormVector) -> FormVector:
    return resolvent_images(space, k_shift, [g])[0]


def resolvent_images(space: GalerkinSpace, k_shift: float, forms: Sequence[FormVector]) -> List[FormVector]:
    """(Δ′_N + k_shift)⁻¹ applied to each form with one shared factorization"""
    factor = _shifted_factor(space, k_shift)
    images = []
    for g in forms:
        y, residual = _resolve(space, factor, k_shift, g.coefficients)
        images.append(FormVector(y, g.k, f"R({k_shift})[{g.tag}]", solve_residual=residual))
    logger.debug(f"Resolvent solves k_shift={k_shift}: {len(images)} right-hand sides")
    return images


def resolvent_terms(space: GalerkinSpace, k_shift: float, c: np.ndarray, factor=None) -> Dict[str, np.ndarray]:
    """The seven pieces whose sum is (Δ′ + k)⁻¹c, with A = Δ′_N and B = R*_N.

    I = 1/2k, II = X/6k², III = B/4k², IV = (A+k)⁻¹(k-A)B/4k², V = (2k-A)X/18k³,
    VI = (2k-A)²X/36k⁴, VII = (A+k)⁻¹(k-A)(2k-A)²X/36k⁴, where X = k - A - B.
    """
    k = float(k_shift)
    factor = factor or _shifted_factor(space, k)
    A = space.laplacian

    def resolve(vector):
        return _resolve(space, factor, k, vector)[0]

    x = k * c - A(c) - space.curvature_term(c)
    b = space.curvature_term(c)
    two_k_x = 2 * k * x - A(x)
    two_k_sq_x = 2 * k * two_k_x - A(two_k_x)
    return {
        "I": c / (2 * k),
        "II": x / (6 * k ** 2),
        "III": b / (4 * k ** 2),
        "IV": resolve(k * b - A(b)) / (4 * k ** 2),
        "V": two_k_x / (18 * k ** 3),
        "VI": two_k_sq_x / (36 * k ** 4),
        "VII": resolve(k * two_k_sq_x - A(two_k_sq_x)) / (36 * k ** 4),
    }


def resolvent_expansion_check(space: GalerkinSpace, k_shift: float, g: FormVector) -> Dict[str, float]:
    """Per-term contributions ⟨T g, g⟩ and the M-norm relative residual of the seven-term sum"""
    factor = _shifted_factor(space, k_shift)
    c = g.coefficients
    terms = resolvent_terms(space, k_shift, c, factor)
    direct, _ = _resolve(space, factor, k_shift, c)
    total = sum(terms.values())
    gap = total - direct
    direct_norm = space.inner(direct, direct)
    report = {name: float(np.vdot(c, space.mass @ terms[name]).real) for name in TERM_NAMES}
    report["direct"] = float(np.vdot(c, space.mass @ direct).real)
    report["residual"] = float(np.sqrt(space.inner(gap, gap) / direct_norm)) if direct_norm > 0 else 0.0
    return report


def resolvent_term_traces(space: GalerkinSpace, forms: Sequence[FormVector], k_shift: Optional[float] = None) -> Dict[str, float]:
    """Σ_j ⟨T i_μũ_j, i_μũ_j⟩ for each of the seven terms"""
    k_shift = float(k_shift or space.k)
    factor = _shifted_factor(space, k_shift)
    traces = dict.fromkeys(TERM_NAMES, 0.0)
    for form in forms:
        c = form.coefficients
        if not np.any(c):
            continue
        for name, image in resolvent_terms(space, k_shift, c, factor).items():
            traces[name] += float(np.vdot(c, space.mass @ image).real)
    return traces


def quadratic_forms(space: GalerkinSpace, g: FormVector, powers: Sequence[int]) -> Dict[int, float]:
    """⟨(k - Δ′)^p g, g⟩ for each requested p ∈ {1, 2, 3, 4}"""
    if any(p not in (1, 2, 3, 4) for p in powers):
        raise ValueError(f"powers must lie in 1..4, got {list(powers)}")
    values = {}
    image = g.coefficients
    for p in range(1, max(powers) + 1):
        image = space.k * image - space.laplacian(image)
        if p in powers:
            values[p] = float(np.vdot(g.coefficients, space.mass @ image).real)
    return values


def bochner_identity_residual(space: GalerkinSpace, g: FormVector, include_curvature: bool = True) -> float:
    """‖(k - Δ′ - R*)g - (dv)*∇′∇_v̄ g‖_M / ‖k g‖_M with both sides in the Galerkin basis"""
    c = g.coefficients
    left = space.k * c - space.laplacian(c)
    if include_curvature:
        left = left - space.curvature_term(c)
    right = space.mass_solve(space.raising @ space.mass_solve(space.lowering @ c))
    gap = left - right
    reference = space.inner(c, c) * space.k ** 2
    if reference == 0:
        return 0.0
    return float(np.sqrt(space.inner(gap, gap) / reference))
