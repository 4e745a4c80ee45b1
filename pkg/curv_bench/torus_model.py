"""Flat-torus fibration models, the periodic fiber grid and the level-k theta section basis.

The fiber is C/(Z + τZ) with lattice coordinates v = a + bτ. The line bundle carries the weight
φ = φ₀ + ψ where φ₀ = 2π(Im v)²/Im τ is the flat degree-one weight and ψ(z, v) = Σ P_t(z, z̄) f_t(v)
is a base-polynomial times periodic-field perturbation. Quasi-periodic sections are only ever
stored as weighted samples u·e^{-kφ₀/2} on the branch b ∈ [0, 1).
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from .config import DEFAULT_SETTINGS, PROFILE_KEYS, ModelDocument
from .error_handler import (
    AliasedField,
    AmplenessViolated,
    GridMismatch,
    ModelInvalid,
    NonPositiveMetric,
    NonRealWeight,
    QuasiPeriodicityViolation,
)
from .jet_core import JetField, jet_orders

logger = logging.getLogger(__name__)

PERIODICITY_TOLERANCE = 1e-10

# (z-power, zbar-power) of each profile monomial
_MONOMIALS = {
    "1": (0, 0),
    "z": (1, 0),
    "zbar": (0, 1),
    "zzbar": (1, 1),
    "z2": (2, 0),
    "zbar2": (0, 2),
}


@dataclass(frozen=True)
class FiberGrid:
    """N x N periodic grid on the fundamental domain, with spectral multipliers"""

    n: int
    tau: complex

    def __post_init__(self):
        if self.n % 2 or self.n < 16:
            raise GridMismatch("grid resolution must be even and at least 16", check="grid_n", value=self.n)
        if complex(self.tau).imag <= 0:
            raise GridMismatch("Im tau must be positive", check="tau", value=self.tau)

    @property
    def area(self) -> float:
        """Area of the fundamental domain against √-1 dv∧dv̄"""
        return 2.0 * complex(self.tau).imag

    @cached_property
    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        coords = np.arange(self.n) / self.n
        return np.meshgrid(coords, coords, indexing="ij")

    @cached_property
    def wavenumbers(self) -> Tuple[np.ndarray, np.ndarray]:
        freqs = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return np.meshgrid(freqs, freqs, indexing="ij")

    @cached_property
    def _multipliers(self) -> Tuple[np.ndarray, np.ndarray]:
        tau = complex(self.tau)
        p1, p2 = self.wavenumbers
        d_v = np.pi * (p2 - np.conj(tau) * p1) / tau.imag
        d_vbar = np.pi * (tau * p1 - p2) / tau.imag
        nyquist = (np.abs(p1) == self.n // 2) | (np.abs(p2) == self.n // 2)
        d_v[nyquist] = 0.0
        d_vbar[nyquist] = 0.0
        return d_v, d_vbar

    def multiplier(self, nv: int, nvbar: int) -> np.ndarray:
        d_v, d_vbar = self._multipliers
        return d_v ** nv * d_vbar ** nvbar

    def differentiate(self, values: np.ndarray, nv: int = 0, nvbar: int = 0) -> np.ndarray:
        """∂_v^nv ∂_v̄^nvbar of a periodic field sampled on the grid"""
        self.check_shape(values)
        if nv == 0 and nvbar == 0:
            return np.asarray(values, dtype=complex)
        return np.fft.ifft2(np.fft.fft2(values) * self.multiplier(nv, nvbar))

    def check_shape(self, values: np.ndarray) -> None:
        if np.shape(values)[-2:] != (self.n, self.n):
            raise GridMismatch("field does not match the grid", check="grid", value=np.shape(values))


def quadrature(field_values: np.ndarray, grid: FiberGrid, volume_density: Optional[np.ndarray] = None):
    """Trapezoid rule over the fundamental domain against √-1 dv∧dv̄, times an optional density.

    Exact for band-limited integrands; returns complex for complex input.
    """
    grid.check_shape(field_values)
    values = np.asarray(field_values)
    if volume_density is not None:
        grid.check_shape(volume_density)
        values = values * volume_density
    return grid.area * values.mean(axis=(-2, -1))


@dataclass(frozen=True)
class Perturbation:
    """One term P(z, z̄)·f(v): a degree ≤ 2 base profile times a Fourier-series fiber field"""

    profile: Tuple[Tuple[str, complex], ...]
    modes: Tuple[Tuple[int, int, complex], ...]

    @classmethod
    def from_spec(cls, spec: Dict[str, Any]) -> "Perturbation":
        profile = []
        for key in PROFILE_KEYS:
            if key in spec.get("profile", {}):
                raw = spec["profile"][key]
                coeff = complex(raw[0], raw[1]) if isinstance(raw, (list, tuple)) else complex(raw)
                profile.append((key, coeff))
        modes = tuple((int(p1), int(p2), complex(re, im)) for p1, p2, re, im in spec["fourier"])
        return cls(profile=tuple(profile), modes=modes)

    @property
    def bandwidth(self) -> int:
        return max((max(abs(p1), abs(p2)) for p1, p2, _ in self.modes), default=0)

    def profile_partial(self, z: complex, dz: int = 0, dzbar: int = 0) -> complex:
        """∂_z^dz ∂_z̄^dzbar of the base profile at z"""
        total = 0j
        for key, coeff in self.profile:
            pz, pzbar = _MONOMIALS[key]
            if dz > pz or dzbar > pzbar:
                continue
            factor = np.prod(range(pz - dz + 1, pz + 1)) * np.prod(range(pzbar - dzbar + 1, pzbar + 1))
            total += coeff * factor * z ** (pz - dz) * np.conj(z) ** (pzbar - dzbar)
        return complex(total)

    def spectrum(self, grid: FiberGrid) -> np.ndarray:
        """Fourier coefficients laid out in numpy FFT order"""
        if 2 * self.bandwidth >= grid.n:
            raise AliasedField("perturbation bandwidth reaches the grid Nyquist limit",
                               check="bandwidth", value={"bandwidth": self.bandwidth, "grid_n": grid.n})
        hat = np.zeros((grid.n, grid.n), dtype=complex)
        for p1, p2, coeff in self.modes:
            hat[p1 % grid.n, p2 % grid.n] += coeff
        return hat

    def field_partial(self, grid: FiberGrid, nv: int = 0, nvbar: int = 0) -> np.ndarray:
        return _field_partial(self, grid, nv, nvbar)


@lru_cache(maxsize=512)
def _field_partial(term: Perturbation, grid: FiberGrid, nv: int, nvbar: int) -> np.ndarray:
    values = np.fft.ifft2(term.spectrum(grid) * grid.multiplier(nv, nvbar)) * grid.n ** 2
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class TorusFibration:
    """Differentiably trivial torus fibration with a z-dependent weight"""

    tau: complex
    perturbations: Tuple[Perturbation, ...] = ()
    base_point: complex = 0j
    grid_n: int = DEFAULT_SETTINGS["grid_n"]
    name: str = "model"

    @classmethod
    def from_document(cls, doc: ModelDocument) -> "TorusFibration":
        tau = complex(*doc["tau"])
        base_point = complex(*doc.get("base_point", [0.0, 0.0]))
        terms = tuple(Perturbation.from_spec(spec) for spec in doc.get("perturbations", []))
        return cls(tau=tau, perturbations=terms, base_point=base_point,
                   grid_n=int(doc.get("grid_n", DEFAULT_SETTINGS["grid_n"])),
                   name=doc.get("name", "model"))

    @property
    def flat_metric(self) -> float:
        """φ₀_{11̄} = π / Im τ"""
        return np.pi / self.tau.imag

    @property
    def bandwidth(self) -> int:
        return max((term.bandwidth for term in self.perturbations), default=0)

    def grid(self, n: Optional[int] = None) -> FiberGrid:
        return FiberGrid(n or self.grid_n, self.tau)

    def psi_partial(self, z: complex, grid: FiberGrid, nv: int = 0, nvbar: int = 0,
                    dz: int = 0, dzbar: int = 0) -> np.ndarray:
        """∂_v^nv ∂_v̄^nvbar ∂_z^dz ∂_z̄^dzbar ψ on the grid"""
        total = np.zeros((grid.n, grid.n), dtype=complex)
        for term in self.perturbations:
            coeff = term.profile_partial(z, dz, dzbar)
            if coeff != 0:
                total = total + coeff * term.field_partial(grid, nv, nvbar)
        return total

    def psi(self, z: complex, grid: FiberGrid) -> np.ndarray:
        return self.psi_partial(z, grid).real

    def fiber_metric(self, z: complex, grid: FiberGrid) -> np.ndarray:
        """φ_{11̄} = π/Im τ + ψ_{vv̄}"""
        return self.flat_metric + self.psi_partial(z, grid, 1, 1).real


def stencil_points(z0: complex, h: float) -> List[complex]:
    """5x5 base stencil z0 + h(m + in), m, n ∈ {-2..2}"""
    return [z0 + h * complex(m, n) for m in range(-2, 3) for n in range(-2, 3)]


def _flat_partial(grid: FiberGrid, nv: int, nvbar: int) -> np.ndarray:
    tau = complex(grid.tau)
    _, b = grid.nodes
    shape = (grid.n, grid.n)
    if (nv, nvbar) == (0, 0):
        return (2.0 * np.pi * tau.imag * b ** 2).astype(complex)
    if (nv, nvbar) == (1, 0):
        return (-2j * np.pi * b).astype(complex)
    if (nv, nvbar) == (0, 1):
        return (2j * np.pi * b).astype(complex)
    if (nv, nvbar) in ((1, 1), (2, 0), (0, 2)):
        sign = 1.0 if (nv, nvbar) == (1, 1) else -1.0
        return np.full(shape, sign * np.pi / tau.imag, dtype=complex)
    return np.zeros(shape, dtype=complex)


def sample_jets(model: TorusFibration, z: complex, grid: FiberGrid, scale: float = 1.0) -> JetField:
    """All weight partials (a, b, c, d) needed downstream, sampled on the grid at base point z.

    Fiber derivatives of the periodic part are spectral, φ₀ and the base profiles are analytic.
    `scale` multiplies the whole weight (φ → λφ) for scaling checks.
    """
    if 2 * model.bandwidth >= grid.n:
        raise AliasedField("perturbation bandwidth reaches the grid Nyquist limit",
                           check="bandwidth", value={"bandwidth": model.bandwidth, "grid_n": grid.n})
    partials = {}
    for key in jet_orders():
        nv, nvbar, dz, dzbar = key
        values = model.psi_partial(z, grid, nv, nvbar, dz, dzbar)
        if dz == 0 and dzbar == 0:
            values = values + _flat_partial(grid, nv, nvbar)
        partials[key] = scale * values
    logger.debug(f"Sampled {len(partials)} jet partials at z={z} on {grid.n}^2 grid")
    return JetField(partials=partials, grid=grid, z=z)


def ladder_samples(k: int, tau: complex, a: np.ndarray, b: np.ndarray, levels: int = 0,
                   normalized: bool = False) -> np.ndarray:
    """Weighted samples e^{-kφ₀/2}·Λ_ℓθ_j for j < k, ℓ ≤ levels, shape (k, levels + 1, *a.shape).

    Λ_ℓθ_j = D₀^ℓθ_j / sqrt((kπ/Im τ)^ℓ ℓ!) where D₀ = ∂_v - kφ₀_v; each theta term reduces to a
    Hermite function of ξ = sqrt(2πk Im τ)(m + b). `normalized` divides by the common flat L² norm.
    """
    t1, t2 = tau.real, tau.imag
    scale = np.sqrt(2.0 * np.pi * k * t2)
    reach = (np.sqrt(2.0 * levels + 1.0) + 9.0) / scale
    span = int(np.ceil(reach)) + 2
    j = np.arange(k).reshape((k,) + (1,) * a.ndim)
    out = np.zeros((k, levels + 1) + a.shape, dtype=complex)
    for n in range(-span - 1, span + 1):
        m = n + j / k
        xi = scale * (m + b)
        if np.min(np.abs(xi)) > scale * reach:
            continue
        current = np.exp(-0.5 * xi ** 2 + 1j * np.pi * k * (t1 * m ** 2 + 2.0 * m * (a + b * t1)))
        previous = np.zeros_like(current)
        out[:, 0] += current
        for level in range(1, levels + 1):
            current, previous = (np.sqrt(2.0) * xi * current - np.sqrt(level - 1.0) * previous) / np.sqrt(level), current
            out[:, level] += (1j ** level) * current
    if normalized:
        out *= (k / (2.0 * t2)) ** 0.25
    return out


@dataclass
class SectionSystem:
    """Theta basis of H⁰(X_z, Lᵏ+K) at one base point, with its Gram matrix and Bergman density"""

    k: int
    grid: FiberGrid
    samples: np.ndarray
    weight: np.ndarray
    metric: np.ndarray
    gram: np.ndarray
    cholesky: np.ndarray
    condition: float
    periodicity_defect: float = 0.0

    @property
    def basis_size(self) -> int:
        return self.k

    def pairing(self, i: int, j: int) -> np.ndarray:
        """P_ij = u_i ū_j e^{-kφ}, a genuinely periodic field"""
        return self.samples[i] * np.conj(self.samples[j]) * self.weight

    @cached_property
    def orthonormal_samples(self) -> np.ndarray:
        """Weighted samples of ũ = L⁻¹u (still carrying e^{-kφ₀/2}, not e^{-kψ/2})"""
        flat = self.samples.reshape(self.k, -1)
        solved = linalg.solve_triangular(self.cholesky, flat, lower=True)
        return solved.reshape(self.samples.shape)

    def bergman_density(self) -> np.ndarray:
        """Σ|ũ_j|²e^{-kφ} divided by ω"""
        density = np.sum(np.abs(self.orthonormal_samples) ** 2, axis=0) * self.weight
        return density / self.metric

    def trace(self) -> float:
        """∫B_kω; equals k for an orthonormal basis"""
        return float(quadrature(self.bergman_density(), self.grid, self.metric).real)


def gram_matrix(samples: np.ndarray, weight: np.ndarray, grid: FiberGrid) -> np.ndarray:
    """H_ij = ∫u_i ū_j e^{-kφ} √-1dv∧dv̄ from weighted samples"""
    count = samples.shape[0]
    flat = samples.reshape(count, -1)
    gram = (flat * weight.reshape(1, -1)) @ flat.conj().T * (grid.area / grid.n ** 2)
    return 0.5 * (gram + gram.conj().T)


@lru_cache(maxsize=64)
def theta_samples(k: int, grid: FiberGrid) -> np.ndarray:
    a, b = grid.nodes
    samples = ladder_samples(k, complex(grid.tau), a, b)[:, 0]
    samples.setflags(write=False)
    return samples


def periodicity_defect(k: int, grid: FiberGrid) -> float:
    """Largest mismatch of the pairings u_iū_je^{-kφ₀} across the edges a = 1 and b = 1"""
    coords = np.arange(grid.n) / grid.n
    zeros, ones = np.zeros_like(coords), np.ones_like(coords)
    tau = complex(grid.tau)
    worst = 0.0
    for a0, b0, a1, b1 in ((zeros, coords, ones, coords), (coords, zeros, coords, ones)):
        left = ladder_samples(k, tau, a0, b0)[:, 0]
        right = ladder_samples(k, tau, a1, b1)[:, 0]
        p_left = left[:, None, :] * np.conj(left[None, :, :])
        p_right = right[:, None, :] * np.conj(right[None, :, :])
        norm = max(np.max(np.abs(p_left)), 1e-300)
        worst = max(worst, float(np.max(np.abs(p_left - p_right)) / norm))
    return worst


def theta_sections(model: TorusFibration, z: complex, k: int, grid: FiberGrid,
                   check_periodicity: bool = True) -> SectionSystem:
    """Level-k theta basis at base point z: samples, Gram matrix (trapezoid rule) and its Cholesky factor"""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    defect = periodicity_defect(k, grid) if check_periodicity else 0.0
    if defect > PERIODICITY_TOLERANCE:
        raise QuasiPeriodicityViolation("sampled pairing is not periodic", check="theta_sections",
                                        value=defect)
    samples = theta_samples(k, grid)
    weight = np.exp(-k * model.psi(z, grid))
    metric = model.fiber_metric(z, grid)
    if np.min(metric) <= 0:
        raise NonPositiveMetric("φ_{11̄} is not positive on the fiber", check="theta_sections",
                                value=float(np.min(metric)))
    gram = gram_matrix(samples, weight, grid)
    cholesky = linalg.cholesky(gram, lower=True)
    eigenvalues = np.linalg.eigvalsh(gram)
    condition = float(eigenvalues[-1] / eigenvalues[0])
    logger.debug(f"Gram at z={z}, k={k}: cond={condition:.3e}, periodicity defect={defect:.1e}")
    return SectionSystem(k=k, grid=grid, samples=samples, weight=weight, metric=metric, gram=gram,
                         cholesky=cholesky, condition=condition, periodicity_defect=defect)


@dataclass
class ValidationReport:
    passed: bool
    failures: List[Dict[str, Any]] = field(default_factory=list)
    margins: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "failures": self.failures, "margins": self.margins}

    def raise_first(self) -> None:
        if self.failures:
            failure = self.failures[0]
            exc_type = {
                "ampleness": AmplenessViolated,
                "bandwidth": AliasedField,
                "grid_n": GridMismatch,
                "reality": NonRealWeight,
            }.get(failure["check"], ModelInvalid)
            raise exc_type(failure["message"], check=failure["check"], value=failure["value"])


def validate(model: TorusFibration, grid_n: Optional[int] = None, step: float = DEFAULT_SETTINGS["fd_step"]) -> ValidationReport:
    """Ampleness over the base stencil, reality of the weight and bandwidth; never raises"""
    n = grid_n or model.grid_n
    failures: List[Dict[str, Any]] = []
    margins: Dict[str, float] = {}
    if n % 2 or n < 16:
        failures.append({"check": "grid_n", "message": "grid resolution must be even and at least 16", "value": n})
        return ValidationReport(passed=False, failures=failures, margins=margins)
    grid = model.grid(n)
    margins["bandwidth_headroom"] = float(n // 2 - model.bandwidth)
    if 2 * model.bandwidth >= n:
        failures.append({"check": "bandwidth", "message": "perturbation bandwidth reaches the grid Nyquist limit",
                         "value": model.bandwidth})
        return ValidationReport(passed=False, failures=failures, margins=margins)
    worst_metric = np.inf
    worst_imag = 0.0
    for z in stencil_points(model.base_point, step):
        psi = model.psi_partial(z, grid)
        worst_imag = max(worst_imag, float(np.max(np.abs(psi.imag)) / (1.0 + np.max(np.abs(psi.real)))))
        worst_metric = min(worst_metric, float(np.min(model.fiber_metric(z, grid))))
    margins["ampleness"] = worst_metric
    margins["reality"] = worst_imag
    if worst_imag > 1e-12:
        failures.append({"check": "reality", "message": "weight is not real-valued", "value": worst_imag})
    if worst_metric <= 0:
        failures.append({"check": "ampleness", "message": "φ_{11̄} <= 0 somewhere on the stencil",
                         "value": worst_metric})
    return ValidationReport(passed=not failures, failures=failures, margins=margins)
