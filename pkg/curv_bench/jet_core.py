"""Pointwise tensor calculus on weight jets for fiber dimension one.

A jet maps (a, b, c, d) to the grid field ∂_v^a ∂_v̄^b ∂_z^c ∂_z̄^d φ at one base point. Everything
downstream (metric, curvature scalars, geodesic curvature, Kodaira-Spencer tensor and their norms) is
read off these partials; only Δρ and the covariant derivatives of μ take a second spectral pass.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Dict, Iterator, Tuple

import numpy as np

from .error_handler import InsufficientJetOrder, NonPositiveMetric

if TYPE_CHECKING:
    from .torus_model import FiberGrid

logger = logging.getLogger(__name__)

JetKey = Tuple[int, int, int, int]

REALITY_TOLERANCE = 1e-12


@lru_cache(maxsize=1)
def jet_orders() -> Tuple[JetKey, ...]:
    """Every (a, b, c, d) with c + d ≤ 2; a + b ≤ 6 for pure fiber partials, ≤ 4 otherwise"""
    keys = []
    for c in range(3):
        for d in range(3 - c):
            top = 6 if c + d == 0 else 4
            for a in range(top + 1):
                for b in range(top + 1 - a):
                    keys.append((a, b, c, d))
    return tuple(keys)


def relative_gap(lhs: float, rhs: float, floor: float = 0.0) -> float:
    """|lhs - rhs| relative to the larger side, or to `floor` when both sides cancel; 0 when all vanish"""
    scale = max(abs(lhs), abs(rhs), floor)
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs) / scale


@dataclass
class JetField:
    """Weight jets sampled at every node of a fiber grid, at one base point z"""

    partials: Dict[JetKey, np.ndarray]
    grid: "FiberGrid"
    z: complex = 0j

    def __getitem__(self, key: JetKey) -> np.ndarray:
        try:
            return self.partials[key]
        except KeyError:
            raise InsufficientJetOrder("required partial is absent", check="jet", value=key) from None

    def __contains__(self, key: JetKey) -> bool:
        return key in self.partials

    def __iter__(self) -> Iterator[JetKey]:
        return iter(self.partials)

    @property
    def metric(self) -> np.ndarray:
        """φ_{11̄} as a real positive field"""
        g = self[(1, 1, 0, 0)]
        if np.max(np.abs(g.imag)) > REALITY_TOLERANCE * max(1.0, float(np.max(np.abs(g.real)))):
            raise NonPositiveMetric("φ_{11̄} is not real", check="metric", value=float(np.max(np.abs(g.imag))))
        g = g.real
        if np.min(g) <= 0:
            raise NonPositiveMetric("φ_{11̄} <= 0 on the fiber", check="metric", value=float(np.min(g)))
        return g

    def reality_defect(self) -> float:
        """max |∂^{abcd}φ - conj(∂^{badc}φ)| over the available pairs"""
        worst = 0.0
        for a, b, c, d in self.partials:
            mirror = (b, a, d, c)
            if mirror in self.partials:
                gap = np.max(np.abs(self.partials[(a, b, c, d)] - np.conj(self.partials[mirror])))
                worst = max(worst, float(gap))
        return worst


def frame_transform(zz, zv, vz, vv, lift):
    """Components of a (1,1)-form in the (dz, δv) coframe, δv = dv + a·dz, δ/δz = ∂_z - a∂_v"""
    lift_bar = np.conj(lift)
    top = zz - lift_bar * zv - lift * vz + np.abs(lift) ** 2 * vv
    mixed = zv - lift * vv
    mixed_bar = vz - lift_bar * vv
    return top, mixed, mixed_bar, vv


@dataclass
class ScalarPack:
    """Curvature scalars of the fiber metric and the relative canonical curvature, per grid node"""

    metric: np.ndarray
    rho: np.ndarray
    ric_norm2: np.ndarray
    r_norm2: np.ndarray
    lap_rho: np.ndarray
    c_phi: np.ndarray
    # coefficients of ∂∂̄ log φ_{11̄} on dz∧dz̄, dz∧δv̄, δv∧dz̄, δv∧δv̄
    rk_zz: np.ndarray
    rk_zv: np.ndarray
    rk_vz: np.ndarray
    rk_vv: np.ndarray

    @property
    def contraction_defect(self) -> np.ndarray:
        """|R|² - 4|Ric|² + 3ρ², identically zero for a rank-one curvature tensor"""
        return self.r_norm2 - 4.0 * self.ric_norm2 + 3.0 * self.rho ** 2


def horizontal_lift(jets: JetField) -> np.ndarray:
    """a = φ_{z1̄}/φ_{11̄}, so that δ/δz = ∂_z - a∂_v is horizontal"""
    return jets[(0, 1, 1, 0)] / jets.metric


def log_metric_hessian(jets: JetField) -> Dict[str, np.ndarray]:
    """Mixed second derivatives of log φ_{11̄} on the total space"""
    g = jets.metric
    g_v, g_vbar = jets[(2, 1, 0, 0)], jets[(1, 2, 0, 0)]
    g_z, g_zbar = jets[(1, 1, 1, 0)], jets[(1, 1, 0, 1)]
    return {
        "zz": jets[(1, 1, 1, 1)] / g - g_z * g_zbar / g ** 2,
        "zv": jets[(1, 2, 1, 0)] / g - g_z * g_vbar / g ** 2,
        "vz": jets[(2, 1, 0, 1)] / g - g_v * g_zbar / g ** 2,
        "vv": jets[(2, 2, 0, 0)] / g - g_v * g_vbar / g ** 2,
    }


def geodesic_curvature(jets: JetField) -> np.ndarray:
    """c(φ)(ζ, ζ̄) = φ_{zz̄} - |φ_{z1̄}|²/φ_{11̄} at ζ = ∂/∂z"""
    return (jets[(0, 0, 1, 1)] - np.abs(jets[(0, 1, 1, 0)]) ** 2 / jets.metric).real


def curvature_scalars(jets: JetField, grid: "FiberGrid" = None) -> ScalarPack:
    """ρ, |Ric|², |R|², Δρ, c(φ) and the relative canonical curvature frame components"""
    grid = grid or jets.grid
    g = jets.metric
    hessian = log_metric_hessian(jets)
    rho = -(hessian["vv"] / g).real
    # Δ = φ^{1̄1}∂∂̄ on functions
    lap_rho = (grid.differentiate(rho, 1, 1) / g).real
    rk_zz, rk_zv, rk_vz, rk_vv = frame_transform(hessian["zz"], hessian["zv"], hessian["vz"], hessian["vv"],
                                                 horizontal_lift(jets))
    return ScalarPack(
        metric=g,
        rho=rho,
        ric_norm2=rho ** 2,
        r_norm2=rho ** 2,
        lap_rho=lap_rho,
        c_phi=geodesic_curvature(jets),
        rk_zz=rk_zz.real,
        rk_zv=rk_zv,
        rk_vz=rk_vz,
        rk_vv=rk_vv.real,
    )


def frame_components(jets: JetField) -> Dict[str, np.ndarray]:
    """(A, B, C, D) of ∂∂̄ log φ_{11̄} in the (dz, δv) frame plus the Δc(φ) = A - |μ|² residual field"""
    scalars = curvature_scalars(jets)
    mu = kodaira_spencer(jets)
    lap_c = (jets.grid.differentiate(scalars.c_phi, 1, 1) / scalars.metric).real
    return {
        "A": scalars.rk_zz,
        "B": scalars.rk_zv,
        "C": scalars.rk_vz,
        "D": scalars.rk_vv,
        "geodesic_laplacian_residual": scalars.rk_zz - np.abs(mu.mu) ** 2 - lap_c,
    }


@dataclass
class MuField:
    """Kodaira-Spencer component μ¹_{1̄} and its derivatives, per grid node"""

    mu: np.ndarray
    nabla_prime: np.ndarray
    nabla_bar: np.ndarray
    dbar_star: np.ndarray
    metric: np.ndarray
    zeta: complex = 1.0

    @property
    def is_zero(self) -> bool:
        return not np.any(self.mu)


def kodaira_spencer(jets: JetField, zeta: complex = 1.0) -> MuField:
    """μ¹_{1̄} = -∂_{1̄}(φ_{z1̄}φ^{1̄1})ζ with ∇′μ, ∇̄μ and ∂̄*μ.

    μ comes from jets, ∇′μ and ∇̄μ from spectral derivatives of μ, ∂̄*μ from the frame component
    (∂∂̄ log φ_{11̄})(δ/δz, ∂/∂v̄)/φ_{11̄}, so the last two are independent paths to the same norm.
    """
    g = jets.metric
    g_v, g_vbar = jets[(2, 1, 0, 0)], jets[(1, 2, 0, 0)]
    lift_v = jets[(0, 1, 1, 0)]
    lift_vv = jets[(0, 2, 1, 0)]
    mu = -(lift_vv / g - lift_v * g_vbar / g ** 2) * zeta
    christoffel = g_v / g
    grid = jets.grid
    nabla_prime = grid.differentiate(mu, 1, 0) + christoffel * mu
    nabla_bar = grid.differentiate(mu, 0, 1) - np.conj(christoffel) * mu
    hessian = log_metric_hessian(jets)
    _, mixed, _, _ = frame_transform(hessian["zz"], hessian["zv"], hessian["vz"], hessian["vv"],
                                     horizontal_lift(jets))
    dbar_star = mixed * zeta / g
    return MuField(mu=mu, nabla_prime=nabla_prime, nabla_bar=nabla_bar, dbar_star=dbar_star, metric=g, zeta=zeta)


def rstar_kernel(jets: JetField) -> np.ndarray:
    """R^{1̄1}_{11̄} = -∂∂̄(1/g) + g|∂(1/g)|², from its own formula"""
    g = jets.metric
    g_v, g_vv = jets[(2, 1, 0, 0)], jets[(2, 2, 0, 0)]
    inv_ddbar = -g_vv / g ** 2 + 2.0 * np.abs(g_v) ** 2 / g ** 3
    return (-inv_ddbar + g * np.abs(g_v) ** 2 / g ** 4).real


@dataclass
class NormPack:
    """Fiber integrals against ω of the Kodaira-Spencer norms; Ric and R* norms are signed"""

    mu_norm2: float
    mu_ric: float
    mu_rstar: float
    grad_mu: float
    dbar_star_mu_norm2: float
    antiholo_grad_mu: float
    residuals: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, float]:
        return {
            "mu_norm2": self.mu_norm2,
            "mu_ric": self.mu_ric,
            "mu_rstar": self.mu_rstar,
            "grad_mu": self.grad_mu,
            "dbar_star_mu_norm2": self.dbar_star_mu_norm2,
            "antiholo_grad_mu": self.antiholo_grad_mu,
            **{f"residual_{key}": value for key, value in self.residuals.items()},
        }


def norm_pack(mu: MuField, scalars: ScalarPack, grid: "FiberGrid", rstar: np.ndarray = None) -> NormPack:
    """The six norms and the residuals of the Akizuki-Nakano and ∇̄μ identities"""
    from .torus_model import quadrature

    g = scalars.metric
    grid.check_shape(mu.mu)
    grid.check_shape(g)
    rstar = -scalars.rho if rstar is None else rstar
    mu2 = np.abs(mu.mu) ** 2

    def integral(values):
        return float(quadrature(values, grid, g).real)

    pack = NormPack(
        mu_norm2=integral(mu2),
        mu_ric=integral(scalars.rho * mu2),
        mu_rstar=integral(rstar * mu2),
        grad_mu=integral(np.abs(mu.nabla_prime) ** 2 / g),
        dbar_star_mu_norm2=integral(np.abs(mu.dbar_star) ** 2 * g),
        antiholo_grad_mu=integral(np.abs(mu.nabla_bar) ** 2 / g),
    )
    # both sides cancel by symmetry on some fibrations; scale by the absolute integrands
    curvature_scale = integral(np.abs(scalars.rho) * mu2)
    pack.residuals["akizuki_nakano"] = relative_gap(
        pack.mu_rstar, pack.grad_mu - pack.mu_ric - pack.dbar_star_mu_norm2,
        floor=integral(np.abs(rstar) * mu2) + pack.grad_mu + curvature_scale + pack.dbar_star_mu_norm2)
    pack.residuals["antiholomorphic_gradient"] = relative_gap(
        pack.antiholo_grad_mu, pack.grad_mu - 2.0 * pack.mu_ric,
        floor=pack.antiholo_grad_mu + pack.grad_mu + 2.0 * curvature_scale)
    logger.debug(f"Norm pack: {pack.to_dict()}")
    return pack


def jet_norms(jets: JetField) -> Tuple[ScalarPack, MuField, NormPack]:
    """Scalars, μ and the norm pack in one call"""
    scalars = curvature_scalars(jets)
    mu = kodaira_spencer(jets)
    return scalars, mu, norm_pack(mu, scalars, jets.grid, rstar_kernel(jets))


def decomposition_residual(jets: JetField) -> float:
    """max |√-1∂∂̄φ - c(φ)dz∧dz̄ - φ_{11̄}δv∧δv̄| in the (dz, δv) coframe"""
    g = jets.metric
    top, mixed, mixed_bar, vertical = frame_transform(
        jets[(0, 0, 1, 1)], jets[(0, 1, 1, 0)], jets[(1, 0, 0, 1)], g, horizontal_lift(jets))
    c_phi = jets[(0, 0, 1, 1)] - np.abs(jets[(0, 1, 1, 0)]) ** 2 / g
    return float(max(np.max(np.abs(top - c_phi)), np.max(np.abs(mixed)),
                     np.max(np.abs(mixed_bar)), np.max(np.abs(vertical - g))))
