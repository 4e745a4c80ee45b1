import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..error_handler import RankDeficient

logger = logging.getLogger(__name__)

SINGULAR_CUTOFF = 1e-12


@dataclass
class FitResult:
    powers: List[int]
    coefficients: np.ndarray
    errors: np.ndarray
    residual: np.ndarray
    condition: float
    weight_power: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)

    def coefficient(self, power: int):
        return self.coefficients[self.powers.index(power)]

    def evaluate(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        return sum(c * k ** p for p, c in zip(self.powers, self.coefficients))

    def to_dict(self) -> Dict[str, object]:
        return {
            "powers": list(self.powers),
            "coefficients": {str(p): _plain(c) for p, c in zip(self.powers, self.coefficients)},
            "errors": {str(p): _plain(e) for p, e in zip(self.powers, self.errors)},
            "residual": _plain(self.residual),
            "condition": self.condition,
            "weight_power": self.weight_power,
            **self.extras,
        }


def _plain(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value.tolist()


def fit_power_series(ks: Sequence[float], values, powers: Sequence[int], weight_power: Optional[float] = None,
                     require_redundancy: bool = True) -> FitResult:
    """Least-squares fit of values ≈ Σ_p c_p k^p through an SVD of the design matrix.

    `values` may carry trailing axes (one independent fit per trailing index, e.g. per grid node).
    With `weight_power` w, row i is scaled by k_i^{-w} before solving.
    """
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    powers = list(powers)
    if len(set(ks.tolist())) != len(ks):
        raise RankDeficient("k values must be distinct", check="fit_power_series", value=ks.tolist())
    needed = len(powers) + 1 if require_redundancy else len(powers)
    if len(ks) < needed:
        raise RankDeficient(f"need at least {needed} values for {len(powers)} powers",
                            check="fit_power_series", value=len(ks))
    design = np.stack([ks ** p for p in powers], axis=1)
    rows = np.ones_like(ks) if weight_power is None else ks ** (-float(weight_power))
    flat = values.reshape(len(ks), -1)
    u, s, vt = np.linalg.svd(design * rows[:, None], full_matrices=False)
    if s[-1] <= SINGULAR_CUTOFF * s[0]:
        raise RankDeficient("design matrix is numerically rank deficient", check="fit_power_series",
                            value=float(s[-1] / s[0]))
    solution = vt.T @ ((u.T @ (flat * rows[:, None])) / s[:, None])
    errors = np.sqrt(np.sum((vt.T / s) ** 2, axis=1))
    misfit = flat - design @ solution
    residual = np.sqrt(np.sum(misfit ** 2, axis=0))
    trailing = values.shape[1:]
    result = FitResult(
        powers=powers,
        coefficients=solution.reshape((len(powers),) + trailing),
        errors=errors,
        residual=residual.reshape(trailing) if trailing else residual[0],
        condition=float(s[0] / s[-1]),
        weight_power=weight_power,
    )
    logger.debug(f"Fitted powers {powers} over k={ks.tolist()} (cond={result.condition:.3e})")
    return result


def next_order_exponent(ks: Sequence[float], tails: Sequence[float]) -> Optional[float]:
    """Slope of log|tail| against log k; None when fewer than two tails are nonzero"""
    ks = np.asarray(ks, dtype=float)
    tails = np.abs(np.asarray(tails, dtype=float))
    usable = tails > 0
    if np.count_nonzero(usable) < 2:
        return None
    slope, _ = np.polyfit(np.log(ks[usable]), np.log(tails[usable]), 1)
    return float(slope)
