import numpy as np
import pytest
from numpy.testing import assert_allclose

from curv_bench.config import DEFAULT_TOLERANCES
from curv_bench.error_handler import InsufficientJetOrder, NonPositiveMetric
from curv_bench.jet_core import (
    JetField,
    curvature_scalars,
    decomposition_residual,
    jet_norms,
    jet_orders,
    kodaira_spencer,
    relative_gap,
    rstar_kernel,
)
from curv_bench.torus_model import FiberGrid, sample_jets

from .helpers import cosine_a, make_model


def test_jet_orders_cover_the_needed_partials():
    orders = jet_orders()
    assert (6, 0, 0, 0) in orders
    assert (2, 2, 1, 1) in orders
    assert (5, 0, 1, 0) not in orders
    assert len(orders) == len(set(orders)) == 28 + 5 * 15


def test_relative_gap():
    assert relative_gap(0.0, 0.0) == 0.0
    assert relative_gap(1.0, 1.1) == pytest.approx(0.1 / 1.1)
    assert relative_gap(1e-17, -1e-17, floor=0.5) == pytest.approx(4e-17)


def test_missing_partial_raises():
    jets = JetField(partials={}, grid=FiberGrid(16, 1j))
    with pytest.raises(InsufficientJetOrder):
        jets[(1, 1, 0, 0)]


def test_negative_metric_raises():
    jets = JetField(partials={(1, 1, 0, 0): -np.ones((16, 16), dtype=complex)}, grid=FiberGrid(16, 1j))
    with pytest.raises(NonPositiveMetric):
        jets.metric


def test_flat_weight_has_no_curvature(flat_model):
    jets = sample_jets(flat_model, 0j, flat_model.grid())
    scalars = curvature_scalars(jets)
    assert np.max(np.abs(scalars.rho)) < 1e-14
    assert np.max(np.abs(scalars.lap_rho)) < 1e-14
    assert np.max(np.abs(scalars.r_norm2)) < 1e-28
    assert np.max(np.abs(scalars.c_phi)) == 0.0
    assert_allclose(scalars.metric, np.pi)
    assert kodaira_spencer(jets).is_zero


def test_gaussian_shift_is_horizontal(gaussian_shift_model):
    jets = sample_jets(gaussian_shift_model, 0.1 - 0.2j, gaussian_shift_model.grid())
    assert_allclose(curvature_scalars(jets).c_phi, 0.5, atol=1e-14)
    assert kodaira_spencer(jets).is_zero


def test_rho_matches_closed_form(cosine_model):
    eps = 0.05
    grid = cosine_model.grid()
    a, _ = grid.nodes
    s, c = np.sin(2 * np.pi * a), np.cos(2 * np.pi * a)
    g = np.pi - np.pi ** 2 * eps * c
    g1 = 2 * np.pi ** 3 * eps * s
    g2 = 4 * np.pi ** 4 * eps * c
    # ∂∂̄ = ¼∂_a² for a field depending on a alone when τ = i
    expected = -0.25 * (g2 / g - (g1 / g) ** 2) / g
    scalars = curvature_scalars(sample_jets(cosine_model, 0j, grid))
    assert_allclose(scalars.metric, g, atol=1e-12)
    assert_allclose(scalars.rho, expected, atol=1e-8)
    assert_allclose(scalars.contraction_defect, 0.0, atol=1e-14)


def test_mu_matches_closed_form():
    eps = 0.04
    model = make_model(({"z": 1.0, "zbar": 1.0}, cosine_a(eps)))
    grid = model.grid()
    a, _ = grid.nodes
    mu = kodaira_spencer(sample_jets(model, 0j, grid))
    assert_allclose(mu.mu, eps * np.pi * np.cos(2 * np.pi * a), atol=1e-12)
    assert not mu.is_zero


def test_mu_scales_with_zeta():
    model = make_model(({"z": 1.0, "zbar": 1.0}, cosine_a(0.04)))
    jets = sample_jets(model, 0j, model.grid())
    assert_allclose(kodaira_spencer(jets, zeta=2j).mu, 2j * kodaira_spencer(jets).mu)


def test_dbar_star_agrees_with_covariant_derivative(zplusbar_model):
    mu = kodaira_spencer(sample_jets(zplusbar_model, 0j, zplusbar_model.grid()))
    assert_allclose(mu.dbar_star, -mu.nabla_prime / mu.metric, atol=1e-9)


def test_rstar_kernel_is_minus_rho(zplusbar_model):
    jets = sample_jets(zplusbar_model, 0j, zplusbar_model.grid())
    assert_allclose(rstar_kernel(jets), -curvature_scalars(jets).rho, atol=1e-12)


def test_norm_identities_on_fixtures(fixture_model):
    jets = sample_jets(fixture_model, fixture_model.base_point, fixture_model.grid())
    _, _, norms = jet_norms(jets)
    tolerance = DEFAULT_TOLERANCES["norm_identities"]
    assert norms.residuals["akizuki_nakano"] <= tolerance
    assert norms.residuals["antiholomorphic_gradient"] <= tolerance
    assert norms.mu_norm2 >= 0.0
    assert set(norms.to_dict()) >= {"mu_norm2", "grad_mu", "residual_akizuki_nakano"}


def test_decomposition_is_exact(fixture_model):
    jets = sample_jets(fixture_model, fixture_model.base_point + 0.01, fixture_model.grid())
    assert decomposition_residual(jets) < 1e-10


def test_scaling_the_weight_rescales_the_scalars(zplusbar_model):
    grid = zplusbar_model.grid()
    base = curvature_scalars(sample_jets(zplusbar_model, 0j, grid))
    scaled = curvature_scalars(sample_jets(zplusbar_model, 0j, grid, scale=2.0))
    assert_allclose(scaled.metric, 2.0 * base.metric)
    assert_allclose(scaled.rho, base.rho / 2.0, atol=1e-12)
    assert_allclose(scaled.c_phi, 2.0 * base.c_phi, atol=1e-12)
