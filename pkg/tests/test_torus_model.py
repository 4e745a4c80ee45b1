import numpy as np
import pytest
from numpy.testing import assert_allclose

from curv_bench.error_handler import AliasedField, AmplenessViolated, GridMismatch, ModelInvalid, NonRealWeight
from curv_bench.torus_model import (
    FiberGrid,
    TorusFibration,
    ladder_samples,
    periodicity_defect,
    quadrature,
    sample_jets,
    stencil_points,
    ValidationReport,
    theta_sections,
    validate,
)

from .helpers import cosine_a, make_model


@pytest.mark.parametrize("n", [15, 8, 0])
def test_grid_rejects_bad_resolution(n):
    with pytest.raises(GridMismatch):
        FiberGrid(n, 1j)


def test_grid_rejects_lower_half_plane():
    with pytest.raises(GridMismatch):
        FiberGrid(32, 0.5 - 1j)


def test_quadrature_of_omega_is_two_pi(flat_model):
    grid = flat_model.grid()
    ones = np.ones((grid.n, grid.n))
    assert quadrature(ones, grid) == pytest.approx(2.0)
    assert quadrature(ones, grid, flat_model.fiber_metric(0j, grid)) == pytest.approx(2.0 * np.pi)


def test_quadrature_shape_mismatch(flat_model):
    with pytest.raises(GridMismatch):
        quadrature(np.ones((16, 16)), flat_model.grid())


@pytest.mark.parametrize("tau", [1j, 0.3 + 1.2j])
def test_spectral_derivatives_of_a_mode(tau):
    grid = FiberGrid(32, tau)
    a, b = grid.nodes
    mode = np.exp(2j * np.pi * (2 * a - 3 * b))
    # ∂_v = (τ̄∂_a - ∂_b)/(τ̄ - τ), ∂_v̄ = (∂_b - τ∂_a)/(τ̄ - τ) in lattice coordinates
    d_a, d_b = 2j * np.pi * 2, 2j * np.pi * -3
    expected_v = (np.conj(tau) * d_a - d_b) / (np.conj(tau) - tau)
    expected_vbar = (d_b - tau * d_a) / (np.conj(tau) - tau)
    assert_allclose(grid.differentiate(mode, 1, 0), expected_v * mode, atol=1e-10)
    assert_allclose(grid.differentiate(mode, 0, 1), expected_vbar * mode, atol=1e-10)


def test_bandwidth_at_nyquist_is_aliased():
    model = make_model(({"1": 1.0}, [[8, 0, 0.01, 0.0], [-8, 0, 0.01, 0.0]]), grid_n=16)
    with pytest.raises(AliasedField):
        sample_jets(model, 0j, model.grid())
    report = validate(model)
    assert not report.passed
    assert report.failures[0]["check"] == "bandwidth"


def test_zzbar_profile_at_origin():
    field = [[0, 0, 0.5, 0.0]] + cosine_a(0.05)
    model = make_model(({"zzbar": 1.0}, field))
    grid = model.grid()
    fiber_field = model.perturbations[0].field_partial(grid)
    assert np.max(np.abs(model.psi_partial(0j, grid, dz=1))) == 0.0
    assert np.max(np.abs(model.psi_partial(0j, grid, dzbar=1))) == 0.0
    assert_allclose(model.psi_partial(0j, grid, dz=1, dzbar=1), fiber_field, atol=1e-14)


def test_real_weight_has_no_reality_defect(zplusbar_model):
    jets = sample_jets(zplusbar_model, 0.01 + 0.02j, zplusbar_model.grid())
    assert jets.reality_defect() < 1e-10


def test_stencil_points():
    points = stencil_points(1.0 + 1.0j, 0.1)
    assert len(points) == 25
    assert 1.0 + 1.0j in points
    assert pytest.approx(1.2 + 0.8j) in points


def test_ladder_samples_are_normalized_on_the_flat_torus():
    grid = FiberGrid(64, 1j)
    a, b = grid.nodes
    samples = ladder_samples(4, 1j, a, b, levels=3, normalized=True).reshape(4 * 4, -1)
    mass = samples.conj() @ samples.T * grid.area / grid.n ** 2
    assert_allclose(mass, np.eye(16), atol=1e-10)


def test_flat_gram_is_a_multiple_of_identity(flat_model):
    k = 4
    system = theta_sections(flat_model, 0j, k, flat_model.grid())
    # ∫|θ_j|²e^{-kφ₀}dA = sqrt(2 Im τ / k)
    assert_allclose(system.gram, np.sqrt(2.0 / k) * np.eye(k), atol=1e-10)
    assert system.condition == pytest.approx(1.0)


@pytest.mark.parametrize("k", [4, 8, 16])
def test_flat_bergman_density_is_constant(flat_model, k):
    system = theta_sections(flat_model, 0j, k, flat_model.grid())
    assert_allclose(system.bergman_density(), k / (2.0 * np.pi), rtol=1e-8)
    assert system.trace() == pytest.approx(k, rel=1e-10)


def test_perturbed_bergman_trace_is_dimension(zplusbar_model):
    system = theta_sections(zplusbar_model, 0j, 8, zplusbar_model.grid())
    assert system.trace() == pytest.approx(8, rel=1e-10)
    assert np.ptp(system.bergman_density()) > 0


@pytest.mark.parametrize("k", [4, 12])
def test_pairings_are_periodic(k):
    assert periodicity_defect(k, FiberGrid(64, 1j)) < 1e-10


def test_theta_sections_rejects_nonpositive_level(flat_model):
    with pytest.raises(ValueError):
        theta_sections(flat_model, 0j, 0, flat_model.grid())


def test_validate_flat_margin():
    model = make_model(tau=0.2 + 1.5j)
    report = validate(model)
    assert report.passed
    assert report.margins["ampleness"] == pytest.approx(np.pi / 1.5)


def test_validate_flags_excess_amplitude():
    # φ_{11̄} = π - π²ε cos(2πa) turns negative once ε > 1/π
    model = make_model(({"1": 1.0}, cosine_a(1.0)))
    report = validate(model)
    assert not report.passed
    assert report.failures[0]["check"] == "ampleness"
    with pytest.raises(AmplenessViolated):
        report.raise_first()


def test_validate_flags_odd_grid(flat_model):
    report = validate(flat_model, grid_n=33)
    assert report.to_dict()["failures"][0]["check"] == "grid_n"
    with pytest.raises(GridMismatch):
        report.raise_first()


def test_from_document_roundtrip_of_fields():
    doc = {"tau": [0.1, 0.9], "grid_n": 32, "base_point": [0.2, -0.1], "name": "m",
           "perturbations": [{"profile": {"z": [1.0, 0.5], "zbar": [1.0, -0.5]}, "fourier": [[1, 1, 0.01, 0.0]]}]}
    model = TorusFibration.from_document(doc)
    assert model.tau == 0.1 + 0.9j
    assert model.base_point == 0.2 - 0.1j
    assert model.bandwidth == 1
    assert model.perturbations[0].profile_partial(0.3j, dz=1) == pytest.approx(1.0 + 0.5j)


@pytest.mark.parametrize("check, error", [("reality", NonRealWeight), ("stencil", ModelInvalid)])
def test_other_validation_failures_are_not_ampleness(check, error):
    report = ValidationReport(passed=False, failures=[{"check": check, "message": "bad", "value": 1.0}])
    with pytest.raises(error) as excinfo:
        report.raise_first()
    assert not isinstance(excinfo.value, AmplenessViolated)
    assert excinfo.value.check == check
