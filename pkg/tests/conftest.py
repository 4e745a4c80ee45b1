import numpy as np
import pytest

from curv_bench.config import load_document
from curv_bench.torus_model import TorusFibration

from .helpers import FIXTURE_NAMES, cosine_a, fixture_path, make_model


@pytest.fixture(autouse=True)
def _log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setenv("WORKBENCH_LOG_FILE", str(tmp_path / "workbench.log"))
    monkeypatch.delenv("WORKBENCH_THREADS", raising=False)


@pytest.fixture
def flat_model():
    return make_model(name="flat")


@pytest.fixture
def gaussian_shift_model():
    """φ₀ + c₀|z|² with c₀ = 1/2, v-constant: e^{-kψ} factors out of the Gram matrix"""
    return make_model(({"zzbar": 1.0}, [[0, 0, 0.5, 0.0]]), name="gaussian_shift")


@pytest.fixture
def cosine_model():
    return make_model(({"1": 1.0}, cosine_a(0.05)), name="cosine")


@pytest.fixture(params=FIXTURE_NAMES)
def fixture_model(request):
    return TorusFibration.from_document(load_document(fixture_path(request.param)))


@pytest.fixture
def zplusbar_model():
    return TorusFibration.from_document(load_document(fixture_path("zplusbar_profile")))


@pytest.fixture
def zzbar_model():
    return TorusFibration.from_document(load_document(fixture_path("zzbar_profile")))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
