import os

from curv_bench.torus_model import Perturbation, TorusFibration

FIXTURE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")
FIXTURE_NAMES = ("flat", "zzbar_profile", "zplusbar_profile")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURE_DIR, f"{name}.json")


def make_model(*terms, tau: complex = 1j, grid_n: int = 64, base_point: complex = 0j, name: str = "test") -> TorusFibration:
    """terms are (profile dict, fourier rows) pairs in the document format"""
    perturbations = tuple(Perturbation.from_spec({"profile": profile, "fourier": fourier}) for profile, fourier in terms)
    return TorusFibration(tau=complex(tau), perturbations=perturbations, base_point=base_point,
                          grid_n=grid_n, name=name)


def cosine_a(amplitude: float):
    """ε·cos(2πa) as Fourier rows"""
    return [[1, 0, amplitude / 2, 0.0], [-1, 0, amplitude / 2, 0.0]]
