import json
import os
from copy import deepcopy
from functools import lru_cache
from typing import Any, Dict, List, Optional, TypedDict

from .error_handler import ConfigError

SCHEMA_VERSION = 1

PROFILE_KEYS = ("1", "z", "zbar", "zzbar", "z2", "zbar2")

ENGINES = ("fd", "berndtsson")


class PerturbationSpec(TypedDict):
    profile: Dict[str, List[float]]
    fourier: List[List[float]]


class ToleranceSettings(TypedDict, total=False):
    resolvent_identity: float
    quadratic_form_identity: float
    norm_identities: float
    cross_method: float
    top_coefficient: float
    mid_coefficient: float
    low_coefficient: float
    side_equality: float
    bergman_flat: float
    bergman_subleading: float
    torsion_ratio: float
    fiber_identities: float
    leading_laws: float


class SweepSettings(TypedDict, total=False):
    k_list: List[int]
    engines: List[str]
    fd_step: float
    galerkin_levels: int
    tolerances: ToleranceSettings
    output: str


class ModelDocument(TypedDict, total=False):
    schema_version: int
    name: str
    tau: List[float]
    k: int
    grid_n: int
    base_point: List[float]
    perturbations: List[PerturbationSpec]
    sweep: SweepSettings


DEFAULT_SETTINGS = {
    "k": 8,
    "grid_n": 64,
    "fd_step": 1e-2,
    "galerkin_levels": 16,
    "k_list": [8, 12, 16, 24, 32, 48],
    "engines": list(ENGINES),
    "output": "out",
    "max_workers": 4,
    "log_file": "workbench.log",
}

DEFAULT_TOLERANCES: ToleranceSettings = {
    "resolvent_identity": 1e-10,
    "quadratic_form_identity": 1e-4,
    "norm_identities": 1e-8,
    "cross_method": 1e-3,
    "top_coefficient": 1e-2,
    "mid_coefficient": 1e-2,
    "low_coefficient": 1e-1,
    "side_equality": 1e-8,
    "bergman_flat": 1e-8,
    "bergman_subleading": 2e-2,
    "torsion_ratio": 0.7,
    "fiber_identities": 1e-8,
    "leading_laws": 1e-1,
}

# torsion_ratio is a decay threshold, not an error bound; it is never scaled.
UNSCALED_TOLERANCES = frozenset({"torsion_ratio"})

_TOP_LEVEL_KEYS = {"schema_version", "name", "tau", "k", "grid_n", "base_point", "perturbations", "sweep"}
_SWEEP_KEYS = {"k_list", "engines", "fd_step", "galerkin_levels", "tolerances", "output"}


def _pair(value: Any, key: str) -> complex:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
        raise ConfigError("expected [re, im]", check=key, value=value)
    return complex(float(value[0]), float(value[1]))


def _positive_int(value: Any, key: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise ConfigError("expected a positive integer", check=key, value=value)
    return value


def _positive_float(value: Any, key: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
        raise ConfigError("expected a positive number", check=key, value=value)
    return float(value)


def _check_perturbation(index: int, term: Any) -> None:
    where = f"perturbations[{index}]"
    if not isinstance(term, dict):
        raise ConfigError("expected an object", check=where, value=term)
    unknown = set(term) - {"profile", "fourier"}
    if unknown:
        raise ConfigError("unknown keys", check=where, value=sorted(unknown))
    profile = term.get("profile", {})
    if not isinstance(profile, dict):
        raise ConfigError("profile must be an object", check=f"{where}.profile", value=profile)
    for key, coeff in profile.items():
        if key not in PROFILE_KEYS:
            raise ConfigError(f"profile keys are {PROFILE_KEYS}", check=f"{where}.profile", value=key)
        if isinstance(coeff, (int, float)) and not isinstance(coeff, bool):
            continue
        _pair(coeff, f"{where}.profile.{key}")
    fourier = term.get("fourier", [])
    if not isinstance(fourier, list) or not fourier:
        raise ConfigError("fourier must be a non-empty list", check=f"{where}.fourier", value=fourier)
    for row in fourier:
        ok = (isinstance(row, (list, tuple)) and len(row) == 4
              and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row)
              and float(row[0]).is_integer() and float(row[1]).is_integer())
        if not ok:
            raise ConfigError("expected [p1, p2, re, im] with integer p1, p2",
                              check=f"{where}.fourier", value=row)


def _check_sweep(sweep: Any) -> None:
    if not isinstance(sweep, dict):
        raise ConfigError("sweep must be an object", check="sweep", value=sweep)
    unknown = set(sweep) - _SWEEP_KEYS
    if unknown:
        raise ConfigError("unknown keys", check="sweep", value=sorted(unknown))
    if "k_list" in sweep:
        check_k_list(sweep["k_list"])
    if "engines" in sweep:
        engines = sweep["engines"]
        if not isinstance(engines, list) or not engines or any(e not in ENGINES for e in engines):
            raise ConfigError(f"engines must be a non-empty subset of {ENGINES}",
                              check="sweep.engines", value=engines)
    if "fd_step" in sweep:
        _positive_float(sweep["fd_step"], "sweep.fd_step")
    if "galerkin_levels" in sweep:
        levels = _positive_int(sweep["galerkin_levels"], "sweep.galerkin_levels")
        if levels < 4:
            raise ConfigError("galerkin_levels must be >= 4", check="sweep.galerkin_levels", value=levels)
    if "output" in sweep and not isinstance(sweep["output"], str):
        raise ConfigError("output must be a path string", check="sweep.output", value=sweep["output"])
    tolerances = sweep.get("tolerances", {})
    if not isinstance(tolerances, dict):
        raise ConfigError("tolerances must be an object", check="sweep.tolerances", value=tolerances)
    for key, value in tolerances.items():
        if key not in DEFAULT_TOLERANCES:
            raise ConfigError("unknown tolerance", check="sweep.tolerances", value=key)
        _positive_float(value, f"sweep.tolerances.{key}")


def check_k_list(k_list: Any, minimum: int = 4) -> List[int]:
    """k_list must be strictly increasing positive integers, long enough for a three-term fit"""
    if not isinstance(k_list, list) or not k_list:
        raise ConfigError("k_list must be a non-empty list", check="sweep.k_list", value=k_list)
    for k in k_list:
        _positive_int(k, "sweep.k_list")
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ConfigError("k_list must be strictly increasing", check="sweep.k_list", value=k_list)
    if len(k_list) < minimum:
        raise ConfigError(f"k_list needs at least {minimum} values for a three-coefficient fit",
                          check="sweep.k_list", value=k_list)
    return k_list


def validate_document(doc: Any) -> ModelDocument:
    """Schema check of a parsed model document; raises ConfigError on the first problem"""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object", check="document", value=type(doc).__name__)
    unknown = set(doc) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError("unknown keys", check="document", value=sorted(unknown))
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version (expected {SCHEMA_VERSION})",
                          check="schema_version", value=version)
    if "tau" not in doc:
        raise ConfigError("missing required key", check="tau", value=None)
    tau = _pair(doc["tau"], "tau")
    if tau.imag <= 0:
        raise ConfigError("Im tau must be positive", check="tau", value=doc["tau"])
    if "k" in doc:
        _positive_int(doc["k"], "k")
    if "grid_n" in doc:
        _positive_int(doc["grid_n"], "grid_n")
    if "base_point" in doc:
        _pair(doc["base_point"], "base_point")
    if "name" in doc and not isinstance(doc["name"], str):
        raise ConfigError("name must be a string", check="name", value=doc["name"])
    perturbations = doc.get("perturbations", [])
    if not isinstance(perturbations, list):
        raise ConfigError("perturbations must be a list", check="perturbations", value=perturbations)
    for index, term in enumerate(perturbations):
        _check_perturbation(index, term)
    if "sweep" in doc:
        _check_sweep(doc["sweep"])
    return doc


def load_document(path: str) -> ModelDocument:
    """Read and schema-check a model/sweep JSON document"""
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    return validate_document(doc)


_OVERRIDE_TYPES = {
    "k": _positive_int,
    "grid_n": _positive_int,
    "fd_step": _positive_float,
    "galerkin_levels": _positive_int,
    "tolerance_scale": _positive_float,
}


def apply_overrides(doc: ModelDocument, overrides: Dict[str, Any]) -> ModelDocument:
    """Return a copy of doc with CLI overrides applied; the input document is left untouched"""
    merged = deepcopy(doc)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _OVERRIDE_TYPES:
            raise ConfigError("unknown override", check=f"--{key.replace('_', '-')}", value=value)
        _OVERRIDE_TYPES[key](value, f"--{key.replace('_', '-')}")
        if key in ("k", "grid_n"):
            merged[key] = value
        elif key in ("fd_step", "galerkin_levels"):
            merged.setdefault("sweep", {})[key] = value
    return validate_document(merged)


def sweep_settings(doc: ModelDocument) -> Dict[str, Any]:
    """Sweep settings with defaults filled in"""
    sweep = doc.get("sweep", {})
    return {
        "k_list": list(sweep.get("k_list", DEFAULT_SETTINGS["k_list"])),
        "engines": list(sweep.get("engines", DEFAULT_SETTINGS["engines"])),
        "fd_step": float(sweep.get("fd_step", DEFAULT_SETTINGS["fd_step"])),
        "galerkin_levels": int(sweep.get("galerkin_levels", DEFAULT_SETTINGS["galerkin_levels"])),
        "tolerances": dict(sweep.get("tolerances", {})),
        "output": sweep.get("output", DEFAULT_SETTINGS["output"]),
    }


@lru_cache(maxsize=32)
def get_tolerances(scale: float = 1.0, overrides: Optional[tuple] = None) -> Dict[str, float]:
    """Cached tolerance table; `overrides` is a tuple of (key, value) pairs"""
    table = dict(DEFAULT_TOLERANCES)
    if overrides:
        table.update(dict(overrides))
    return {key: (value if key in UNSCALED_TOLERANCES else value * scale) for key, value in table.items()}


def max_workers() -> int:
    """Worker cap from WORKBENCH_THREADS, falling back to the default"""
    raw = os.getenv("WORKBENCH_THREADS")
    if raw is None or raw == "":
        return DEFAULT_SETTINGS["max_workers"]
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError("WORKBENCH_THREADS must be a positive integer", check="WORKBENCH_THREADS", value=raw)
    if value <= 0:
        raise ConfigError("WORKBENCH_THREADS must be a positive integer", check="WORKBENCH_THREADS", value=raw)
    return value


def log_file() -> str:
    return os.getenv("WORKBENCH_LOG_FILE") or DEFAULT_SETTINGS["log_file"]
