import json
import logging

import pytest

from curv_bench.error_handler import (
    EXIT_RUNTIME,
    EXIT_USAGE,
    EXIT_VERIFICATION,
    AmplenessViolated,
    ConfigError,
    ErrorHandler,
    IoFailure,
    ModelError,
    ModelInvalid,
    NoisyDifference,
    NonRealWeight,
    SolveFailure,
    SolverError,
    VerificationFailed,
    WorkbenchError,
)


def test_error_carries_check_and_value():
    error = SolveFailure("resolvent residual above tolerance", check="resolvent", value=3e-9)
    assert str(error) == "resolvent: resolvent residual above tolerance (value=3e-09)"
    assert WorkbenchError("plain").__str__() == "plain"


def test_hierarchy():
    assert issubclass(AmplenessViolated, ModelError)
    assert issubclass(NonRealWeight, ModelError) and issubclass(ModelInvalid, ModelError)
    assert issubclass(NoisyDifference, SolverError)
    assert issubclass(ModelError, WorkbenchError)


@pytest.mark.parametrize("exc, code", [
    (ConfigError("bad"), EXIT_USAGE),
    (FileNotFoundError(2, "No such file", "missing.json"), EXIT_USAGE),
    (json.JSONDecodeError("Expecting value", "", 0), EXIT_USAGE),
    (VerificationFailed("top_coefficient"), EXIT_VERIFICATION),
    (SolveFailure("diverged"), EXIT_RUNTIME),
    (AmplenessViolated("negative"), EXIT_RUNTIME),
    (IoFailure("read-only"), EXIT_RUNTIME),
    (RuntimeError("boom"), EXIT_RUNTIME),
])
def test_exit_codes(exc, code):
    assert ErrorHandler.exit_code(exc) == code


def test_handle_error_messages():
    assert "config error" in ErrorHandler.handle_error(ConfigError("expected [re, im]", check="tau", value=1))
    assert "missing.json" in ErrorHandler.handle_error(FileNotFoundError(2, "No such file", "missing.json"))
    assert ErrorHandler.handle_error(SolveFailure("diverged", check="resolvent")).startswith("resolvent:")
    assert ErrorHandler.handle_error(ValueError("nope")) == "ValueError: nope"


def test_log_error_includes_check(caplog):
    with caplog.at_level(logging.ERROR):
        ErrorHandler.log_error(NoisyDifference("Richardson disagreement", check="curvature_fd", value=0.2),
                               context="curvature")
    assert "[curvature] NoisyDifference in curvature_fd" in caplog.text
