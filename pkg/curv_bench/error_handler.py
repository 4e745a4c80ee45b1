import json
import logging
from typing import Any, Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2
EXIT_RUNTIME = 3


class WorkbenchError(Exception):
    """Base error carrying the failing check and the offending value"""

    def __init__(self, message: str, check: str = "", value: Any = None):
        self.message = message
        self.check = check
        self.value = value
        super().__init__(message)

    def __str__(self) -> str:
        if self.check:
            return f"{self.check}: {self.message} (value={self.value!r})"
        return self.message


class ConfigError(WorkbenchError):
    """Config document or override does not match the schema"""


class IoFailure(WorkbenchError):
    pass


# ---- model / grid errors ----

class ModelError(WorkbenchError):
    pass


class NonPositiveMetric(ModelError):
    pass


class InsufficientJetOrder(ModelError):
    pass


class GridMismatch(ModelError):
    pass


class AliasedField(ModelError):
    pass


class QuasiPeriodicityViolation(ModelError):
    pass


class AmplenessViolated(ModelError):
    pass


class NonRealWeight(ModelError):
    pass


class ModelInvalid(ModelError):
    """A validation failure with no dedicated error type"""


# ---- numerical errors ----

class SolverError(WorkbenchError):
    pass


class IllConditionedMass(SolverError):
    pass


class SolveFailure(SolverError):
    pass


class ProjectionResidualTooLarge(SolverError):
    pass


class StencilFailure(SolverError):
    pass


class NoisyDifference(SolverError):
    pass


class RankDeficient(SolverError):
    pass


class VerificationFailed(WorkbenchError):
    """Raised by the CLI when a verdict fails or a sweep task errors"""


class ErrorHandler:
    @classmethod
    def handle_error(cls, exc: Exception) -> str:
        """Map an exception to a one-line user message"""
        error_map = {
            ConfigError: lambda e: f"配置错误 / config error: {e}",
            IoFailure: lambda e: f"无法写出报告 / cannot write report: {e}",
            json.JSONDecodeError: lambda e: f"无效的JSON / invalid JSON: {e.msg} (line {e.lineno})",
            FileNotFoundError: lambda e: f"文件不存在 / file not found: {e.filename}",
            VerificationFailed: lambda e: f"校验未通过 / verification failed: {e}",
        }
        for exc_type, handler in error_map.items():
            if isinstance(exc, exc_type):
                return handler(exc) if callable(handler) else handler
        if isinstance(exc, WorkbenchError):
            return str(exc)
        return f"{type(exc).__name__}: {exc}"

    @classmethod
    def exit_code(cls, exc: Exception) -> int:
        if isinstance(exc, (ConfigError, json.JSONDecodeError, FileNotFoundError)):
            return EXIT_USAGE
        if isinstance(exc, VerificationFailed):
            return EXIT_VERIFICATION
        return EXIT_RUNTIME

    @classmethod
    def log_error(cls, exc: Exception, context: Optional[str] = None) -> None:
        """Log with the check name when the error carries one"""
        prefix = f"[{context}] " if context else ""
        if isinstance(exc, WorkbenchError) and exc.check:
            logging.error(
                f"{prefix}{type(exc).__name__} in {exc.check}: {exc.message} - value={exc.value!r}",
                exc_info=True
            )
        else:
            logging.error(f"{prefix}Error: {str(exc)}", exc_info=True)
