"""
curv-bench - numerical workbench for the curvature of direct image bundles over torus fibrations
"""

from .curvature_engines import curvature_berndtsson, curvature_fd, grr_polynomial, l2_expansion, quillen_expansion
from .error_handler import ErrorHandler, WorkbenchError
from .sweep_harness import SweepConfig, run_sweep
from .torus_model import TorusFibration, validate

__all__ = [
    'TorusFibration',
    'validate',
    'curvature_fd',
    'curvature_berndtsson',
    'l2_expansion',
    'quillen_expansion',
    'grr_polynomial',
    'SweepConfig',
    'run_sweep',
    'ErrorHandler',
    'WorkbenchError'
]

__version__ = '1.0.0'
