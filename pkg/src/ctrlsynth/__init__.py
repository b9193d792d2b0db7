"""Iterative controller design for SISO LTI plants.

The package scores candidate controllers (stability, phase and gain
margins, settling time, steady-state error), proposes new ones through a
pluggable policy, and benchmarks policies on seeded task datasets.
"""

__version__ = "0.1.0"

from .lti import Polynomial, TransferFunction, pade, poly_roots, routh_stable  # noqa: E402
from .requirements import ResponseMode, TaskRequirement  # noqa: E402
from .analysis import compute_margins, evaluate_closed_loop  # noqa: E402
from .synthesis import (ControllerDesign, LoopShapeParams, PidParams,  # noqa: E402
                        loopshape_controller, pid_controller)
from .design import HeuristicPolicy, SystemClass, classify_system, run_design  # noqa: E402

__all__ = [
    "__version__",
    "Polynomial",
    "TransferFunction",
    "pade",
    "poly_roots",
    "routh_stable",
    "ResponseMode",
    "TaskRequirement",
    "compute_margins",
    "evaluate_closed_loop",
    "ControllerDesign",
    "LoopShapeParams",
    "PidParams",
    "loopshape_controller",
    "pid_controller",
    "HeuristicPolicy",
    "SystemClass",
    "classify_system",
    "run_design",
]
