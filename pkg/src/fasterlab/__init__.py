"""fasterlab: recurrent aggregation of mixed expensive/cheap clip features.

A small, deterministic lab for studying how learned temporal aggregation of
video-clip features compares to score averaging, together with an analytic
compute-cost model for backbone/schedule combinations.
"""

__version__ = "0.1.0"

from .tensor import (  # noqa: F401
    GradCheckReport,
    NumericError,
    RunningStats,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    grad_check,
    set_finite_checks,
)
