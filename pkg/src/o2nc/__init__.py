"""Online-to-non-convex conversion: learners, conversion driver, stationarity
certificates, a zero-chain hard instance and an experiment harness."""

from o2nc.conversion import RunConfig, RunRecord, run_o2nc, select_output
from o2nc.objective import NoiseModel, Objective, make_oracle, make_test_function

__all__ = [
    "NoiseModel",
    "Objective",
    "RunConfig",
    "RunRecord",
    "make_oracle",
    "make_test_function",
    "run_o2nc",
    "select_output",
]

__version__ = "0.1.0"
