"""Middle layer: preview MPC and chassis/arm coordination."""

from terraprint.mpc.controller import (
    MpcParams,
    MpcProblem,
    MpcSolution,
    build_problem,
    preview_weights,
    qp_matrices,
    solve,
    zero_input_cost,
)
from terraprint.mpc.coordination import ArmClamp, FrequencySplitter, clamp_arm, decompose_command
from terraprint.mpc.qp import QpError, QpResult, solve_box_qp

__all__ = [
    "ArmClamp", "FrequencySplitter", "MpcParams", "MpcProblem", "MpcSolution", "QpError",
    "QpResult", "build_problem", "clamp_arm", "decompose_command", "preview_weights",
    "qp_matrices", "solve", "solve_box_qp", "zero_input_cost",
]
