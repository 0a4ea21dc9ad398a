"""Terrain-adaptive mobile 3D printing: planner, preview MPC and a 1 ms kinematic plant."""

__version__ = "0.1.0"

from terraprint.kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
