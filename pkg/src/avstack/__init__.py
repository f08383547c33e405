"""Autonomous-driving stack with a deterministic 2D simulator.

Localization (GPS pair + CAN EKF), obstacle detection (height grid,
clustering, box fitting, depth-image filtering), risk zones, a longitudinal
MDP planner, MPC/PI control, and challenge-style scoring.
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
