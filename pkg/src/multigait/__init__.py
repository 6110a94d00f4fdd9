"""Multi-gait locomotion training on a planar biped: phase-indexed gait
references, selective motion-prior rewards, domain randomization, and a
from-scratch PPO stack, all in numpy.
"""

__version__ = "0.1.0"

from .config import GAIT_NAMES, GaitSpec, gait_preset  # noqa: F401
