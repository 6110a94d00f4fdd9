"""Joint layout, default pose, mirror maps, and the planar link parameter table.

The control interface is always 12 joints ([L, R] x hip_pitch, hip_roll,
hip_yaw, knee, ankle_pitch, ankle_roll).  The planar simulator integrates only
the six sagittal joints; the non-sagittal channels are frozen at their default
values so every observation / action layout keeps its full width.
"""

from dataclasses import dataclass, field

import numpy as np

JOINT_NAMES_PER_LEG = ("hip_pitch", "hip_roll", "hip_yaw", "knee", "ankle_pitch", "ankle_roll")
JOINT_NAMES = tuple(f"{side}_{j}" for side in ("L", "R") for j in JOINT_NAMES_PER_LEG)
NUM_JOINTS = 12

# indices into the 12-vector
L_HIP_PITCH, L_HIP_ROLL, L_HIP_YAW, L_KNEE, L_ANKLE_PITCH, L_ANKLE_ROLL = range(6)
R_HIP_PITCH, R_HIP_ROLL, R_HIP_YAW, R_KNEE, R_ANKLE_PITCH, R_ANKLE_ROLL = range(6, 12)

SAGITTAL_INDICES = np.array([L_HIP_PITCH, L_KNEE, L_ANKLE_PITCH, R_HIP_PITCH, R_KNEE, R_ANKLE_PITCH])
HIP_PITCH_INDICES = np.array([L_HIP_PITCH, R_HIP_PITCH])
KNEE_INDICES = np.array([L_KNEE, R_KNEE])
ANKLE_PITCH_INDICES = np.array([L_ANKLE_PITCH, R_ANKLE_PITCH])

# sign convention: hip_pitch > 0 swings the thigh forward, knee < 0 flexes,
# ankle_pitch > 0 pitches the toe up; flat-foot standing satisfies
# hip + knee + ankle = 0.
DEFAULT_JOINT_POS = np.zeros(NUM_JOINTS)
DEFAULT_JOINT_POS[[L_HIP_PITCH, R_HIP_PITCH]] = 0.15
DEFAULT_JOINT_POS[[L_KNEE, R_KNEE]] = -0.30
DEFAULT_JOINT_POS[[L_ANKLE_PITCH, R_ANKLE_PITCH]] = 0.15

# left/right swap with sign flips on the lateral / yaw channels
MIRROR_PERMUTATION = np.array([6, 7, 8, 9, 10, 11, 0, 1, 2, 3, 4, 5])
MIRROR_SIGNS = np.array([1.0, -1.0, -1.0, 1.0, 1.0, -1.0] * 2)


def mirror_joint_vector(v):
    """Left/right mirror of a 12-vector (positions, velocities, or actions)."""
    v = np.asarray(v)
    return v[..., MIRROR_PERMUTATION] * MIRROR_SIGNS


@dataclass(frozen=True)
class PlanarModel:
    """Desk-scale link table for the sagittal biped (totals ~12 kg).

    Lengths in m, masses in kg, inertias in kg m^2 about each link COM.
    The torso COM is the floating-base origin; the hip pivot sits
    ``hip_drop`` below it and ``torso_top`` above marks the torso extent.
    """

    torso_mass: float = 6.0
    torso_inertia: float = 0.15
    hip_drop: float = 0.2
    torso_top: float = 0.25

    thigh_mass: float = 1.5
    thigh_length: float = 0.22
    thigh_inertia: float = 0.0061

    shank_mass: float = 1.0
    shank_length: float = 0.22
    shank_inertia: float = 0.0040

    foot_mass: float = 0.5
    foot_inertia: float = 0.0006
    toe_length: float = 0.09
    heel_length: float = 0.05
    ankle_height: float = 0.04

    gravity: float = 9.81

    # soft joint limits (rad), ordered hip_pitch, knee, ankle_pitch
    joint_lower: tuple = (-1.2, -2.4, -1.0)
    joint_upper: tuple = (1.2, 0.05, 1.0)
    limit_stiffness: float = 300.0
    limit_damping: float = 8.0

    # passive joint dynamics at scale 1.0 (randomization multiplies these);
    # armature is sized so the stiffest preset Kd stays well inside the
    # explicit integrator's damping stability bound at dt = 0.005
    joint_damping: float = 0.5
    joint_dry_friction: float = 0.1
    joint_armature: float = 0.15

    # ground contact (normal spring, tangential anchor spring)
    contact_stiffness: float = 30000.0
    contact_damping_ratio: float = 1.0
    tangential_stiffness: float = 12000.0
    tangential_damping: float = 120.0

    def total_mass(self):
        return self.torso_mass + 2.0 * (self.thigh_mass + self.shank_mass + self.foot_mass)

    def standing_base_height(self, q_default=None):
        """Base (torso COM) height when both feet are flat on the ground."""
        q = DEFAULT_JOINT_POS if q_default is None else q_default
        hip, knee, ankle = q[L_HIP_PITCH], q[L_KNEE], q[L_ANKLE_PITCH]
        leg = self.thigh_length * np.cos(hip) + self.shank_length * np.cos(hip + knee)
        return float(leg + self.ankle_height + self.hip_drop)


DEFAULT_MODEL = PlanarModel()
