"""Phase-indexed joint reference trajectories for the cyclic gaits and the
jump cycle.

References are offsets from the default joint pose, not absolute angles; the
tracking error downstream is (q - q_default) - ref.  Phase lives in [0, 1) and
each function accepts a scalar or an array of phases, returning shape
``phase.shape + (12,)``.
"""

import numpy as np

from .robot import (
    ANKLE_PITCH_INDICES,
    HIP_PITCH_INDICES,
    KNEE_INDICES,
    L_HIP_PITCH,
    L_KNEE,
    NUM_JOINTS,
    R_HIP_PITCH,
    R_KNEE,
)

# jump cycle segment boundaries, as phase fractions of the 4 s cycle
JUMP_SQUAT_END = 0.30
JUMP_TAKEOFF_END = 0.42
JUMP_FLIGHT_END = 0.48
JUMP_LANDING_END = 0.75


def advance_phase(phase, dt, cycle_time):
    """Step the gait phase forward by dt seconds, wrapping at 1."""
    return np.mod(phase + dt / cycle_time, 1.0)


def periodic_reference(phase, sigma, hip_scale=1.0):
    """Half-sine swing reference for the cyclic gaits.

    The left leg swings while sin(2*pi*phase) < 0, the right while it is
    positive; the grounded leg holds the default pose (zero offset).  The knee
    flexes by up to 2*sigma and the hip by up to hip_scale.  Ankles stay at
    the default offset; the foot levels itself through the tracking reward,
    not the reference.
    """
    phase = np.asarray(phase, dtype=np.float64)
    s = np.sin(2.0 * np.pi * phase)
    left = s < 0.0
    right = s > 0.0
    ref = np.zeros(phase.shape + (NUM_JOINTS,))
    ref[..., L_HIP_PITCH] = np.where(left, -s * hip_scale, 0.0)
    ref[..., L_KNEE] = np.where(left, 2.0 * s * sigma, 0.0)
    ref[..., R_HIP_PITCH] = np.where(right, s * hip_scale, 0.0)
    ref[..., R_KNEE] = np.where(right, -2.0 * s * sigma, 0.0)
    return ref


def jump_reference(phase, squat_depth):
    """Symmetric squat-takeoff-flight-landing-stand reference.

    Both legs move identically.  The knee dips to -squat_depth at the middle
    of the squat window, returns to the default for takeoff and flight, dips
    half as deep on landing, and holds the default pose while standing.  Hip
    and ankle each take -0.5x the knee offset so the foot stays flat and the
    torso upright through the crouch.
    """
    phase = np.asarray(phase, dtype=np.float64)
    knee = np.zeros(phase.shape)

    in_squat = phase < JUMP_SQUAT_END
    knee = np.where(
        in_squat,
        -squat_depth * np.sin(np.pi * phase / JUMP_SQUAT_END) ** 2,
        knee)
    in_landing = (phase >= JUMP_FLIGHT_END) & (phase < JUMP_LANDING_END)
    landing_span = JUMP_LANDING_END - JUMP_FLIGHT_END
    knee = np.where(
        in_landing,
        -0.5 * squat_depth * np.sin(np.pi * (phase - JUMP_FLIGHT_END) / landing_span) ** 2,
        knee)

    ref = np.zeros(phase.shape + (NUM_JOINTS,))
    for knee_i, hip_i, ankle_i in zip(KNEE_INDICES, HIP_PITCH_INDICES,
                                      ANKLE_PITCH_INDICES):
        ref[..., knee_i] = knee
        ref[..., hip_i] = -0.5 * knee
        ref[..., ankle_i] = -0.5 * knee
    return ref


def squat_depth_curriculum(iteration, depth_min=0.05, depth_max=0.6,
                           start=2000, end=10000):
    """Linear ramp of the commanded squat depth over training iterations."""
    if end <= start:
        return depth_max if iteration >= end else depth_min
    t = np.clip((iteration - start) / (end - start), 0.0, 1.0)
    return float(depth_min + t * (depth_max - depth_min))


def stance_mask(phase, stance_ratio, offset=0.5):
    """Boolean (left, right) stance flags for the cyclic gaits.

    The left foot is in stance for the first stance_ratio of the cycle; the
    right runs the same window shifted by the leg offset (0.5 = anti-phase).
    Returns arrays shaped ``phase.shape + (2,)``.
    """
    phase = np.asarray(phase, dtype=np.float64)
    left = np.mod(phase, 1.0) < stance_ratio
    right = np.mod(phase - offset, 1.0) < stance_ratio
    return np.stack([left, right], axis=-1)


def jump_stance_mask(phase):
    """Both feet are expected on the ground except during flight."""
    phase = np.asarray(phase, dtype=np.float64)
    grounded = ~((phase >= JUMP_TAKEOFF_END) & (phase < JUMP_FLIGHT_END))
    return np.stack([grounded, grounded], axis=-1)


def gait_stance_mask(spec, phase):
    """Per-gait expected-contact mask used by swing-phase reward gating."""
    if spec.gait_name == "jumping":
        return jump_stance_mask(phase)
    return stance_mask(phase, spec.stance_ratio)


def gait_reference(spec, phase, squat_depth=None):
    """Reference offsets for a gait spec at the given phase(s)."""
    if spec.gait_name == "jumping":
        depth = spec.squat_depth_max if squat_depth is None else squat_depth
        return jump_reference(phase, depth)
    return periodic_reference(phase, spec.ref_scale, spec.hip_reference_scale)


def finite_difference_velocity(ref_fn, phase, cycle_time, delta=1e-4):
    """Central-difference joint velocity of a phase-indexed reference."""
    hi = ref_fn(np.mod(np.asarray(phase) + delta, 1.0))
    lo = ref_fn(np.mod(np.asarray(phase) - delta, 1.0))
    return (hi - lo) / (2.0 * delta * cycle_time)


def swing_knee_mask(spec, phase):
    """True where the knee channel is tracked (swing leg only, cyclic gaits)."""
    mask = ~gait_stance_mask(spec, phase)
    out = np.zeros(np.shape(np.asarray(phase)) + (NUM_JOINTS,), dtype=bool)
    out[..., KNEE_INDICES[0]] = mask[..., 0]
    out[..., KNEE_INDICES[1]] = mask[..., 1]
    return out
