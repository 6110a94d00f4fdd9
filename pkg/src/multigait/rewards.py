"""Reward terms, the weighted-sum combiner, and fall termination.

Every term function is pure and broadcasts over a leading batch axis; the
environment extracts the kinematic quantities and passes plain arrays.
Positive-shaped terms are bounded in (0, 1] with the maximum at zero error;
penalty terms return raw magnitudes >= 0 and carry negative weights.
"""

from dataclasses import dataclass

import numpy as np

from .config import REWARD_TERMS, ConfigError
from .robot import HIP_PITCH_INDICES, KNEE_INDICES

TERMINATION_REASONS = ("none", "base_contact", "roll_limit", "pitch_limit")
ROLL_LIMIT = 0.8
PITCH_LIMIT = 1.0


@dataclass
class RewardBreakdown:
    """Per-term (raw, weight, weighted) map plus the weighted total."""

    terms: dict
    total: np.ndarray


@dataclass(frozen=True)
class TerminationState:
    fallen: bool
    reason: str


def dual_exp(err):
    """The two-bandwidth tracking kernel: wide basin plus a sharp peak."""
    e2 = np.square(err)
    return np.exp(-4.0 * e2) + np.exp(-20.0 * e2)


def tracking_reward_periodic(err, knee_swing_mask):
    """Dual-exponential tracking over hip and knee channels, both legs.

    err is the 12-vector offset error (q - q_default) - ref.  Hips are always
    tracked; each knee counts only while its leg is in swing, per the
    (left, right) boolean mask.  Zero error with both knees active gives
    0.15 * (2 hips + 2 knees) * 2 kernels = 1.2.
    """
    err = np.asarray(err)
    mask = np.asarray(knee_swing_mask, dtype=np.float64)
    hips = dual_exp(err[..., HIP_PITCH_INDICES]).sum(axis=-1)
    knees = (dual_exp(err[..., KNEE_INDICES]) * mask).sum(axis=-1)
    return 0.15 * (hips + knees)


def tracking_reward_knee(err, knee_swing_mask):
    """The same dual-exponential kernel restricted to the knee channels."""
    err = np.asarray(err)
    mask = np.asarray(knee_swing_mask, dtype=np.float64)
    return 0.15 * (dual_exp(err[..., KNEE_INDICES]) * mask).sum(axis=-1)


def tracking_reward_jump(err, gain=4.0):
    """exp(-gain * MSE) over all 12 joints; 1.0 at perfect tracking."""
    err = np.asarray(err)
    return np.exp(-gain * np.mean(np.square(err), axis=-1))


def velocity_tracking_reward(v_actual, v_cmd, scale):
    """exp(-|v - cmd|^2 / s^2); inputs are (..., d) velocity vectors."""
    d = np.atleast_1d(np.asarray(v_actual, dtype=np.float64)) \
        - np.atleast_1d(np.asarray(v_cmd, dtype=np.float64))
    return np.exp(-np.sum(d * d, axis=-1) / scale ** 2)


def orientation_reward(gravity_xy, scale):
    """Uprightness from the horizontal projected-gravity components."""
    g = np.atleast_1d(np.asarray(gravity_xy, dtype=np.float64))
    return np.exp(-np.sum(g * g, axis=-1) / scale ** 2)


def base_height_reward(height, target, scale):
    return np.exp(-np.square(np.asarray(height) - target) / scale ** 2)


def action_rate_penalty(a, a_prev, a_prev2):
    """First- plus second-difference squared magnitudes of the action stream."""
    a = np.asarray(a)
    d1 = a - np.asarray(a_prev)
    d2 = a - 2.0 * np.asarray(a_prev) + np.asarray(a_prev2)
    return np.sum(d1 * d1, axis=-1) + np.sum(d2 * d2, axis=-1)


def joint_vel_penalty(dq):
    dq = np.asarray(dq)
    return np.sum(dq * dq, axis=-1)


def torque_rated_penalty(tau, tau_max):
    """Sum of squared torque as a fraction of each joint's rating (12 at limits)."""
    r = np.asarray(tau) / np.asarray(tau_max)
    return np.sum(r * r, axis=-1)


def takeoff_vel_value(v_z):
    """Linear ramp below 1 m/s, quadratic above; continuous at the knot."""
    v = np.asarray(v_z, dtype=np.float64)
    return np.where(v < 1.0, v, v * v)


def jump_height_reward(apex_rise, in_jump_window, airborne_in_stand,
                       target, scale):
    """Gaussian on the best base-height rise during the jump window.

    Outside the window the term turns into the anti-hop guard: raw -1
    whenever the robot is airborne during the squat/stand portion.
    """
    gauss = np.exp(-np.square(np.asarray(apex_rise) - target) / scale ** 2)
    in_w = np.asarray(in_jump_window, dtype=bool)
    hop = np.asarray(airborne_in_stand, dtype=bool)
    return np.where(in_w, gauss, np.where(hop, -1.0, 0.0))


def feet_sync_reward(contact_left, contact_right):
    """1 when both feet share a contact state, else 0."""
    same = np.asarray(contact_left, dtype=bool) == np.asarray(contact_right, dtype=bool)
    return same.astype(np.float64)


def horiz_vel_penalty(v_xy):
    v = np.atleast_1d(np.asarray(v_xy, dtype=np.float64))
    return np.sum(v * v, axis=-1)


def _swing_mean(values, swing_mask):
    """Mean of a per-foot quantity over swinging feet; 0 with no swing foot."""
    m = np.asarray(swing_mask, dtype=np.float64)
    n = m.sum(axis=-1)
    total = (np.asarray(values) * m).sum(axis=-1)
    return np.where(n > 0, total / np.maximum(n, 1.0), 0.0)


def feet_swing_height_reward(clearance, swing_mask, target, scale):
    """Gaussian on swing-foot ground clearance, averaged over swinging feet."""
    g = np.exp(-np.square(np.asarray(clearance) - target) / scale ** 2)
    return _swing_mean(g, swing_mask)


def alternate_swing_reward(contact_left, contact_right):
    """1 only in clean single support (exactly one foot down)."""
    one = np.asarray(contact_left, dtype=bool) ^ np.asarray(contact_right, dtype=bool)
    return one.astype(np.float64)


def leg_straightness_reward(knee_angle, swing_mask, scale):
    """Rewards an extended (zero-flexion) knee on the swing leg."""
    g = np.exp(-np.square(np.asarray(knee_angle)) / scale ** 2)
    return _swing_mean(g, swing_mask)


def calf_lift_reward(shank_elevation, swing_mask, target, scale):
    """Gaussian on how far the swing shank is raised toward the target angle."""
    g = np.exp(-np.square(np.asarray(shank_elevation) - target) / scale ** 2)
    return _swing_mean(g, swing_mask)


def foot_kick_reward(foot_forward_vel, swing_mask, target, scale):
    """Gaussian on the swing foot's forward speed around the kick target."""
    g = np.exp(-np.square(np.asarray(foot_forward_vel) - target) / scale ** 2)
    return _swing_mean(g, swing_mask)


def knee_collision_penalty(knee_contact_force):
    """Raw 1 when any knee link touches the ground."""
    f = np.asarray(knee_contact_force)
    return (f.sum(axis=-1) > 0).astype(np.float64)


def total_reward(raw_terms, spec):
    """Weighted sum over the gait's reward table.

    raw_terms maps term name -> raw value (scalar or batch array).  Terms the
    gait weights at zero still appear in the breakdown with their raw value,
    keeping metrics columns stable across gaits.
    """
    unknown = set(spec.reward_weights) - set(REWARD_TERMS)
    if unknown:
        raise ConfigError(f"unknown reward terms in weights: {sorted(unknown)}")
    stray = set(raw_terms) - set(REWARD_TERMS)
    if stray:
        raise ConfigError(f"unknown reward terms computed: {sorted(stray)}")
    terms = {}
    total = 0.0
    for name, weight in spec.reward_weights.items():
        raw = raw_terms.get(name, 0.0)
        weighted = weight * np.asarray(raw, dtype=np.float64)
        terms[name] = (raw, weight, weighted)
        total = total + weighted
    return RewardBreakdown(terms=terms, total=total)


def termination_flags(base_contact_force, roll, pitch):
    """Vectorized fall check; returns (fallen, reason index) arrays.

    Reason priority follows the check order: base contact, then roll, then
    pitch.  Thresholds are strict inequalities.
    """
    base = np.asarray(base_contact_force) > 0.0
    roll_hit = np.abs(np.asarray(roll)) > ROLL_LIMIT
    pitch_hit = np.abs(np.asarray(pitch)) > PITCH_LIMIT
    reason = np.where(base, 1, np.where(roll_hit, 2, np.where(pitch_hit, 3, 0)))
    return reason > 0, reason


def check_termination(base_contact_force, roll, pitch):
    """Scalar fall check returning a TerminationState."""
    fallen, reason = termination_flags(base_contact_force, roll, pitch)
    return TerminationState(fallen=bool(np.asarray(fallen).reshape(-1)[0]),
                            reason=TERMINATION_REASONS[int(np.asarray(reason).reshape(-1)[0])])
