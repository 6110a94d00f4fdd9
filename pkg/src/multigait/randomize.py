"""Per-episode domain randomization: sampled physics/control parameters
and the action-lag curriculum."""

from dataclasses import dataclass, field, replace

import numpy as np

NUM_LINKS = 7  # torso + (thigh, shank, foot) per leg

# motor-strength ranges are gait-dependent; everything else shares one table
MOTOR_STRENGTH_BY_GAIT = {
    "walking": (0.7, 1.0),
    "stair_climbing": (0.7, 1.0),
    "running": (0.8, 1.2),
    "goose_stepping": (0.8, 1.2),
    "jumping": (0.9, 1.1),
}


@dataclass
class RandomizationRanges:
    """Uniform sampling intervals for every randomized environment parameter."""

    friction: tuple = (0.2, 1.5)
    restitution: tuple = (0.0, 1.0)
    base_mass_delta: tuple = (-2.0, 5.0)
    link_inertia_scale: tuple = (0.5, 1.8)
    com_offset: tuple = (-0.1, 0.1)
    motor_strength: tuple = (0.7, 1.0)
    kp_scale: tuple = (0.8, 1.2)
    kd_scale: tuple = (0.8, 1.2)
    joint_friction: tuple = (0.3, 1.5)
    joint_damping: tuple = (0.3, 4.0)
    armature: tuple = (0.8, 1.2)
    action_lag: tuple = (5, 10)
    push_max_lin: float = 2.0
    push_max_ang: float = 1.5
    push_interval_s: float = 10.0
    init_scale: tuple = (0.5, 1.5)
    init_offset: tuple = (-0.1, 0.1)

    @classmethod
    def for_gait(cls, gait_name):
        """Default ranges with the gait's motor-strength interval selected."""
        if gait_name not in MOTOR_STRENGTH_BY_GAIT:
            raise ValueError(f"unknown gait_name: {gait_name!r}")
        return cls(motor_strength=MOTOR_STRENGTH_BY_GAIT[gait_name])

    def validate(self):
        bad = []
        for name in ("friction", "restitution", "base_mass_delta", "link_inertia_scale",
                     "com_offset", "motor_strength", "kp_scale", "kd_scale",
                     "joint_friction", "joint_damping", "armature", "action_lag",
                     "init_scale", "init_offset"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                bad.append(f"randomization.{name}: low {lo} > high {hi}")
        return bad


def _uniform(rng, interval):
    lo, hi = interval
    return float(lo + (hi - lo) * rng.random())


def sample_env_params(ranges, rng, min_lag=None):
    """Draw one EnvParams uniformly from ``ranges``.

    ``min_lag`` (from the lag curriculum) tightens the action-lag interval to
    [min_lag, high]; the sampled lag is an integer number of policy steps.
    """
    from .sim import EnvParams  # deferred: sim owns the parameter container

    lag_lo, lag_hi = ranges.action_lag
    if min_lag is not None:
        lag_lo = min_lag
    lag = int(rng.integers(lag_lo, lag_hi + 1))
    return EnvParams(
        friction=_uniform(rng, ranges.friction),
        restitution=_uniform(rng, ranges.restitution),
        base_mass_delta=_uniform(rng, ranges.base_mass_delta),
        link_inertia_scale=ranges.link_inertia_scale[0]
        + (ranges.link_inertia_scale[1] - ranges.link_inertia_scale[0]) * rng.random(NUM_LINKS),
        com_offset=np.array([_uniform(rng, ranges.com_offset), _uniform(rng, ranges.com_offset)]),
        motor_strength=_uniform(rng, ranges.motor_strength),
        kp_scale=_uniform(rng, ranges.kp_scale),
        kd_scale=_uniform(rng, ranges.kd_scale),
        joint_friction_scale=_uniform(rng, ranges.joint_friction),
        joint_damping_scale=_uniform(rng, ranges.joint_damping),
        armature_scale=_uniform(rng, ranges.armature),
        action_lag=lag,
        push_max_lin=ranges.push_max_lin,
        push_max_ang=ranges.push_max_ang,
        push_interval_s=ranges.push_interval_s,
        init_scale=ranges.init_scale,
        init_offset=ranges.init_offset,
    )


def lag_curriculum(iteration, ramp_iterations):
    """Minimum action lag: linear ramp 2 -> 5 over the first ``ramp_iterations``."""
    if ramp_iterations <= 0:
        return 5
    t = min(max(iteration / ramp_iterations, 0.0), 1.0)
    return int(round(2.0 + 3.0 * t))


def spawn_env_rngs(seed, num_envs):
    """Independent per-environment generators from one master seed."""
    root = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(num_envs)]
