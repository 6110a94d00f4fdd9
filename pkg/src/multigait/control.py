"""Action-to-torque pipeline: target scaling, PD law with torque limits,
EMA smoothing, randomized action delay, and the 50 Hz / 200 Hz decimation
loop.

All functions broadcast over a leading batch axis, so they serve both a
single robot and a vectorized environment.
"""

from dataclasses import dataclass, field

import numpy as np

from .robot import DEFAULT_JOINT_POS, JOINT_NAMES, NUM_JOINTS


@dataclass(frozen=True)
class ActuatorConfig:
    """Per-joint PD gains plus the action-to-angle scaling.

    The target scale k_gain = tau_max / Kp maps a unit action to the joint
    error that would saturate the motor, so action magnitudes mean the same
    thing across joints with very different gains.
    """

    kp: np.ndarray
    kd: np.ndarray
    tau_max: np.ndarray
    k_action: float
    q_default: np.ndarray = field(default_factory=lambda: DEFAULT_JOINT_POS.copy())

    @property
    def k_gain(self):
        return self.tau_max / self.kp

    @classmethod
    def from_spec(cls, spec, q_default=None):
        """Expand the per-leg gain table of a GaitSpec into 12-vectors."""
        kp = np.zeros(NUM_JOINTS)
        kd = np.zeros(NUM_JOINTS)
        tau = np.zeros(NUM_JOINTS)
        for i, name in enumerate(JOINT_NAMES):
            g = spec.pd_gains[name.split("_", 1)[1]]
            kp[i], kd[i], tau[i] = g.Kp, g.Kd, g.tau_max
        return cls(kp=kp, kd=kd, tau_max=tau, k_action=spec.action_scale,
                   q_default=DEFAULT_JOINT_POS.copy() if q_default is None else q_default)


def action_to_target(action, cfg):
    """q_target = a * k_action * k_gain + q_default."""
    return np.asarray(action) * (cfg.k_action * cfg.k_gain) + cfg.q_default


def pd_torque(q_target, q, dq, cfg, motor_strength=1.0, kp_scale=1.0, kd_scale=1.0):
    """PD torque with per-joint clipping.

    The randomized motor-strength factor scales the commanded torque before
    the clip, so a weak motor saturates earlier rather than having a lower
    nominal gain.
    """
    tau = motor_strength * (cfg.kp * kp_scale * (q_target - q) - cfg.kd * kd_scale * dq)
    return np.clip(tau, -cfg.tau_max, cfg.tau_max)


def ema_smooth(action, prev, coeff):
    """a' = coeff * a + (1 - coeff) * prev."""
    return coeff * np.asarray(action) + (1.0 - coeff) * np.asarray(prev)


class DelayBuffer:
    """Fixed-latency action line.

    ``pop`` after a ``push`` returns the action pushed ``lag`` steps earlier;
    until that many actions have accumulated it returns the reset action.
    Lag 0 is the identity.  Lags are per row of the batch so each environment
    can draw its own latency at episode reset.
    """

    def __init__(self, lag, dim, num_envs=None, max_lag=None, reset_action=None):
        self._scalar = num_envs is None
        batch = 1 if self._scalar else int(num_envs)
        lag = np.broadcast_to(np.asarray(lag, dtype=int), (batch,)).copy()
        if np.any(lag < 0):
            raise ValueError("lag must be >= 0")
        self.size = int(max_lag if max_lag is not None else lag.max()) + 1
        if lag.max() >= self.size:
            raise ValueError("lag exceeds max_lag")
        self.lag = lag
        self.ring = np.zeros((self.size, batch, dim))
        self.head = 0
        self.count = np.zeros(batch, dtype=int)
        self.reset_action = np.zeros((batch, dim))
        if reset_action is not None:
            self.reset_action[:] = reset_action

    def reset(self, rows=None, lag=None, reset_action=None):
        """Clear the line for the given rows (all rows when omitted)."""
        rows = slice(None) if rows is None else rows
        self.count[rows] = 0
        if lag is not None:
            lag = np.asarray(lag, dtype=int)
            if np.any(lag < 0) or np.any(lag >= self.size):
                raise ValueError("lag out of range for this buffer")
            self.lag[rows] = lag
        if reset_action is not None:
            self.reset_action[rows] = reset_action

    def push(self, action):
        self.ring[self.head] = action
        self.head = (self.head + 1) % self.size
        self.count += 1

    def pop(self):
        idx = np.mod(self.head - 1 - self.lag, self.size)
        rows = np.arange(self.ring.shape[1])
        out = np.where((self.count > self.lag)[:, None],
                       self.ring[idx, rows], self.reset_action)
        return out[0] if self._scalar else out


def delayed_action(buf, action):
    """Push one action and read the line output in a single call."""
    buf.push(action)
    return buf.pop()


def control_step(action, read_state, apply_torque, cfg, decimation=4,
                 motor_strength=1.0, kp_scale=1.0, kd_scale=1.0):
    """Run one policy step as `decimation` PD evaluations at the sim rate.

    read_state() must return the current (q, dq); apply_torque(tau) advances
    the simulator by one physics step.  Returns the stack of applied torques.
    """
    q_target = action_to_target(action, cfg)
    torques = []
    for _ in range(decimation):
        q, dq = read_state()
        tau = pd_torque(q_target, q, dq, cfg, motor_strength, kp_scale, kd_scale)
        apply_torque(tau)
        torques.append(tau)
    return np.stack(torques)
