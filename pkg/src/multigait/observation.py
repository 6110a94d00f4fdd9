"""Actor and critic observation construction plus the running normalizer.

The actor sees a 50-dim proprioceptive frame stacked over 21 control steps
(1050 dims, newest frame last).  The critic additionally sees privileged
simulator state: a 73-dim frame stacked over 5 steps plus a 187-entry terrain
height grid (all zeros on flat ground), 552 dims total.  Channel order is
fixed here and documented in docs/observation.md.
"""

from dataclasses import dataclass

import numpy as np

from .robot import MIRROR_PERMUTATION, MIRROR_SIGNS, NUM_JOINTS

LIN_VEL_SCALE = 2.0
ANG_VEL_SCALE = 0.25
JOINT_VEL_SCALE = 0.05

ACTOR_FRAME_DIM = 50
ACTOR_STACK = 21
ACTOR_OBS_DIM = ACTOR_FRAME_DIM * ACTOR_STACK  # 1050

CRITIC_FRAME_DIM = 73
CRITIC_STACK = 5
TERRAIN_DIM = 187
CRITIC_OBS_DIM = CRITIC_FRAME_DIM * CRITIC_STACK + TERRAIN_DIM  # 552

# (name, length) in concatenation order
ACTOR_LAYOUT = (
    ("base_lin_vel", 3),
    ("commands", 3),
    ("phase_enc", 2),
    ("base_ang_vel", 3),
    ("projected_gravity", 3),
    ("joint_pos_err", NUM_JOINTS),
    ("joint_vel", NUM_JOINTS),
    ("prev_action", NUM_JOINTS),
)

CRITIC_LAYOUT = (
    ("base_lin_vel", 3),
    ("base_ang_vel", 3),
    ("projected_gravity", 3),
    ("commands", 3),
    ("joint_pos_err", NUM_JOINTS),
    ("joint_vel", NUM_JOINTS),
    ("actions", NUM_JOINTS),
    ("phase_enc", 2),
    ("friction", 1),
    ("foot_contact", 2),
    ("stance_mask", 2),
    ("tracking_err", NUM_JOINTS),
    ("push_vel", 2),
    ("foot_vertical_vel", 2),
    ("foot_clearance", 2),
)


def _offsets(layout):
    out, pos = {}, 0
    for name, size in layout:
        out[name] = (pos, pos + size)
        pos += size
    return out, pos


ACTOR_OFFSETS, _actor_total = _offsets(ACTOR_LAYOUT)
CRITIC_OFFSETS, _critic_total = _offsets(CRITIC_LAYOUT)
assert _actor_total == ACTOR_FRAME_DIM
assert _critic_total == CRITIC_FRAME_DIM


def build_actor_frame(base_lin_vel, commands, phase, base_ang_vel,
                      projected_gravity, joint_pos_err, joint_vel, prev_action):
    """Assemble one 50-dim policy frame; broadcasts over a leading batch axis.

    joint_pos_err is q - q_default (the caller subtracts the default pose).
    Rejects non-finite input, naming the first bad channel index.
    """
    phase = np.asarray(phase, dtype=np.float64)
    phase_enc = np.stack([np.sin(2.0 * np.pi * phase), np.cos(2.0 * np.pi * phase)],
                         axis=-1)
    parts = [
        np.asarray(base_lin_vel) * LIN_VEL_SCALE,
        np.asarray(commands, dtype=np.float64),
        phase_enc,
        np.asarray(base_ang_vel) * ANG_VEL_SCALE,
        np.asarray(projected_gravity, dtype=np.float64),
        np.asarray(joint_pos_err, dtype=np.float64),
        np.asarray(joint_vel) * JOINT_VEL_SCALE,
        np.asarray(prev_action, dtype=np.float64),
    ]
    frame = np.concatenate([np.atleast_1d(p) for p in parts], axis=-1)
    if frame.shape[-1] != ACTOR_FRAME_DIM:
        raise ValueError(f"frame has {frame.shape[-1]} dims, expected {ACTOR_FRAME_DIM}")
    if not np.all(np.isfinite(frame)):
        bad = int(np.argwhere(~np.isfinite(frame))[0][-1])
        raise ValueError(f"non-finite observation at channel {bad}")
    return frame


def build_critic_frame(base_lin_vel, base_ang_vel, projected_gravity, commands,
                       joint_pos_err, joint_vel, actions, phase, friction,
                       foot_contact, stance_mask, tracking_err, push_vel,
                       foot_vertical_vel, foot_clearance):
    """Assemble one 73-dim privileged frame (raw units, no scaling)."""
    phase = np.asarray(phase, dtype=np.float64)
    phase_enc = np.stack([np.sin(2.0 * np.pi * phase), np.cos(2.0 * np.pi * phase)],
                         axis=-1)
    friction = np.broadcast_to(np.asarray(friction, dtype=np.float64),
                               phase_enc.shape[:-1])[..., None]
    parts = [base_lin_vel, base_ang_vel, projected_gravity, commands,
             joint_pos_err, joint_vel, actions, phase_enc, friction,
             foot_contact, stance_mask, tracking_err, push_vel,
             foot_vertical_vel, foot_clearance]
    frame = np.concatenate([np.atleast_1d(np.asarray(p, dtype=np.float64))
                            for p in parts], axis=-1)
    if frame.shape[-1] != CRITIC_FRAME_DIM:
        raise ValueError(f"frame has {frame.shape[-1]} dims, expected {CRITIC_FRAME_DIM}")
    return frame


class ObservationStack:
    """Ring of the most recent `depth` frames, flattened newest-last.

    Vectorized over environments: frames are (num_envs, frame_dim).  Reset
    fills every slot with the reset frame so the history starts coherent.
    """

    def __init__(self, depth, frame_dim, num_envs=None):
        self._scalar = num_envs is None
        self.depth = int(depth)
        self.frame_dim = int(frame_dim)
        batch = 1 if self._scalar else int(num_envs)
        self.ring = np.zeros((self.depth, batch, self.frame_dim))
        self.head = 0  # slot holding the oldest frame (next overwrite)

    def reset(self, frame, rows=None):
        frame = np.atleast_2d(frame)
        if rows is None:
            self.ring[:] = frame
        else:
            self.ring[:, rows] = frame
        return self

    def push(self, frame):
        self.ring[self.head] = np.atleast_2d(frame)
        self.head = (self.head + 1) % self.depth
        return self

    def flatten(self):
        ordered = np.concatenate([self.ring[self.head:], self.ring[:self.head]], axis=0)
        flat = np.moveaxis(ordered, 0, 1).reshape(ordered.shape[1], -1)
        return flat[0] if self._scalar else flat


def push_frame(stack, frame):
    """Push + flatten in one call."""
    return stack.push(frame).flatten()


def build_critic_observation(critic_stack, terrain_heights=None):
    """Stacked privileged frames plus the terrain grid (zeros when flat)."""
    flat = critic_stack.flatten()
    batch_shape = flat.shape[:-1]
    if terrain_heights is None:
        terrain = np.zeros(batch_shape + (TERRAIN_DIM,))
    else:
        terrain = np.broadcast_to(np.asarray(terrain_heights, dtype=np.float64),
                                  batch_shape + (TERRAIN_DIM,))
    obs = np.concatenate([flat, terrain], axis=-1)
    assert obs.shape[-1] == CRITIC_OBS_DIM
    return obs


@dataclass
class RunningNormalizer:
    """Streaming mean/variance normalizer (parallel Welford merge).

    Starts as the identity (mean 0, variance 1, count 0); the first update
    adopts the batch statistics exactly.  Uses population variance, matching
    a two-pass computation over everything seen so far.
    """

    mean: np.ndarray
    m2: np.ndarray
    count: float
    eps: float = 1e-8

    @classmethod
    def create(cls, dim, eps=1e-8):
        return cls(mean=np.zeros(dim), m2=np.zeros(dim), count=0.0, eps=eps)

    @property
    def var(self):
        if self.count <= 0:
            return np.ones_like(self.mean)
        return self.m2 / self.count

    def update(self, batch):
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        n_b = batch.shape[0]
        if n_b == 0:
            raise ValueError("empty normalizer update")
        mean_b = batch.mean(axis=0)
        m2_b = ((batch - mean_b) ** 2).sum(axis=0)
        delta = mean_b - self.mean
        total = self.count + n_b
        self.mean = self.mean + delta * (n_b / total)
        self.m2 = self.m2 + m2_b + delta ** 2 * (self.count * n_b / total)
        self.count = total
        return self

    def normalize(self, v):
        return (np.asarray(v) - self.mean) / np.sqrt(self.var + self.eps)

    def copy(self):
        return RunningNormalizer(mean=self.mean.copy(), m2=self.m2.copy(),
                                 count=self.count, eps=self.eps)

    def state_arrays(self):
        """(mean, var, count) triple for checkpoint serialization."""
        return self.mean.copy(), self.var.copy(), np.array([self.count])

    @classmethod
    def from_state_arrays(cls, mean, var, count, eps=1e-8):
        count = float(np.asarray(count).reshape(-1)[0])
        m2 = np.asarray(var, dtype=np.float64) * count
        return cls(mean=np.asarray(mean, dtype=np.float64).copy(), m2=m2.copy(),
                   count=count, eps=eps)


def _frame_mirror_map():
    """Permutation and sign vector mirroring one actor frame left/right."""
    perm = np.arange(ACTOR_FRAME_DIM)
    signs = np.ones(ACTOR_FRAME_DIM)

    def seg(name):
        lo, hi = ACTOR_OFFSETS[name]
        return slice(lo, hi)

    signs[seg("base_lin_vel")] = (1.0, -1.0, 1.0)
    signs[seg("commands")] = (1.0, -1.0, -1.0)
    signs[seg("phase_enc")] = (-1.0, -1.0)
    signs[seg("base_ang_vel")] = (-1.0, 1.0, -1.0)
    signs[seg("projected_gravity")] = (1.0, -1.0, 1.0)
    for name in ("joint_pos_err", "joint_vel", "prev_action"):
        lo, _ = ACTOR_OFFSETS[name]
        perm[lo:lo + NUM_JOINTS] = lo + MIRROR_PERMUTATION
        signs[lo:lo + NUM_JOINTS] = MIRROR_SIGNS
    return perm, signs


FRAME_MIRROR_PERM, FRAME_MIRROR_SIGNS = _frame_mirror_map()

# the stacked 1050-dim mirror applies the frame map to each of the 21 frames
OBS_MIRROR_PERM = np.concatenate(
    [FRAME_MIRROR_PERM + k * ACTOR_FRAME_DIM for k in range(ACTOR_STACK)])
OBS_MIRROR_SIGNS = np.tile(FRAME_MIRROR_SIGNS, ACTOR_STACK)


def mirror_actor_observation(obs):
    """Left/right mirror of a stacked 1050-dim observation (an involution)."""
    obs = np.asarray(obs)
    return obs[..., OBS_MIRROR_PERM] * OBS_MIRROR_SIGNS
