"""Selective adversarial motion prior: discriminator, least-squares
adversarial loss with an expert-side gradient penalty, style-reward shaping,
and reference-derived expert transitions.

The discriminator scores transitions (s_t, s_{t+1}) of a compact feature
state: 12 joint offsets from the default pose, 12 joint velocities, and the
3-dim projected gravity.  Style and task rewards blend as
(1 - beta) * r_style + beta * r_task; gaits with alpha = 0 skip the
adversarial machinery entirely.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .nets import MLP, gradient_penalty
from .reference import finite_difference_velocity, gait_reference
from .robot import NUM_JOINTS

AMP_STATE_DIM = NUM_JOINTS + NUM_JOINTS + 3  # 27
TRANSITION_DIM = 2 * AMP_STATE_DIM  # 54
GRAD_PENALTY_COEF = 10.0

_HEADER = struct.Struct("<II")  # dimension, count


def amp_features(q_rel, dq, projected_gravity):
    """Feature state for one snapshot; broadcasts over a leading batch axis."""
    parts = [np.asarray(q_rel, dtype=np.float64),
             np.asarray(dq, dtype=np.float64),
             np.asarray(projected_gravity, dtype=np.float64)]
    out = np.concatenate([np.atleast_1d(p) for p in parts], axis=-1)
    if out.shape[-1] != AMP_STATE_DIM:
        raise ValueError(f"feature state has {out.shape[-1]} dims, expected {AMP_STATE_DIM}")
    return out


def make_transitions(s_now, s_next):
    """Concatenate consecutive feature states into discriminator inputs."""
    s_now = np.atleast_2d(s_now)
    s_next = np.atleast_2d(s_next)
    if s_now.shape != s_next.shape:
        raise ValueError("state pair shapes differ")
    return np.concatenate([s_now, s_next], axis=-1)


class TransitionBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity, dim=TRANSITION_DIM):
        self.data = np.zeros((int(capacity), int(dim)))
        self.capacity = int(capacity)
        self.size = 0
        self.head = 0

    def __len__(self):
        return self.size

    def add(self, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self.data.shape[1]:
            raise ValueError("transition dimension mismatch")
        for start in range(0, rows.shape[0], self.capacity):
            chunk = rows[start:start + self.capacity]
            n = chunk.shape[0]
            first = min(n, self.capacity - self.head)
            self.data[self.head:self.head + first] = chunk[:first]
            if n > first:
                self.data[:n - first] = chunk[first:]
            self.head = (self.head + n) % self.capacity
            self.size = min(self.size + n, self.capacity)
        return self

    def sample(self, n, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return self.data[idx].copy()


def save_expert_buffer(buf, path):
    """Flat binary dump: (dimension, count) header then row-major float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(buf.data.shape[1], buf.size))
        fh.write(np.ascontiguousarray(buf.data[:buf.size], dtype="<f8").tobytes())


def load_expert_buffer(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"{path}: truncated expert buffer header")
        dim, count = _HEADER.unpack(raw)
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != dim * count:
        raise ValueError(f"{path}: expected {dim * count} values, found {body.size}")
    buf = TransitionBuffer(max(count, 1), dim)
    if count:
        buf.add(body.reshape(count, dim))
    return buf


class Discriminator:
    """ReLU MLP with a scalar logit head over transition features."""

    def __init__(self, hidden=(128, 64, 32), dim=TRANSITION_DIM, rng=None):
        self.net = MLP((dim,) + tuple(hidden) + (1,), activation="relu",
                       out_gain=1.0, rng=rng)
        self.dim = dim

    def forward(self, transitions):
        transitions = np.atleast_2d(transitions)
        if transitions.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim}-dim transitions, got {transitions.shape[-1]}")
        return self.net.forward(transitions)[:, 0]

    @property
    def params(self):
        return self.net.params


def amp_reward(logit, alpha):
    """Style reward alpha * max(0, 1 - (D - 1)^2 / 4); in [0, alpha]."""
    d = np.asarray(logit, dtype=np.float64)
    return alpha * np.maximum(0.0, 1.0 - 0.25 * np.square(d - 1.0))


def combine_rewards(r_style, r_task, beta):
    """(1 - beta) * r_style + beta * r_task."""
    return (1.0 - beta) * np.asarray(r_style) + beta * np.asarray(r_task)


def discriminator_loss(disc, policy_batch, expert_batch, lam=GRAD_PENALTY_COEF):
    """Least-squares adversarial loss with expert-side gradient penalty.

    loss = E_policy[(D+1)^2] + E_expert[(D-1)^2] + lam * E_expert[|grad D|^2].
    Returns (loss, parameter gradients); the penalty is differentiated
    exactly through the frozen-ReLU-mask linearization.
    """
    policy_batch = np.atleast_2d(policy_batch)
    expert_batch = np.atleast_2d(expert_batch)
    if policy_batch.shape[0] == 0 or expert_batch.shape[0] == 0:
        raise ValueError("discriminator loss needs non-empty batches")

    net = disc.net
    d_pol, cache_pol = net.forward(policy_batch, want_cache=True)
    d_exp, cache_exp = net.forward(expert_batch, want_cache=True)
    n_pol, n_exp = policy_batch.shape[0], expert_batch.shape[0]

    loss = float(np.mean((d_pol + 1.0) ** 2) + np.mean((d_exp - 1.0) ** 2))
    grads_pol, _ = net.backward(cache_pol, 2.0 * (d_pol + 1.0) / n_pol)
    grads_exp, _ = net.backward(cache_exp, 2.0 * (d_exp - 1.0) / n_exp)
    grads = [gp + ge for gp, ge in zip(grads_pol, grads_exp)]

    if lam != 0.0:
        gp_values, gp_grads = gradient_penalty(net, expert_batch)
        loss += lam * float(np.mean(gp_values))
        grads = [g + lam * gg for g, gg in zip(grads, gp_grads)]
    return loss, grads


def generate_expert_transitions(spec, count, seed=0, noise_std=0.0, dt=None):
    """Build the expert buffer by rolling the gait reference through the
    feature map.

    Phases are sampled uniformly; each transition pairs the features at phase
    and phase + dt/cycle.  Joint velocities come from a central difference of
    the reference so zero-noise transitions satisfy the phase-advance
    relation exactly.  Refused for gaits that disable the motion prior.
    """
    if not spec.amp_enabled:
        raise ValueError(f"gait {spec.gait_name!r} disables the motion prior "
                         "(alpha = 0); no expert transitions to generate")
    rng = np.random.default_rng(seed)
    dt = spec.control_dt if dt is None else dt
    step = dt / spec.cycle_time

    def ref(p):
        return gait_reference(spec, p)

    def state(p):
        q_rel = ref(p)
        dq = finite_difference_velocity(ref, p, spec.cycle_time)
        gravity = np.zeros(p.shape + (3,))
        gravity[..., 2] = -1.0
        return amp_features(q_rel, dq, gravity)

    phase = rng.uniform(0.0, 1.0, size=count)
    trans = make_transitions(state(phase), state(np.mod(phase + step, 1.0)))
    if noise_std > 0.0:
        trans = trans + rng.normal(0.0, noise_std, size=trans.shape)
    return TransitionBuffer(count).add(trans)


@dataclass
class AmpStepResult:
    rewards: np.ndarray
    loss: float
    updated: bool
    policy_logit_mean: float = 0.0
    expert_logit_mean: float = 0.0


def amp_training_step(disc, optimizer, policy_transitions, expert_buffer, rng,
                      alpha, lam=GRAD_PENALTY_COEF):
    """One adversarial update plus style rewards for the rollout batch.

    The discriminator takes a single gradient step on the fresh policy
    transitions against an equal-size uniform expert sample; style rewards
    are then computed with the post-update weights.  With alpha = 0 the call
    is a no-op and the caller keeps pure task reward.
    """
    if alpha == 0.0:
        return AmpStepResult(rewards=None, loss=None, updated=False)
    policy_transitions = np.atleast_2d(policy_transitions)
    expert_batch = expert_buffer.sample(policy_transitions.shape[0], rng)
    loss, grads = discriminator_loss(disc, policy_transitions, expert_batch, lam)
    optimizer.step(grads)
    logits = disc.forward(policy_transitions)
    return AmpStepResult(
        rewards=amp_reward(logits, alpha),
        loss=loss,
        updated=True,
        policy_logit_mean=float(np.mean(logits)),
        expert_logit_mean=float(np.mean(disc.forward(expert_batch))),
    )
