"""Proximal policy optimization over the vectorized gait environments.

From-scratch numpy PPO: diagonal-Gaussian actor, asymmetric critic on the
privileged observation, generalized advantage estimation, clipped surrogate
with an adaptive-KL learning rate, optional mirror-consistency loss,
optional adversarial style reward, streaming observation normalization,
per-iteration metrics, checkpoints, and a flat policy bundle for inference.

Training state splits cleanly: the environment owns physics and episode
bookkeeping, the ActorCritic owns weights, and the normalizers travel with
the optimizer (raw observations in, normalized observations to the nets).
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .amp import (
    Discriminator,
    amp_training_step,
    combine_rewards,
    generate_expert_transitions,
)
from .config import REWARD_TERMS, save_gait_config
from .nets import MLP, Adam
from .observation import (
    ACTOR_FRAME_DIM,
    ACTOR_OBS_DIM,
    ACTOR_OFFSETS,
    ACTOR_STACK,
    CRITIC_OBS_DIM,
    RunningNormalizer,
    mirror_actor_observation,
)
from .randomize import lag_curriculum
from .reference import squat_depth_curriculum
from .robot import NUM_JOINTS, mirror_joint_vector
from .env import VectorEnv

LOG_2PI = math.log(2.0 * math.pi)

BUNDLE_MAGIC = b"MGB1"
BUNDLE_VERSION = 1

METRICS_SCHEMA = "multigait metrics v1"
METRICS_FIXED_COLUMNS = ("iteration", "reward", "tracking_err", "failure_rate",
                         "kl", "lr", "disc_loss", "apex_rise", "squat_depth")


# ---------------------------------------------------------------------------
# diagonal-Gaussian policy math

def gaussian_log_prob(mean, log_std, x):
    """Log density of x under N(mean, diag(exp(log_std)^2)), summed over dims."""
    mean = np.asarray(mean, dtype=np.float64)
    z = (np.asarray(x, dtype=np.float64) - mean) / np.exp(log_std)
    return (-0.5 * np.sum(z * z, axis=-1)
            - np.sum(log_std)
            - 0.5 * LOG_2PI * mean.shape[-1])


def gaussian_entropy(log_std):
    """Differential entropy; state-independent for a fixed-std policy."""
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG_2PI))


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new):
    """Mean KL(old || new) between diagonal Gaussians over a batch."""
    var_old = np.exp(2.0 * np.asarray(log_std_old, dtype=np.float64))
    var_new = np.exp(2.0 * np.asarray(log_std_new, dtype=np.float64))
    d_mean = np.asarray(mean_old, dtype=np.float64) - np.asarray(mean_new)
    per = (np.asarray(log_std_new) - np.asarray(log_std_old)
           + (var_old + d_mean * d_mean) / (2.0 * var_new) - 0.5)
    return float(np.mean(np.sum(per, axis=-1)))


class ActorCritic:
    """Gaussian-policy MLP pair: actor on the stacked policy observation,
    critic on the privileged observation, plus a state-independent log-std.

    The critic shares the actor's shape, never its weights.
    """

    def __init__(self, obs_dim, critic_obs_dim, act_dim, actor_hidden,
                 critic_hidden, init_log_std, rng):
        self.obs_dim = int(obs_dim)
        self.critic_obs_dim = int(critic_obs_dim)
        self.act_dim = int(act_dim)
        self.actor = MLP((self.obs_dim,) + tuple(actor_hidden) + (self.act_dim,),
                         activation="elu", out_gain=0.01, rng=rng)
        self.critic = MLP((self.critic_obs_dim,) + tuple(critic_hidden) + (1,),
                          activation="elu", out_gain=1.0, rng=rng)
        self.log_std = np.full(self.act_dim, float(init_log_std))

    @classmethod
    def from_spec(cls, spec, rng):
        return cls(ACTOR_OBS_DIM, CRITIC_OBS_DIM, NUM_JOINTS,
                   spec.ppo.actor_hidden, spec.ppo.critic_hidden,
                   spec.ppo.init_log_std, rng)

    @property
    def params(self):
        """Flat parameter list: actor, then critic, then log-std."""
        return self.actor.params + self.critic.params + [self.log_std]

    def _check(self, obs, dim, label):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[-1] != dim:
            raise ValueError(f"{label} expects {dim}-dim input, got {obs.shape[-1]}")
        return obs

    def action_mean(self, obs):
        return self.actor.forward(self._check(obs, self.obs_dim, "actor"))

    def value(self, critic_obs):
        obs = self._check(critic_obs, self.critic_obs_dim, "critic")
        return self.critic.forward(obs)[:, 0]

    def act(self, obs, rng):
        """Sample an action; returns (action, mean, log_prob)."""
        mean = self.action_mean(obs)
        action = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        return action, mean, gaussian_log_prob(mean, self.log_std, action)


# ---------------------------------------------------------------------------
# advantage estimation and the update

def adapt_lr(lr, observed_kl, kl_target=0.01):
    """KL-tracking learning-rate schedule.

    Halve the rate when the step overshoots (KL > 2x target), double it when
    the step is timid (KL < target/2), and clamp to [1e-6, 1e-2].
    """
    if observed_kl > 2.0 * kl_target:
        lr = lr * 0.5
    elif observed_kl < 0.5 * kl_target:
        lr = lr * 2.0
    return float(np.clip(lr, 1e-6, 1e-2))


def compute_gae(rewards, values, dones, gamma=0.99, lam=0.95):
    """Generalized advantage estimation over a (steps, envs) rollout.

    ``values`` carries one extra row: the bootstrap value of the observation
    after the final step.  ``dones`` marks hard episode ends; the recursion
    stops crossing them.  Returns (advantages, returns) with
    returns = advantages + values[:-1].
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    steps = rewards.shape[0]
    if values.shape[0] != steps + 1:
        raise ValueError("values must carry one bootstrap row beyond rewards")
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1:])
    for t in range(steps - 1, -1, -1):
        live = 1.0 - dones[t].astype(np.float64)
        delta = rewards[t] + gamma * live * values[t + 1] - values[t]
        carry = delta + gamma * lam * live * carry
        adv[t] = carry
    return adv, adv + values[:-1]


@dataclass
class RolloutBatch:
    """Flattened on-policy batch; observations are already normalized."""

    actor_obs: np.ndarray
    critic_obs: np.ndarray
    actions: np.ndarray
    means: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    log_std: np.ndarray  # snapshot of the behavior policy's log-std
    mirror_obs: np.ndarray = None  # set when the mirror-consistency loss is on

    def __len__(self):
        return self.actor_obs.shape[0]


def ppo_losses_and_grads(policy, obs, critic_obs, actions, old_log_probs,
                         old_means, advantages, returns, cfg, sym_weight=0.0,
                         mirror_obs=None, old_log_std=None):
    """Clipped-surrogate PPO loss on one minibatch, with exact gradients.

    Returns (total loss, gradient list aligned with ``policy.params``, info)
    where info carries the loss pieces and the analytic KL against the
    behavior policy.  The gradient treats the clip and min kinks by the
    active-branch convention (zero gradient once the ratio is clipped away).
    """
    n = obs.shape[0]
    clip = cfg.clip_ratio
    std = np.exp(policy.log_std)

    mean, cache_a = policy.actor.forward(obs, want_cache=True)
    v_raw, cache_c = policy.critic.forward(critic_obs, want_cache=True)
    v = v_raw[:, 0]

    z = (actions - mean) / std
    log_probs = (-0.5 * np.sum(z * z, axis=-1) - np.sum(policy.log_std)
                 - 0.5 * LOG_2PI * policy.act_dim)
    ratio = np.exp(log_probs - old_log_probs)
    surrogate = np.minimum(ratio * advantages,
                           np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages)
    pi_loss = -float(np.mean(surrogate))

    v_err = v - returns
    v_loss = float(np.mean(v_err * v_err))
    entropy = gaussian_entropy(policy.log_std)
    loss = pi_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy
    if not np.isfinite(loss):
        info = {"pi_loss": pi_loss, "v_loss": v_loss, "entropy": entropy,
                "sym_loss": 0.0, "kl": float("nan")}
        return loss, None, info

    # surrogate gradient flows only where clipping is inactive
    active = ~(((ratio > 1.0 + clip) & (advantages > 0.0))
               | ((ratio < 1.0 - clip) & (advantages < 0.0)))
    d_logp = -(active * ratio * advantages) / n
    d_mean = d_logp[:, None] * z / std
    g_log_std = np.sum(d_logp[:, None] * (z * z - 1.0), axis=0) - cfg.entropy_coef

    sym_loss = 0.0
    grads_mirror = None
    if sym_weight > 0.0:
        if mirror_obs is None:
            raise ValueError("mirror-consistency loss needs mirrored observations")
        mirrored_mean, cache_m = policy.actor.forward(mirror_obs, want_cache=True)
        diff = mirrored_mean - mirror_joint_vector(mean)
        sym_loss = sym_weight * float(np.mean(diff * diff))
        loss += sym_loss
        d_diff = (2.0 * sym_weight / diff.size) * diff
        grads_mirror, _ = policy.actor.backward(cache_m, d_diff)
        d_mean = d_mean - mirror_joint_vector(d_diff)  # mirror is symmetric

    grads_actor, _ = policy.actor.backward(cache_a, d_mean)
    if grads_mirror is not None:
        grads_actor = [ga + gm for ga, gm in zip(grads_actor, grads_mirror)]
    grads_critic, _ = policy.critic.backward(
        cache_c, (cfg.value_coef * 2.0 / n) * v_err[:, None])
    grads = grads_actor + grads_critic + [g_log_std]

    old_log_std = policy.log_std if old_log_std is None else old_log_std
    info = {
        "pi_loss": pi_loss,
        "v_loss": v_loss,
        "entropy": entropy,
        "sym_loss": sym_loss,
        "kl": gaussian_kl(old_means, old_log_std, mean, policy.log_std),
    }
    return loss, grads, info


@dataclass
class UpdateStats:
    kl: float
    lr: float
    pi_loss: float
    v_loss: float
    entropy: float
    sym_loss: float
    updates: int


def clip_grad_norm(grads, max_norm):
    """Scale the gradient list so its global L2 norm is at most max_norm."""
    if max_norm is None or max_norm <= 0.0:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


def ppo_update(policy, optimizer, batch, cfg, lr, rng, sym_weight=0.0):
    """Run the full epoch/minibatch schedule on one rollout batch.

    Exactly ``cfg.epochs * cfg.minibatches`` gradient steps, all at the
    passed learning rate; the returned rate for the next iteration adapts to
    the mean analytic KL of this update (untouched when
    ``cfg.kl_target <= 0``).  Raises RuntimeError on a non-finite loss so
    the caller can abort the iteration.
    """
    size = len(batch)
    kls, pis, vs, syms = [], [], [], []
    entropy = gaussian_entropy(policy.log_std)
    updates = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(size)
        for idx in np.array_split(order, cfg.minibatches):
            loss, grads, info = ppo_losses_and_grads(
                policy, batch.actor_obs[idx], batch.critic_obs[idx],
                batch.actions[idx], batch.log_probs[idx], batch.means[idx],
                batch.advantages[idx], batch.returns[idx], cfg,
                sym_weight=sym_weight,
                mirror_obs=None if batch.mirror_obs is None else batch.mirror_obs[idx],
                old_log_std=batch.log_std)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite PPO loss after {updates} updates: "
                    f"pi={info['pi_loss']!r} v={info['v_loss']!r}")
            optimizer.step(clip_grad_norm(grads, cfg.max_grad_norm), lr=lr)
            updates += 1
            kls.append(info["kl"])
            pis.append(info["pi_loss"])
            vs.append(info["v_loss"])
            syms.append(info["sym_loss"])
            entropy = info["entropy"]
    stats = UpdateStats(kl=float(np.mean(kls)), lr=lr, pi_loss=float(np.mean(pis)),
                        v_loss=float(np.mean(vs)), entropy=entropy,
                        sym_loss=float(np.mean(syms)), updates=updates)
    next_lr = adapt_lr(lr, stats.kl, cfg.kl_target) if cfg.kl_target > 0.0 else lr
    return stats, next_lr


# ---------------------------------------------------------------------------
# metrics

@dataclass
class TrainRecord:
    """One iteration's logged metrics."""

    iteration: int
    reward: float
    tracking_err: float
    failure_rate: float
    kl: float
    lr: float
    disc_loss: float
    apex_rise: float
    squat_depth: float
    term_means: dict = field(default_factory=dict)


def metrics_columns():
    return list(METRICS_FIXED_COLUMNS) + [f"term_{name}" for name in REWARD_TERMS]


class MetricsWriter:
    """Incremental CSV writer with a schema-version header comment."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._fh.write(f"# {METRICS_SCHEMA}\n")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(metrics_columns())
        self._fh.flush()

    def write(self, record):
        row = [record.iteration, repr(record.reward), repr(record.tracking_err),
               repr(record.failure_rate), repr(record.kl), repr(record.lr),
               repr(record.disc_loss), repr(record.apex_rise),
               repr(record.squat_depth)]
        row += [repr(float(record.term_means.get(name, float("nan"))))
                for name in REWARD_TERMS]
        self._writer.writerow(row)
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_metrics(path, records):
    with MetricsWriter(path) as writer:
        for record in records:
            writer.write(record)


def read_metrics(path):
    """Load a metrics CSV back into TrainRecord rows; validates the schema."""
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != f"# {METRICS_SCHEMA}":
            raise ValueError(f"{path}: unknown metrics schema {header!r}")
        reader = csv.reader(fh)
        columns = next(reader, None)
        if columns is None:
            raise ValueError(f"{path}: missing column row")
        missing = [c for c in metrics_columns() if c not in columns]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        at = {name: columns.index(name) for name in columns}
        records = []
        for row in reader:
            if not row:
                continue
            records.append(TrainRecord(
                iteration=int(row[at["iteration"]]),
                reward=float(row[at["reward"]]),
                tracking_err=float(row[at["tracking_err"]]),
                failure_rate=float(row[at["failure_rate"]]),
                kl=float(row[at["kl"]]),
                lr=float(row[at["lr"]]),
                disc_loss=float(row[at["disc_loss"]]),
                apex_rise=float(row[at["apex_rise"]]),
                squat_depth=float(row[at["squat_depth"]]),
                term_means={name: float(row[at[f"term_{name}"]])
                            for name in REWARD_TERMS},
            ))
    return records


def moving_average(values, window=100):
    """Trailing moving average (shorter head windows average what exists)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    sums = np.cumsum(values)
    out = np.empty_like(values)
    out[:window] = sums[:window] / np.arange(1, min(window, values.size) + 1)
    if values.size > window:
        out[window:] = (sums[window:] - sums[:-window]) / window
    return out


def convergence_iteration(values, window=100, tol=0.05):
    """First index from which the trailing moving average stays within
    ``tol`` (relative) of its final value.  None for an empty series.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return None
    ma = moving_average(values, window)
    final = ma[-1]
    band = tol * max(abs(final), 1e-9)
    ok = np.abs(ma - final) <= band
    bad = np.flatnonzero(~ok)
    return int(bad[-1] + 1) if bad.size else 0


# ---------------------------------------------------------------------------
# policy bundle (inference export)

@dataclass
class PolicyBundle:
    """Actor, its sampling spread, and the observation normalizer."""

    gait_name: str
    actor: MLP
    log_std: np.ndarray
    normalizer: RunningNormalizer

    @property
    def obs_dim(self):
        return self.actor.sizes[0]

    @property
    def act_dim(self):
        return self.actor.sizes[-1]

    def action(self, raw_obs):
        """Deterministic action mean from raw (unnormalized) observations."""
        raw_obs = np.atleast_2d(np.asarray(raw_obs, dtype=np.float64))
        if raw_obs.shape[-1] != self.obs_dim:
            raise ValueError(
                f"bundle expects {self.obs_dim}-dim observations, got {raw_obs.shape[-1]}")
        return self.actor.forward(self.normalizer.normalize(raw_obs))


def export_policy(actor, log_std, normalizer, path, gait_name=""):
    """Write the inference bundle: actor weights + log-std + normalizer.

    Flat little-endian layout: magic, format version, gait name, actor layer
    sizes, then float64 payload (per-layer W row-major and b, log-std,
    normalizer mean/var/count).  Loading reproduces forward passes bitwise.
    """
    name = gait_name.encode("utf-8")
    sizes = actor.sizes
    header = bytearray()
    header += BUNDLE_MAGIC
    header += np.array([BUNDLE_VERSION, len(name)], dtype="<u4").tobytes()
    header += name
    header += np.array([len(sizes)], dtype="<u4").tobytes()
    header += np.array(sizes, dtype="<u4").tobytes()
    mean, var, count = normalizer.state_arrays()
    if mean.size != sizes[0]:
        raise ValueError(
            f"normalizer covers {mean.size} dims, actor consumes {sizes[0]}")
    body = []
    for w, b in zip(actor.weights, actor.biases):
        body.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        body.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body.append(np.ascontiguousarray(log_std, dtype="<f8").tobytes())
    body.append(np.ascontiguousarray(mean, dtype="<f8").tobytes())
    body.append(np.ascontiguousarray(var, dtype="<f8").tobytes())
    body.append(np.ascontiguousarray(count, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        for chunk in body:
            fh.write(chunk)


def load_policy(path):
    """Read a policy bundle; errors on bad magic, version, or length."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BUNDLE_MAGIC:
        raise ValueError(f"{path}: not a policy bundle (bad magic)")
    pos = 4

    def take(count, dtype="<u4"):
        nonlocal pos
        width = np.dtype(dtype).itemsize * count
        if pos + width > len(raw):
            raise ValueError(f"{path}: truncated policy bundle")
        out = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pos += width
        return out

    version, name_len = take(2)
    if version != BUNDLE_VERSION:
        raise ValueError(f"{path}: unsupported bundle version {version}")
    if pos + name_len > len(raw):
        raise ValueError(f"{path}: truncated policy bundle")
    gait_name = raw[pos:pos + name_len].decode("utf-8")
    pos += int(name_len)
    n_sizes = int(take(1)[0])
    sizes = tuple(int(s) for s in take(n_sizes))
    if len(sizes) < 2:
        raise ValueError(f"{path}: bundle actor needs at least two layer sizes")

    actor = MLP(sizes, activation="elu", out_gain=1.0,
                rng=np.random.default_rng(0))
    params = []
    for i in range(len(sizes) - 1):
        params.append(take(sizes[i + 1] * sizes[i], "<f8").reshape(sizes[i + 1], sizes[i]))
        params.append(take(sizes[i + 1], "<f8"))
    actor.set_params(params)
    log_std = take(sizes[-1], "<f8").copy()
    mean = take(sizes[0], "<f8").copy()
    var = take(sizes[0], "<f8").copy()
    count = take(1, "<f8").copy()
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes in policy bundle")
    normalizer = RunningNormalizer.from_state_arrays(mean, var, count)
    return PolicyBundle(gait_name=gait_name, actor=actor, log_std=log_std,
                        normalizer=normalizer)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    policy: ActorCritic
    actor_norm: RunningNormalizer
    critic_norm: RunningNormalizer
    records: list
    spec: object
    seed: int
    out_dir: str = None
    bundle_path: str = None


def _trainer_rngs(seed):
    # keyed off (seed, tag) so the streams never collide with the per-env
    # generators, which spawn from SeedSequence(seed) directly
    root = np.random.SeedSequence([int(seed), 0x70706F])
    return [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(4)]


def train(spec, seed=0, out_dir=None, num_envs=None, iterations=None,
          log_fn=None):
    """Train one gait policy; returns the TrainResult.

    ``num_envs`` and ``iterations`` override the spec for smoke runs.  When
    ``out_dir`` is given the run directory is self-describing: config
    snapshot, run metadata, incremental metrics CSV, periodic checkpoint
    bundles, and the final policy bundle.
    """
    init_rng, act_rng, shuffle_rng, amp_rng = _trainer_rngs(seed)
    env = VectorEnv(spec, num_envs=num_envs, seed=seed)
    n = env.n
    steps = spec.steps_per_env
    cfg = spec.ppo
    total_iters = int(spec.max_iterations if iterations is None else iterations)
    ramp_iters = max(1, int(round(cfg.lag_ramp_fraction * total_iters)))

    policy = ActorCritic.from_spec(spec, rng=init_rng)
    optimizer = Adam(policy.params, lr=cfg.learning_rate)
    lr = cfg.learning_rate
    actor_norm = RunningNormalizer.create(ACTOR_OBS_DIM)
    critic_norm = RunningNormalizer.create(CRITIC_OBS_DIM)

    disc = disc_opt = expert = None
    if spec.amp_enabled:
        expert = generate_expert_transitions(spec, cfg.expert_transitions, seed=seed)
        disc = Discriminator(hidden=cfg.disc_hidden, rng=init_rng)
        disc_opt = Adam(disc.params, lr=cfg.disc_lr)

    writer = None
    bundle_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_gait_config(spec, os.path.join(out_dir, "config.ini"))
        with open(os.path.join(out_dir, "run.json"), "w") as fh:
            json.dump({"gait": spec.gait_name, "seed": int(seed),
                       "num_envs": n, "iterations": total_iters,
                       "package_version": __version__}, fh, indent=2)
            fh.write("\n")
        writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
        bundle_path = os.path.join(out_dir, "policy_final.bundle")

    records = []
    obs_raw, cobs_raw = env.reset_all()
    try:
        for it in range(total_iters):
            env.set_min_lag(lag_curriculum(it, ramp_iters))
            env.set_squat_depth(squat_depth_curriculum(
                it, spec.squat_depth_min, spec.squat_depth_max,
                *spec.squat_curriculum))

            raw_a = np.empty((steps, n, ACTOR_OBS_DIM))
            raw_c = np.empty((steps, n, CRITIC_OBS_DIM))
            obs_a = np.empty((steps, n, ACTOR_OBS_DIM))
            obs_c = np.empty((steps, n, CRITIC_OBS_DIM))
            actions = np.empty((steps, n, NUM_JOINTS))
            means = np.empty((steps, n, NUM_JOINTS))
            log_probs = np.empty((steps, n))
            task_reward = np.empty((steps, n))
            dones = np.zeros((steps, n), dtype=bool)
            transitions = np.empty((steps, n, env.amp_prev.shape[-1] * 2))
            timeout_records = []
            term_sums = {name: 0.0 for name in REWARD_TERMS}
            track_sum = 0.0
            fell = np.zeros(n, dtype=bool)

            for t in range(steps):
                raw_a[t] = obs_raw
                raw_c[t] = cobs_raw
                obs_a[t] = actor_norm.normalize(obs_raw)
                obs_c[t] = critic_norm.normalize(cobs_raw)
                actions[t], means[t], log_probs[t] = policy.act(obs_a[t], act_rng)
                out = env.step(actions[t])
                task_reward[t] = out.reward
                dones[t] = out.dones | out.timeouts
                transitions[t] = out.amp_transitions
                rows = np.flatnonzero(out.timeouts)
                if rows.size:
                    timeout_records.append(
                        (t, rows, out.info["timeout_critic_obs"][rows]))
                for name, (raw_term, _, weighted) in out.breakdown.terms.items():
                    term_sums[name] += float(np.mean(weighted))
                track_sum += float(np.mean(out.info["tracking_err"]))
                fell |= out.info["fallen"]
                obs_raw = out.actor_obs
                cobs_raw = out.critic_obs

            disc_loss = float("nan")
            if disc is not None:
                amp = amp_training_step(
                    disc, disc_opt, transitions.reshape(steps * n, -1),
                    expert, amp_rng, spec.amp_alpha)
                style = amp.rewards.reshape(steps, n)
                combined = combine_rewards(style, task_reward, spec.amp_beta)
                disc_loss = amp.loss
            else:
                combined = task_reward

            values = policy.value(obs_c.reshape(steps * n, -1)).reshape(steps, n)
            v_boot = policy.value(critic_norm.normalize(cobs_raw))
            rewards = combined.copy()
            for t, rows, term_obs in timeout_records:
                # timeouts are value-preserving: bootstrap through the cut
                rewards[t, rows] += cfg.gamma * policy.value(
                    critic_norm.normalize(term_obs))
            adv, returns = compute_gae(
                rewards, np.concatenate([values, v_boot[None, :]], axis=0),
                dones, cfg.gamma, cfg.gae_lam)
            if cfg.normalize_advantages:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)

            mirror_obs = None
            if spec.sym_loss:
                mirror_obs = actor_norm.normalize(
                    mirror_actor_observation(raw_a)).reshape(steps * n, -1)
            batch = RolloutBatch(
                actor_obs=obs_a.reshape(steps * n, -1),
                critic_obs=obs_c.reshape(steps * n, -1),
                actions=actions.reshape(steps * n, -1),
                means=means.reshape(steps * n, -1),
                log_probs=log_probs.reshape(-1),
                advantages=adv.reshape(-1),
                returns=returns.reshape(-1),
                log_std=policy.log_std.copy(),
                mirror_obs=mirror_obs)

            kl = float("nan")
            used_lr = lr
            try:
                stats, lr = ppo_update(
                    policy, optimizer, batch, cfg, lr, shuffle_rng,
                    sym_weight=cfg.sym_loss_weight if spec.sym_loss else 0.0)
                kl = stats.kl
                used_lr = stats.lr
            except RuntimeError as exc:
                print(f"iteration {it}: update aborted: {exc}")

            actor_norm.update(raw_a.reshape(steps * n, -1))
            critic_norm.update(raw_c.reshape(steps * n, -1))

            apex_rise = float("nan")
            if spec.gait_name == "jumping":
                apex_rise = float(np.mean(env.sim.measure()["apex_height"])
                                  - env.standing_height)
            record = TrainRecord(
                iteration=it,
                reward=float(np.mean(combined)),
                tracking_err=track_sum / steps,
                failure_rate=float(np.mean(fell)),
                kl=kl,
                lr=used_lr,
                disc_loss=disc_loss,
                apex_rise=apex_rise,
                squat_depth=env.squat_depth,
                term_means={k: v / steps for k, v in term_sums.items()})
            records.append(record)
            if writer is not None:
                writer.write(record)
            if log_fn is not None:
                log_fn(record)
            if out_dir is not None and cfg.checkpoint_interval > 0 \
                    and it % cfg.checkpoint_interval == 0 and it > 0:
                export_policy(policy.actor, policy.log_std, actor_norm,
                              os.path.join(out_dir, f"checkpoint_{it:06d}.bundle"),
                              gait_name=spec.gait_name)
    finally:
        if writer is not None:
            writer.close()

    if bundle_path is not None:
        export_policy(policy.actor, policy.log_std, actor_norm, bundle_path,
                      gait_name=spec.gait_name)
    return TrainResult(policy=policy, actor_norm=actor_norm,
                       critic_norm=critic_norm, records=records, spec=spec,
                       seed=seed, out_dir=out_dir, bundle_path=bundle_path)


# ---------------------------------------------------------------------------
# evaluation

_LIN_VEL_IDX = np.array([k * ACTOR_FRAME_DIM + j for k in range(ACTOR_STACK)
                         for j in range(*ACTOR_OFFSETS["base_lin_vel"])])
_GRAV_IDX_NEWEST = np.array(
    [(ACTOR_STACK - 1) * ACTOR_FRAME_DIM + j
     for j in range(*ACTOR_OFFSETS["projected_gravity"])])


def evaluate_policy(spec, bundle, episodes=10, seed=0, zero_lin_vel=False,
                    max_envs=16):
    """Roll the bundled policy without learning and summarize reliability.

    Runs complete episodes (to a fall or the horizon) and reports success
    rate (survived the horizon), fall rate, mean hip/knee tracking error,
    and posture stability (RMS horizontal projected-gravity norm).  With
    ``zero_lin_vel`` the linear-velocity channels are blanked before
    inference, matching estimator-free deployment.
    """
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    if bundle.gait_name and bundle.gait_name != spec.gait_name:
        raise ValueError(
            f"bundle was trained for {bundle.gait_name!r}, not {spec.gait_name!r}")
    n = int(min(episodes, max_envs))
    env = VectorEnv(spec, num_envs=n, seed=seed)
    obs, _ = env.reset_all()

    track_sum = np.zeros(n)
    grav_sq_sum = np.zeros(n)
    steps_alive = np.zeros(n, dtype=int)
    apex_max = np.full(n, -np.inf)
    done_episodes = []

    while len(done_episodes) < episodes:
        obs_in = obs
        if zero_lin_vel:
            obs_in = obs.copy()
            obs_in[:, _LIN_VEL_IDX] = 0.0
        grav_sq_sum += np.sum(obs_in[:, _GRAV_IDX_NEWEST[:2]] ** 2, axis=1)
        out = env.step(bundle.action(obs_in))
        steps_alive += 1
        track_sum += out.info["tracking_err"]
        apex_max = np.maximum(apex_max,
                              env.sim.measure()["apex_height"])
        finished = np.flatnonzero(out.dones | out.timeouts)
        for row in finished:
            done_episodes.append({
                "success": bool(out.timeouts[row]),
                "steps": int(steps_alive[row]),
                "tracking_err": float(track_sum[row] / steps_alive[row]),
                "posture_rms": float(np.sqrt(grav_sq_sum[row] / steps_alive[row])),
                "apex_rise": float(apex_max[row] - env.standing_height),
            })
            track_sum[row] = 0.0
            grav_sq_sum[row] = 0.0
            steps_alive[row] = 0
            apex_max[row] = -np.inf
        obs = out.actor_obs

    done_episodes = done_episodes[:episodes]
    success = np.array([e["success"] for e in done_episodes], dtype=np.float64)
    return {
        "episodes": len(done_episodes),
        "success_rate": float(success.mean()),
        "fall_rate": float(1.0 - success.mean()),
        "tracking_error": float(np.mean([e["tracking_err"] for e in done_episodes])),
        "posture_stability": float(np.mean([e["posture_rms"] for e in done_episodes])),
        "mean_episode_steps": float(np.mean([e["steps"] for e in done_episodes])),
        "max_apex_rise": float(np.max([e["apex_rise"] for e in done_episodes])),
        "per_episode": done_episodes,
    }
