"""End-to-end acceptance checks for the training framework.

Each test is one named guarantee: closed-form values, dimensions, gradient
and advantage oracles, reference and simulator properties, randomization
bounds, learning progress on the desk configuration, run determinism, and
policy-bundle round trips.  The two training-trend comparisons are marked
slow (hours) and selected explicitly with ``-m slow``.
"""

import numpy as np
import pytest

from multigait.amp import (
    GRAD_PENALTY_COEF,
    Discriminator,
    amp_reward,
    combine_rewards,
    discriminator_loss,
    generate_expert_transitions,
)
from multigait.config import GAIT_NAMES, PPOConfig, apply_desk, gait_preset
from multigait.control import ActuatorConfig, pd_torque
from multigait.nets import flatten_params, unflatten_params
from multigait.observation import (
    ACTOR_FRAME_DIM,
    ACTOR_OBS_DIM,
    ACTOR_STACK,
    CRITIC_FRAME_DIM,
    CRITIC_OBS_DIM,
    CRITIC_STACK,
    RunningNormalizer,
    TERRAIN_DIM,
    mirror_actor_observation,
)
from multigait.ppo import (
    ActorCritic,
    compute_gae,
    export_policy,
    load_policy,
    moving_average,
    ppo_losses_and_grads,
    read_metrics,
    train,
)
from multigait.randomize import (
    MOTOR_STRENGTH_BY_GAIT,
    RandomizationRanges,
    lag_curriculum,
    sample_env_params,
)
from multigait.reference import (
    JUMP_FLIGHT_END,
    JUMP_LANDING_END,
    JUMP_SQUAT_END,
    JUMP_TAKEOFF_END,
    gait_reference,
    gait_stance_mask,
    squat_depth_curriculum,
)
from multigait.rewards import tracking_reward_periodic
from multigait.robot import NUM_JOINTS, mirror_joint_vector
from multigait.sim import EnvParams, PlanarSim


# ---------------------------------------------------------------------------
# 1. closed-form values

def test_criterion_01_formula_suite_exact():
    """Peak tracking value, style-reward endpoints, blend degeneracy, PD rest
    torque, and the adversarial optimum all hit their closed forms exactly."""
    # dual-kernel tracking at zero error with both knees active
    assert float(tracking_reward_periodic(np.zeros(NUM_JOINTS),
                                          np.array([True, True]))) == 1.2

    # style reward envelope
    for alpha in (0.3, 0.5, 1.0):
        assert amp_reward(1.0, alpha) == alpha
        assert amp_reward(3.0, alpha) == 0.0

    # beta = 1 blend returns the task reward bitwise
    rng = np.random.default_rng(0)
    style = rng.normal(size=257)
    task = rng.normal(size=257)
    assert np.array_equal(combine_rewards(style, task, 1.0), task)

    # PD at the target with zero velocity produces zero torque
    cfg = ActuatorConfig.from_spec(gait_preset("walking"))
    q = cfg.q_default
    assert np.all(pd_torque(q, q, np.zeros(NUM_JOINTS), cfg) == 0.0)

    # adversarial optimum: +1 on expert, -1 on policy, zero input gradient
    margin = 5.0
    disc = Discriminator(hidden=(2,), dim=2, rng=np.random.default_rng(1))
    disc.net.set_params([np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2),
                         np.array([[0.0, -2.0 / margin]]), np.array([1.0])])
    expert = np.column_stack([np.full(16, margin), np.linspace(-1, 1, 16)])
    policy = np.column_stack([np.full(16, -margin), np.linspace(-1, 1, 16)])
    assert np.array_equal(disc.forward(expert), np.ones(16))
    assert np.array_equal(disc.forward(policy), -np.ones(16))
    loss, _ = discriminator_loss(disc, policy, expert, lam=GRAD_PENALTY_COEF)
    assert loss == 0.0


# ---------------------------------------------------------------------------
# 2. dimensions

def test_criterion_02_dimensions():
    """Frame and stacked observation sizes and the action dimension."""
    assert ACTOR_FRAME_DIM == 50
    assert ACTOR_OBS_DIM == ACTOR_FRAME_DIM * ACTOR_STACK == 1050
    assert CRITIC_OBS_DIM == CRITIC_FRAME_DIM * CRITIC_STACK + TERRAIN_DIM \
        == 73 * 5 + 187 == 552
    assert NUM_JOINTS == 12
    policy = ActorCritic.from_spec(apply_desk(gait_preset("walking")),
                                   np.random.default_rng(0))
    obs = np.zeros((3, ACTOR_OBS_DIM))
    assert policy.action_mean(obs).shape == (3, NUM_JOINTS)
    assert policy.value(np.zeros((3, CRITIC_OBS_DIM))).shape == (3,)


# ---------------------------------------------------------------------------
# 3. gradient oracle

def _fd_check(loss_fn, theta0, analytic, probe_rng, draws, tol=1e-4):
    checked = 0
    for idx in probe_rng.choice(theta0.size, size=draws, replace=False):
        h = 1e-6 * max(1.0, abs(theta0[idx]))
        tp, tm = theta0.copy(), theta0.copy()
        tp[idx] += h
        tm[idx] -= h
        fd = (loss_fn(tp) - loss_fn(tm)) / (2.0 * h)
        denom = max(abs(fd), abs(analytic[idx]), 1e-6)
        assert abs(fd - analytic[idx]) / denom < tol, \
            f"param {idx}: fd {fd:.8e} vs analytic {analytic[idx]:.8e}"
        checked += 1
    assert checked >= draws


def test_criterion_03_gradients_match_finite_differences():
    """Actor, critic, and discriminator gradients (gradient penalty included)
    agree with central finite differences to 1e-4 relative error over at
    least 100 random coordinates each."""
    rng = np.random.default_rng(10)
    obs_dim, act_dim, cobs_dim = 9, 5, 7
    policy = ActorCritic(obs_dim, cobs_dim, act_dim, actor_hidden=(8, 6),
                         critic_hidden=(8, 6), init_log_std=np.log(0.5),
                         rng=rng)
    n = 48
    obs = rng.normal(size=(n, obs_dim))
    cobs = rng.normal(size=(n, cobs_dim))
    actions = policy.action_mean(obs) + 0.5 * rng.normal(size=(n, act_dim))
    from multigait.ppo import gaussian_log_prob
    old_log_probs = gaussian_log_prob(policy.action_mean(obs), policy.log_std,
                                      actions) + 0.1 * rng.normal(size=n)
    old_means = policy.action_mean(obs)
    advantages = rng.normal(size=n)
    returns = rng.normal(size=n)
    cfg = PPOConfig(clip_ratio=0.2, value_coef=0.5, entropy_coef=0.005,
                    normalize_advantages=False)

    # keep every probability ratio away from the clip kink so the loss is
    # differentiable at the probe point
    ratio = np.exp(gaussian_log_prob(policy.action_mean(obs), policy.log_std,
                                     actions) - old_log_probs)
    assert np.min(np.abs(ratio - 1.2)) > 1e-4
    assert np.min(np.abs(ratio - 0.8)) > 1e-4

    mirror = rng.normal(size=(n, obs_dim))
    _, grads, _ = ppo_losses_and_grads(
        policy, obs, cobs, actions, old_log_probs, old_means, advantages,
        returns, cfg, sym_weight=0.0, mirror_obs=None,
        old_log_std=policy.log_std.copy())
    n_actor = len(policy.actor.params)
    n_critic = len(policy.critic.params)
    actor_templates = [p.copy() for p in policy.actor.params]
    critic_templates = [p.copy() for p in policy.critic.params]
    theta0 = flatten_params(grads and policy.params)
    flat_g = flatten_params(grads)

    def loss_at(theta):
        parts = unflatten_params(theta, actor_templates + critic_templates
                                 + [policy.log_std.copy()])
        policy.actor.set_params(parts[:n_actor])
        policy.critic.set_params(parts[n_actor:n_actor + n_critic])
        policy.log_std[:] = parts[-1]
        loss, _, _ = ppo_losses_and_grads(
            policy, obs, cobs, actions, old_log_probs, old_means, advantages,
            returns, cfg, sym_weight=0.0, mirror_obs=None,
            old_log_std=theta0_log_std)
        return loss

    theta0_log_std = policy.log_std.copy()
    _fd_check(loss_at, theta0, flat_g, np.random.default_rng(11), draws=120)
    loss_at(theta0)  # restore

    # discriminator with the expert-side gradient penalty
    disc = Discriminator(hidden=(6, 4), dim=5, rng=np.random.default_rng(12))
    drng = np.random.default_rng(13)
    pol_batch = drng.normal(size=(10, 5))
    exp_batch = drng.normal(size=(10, 5))
    for batch in (pol_batch, exp_batch):
        h = batch
        for w, b in zip(disc.net.weights[:-1], disc.net.biases[:-1]):
            pre = h @ w.T + b
            assert np.min(np.abs(pre)) > 1e-4
            h = np.maximum(pre, 0.0)
    _, dgrads = discriminator_loss(disc, pol_batch, exp_batch)
    d_theta0 = flatten_params(disc.net.params)
    d_templates = [p.copy() for p in disc.net.params]
    d_flat = flatten_params(dgrads)

    def disc_loss_at(theta):
        disc.net.set_params(unflatten_params(theta, d_templates))
        return discriminator_loss(disc, pol_batch, exp_batch)[0]

    _fd_check(disc_loss_at, d_theta0, d_flat, np.random.default_rng(14),
              draws=100)


# ---------------------------------------------------------------------------
# 4. advantage estimation oracle

def _brute_force_gae(rewards, values, dones, gamma, lam):
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    for t in range(T):
        acc = 0.0
        discount = 1.0
        for k in range(t, T):
            nonterminal = 1.0 - dones[k]
            delta = rewards[k] + gamma * values[k + 1] * nonterminal - values[k]
            acc += discount * delta
            discount *= gamma * lam * nonterminal
            if dones[k]:
                break
        adv[t] = acc
    return adv, adv + values[:-1]


def test_criterion_04_gae_matches_brute_force():
    """Vectorized advantage estimation equals the per-step recursion on 1000
    random sequences to 1e-10 absolute error."""
    rng = np.random.default_rng(20)
    for _ in range(1000):
        T = int(rng.integers(1, 60))
        rewards = rng.normal(size=(T, 1))
        values = rng.normal(size=(T + 1, 1))
        dones = (rng.random((T, 1)) < 0.15).astype(np.float64)
        gamma = float(rng.uniform(0.9, 0.999))
        lam = float(rng.uniform(0.8, 1.0))
        adv, ret = compute_gae(rewards, values, dones, gamma=gamma, lam=lam)
        b_adv, b_ret = _brute_force_gae(rewards[:, 0], values[:, 0],
                                        dones[:, 0], gamma, lam)
        assert np.max(np.abs(adv[:, 0] - b_adv)) < 1e-10
        assert np.max(np.abs(ret[:, 0] - b_ret)) < 1e-10


# ---------------------------------------------------------------------------
# 5. reference trajectories

def test_criterion_05_reference_properties():
    """Periodicity, left/right half-cycle symmetry, continuity at the five
    jump segment boundaries, curriculum monotonicity, and stance ratios."""
    phase = np.linspace(0.0, 1.0, 1000, endpoint=False)
    for name in GAIT_NAMES:
        spec = gait_preset(name)
        np.testing.assert_allclose(
            gait_reference(spec, phase),
            gait_reference(spec, np.mod(phase + 1.0, 1.0)), atol=1e-9)

    for name in GAIT_NAMES:
        if name == "jumping":
            continue
        spec = gait_preset(name)
        shifted = gait_reference(spec, np.mod(phase + 0.5, 1.0))
        mirrored = np.stack([mirror_joint_vector(r)
                             for r in gait_reference(spec, phase)])
        assert np.max(np.abs(shifted - mirrored)) < 1e-9

    eps = 1e-6
    spec = gait_preset("jumping")
    for b in (0.0, JUMP_SQUAT_END, JUMP_TAKEOFF_END, JUMP_FLIGHT_END,
              JUMP_LANDING_END):
        gap = np.abs(gait_reference(spec, np.mod(b - eps, 1.0))
                     - gait_reference(spec, np.mod(b + eps, 1.0)))
        assert np.max(gap) < 1e-3, f"discontinuity {np.max(gap)} at phase {b}"

    depths = [squat_depth_curriculum(i) for i in range(0, 12_000, 37)]
    assert all(b >= a for a, b in zip(depths, depths[1:]))
    lags = [lag_curriculum(i, 500) for i in range(0, 1000, 7)]
    assert all(b >= a for a, b in zip(lags, lags[1:]))

    dense = np.linspace(0.0, 1.0, 100_000, endpoint=False)
    for name in GAIT_NAMES:
        if name == "jumping":
            continue
        spec = gait_preset(name)
        mask = gait_stance_mask(spec, dense)
        for col in (0, 1):
            assert abs(mask[:, col].mean() - spec.stance_ratio) \
                < 0.01 * spec.stance_ratio


# ---------------------------------------------------------------------------
# 6. simulator sanity

def test_criterion_06_simulator_sanity():
    """Ballistic flight matches the closed form within 1e-3 over 0.5 s, a
    passive drop never gains mechanical energy at zero restitution, and the
    contact solver respects the friction cone over 1e5 random steps."""
    sim = PlanarSim(4)
    sim.reset()
    z0 = 2.0
    sim.qg[:, 1] = z0
    steps = 100  # 0.5 s at dt = 0.005
    for _ in range(steps):
        sim.step(np.zeros((4, 12)))
    t = steps * sim.dt + 0.5 * sim.dt  # semi-implicit half-step convention
    assert np.all(np.abs(sim.qg[:, 1] - (z0 - 0.5 * sim.gravity * t ** 2))
                  < 1e-3)

    sim = PlanarSim(4)  # default params: restitution 0
    sim.reset()
    assert np.all(sim.restitution == 0.0)
    sim.qg[:, 1] += 0.06
    sim.qg[:, 2] = np.array([0.0, 0.15, -0.2, 0.3])
    e_prev = sim.mechanical_energy()
    for _ in range(600):
        sim.step(np.zeros((4, 12)))
        e = sim.mechanical_energy()
        rel = (e - e_prev) / np.maximum(np.abs(e_prev), 1.0)
        assert rel.max() <= 1e-6
        e_prev = e

    n = 100
    rng = np.random.default_rng(30)
    params = [EnvParams(friction=rng.uniform(0.2, 1.5),
                        restitution=rng.uniform(0.0, 0.4)) for _ in range(n)]
    sim = PlanarSim(n, params=params)
    sim.reset(rng=rng)
    mu = sim.friction[:, None]
    for _ in range(1000):  # 100 envs x 1000 steps = 1e5 contact steps
        sim.step(rng.normal(0.0, 25.0, (n, 12)))
        f_t = sim.contact_force[:, :, 0]
        f_n = sim.contact_force[:, :, 1]
        assert np.all(np.isfinite(sim.contact_force))
        assert np.all(f_n >= 0.0)
        assert np.all(np.abs(f_t) <= mu * f_n + 1e-12)


# ---------------------------------------------------------------------------
# 7. randomization bounds

def test_criterion_07_randomization_membership():
    """1e5 sampled parameter sets all fall inside their declared intervals,
    the lag curriculum spans exactly 2 to 5, and each gait's motor-strength
    interval matches its preset."""
    ranges = RandomizationRanges()
    rng = np.random.default_rng(40)
    interval_fields = (
        ("friction", "friction"), ("restitution", "restitution"),
        ("base_mass_delta", "base_mass_delta"),
        ("com_offset", "com_offset"), ("motor_strength", "motor_strength"),
        ("kp_scale", "kp_scale"), ("kd_scale", "kd_scale"),
        ("joint_friction", "joint_friction_scale"),
        ("joint_damping", "joint_damping_scale"),
        ("armature", "armature_scale"), ("link_inertia_scale", "link_inertia_scale"),
    )
    lag_lo, lag_hi = ranges.action_lag
    for _ in range(100_000):
        p = sample_env_params(ranges, rng)
        for range_name, attr in interval_fields:
            lo, hi = getattr(ranges, range_name)
            v = np.atleast_1d(getattr(p, attr))
            assert np.all((v >= lo) & (v <= hi)), range_name
        assert lag_lo <= p.action_lag <= lag_hi

    assert lag_curriculum(0, 500) == 2
    assert lag_curriculum(500, 500) == 5
    assert lag_curriculum(10_000, 500) == 5

    for name, interval in MOTOR_STRENGTH_BY_GAIT.items():
        assert gait_preset(name).randomization.motor_strength == interval


# ---------------------------------------------------------------------------
# 10. run determinism (fast; ordered before the training smoke)

def test_criterion_10_training_is_deterministic(tmp_path):
    """Two desk-scale runs with the same seed produce byte-identical metrics
    files, exercising the real command-line entry point."""
    from multigait.cli import main
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        code = main(["train", "--gait", "walking", "--desk", "--seed", "7",
                     "--iterations", "6", "--num-envs", "8", "--log-every", "0",
                     "--out", str(out)])
        assert code == 0
        outs.append((out / "seed_7" / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# 11. bundle round trip

def test_criterion_11_bundle_round_trip_bitwise(tmp_path):
    """Exported policies reload to bitwise-identical behavior on 1000 random
    raw observations, normalizer included."""
    rng = np.random.default_rng(50)
    spec = apply_desk(gait_preset("walking"))
    policy = ActorCritic.from_spec(spec, rng)
    norm = RunningNormalizer.create(ACTOR_OBS_DIM)
    norm.update(rng.normal(size=(512, ACTOR_OBS_DIM)) * 3.0 + 0.5)
    path = tmp_path / "walking.bundle"
    export_policy(policy.actor, policy.log_std, norm, path, gait_name="walking")
    bundle = load_policy(path)
    assert bundle.gait_name == "walking"
    raw = rng.normal(size=(1000, ACTOR_OBS_DIM)) * 4.0
    assert np.array_equal(bundle.action(raw),
                          policy.actor(norm.normalize(raw)))


# ---------------------------------------------------------------------------
# 8. learning smoke (minutes; kept last among the default tests)

def test_criterion_08_desk_walking_learns(tmp_path):
    """Walking on the desk configuration (64 envs, fixed seed, 1000 of the
    allowed 2000 iterations): the 100-iteration moving average of the mean
    total reward is higher at the end than at iteration 100, and the moving
    average failure rate is lower."""
    spec = apply_desk(gait_preset("walking"))
    result = train(spec, seed=7, out_dir=str(tmp_path / "smoke"),
                   iterations=1000)
    rewards = [r.reward for r in result.records]
    fails = [r.failure_rate for r in result.records]
    ma_r = moving_average(rewards, 100)
    ma_f = moving_average(fails, 100)
    assert ma_r[-1] > ma_r[99], \
        f"reward moving average fell: {ma_r[99]:.4f} -> {ma_r[-1]:.4f}"
    assert ma_f[-1] < ma_f[99], \
        f"failure moving average rose: {ma_f[99]:.4f} -> {ma_f[-1]:.4f}"


# ---------------------------------------------------------------------------
# 9. selective motion-prior trends (hours; run with -m slow)

def _median(xs):
    return float(np.median(np.asarray(xs, dtype=np.float64)))


def _arm_stats(out_dir, arm, seeds, horizon):
    from multigait.ppo import convergence_iteration
    stats = {"convergence": [], "tracking": [], "apex": [], "curves": {}}
    for seed in seeds:
        records = read_metrics(out_dir / arm / f"seed_{seed}" / "metrics.csv")
        rewards = [r.reward for r in records]
        conv = convergence_iteration(rewards)
        stats["convergence"].append(horizon if conv is None else conv)
        window = min(100, len(records))
        stats["tracking"].append(
            float(moving_average([r.tracking_err for r in records], window)[-1]))
        stats["apex"].append(float(records[-1].apex_rise))
        stats["curves"][seed] = rewards
    return stats


def _run_comparison(gait, seeds, iterations, tmp_path):
    from multigait.cli import main
    out = tmp_path / f"compare_{gait}"
    argv = ["compare-amp", "--gait", gait, "--desk", "--iterations",
            str(iterations), "--log-every", "200", "--out", str(out)]
    for s in seeds:
        argv += ["--seed", str(s)]
    assert main(argv) == 0
    assert main(["plot", str(out)]) == 0
    print(f"\ncomparison artifacts: {out}")
    on = _arm_stats(out, "amp_on", seeds, iterations)
    off = _arm_stats(out, "amp_off", seeds, iterations)
    for label, stats in (("amp_on", on), ("amp_off", off)):
        print(f"{label}: convergence {stats['convergence']} "
              f"tracking {[round(t, 4) for t in stats['tracking']]} "
              f"apex {[round(a, 4) for a in stats['apex']]}")
    return on, off


@pytest.mark.slow
def test_criterion_09a_walking_motion_prior_trend(tmp_path):
    """Over three seeds, walking with the motion prior converges in no more
    iterations (median) than without it, at no higher final tracking error."""
    seeds = (0, 1, 2)
    iterations = 1000
    on, off = _run_comparison("walking", seeds, iterations, tmp_path)
    assert _median(on["convergence"]) <= _median(off["convergence"]), \
        (on["convergence"], off["convergence"])
    assert _median(on["tracking"]) <= _median(off["tracking"]) + 1e-9, \
        (on["tracking"], off["tracking"])


@pytest.mark.slow
def test_criterion_09b_jumping_without_prior_jumps_higher(tmp_path):
    """Over three seeds, jumping trained on pure task reward reaches a median
    final apex rise at least as high as with the motion prior forced on."""
    seeds = (0, 1, 2)
    iterations = 2000
    on, off = _run_comparison("jumping", seeds, iterations, tmp_path)
    assert _median(off["apex"]) >= _median(on["apex"]), \
        (off["apex"], on["apex"])
