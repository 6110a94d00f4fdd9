"""Vectorized training environment.

Glue between the planar simulator and the learning stack: per-episode
parameter draws, gait phase and commands, the smoothing/delay/PD action
path, observation stacking, the per-gait reward table, fall termination,
timed pushes, and auto-reset.  One instance owns ``num_envs`` independent
environments stepped in lockstep at the 50 Hz policy rate.

Interfaces exposed to the trainer are raw (unnormalized) observations; the
running normalizer is training state and lives with the optimizer.
"""

from dataclasses import dataclass

import numpy as np

from . import rewards as rw
from .amp import amp_features, make_transitions
from .config import GaitSpec
from .control import ActuatorConfig, DelayBuffer, control_step, ema_smooth
from .observation import (
    ACTOR_FRAME_DIM,
    ACTOR_STACK,
    CRITIC_FRAME_DIM,
    CRITIC_STACK,
    ObservationStack,
    build_actor_frame,
    build_critic_frame,
    build_critic_observation,
)
from .randomize import sample_env_params, spawn_env_rngs
from .reference import (
    JUMP_FLIGHT_END,
    JUMP_LANDING_END,
    JUMP_SQUAT_END,
    JUMP_TAKEOFF_END,
    advance_phase,
    gait_reference,
    gait_stance_mask,
)
from .robot import DEFAULT_JOINT_POS, HIP_PITCH_INDICES, KNEE_INDICES, NUM_JOINTS
from .sim import PlanarSim

TRACK_CHANNELS = sorted(list(HIP_PITCH_INDICES) + list(KNEE_INDICES))


@dataclass
class EnvStep:
    """One vectorized step: observations are post-reset, rewards pre-reset."""

    actor_obs: np.ndarray
    critic_obs: np.ndarray
    reward: np.ndarray
    breakdown: rw.RewardBreakdown
    dones: np.ndarray
    timeouts: np.ndarray
    amp_transitions: np.ndarray
    info: dict


class VectorEnv:
    """Batch of independent gait environments sharing one simulator."""

    def __init__(self, spec: GaitSpec, num_envs=None, seed=0):
        self.spec = spec
        self.n = int(spec.num_envs if num_envs is None else num_envs)
        self.rngs = spawn_env_rngs(seed, self.n)
        self.min_lag = 2
        self.squat_depth = spec.squat_depth_min
        self.act_cfg = ActuatorConfig.from_spec(spec)
        self.episode_steps = int(round(spec.episode_length_s / spec.control_dt))

        params = [sample_env_params(spec.randomization, self.rngs[i], self.min_lag)
                  for i in range(self.n)]
        self.sim = PlanarSim(self.n, params=params, dt=spec.sim_dt)
        self.standing_height = self.sim.model.standing_base_height()
        self.push_every = int(round(params[0].push_interval_s / spec.control_dt))

        self.phase = np.zeros(self.n)
        self.commands = np.zeros((self.n, 3))
        self.step_count = np.zeros(self.n, dtype=int)
        self.prev_action = np.zeros((self.n, NUM_JOINTS))
        self.prev_action2 = np.zeros((self.n, NUM_JOINTS))
        self._prev_action3 = np.zeros((self.n, NUM_JOINTS))
        self.ema_prev = np.zeros((self.n, NUM_JOINTS))
        lag_high = spec.randomization.action_lag[1]
        self.delay = DelayBuffer([p.action_lag for p in params], NUM_JOINTS,
                                 num_envs=self.n, max_lag=lag_high)
        self.actor_stack = ObservationStack(ACTOR_STACK, ACTOR_FRAME_DIM, self.n)
        self.critic_stack = ObservationStack(CRITIC_STACK, CRITIC_FRAME_DIM, self.n)
        self.amp_prev = np.zeros((self.n, 0))  # filled by reset_all
        self.reset_all()

    # -- curricula -----------------------------------------------------

    def set_min_lag(self, min_lag):
        """Curriculum hook; applies to parameter draws at future resets."""
        self.min_lag = int(min_lag)

    def set_squat_depth(self, depth):
        """Curriculum hook for the jump reference; immediate effect."""
        self.squat_depth = float(depth)

    # -- resets --------------------------------------------------------

    def _reset_rows(self, rows):
        rows = np.atleast_1d(rows)
        for row in rows:
            rng = self.rngs[row]
            p = sample_env_params(self.spec.randomization, rng, self.min_lag)
            self.sim.set_params([row], [p])
            self.sim.reset([row], rng)
            if self.spec.gait_name == "jumping":
                self.phase[row] = 0.0
            else:
                self.phase[row] = rng.random()
            lo, hi = self.spec.command_range
            self.commands[row] = (lo + (hi - lo) * rng.random(), 0.0, 0.0)
            self.delay.reset([row], lag=p.action_lag,
                             reset_action=np.zeros(NUM_JOINTS))
        self.step_count[rows] = 0
        self.prev_action[rows] = 0.0
        self.prev_action2[rows] = 0.0
        self._prev_action3[rows] = 0.0
        self.ema_prev[rows] = 0.0

    def reset_all(self):
        """Fresh episodes everywhere; returns the initial observations."""
        self._reset_rows(np.arange(self.n))
        actor, critic = self._frames()
        self.actor_stack.reset(actor)
        self.critic_stack.reset(critic)
        self.amp_prev = self._amp_state()
        return (self.actor_stack.flatten(),
                build_critic_observation(self.critic_stack))

    # -- frame assembly ------------------------------------------------

    def _reference(self):
        return gait_reference(self.spec, self.phase, self.squat_depth)

    def _amp_state(self):
        q_rel = self.sim.joint_positions() - DEFAULT_JOINT_POS
        out = amp_features(q_rel, self.sim.joint_velocities(),
                           self.sim.projected_gravity())
        out[self.sim.diverged] = 0.0
        return out

    def _frames(self, measure=None):
        sim = self.sim
        measure = sim.measure() if measure is None else measure
        q_rel = sim.joint_positions() - DEFAULT_JOINT_POS
        dq = sim.joint_velocities()
        ref = self._reference()
        track_err = q_rel - ref
        stance = gait_stance_mask(self.spec, self.phase).astype(np.float64)
        lin = sim.base_lin_vel()
        ang = sim.base_ang_vel()
        grav = sim.projected_gravity()
        foot_contact = measure["foot_contact"].astype(np.float64)
        foot_vvel = measure["foot_vertical_vel"].copy()
        clearance = measure["foot_clearance"].copy()
        if sim.diverged.any():
            # divergence is terminal; blank the rows so stacking stays finite
            bad = sim.diverged
            for arr in (q_rel, dq, track_err, lin, ang, grav,
                        foot_contact, foot_vvel, clearance):
                arr[bad] = 0.0
        actor = build_actor_frame(lin, self.commands, self.phase, ang, grav,
                                  q_rel, dq, self.prev_action)
        critic = build_critic_frame(
            lin, ang, grav, self.commands, q_rel, dq, self.prev_action,
            self.phase, sim.friction, foot_contact, stance, track_err,
            sim.last_push, foot_vvel, clearance)
        return actor, critic

    # -- reward assembly -----------------------------------------------

    def _reward_terms(self, measure, track_err, torques):
        spec = self.spec
        sc = spec.reward_scales
        sim = self.sim
        phase = self.phase
        swing = ~gait_stance_mask(spec, phase)
        knee_mask = swing  # knees are tracked on the swing leg
        contact = measure["foot_contact"]
        vz = sim.vg[:, 1]
        airborne = ~contact.any(axis=1)
        in_flight = (phase >= JUMP_TAKEOFF_END) & (phase < JUMP_FLIGHT_END)
        in_takeoff = (phase >= JUMP_SQUAT_END) & (phase < JUMP_TAKEOFF_END)
        in_stand = (phase >= JUMP_LANDING_END) | (phase < JUMP_SQUAT_END)
        apex_rise = measure["apex_height"] - self.standing_height
        height_target = sc.base_height_target if sc.base_height_target > 0 \
            else self.standing_height
        tau_frac = np.mean([rw.torque_rated_penalty(t, self.act_cfg.tau_max)
                            for t in torques], axis=0)
        terms = {
            "track_dual": rw.tracking_reward_periodic(track_err, knee_mask),
            "track_knee": rw.tracking_reward_knee(track_err, knee_mask),
            "track_jump": rw.tracking_reward_jump(track_err, sc.track_jump_gain),
            "lin_vel": rw.velocity_tracking_reward(
                sim.vg[:, 0:1], self.commands[:, 0:1], sc.velocity),
            "ang_vel": rw.velocity_tracking_reward(
                sim.vg[:, 2:3], np.zeros((self.n, 1)), sc.velocity),
            "orientation": rw.orientation_reward(
                sim.projected_gravity()[:, :2], sc.orientation),
            "base_height": rw.base_height_reward(
                measure["base_height"], height_target, sc.height),
            "action_rate": rw.action_rate_penalty(
                self.prev_action, self.prev_action2, self._prev_action3),
            "joint_vel": rw.joint_vel_penalty(sim.joint_velocities()),
            "torque_rated": tau_frac,
            "feet_swing_height": rw.feet_swing_height_reward(
                measure["foot_clearance"], swing,
                sc.swing_clearance_target, sc.swing_height),
            "alternate_swing": rw.alternate_swing_reward(
                contact[:, 0], contact[:, 1]),
            "leg_straightness": rw.leg_straightness_reward(
                self.sim.joint_positions()[:, KNEE_INDICES], swing,
                sc.straightness),
            "calf_lift": rw.calf_lift_reward(
                measure["shank_angle"], swing, sc.calf_lift_target,
                sc.calf_lift_width),
            "foot_kick": rw.foot_kick_reward(
                measure["foot_forward_vel"], swing, sc.kick_target,
                sc.kick_width),
            "knee_collision": rw.knee_collision_penalty(
                measure["knee_contact_force"]),
            "jump_height": rw.jump_height_reward(
                apex_rise, in_flight, airborne & in_stand,
                sc.jump_apex_target, sc.jump_height_width),
            "takeoff_vel": np.where(in_takeoff, rw.takeoff_vel_value(vz), 0.0),
            "feet_sync": rw.feet_sync_reward(contact[:, 0], contact[:, 1]),
            "horiz_vel": rw.horiz_vel_penalty(sim.vg[:, 0:1]),
        }
        return terms

    # -- stepping ------------------------------------------------------

    def step(self, action):
        """Advance every environment one policy step under raw actions."""
        spec = self.spec
        sim = self.sim
        action = np.atleast_2d(np.asarray(action, dtype=np.float64))

        smoothed = ema_smooth(action, self.ema_prev, spec.ema_coeff)
        self.ema_prev = smoothed
        self.delay.push(smoothed)
        applied = self.delay.pop()

        def read_state():
            return sim.joint_positions(), sim.joint_velocities()

        def apply_torque(tau):
            sim.step(tau)

        torques = control_step(
            applied, read_state, apply_torque, self.act_cfg,
            decimation=spec.decimation,
            motor_strength=self._motor_strength[:, None],
            kp_scale=self._kp_scale[:, None], kd_scale=self._kd_scale[:, None])

        self.phase = advance_phase(self.phase, spec.control_dt, spec.cycle_time)
        self.step_count += 1

        # action history shifts before the rate penalty reads it
        self._prev_action3 = self.prev_action2
        self.prev_action2 = self.prev_action
        self.prev_action = action

        measure = sim.measure()
        q_rel = sim.joint_positions() - DEFAULT_JOINT_POS
        track_err = q_rel - self._reference()
        terms = self._reward_terms(measure, track_err, torques)
        breakdown = rw.total_reward(terms, spec)

        fallen, reason = rw.termination_flags(
            measure["base_contact_force"], np.zeros(self.n), sim.qg[:, 2])
        dones = fallen | sim.diverged
        timeouts = (self.step_count >= self.episode_steps) & ~dones

        pushed = (self.step_count % self.push_every == 0) \
            & (self.step_count > 0) & ~dones & ~timeouts
        if pushed.any():
            for row in np.flatnonzero(pushed):
                sim.apply_push([row], self.rngs[row])
            measure = sim.measure()

        amp_now = self._amp_state()
        transitions = make_transitions(self.amp_prev, amp_now)

        actor, critic = self._frames(measure)
        self.actor_stack.push(actor)
        self.critic_stack.push(critic)
        terminal_critic = build_critic_observation(self.critic_stack)

        resets = dones | timeouts
        if resets.any():
            rows = np.flatnonzero(resets)
            self._reset_rows(rows)
            actor, critic = self._frames()
            self.actor_stack.reset(actor[rows], rows)
            self.critic_stack.reset(critic[rows], rows)
            fresh = self._amp_state()
            amp_now[rows] = fresh[rows]

        self.amp_prev = amp_now
        info = {
            "tracking_err": np.abs(track_err[:, TRACK_CHANNELS]).mean(axis=1),
            "fallen": fallen,
            "termination_reason": reason,
            "timeout_critic_obs": terminal_critic,
            "commands": self.commands.copy(),
            "pushed": pushed,
        }
        return EnvStep(
            actor_obs=self.actor_stack.flatten(),
            critic_obs=build_critic_observation(self.critic_stack),
            reward=np.asarray(breakdown.total, dtype=np.float64),
            breakdown=breakdown,
            dones=dones,
            timeouts=timeouts,
            amp_transitions=transitions,
            info=info,
        )

    # -- per-env parameter views ---------------------------------------

    @property
    def _motor_strength(self):
        return np.array([p.motor_strength for p in self.sim.params])

    @property
    def _kp_scale(self):
        return np.array([p.kp_scale for p in self.sim.params])

    @property
    def _kd_scale(self):
        return np.array([p.kd_scale for p in self.sim.params])
