"""Gait preset integrity, invariant validation, and config-file round trips."""

import math
from dataclasses import replace

import pytest

from multigait.config import (
    GAIT_NAMES,
    REWARD_TERMS,
    ConfigError,
    DeskOverrides,
    GaitSpec,
    JointGains,
    PPOConfig,
    apply_desk,
    gait_preset,
    load_gait_config,
    save_gait_config,
    validate,
)
from multigait.robot import JOINT_NAMES_PER_LEG


def test_all_presets_validate_clean():
    for name in GAIT_NAMES:
        spec = gait_preset(name)
        assert validate(spec) == []
        assert spec.gait_name == name


def test_unknown_gait_raises():
    with pytest.raises(ConfigError):
        gait_preset("moonwalk")


def test_reward_term_table_is_complete():
    assert len(REWARD_TERMS) == 20
    for name in GAIT_NAMES:
        spec = gait_preset(name)
        # every gait carries the full table; unused terms sit at weight zero
        assert set(spec.reward_weights) == set(REWARD_TERMS)


def test_gains_cover_both_legs_via_per_leg_table():
    spec = gait_preset("walking")
    assert set(spec.pd_gains) == set(JOINT_NAMES_PER_LEG)
    for g in spec.pd_gains.values():
        assert g.Kp > 0 and g.Kd >= 0 and g.tau_max > 0


def test_hip_reference_scale_defaults_to_ref_scale():
    spec = gait_preset("walking")
    assert spec.hip_scale <= 0
    assert spec.hip_reference_scale == spec.ref_scale
    explicit = replace(spec, hip_scale=0.4)
    assert explicit.hip_reference_scale == 0.4


def test_control_rate_is_50hz():
    for name in GAIT_NAMES:
        spec = gait_preset(name)
        assert spec.sim_dt == 0.005
        assert spec.decimation == 4
        assert spec.control_dt == pytest.approx(0.02)


def test_amp_enabled_flag_tracks_alpha():
    assert gait_preset("walking").amp_enabled
    assert gait_preset("goose_stepping").amp_enabled
    assert gait_preset("stair_climbing").amp_enabled
    assert not gait_preset("running").amp_enabled
    assert not gait_preset("jumping").amp_enabled


def test_desk_overrides_shrink_scale():
    spec = gait_preset("walking")
    desk = apply_desk(spec)
    assert desk.num_envs == 64
    assert desk.max_iterations == 2000
    assert desk.ppo.actor_hidden == (128, 64, 32)
    assert desk.ppo.critic_hidden == (128, 64, 32)
    assert desk.ppo.disc_hidden == (128, 64, 32)
    assert desk.ppo.expert_transitions == 20_000
    # untouched fields survive
    assert desk.reward_weights == spec.reward_weights
    assert desk.ppo.learning_rate == spec.ppo.learning_rate


def test_desk_rescales_iteration_indexed_curricula():
    spec = gait_preset("jumping")
    desk = apply_desk(spec)
    scale = desk.max_iterations / spec.max_iterations
    lo, hi = spec.squat_curriculum
    assert desk.squat_curriculum == (int(round(lo * scale)), int(round(hi * scale)))
    assert desk.squat_curriculum[1] <= desk.max_iterations


def test_desk_never_raises_iteration_count():
    small = replace(gait_preset("walking"), max_iterations=500)
    assert apply_desk(small).max_iterations == 500


def test_validate_reports_each_violation():
    spec = gait_preset("walking")
    bad = replace(spec, cycle_time=-1.0, stance_ratio=1.5, amp_beta=2.0)
    problems = validate(bad)
    assert any("cycle_time" in p for p in problems)
    assert any("stance_ratio" in p for p in problems)
    assert any("amp_beta" in p for p in problems)


def test_validate_checks_gain_table():
    spec = gait_preset("walking")
    gains = dict(spec.pd_gains)
    gains["knee"] = JointGains(Kp=-5.0, Kd=1.0, tau_max=100.0)
    assert any("knee" in p for p in validate(replace(spec, pd_gains=gains)))
    gains = dict(spec.pd_gains)
    del gains["ankle_roll"]
    assert any("ankle_roll" in p for p in validate(replace(spec, pd_gains=gains)))


def test_save_load_round_trip_exact(tmp_path):
    for name in GAIT_NAMES:
        spec = apply_desk(gait_preset(name))
        path = tmp_path / f"{name}.ini"
        save_gait_config(spec, path)
        loaded = load_gait_config(path)
        assert loaded == spec


def test_partial_config_falls_back_to_preset(tmp_path):
    path = tmp_path / "partial.ini"
    path.write_text("[gait]\ngait_name = walking\ncycle_time = 0.9\n")
    spec = load_gait_config(path)
    base = gait_preset("walking")
    assert spec.cycle_time == 0.9
    assert spec.stance_ratio == base.stance_ratio
    assert spec.reward_weights == base.reward_weights


def test_config_section_overrides(tmp_path):
    path = tmp_path / "tuned.ini"
    path.write_text(
        "[gait]\ngait_name = walking\n\n"
        "[pd_gains.knee]\nKp = 999.0\n\n"
        "[reward_weights]\nlin_vel = 7.5\n\n"
        "[ppo]\nlearning_rate = 1e-3\nentropy_coef = 0.0\n\n"
        "[randomization]\nfriction = 0.5, 0.9\n\n"
        "[desk]\nnum_envs = 8\n")
    spec = load_gait_config(path)
    assert spec.pd_gains["knee"].Kp == 999.0
    assert spec.pd_gains["knee"].Kd == gait_preset("walking").pd_gains["knee"].Kd
    assert spec.reward_weights["lin_vel"] == 7.5
    assert spec.ppo.learning_rate == 1e-3
    assert spec.ppo.entropy_coef == 0.0
    assert spec.randomization.friction == (0.5, 0.9)
    assert spec.desk.num_envs == 8
    assert apply_desk(spec).num_envs == 8


def test_unknown_keys_rejected(tmp_path):
    for body in (
        "[gait]\ngait_name = walking\nwarp_factor = 9\n",
        "[gait]\ngait_name = walking\n\n[reward_weights]\nshiny = 1.0\n",
        "[gait]\ngait_name = walking\n\n[ppo]\nmomentum = 0.9\n",
    ):
        path = tmp_path / "bad.ini"
        path.write_text(body)
        with pytest.raises(ConfigError):
            load_gait_config(path)


def test_unparsable_value_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[gait]\ngait_name = walking\ncycle_time = fast\n")
    with pytest.raises(ConfigError):
        load_gait_config(path)


def test_missing_file_and_missing_gait_section(tmp_path):
    with pytest.raises(ConfigError):
        load_gait_config(tmp_path / "nope.ini")
    path = tmp_path / "empty.ini"
    path.write_text("[ppo]\nlearning_rate = 1e-3\n")
    with pytest.raises(ConfigError):
        load_gait_config(path)


def test_invalid_spec_rejected_unless_validation_off(tmp_path):
    path = tmp_path / "invalid.ini"
    path.write_text("[gait]\ngait_name = walking\nstance_ratio = 1.5\n")
    with pytest.raises(ConfigError):
        load_gait_config(path)
    spec = load_gait_config(path, validate_spec=False)
    assert spec.stance_ratio == 1.5


def test_motor_strength_interval_is_gait_specific():
    expected = {
        "walking": (0.7, 1.0),
        "stair_climbing": (0.7, 1.0),
        "running": (0.8, 1.2),
        "goose_stepping": (0.8, 1.2),
        "jumping": (0.9, 1.1),
    }
    for name, interval in expected.items():
        assert gait_preset(name).randomization.motor_strength == interval


def test_ppo_defaults_match_training_recipe():
    cfg = PPOConfig()
    assert cfg.learning_rate == 5e-4
    assert cfg.gamma == 0.99
    assert cfg.gae_lam == 0.95
    assert cfg.kl_target == 0.01
    assert cfg.clip_ratio == 0.2
    assert cfg.epochs == 5
    assert cfg.minibatches == 4
    assert cfg.init_log_std == math.log(0.5)
    assert cfg.disc_hidden == (1024, 512, 256)


def test_jumping_preset_shape():
    spec = gait_preset("jumping")
    assert spec.cycle_time == 4.0
    assert spec.command_range == (0.0, 0.0)
    assert not spec.sym_loss
    assert spec.ppo.entropy_coef == 0.01
    assert spec.squat_depth_min == 0.05
    assert spec.squat_depth_max == 0.6
