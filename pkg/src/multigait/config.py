"""Per-gait configuration: presets for the five gaits, the config-file
loader/serializer, and invariant validation.

All gait diversity in the framework flows through ``GaitSpec``: reference
timing, action scaling, PD gains, reward weights, motion-prior mixing, and
training scale.  Config files are INI-style key/value text (see
``docs/config.md``); unspecified keys fall back to the built-in preset.
"""

import configparser
import math
from dataclasses import dataclass, field, fields, replace

from .randomize import RandomizationRanges
from .robot import JOINT_NAMES_PER_LEG

GAIT_NAMES = ("walking", "goose_stepping", "running", "stair_climbing", "jumping")

REWARD_TERMS = (
    "track_dual", "track_knee", "track_jump",
    "lin_vel", "ang_vel", "orientation", "base_height",
    "action_rate", "joint_vel", "torque_rated",
    "feet_swing_height", "alternate_swing",
    "leg_straightness", "calf_lift", "foot_kick",
    "knee_collision",
    "jump_height", "takeoff_vel", "feet_sync", "horiz_vel",
)


class ConfigError(ValueError):
    """Raised for unparsable files, unknown gaits, or invariant violations."""


@dataclass(frozen=True)
class JointGains:
    Kp: float
    Kd: float
    tau_max: float


@dataclass(frozen=True)
class RewardScales:
    """Inner widths of the exponential reward kernels (config-overridable)."""

    velocity: float = 0.25
    orientation: float = 0.2
    height: float = 0.05
    swing_height: float = 0.02
    swing_clearance_target: float = 0.05
    jump_height_width: float = 0.05
    jump_apex_target: float = 0.275
    straightness: float = 0.15
    calf_lift_target: float = 0.6
    calf_lift_width: float = 0.3
    kick_target: float = 1.0
    kick_width: float = 0.5
    track_jump_gain: float = 4.0
    base_height_target: float = -1.0  # <= 0 means "use the model standing height"


@dataclass(frozen=True)
class PPOConfig:
    learning_rate: float = 5e-4
    gamma: float = 0.99
    gae_lam: float = 0.95
    kl_target: float = 0.01
    clip_ratio: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.005
    epochs: int = 5
    minibatches: int = 4
    actor_hidden: tuple = (512, 256, 128)
    critic_hidden: tuple = (512, 256, 128)
    disc_hidden: tuple = (1024, 512, 256)
    disc_lr: float = 1e-4
    sym_loss_weight: float = 0.1
    max_grad_norm: float = 1.0
    init_log_std: float = math.log(0.5)
    normalize_advantages: bool = True
    expert_transitions: int = 200_000
    checkpoint_interval: int = 500
    lag_ramp_fraction: float = 0.25


@dataclass(frozen=True)
class DeskOverrides:
    """Small-scale settings for laptop runs; paper-scale values stay in the
    main fields for provenance."""

    num_envs: int = 64
    max_iterations: int = 2000
    actor_hidden: tuple = (128, 64, 32)
    critic_hidden: tuple = (128, 64, 32)
    disc_hidden: tuple = (128, 64, 32)
    expert_transitions: int = 20_000


@dataclass(frozen=True)
class GaitSpec:
    gait_name: str
    cycle_time: float
    stance_ratio: float
    ref_scale: float
    action_scale: float
    pd_gains: dict
    amp_alpha: float
    amp_beta: float
    sym_loss: bool
    reward_weights: dict
    num_envs: int
    max_iterations: int
    steps_per_env: int = 24
    hip_scale: float = -1.0  # <= 0 means "default to ref_scale"
    command_range: tuple = (0.0, 0.0)
    squat_depth_min: float = 0.05
    squat_depth_max: float = 0.6
    squat_curriculum: tuple = (2000, 10000)
    episode_length_s: float = 12.0
    ema_coeff: float = 0.8
    decimation: int = 4
    sim_dt: float = 0.005
    reward_scales: RewardScales = field(default_factory=RewardScales)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)
    desk: DeskOverrides = field(default_factory=DeskOverrides)

    @property
    def control_dt(self):
        return self.sim_dt * self.decimation

    @property
    def hip_reference_scale(self):
        return self.ref_scale if self.hip_scale <= 0 else self.hip_scale

    @property
    def amp_enabled(self):
        return self.amp_alpha > 0.0


def _gains(hp, hr, hy, kn, ap, ar, kd):
    """Build the per-leg gain table; tau_max is 150 N m at hip/knee, 60 at
    ankle (endpoints of the hardware's stated 60-150 N m range)."""
    kp = dict(hip_pitch=hp, hip_roll=hr, hip_yaw=hy, knee=kn, ankle_pitch=ap, ankle_roll=ar)
    tau = dict(hip_pitch=150.0, hip_roll=150.0, hip_yaw=150.0, knee=150.0,
               ankle_pitch=60.0, ankle_roll=60.0)
    return {j: JointGains(Kp=float(kp[j]), Kd=float(kd[j]), tau_max=tau[j])
            for j in JOINT_NAMES_PER_LEG}


_WALK_KD = dict(hip_pitch=14, hip_roll=10, hip_yaw=5, knee=14, ankle_pitch=5, ankle_roll=5)
_GOOSE_KD = dict(hip_pitch=20, hip_roll=15, hip_yaw=8, knee=40, ankle_pitch=10, ankle_roll=10)
_RUN_KD = dict(hip_pitch=14, hip_roll=10, hip_yaw=5, knee=14, ankle_pitch=6, ankle_roll=6)

WALKING_GAINS = _gains(280, 240, 75, 280, 75, 75, _WALK_KD)
GOOSE_GAINS = _gains(450, 300, 150, 800, 200, 200, _GOOSE_KD)
RUNNING_GAINS = _gains(300, 240, 100, 300, 80, 80, _RUN_KD)


def _weights(**overrides):
    w = {t: 0.0 for t in REWARD_TERMS}
    w.update(overrides)
    unknown = set(overrides) - set(REWARD_TERMS)
    if unknown:
        raise KeyError(f"unknown reward terms: {sorted(unknown)}")
    return w


_COMMON_PENALTIES = dict(joint_vel=-1e-4, knee_collision=-10.0)

WALKING_WEIGHTS = _weights(
    track_dual=2.0, track_knee=3.0, lin_vel=5.0, ang_vel=3.5, orientation=3.0,
    base_height=2.0, action_rate=-0.01, torque_rated=-0.02, feet_swing_height=2.0,
    **_COMMON_PENALTIES)
GOOSE_WEIGHTS = _weights(
    track_dual=4.0, track_knee=25.0, lin_vel=8.0, ang_vel=3.5, orientation=5.0,
    base_height=2.0, action_rate=-0.001, torque_rated=-0.03, feet_swing_height=2.0,
    alternate_swing=6.0, leg_straightness=12.0, calf_lift=8.0, foot_kick=6.0,
    **_COMMON_PENALTIES)
RUNNING_WEIGHTS = _weights(
    track_dual=2.0, track_knee=3.0, lin_vel=20.0, ang_vel=3.5, orientation=3.0,
    base_height=2.0, action_rate=-0.01, torque_rated=-0.05, feet_swing_height=2.0,
    **_COMMON_PENALTIES)
JUMPING_WEIGHTS = _weights(
    track_jump=20.0, ang_vel=3.5, orientation=15.0, base_height=2.0,
    action_rate=-0.01, torque_rated=-0.02, jump_height=150.0, takeoff_vel=120.0,
    feet_sync=20.0, horiz_vel=-15.0, **_COMMON_PENALTIES)


def _preset(name):
    rand = RandomizationRanges.for_gait(name)
    if name == "walking":
        return GaitSpec(
            gait_name=name, cycle_time=0.8, stance_ratio=0.6, ref_scale=0.26,
            action_scale=0.25, pd_gains=WALKING_GAINS, amp_alpha=0.3, amp_beta=0.8,
            sym_loss=True, reward_weights=WALKING_WEIGHTS, num_envs=4096,
            max_iterations=40001, command_range=(0.2, 0.6), randomization=rand)
    if name == "goose_stepping":
        return GaitSpec(
            gait_name=name, cycle_time=0.7, stance_ratio=0.45, ref_scale=0.28,
            action_scale=0.4, pd_gains=GOOSE_GAINS, amp_alpha=0.6, amp_beta=0.7,
            sym_loss=True, reward_weights=GOOSE_WEIGHTS, num_envs=4096,
            max_iterations=20001, command_range=(0.2, 0.5), randomization=rand)
    if name == "running":
        return GaitSpec(
            gait_name=name, cycle_time=0.4, stance_ratio=0.35, ref_scale=0.26,
            action_scale=0.3, pd_gains=RUNNING_GAINS, amp_alpha=0.0, amp_beta=1.0,
            sym_loss=True, reward_weights=RUNNING_WEIGHTS, num_envs=2048,
            max_iterations=40001, command_range=(0.5, 1.2), randomization=rand)
    if name == "stair_climbing":
        # inherits walking's gains and torque penalty; only the cycle pair and
        # terrain treatment differ (flat ground here), flagged in docs/config.md
        return GaitSpec(
            gait_name=name, cycle_time=0.7, stance_ratio=0.6, ref_scale=0.26,
            action_scale=0.25, pd_gains=WALKING_GAINS, amp_alpha=0.3, amp_beta=0.8,
            sym_loss=True, reward_weights=WALKING_WEIGHTS, num_envs=4096,
            max_iterations=40001, command_range=(0.2, 0.5), randomization=rand)
    if name == "jumping":
        return GaitSpec(
            gait_name=name, cycle_time=4.0, stance_ratio=0.75, ref_scale=0.26,
            action_scale=0.3, pd_gains=WALKING_GAINS, amp_alpha=0.0, amp_beta=1.0,
            sym_loss=False, reward_weights=JUMPING_WEIGHTS, num_envs=2048,
            max_iterations=11000, command_range=(0.0, 0.0),
            ppo=PPOConfig(entropy_coef=0.01), randomization=rand)
    raise ConfigError(f"unknown gait_name: {name!r}")


def gait_preset(name):
    """Built-in preset for one of the five gaits."""
    if name not in GAIT_NAMES:
        raise ConfigError(f"unknown gait_name: {name!r} (expected one of {GAIT_NAMES})")
    return _preset(name)


def validate(spec):
    """Return the list of violated invariants (empty = valid). Never raises."""
    v = []
    if spec.gait_name not in GAIT_NAMES:
        v.append(f"gait_name {spec.gait_name!r} not in {GAIT_NAMES}")
    if not spec.cycle_time > 0:
        v.append("cycle_time must be > 0")
    if not 0 < spec.stance_ratio < 1:
        v.append("stance_ratio out of (0,1)")
    if not spec.ref_scale > 0:
        v.append("ref_scale must be > 0")
    if not spec.action_scale > 0:
        v.append("action_scale must be > 0")
    if spec.amp_alpha < 0:
        v.append("amp_alpha must be >= 0")
    if not 0.0 <= spec.amp_beta <= 1.0:
        v.append("amp_beta out of [0,1]")
    for name in JOINT_NAMES_PER_LEG:
        g = spec.pd_gains.get(name)
        if g is None:
            v.append(f"pd_gains.{name} missing")
            continue
        if not g.Kp > 0:
            v.append(f"pd_gains.{name}.Kp must be > 0")
        if g.Kd < 0:
            v.append(f"pd_gains.{name}.Kd must be >= 0")
        if not g.tau_max > 0:
            v.append(f"pd_gains.{name}.tau_max must be > 0")
    for name in ("num_envs", "max_iterations", "steps_per_env"):
        if getattr(spec, name) < 1:
            v.append(f"{name} must be a positive integer")
    unknown = set(spec.reward_weights) - set(REWARD_TERMS)
    if unknown:
        v.append(f"unknown reward terms: {sorted(unknown)}")
    if spec.command_range[0] > spec.command_range[1]:
        v.append("command_range low > high")
    if spec.squat_depth_min < 0 or spec.squat_depth_max < spec.squat_depth_min:
        v.append("squat depth range invalid")
    if not 0.0 <= spec.ema_coeff <= 1.0:
        v.append("ema_coeff out of [0,1]")
    if spec.decimation < 1:
        v.append("decimation must be >= 1")
    if not spec.sim_dt > 0:
        v.append("sim_dt must be > 0")
    v.extend(spec.randomization.validate())
    return v


def apply_desk(spec):
    """Resolve the desk-scale run settings into a concrete spec.

    Iteration-indexed curricula shrink proportionally with the iteration
    budget so a desk run still sweeps its full schedule.
    """
    d = spec.desk
    iters = min(spec.max_iterations, d.max_iterations)
    scale = iters / spec.max_iterations if spec.max_iterations > 0 else 1.0
    squat = tuple(int(round(s * scale)) for s in spec.squat_curriculum)
    return replace(
        spec,
        num_envs=d.num_envs,
        max_iterations=iters,
        squat_curriculum=squat,
        ppo=replace(spec.ppo, actor_hidden=d.actor_hidden, critic_hidden=d.critic_hidden,
                    disc_hidden=d.disc_hidden, expert_transitions=d.expert_transitions),
    )


# ---------------------------------------------------------------------------
# config-file I/O (INI-style; schema documented in docs/config.md)

_GAIT_SCALARS = {
    "gait_name": str, "cycle_time": float, "stance_ratio": float, "ref_scale": float,
    "hip_scale": float, "action_scale": float, "amp_alpha": float, "amp_beta": float,
    "sym_loss": bool, "num_envs": int, "max_iterations": int, "steps_per_env": int,
    "squat_depth_min": float, "squat_depth_max": float, "episode_length_s": float,
    "ema_coeff": float, "decimation": int, "sim_dt": float,
}
_GAIT_TUPLES = {"command_range": float, "squat_curriculum": int}


def _parse_scalar(text, kind, key):
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError as e:
        raise ConfigError(f"cannot parse {key} = {text!r} as {kind.__name__}") from e


def _parse_tuple(text, kind, key):
    parts = [p for p in text.replace(",", " ").split() if p]
    return tuple(_parse_scalar(p, kind, key) for p in parts)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _dataclass_from_section(cls, base, section, label):
    """Overlay one INI section onto a (frozen) dataclass instance."""
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, text in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {label}.{key}")
        current = getattr(base, key)
        if isinstance(current, bool):
            kwargs[key] = _parse_scalar(text, bool, key)
        elif isinstance(current, int):
            kwargs[key] = _parse_scalar(text, int, key)
        elif isinstance(current, float):
            kwargs[key] = _parse_scalar(text, float, key)
        elif isinstance(current, tuple):
            elem = int if current and isinstance(current[0], int) else float
            kwargs[key] = _parse_tuple(text, elem, key)
        else:
            raise ConfigError(f"unsupported key {label}.{key}")
    return replace(base, **kwargs)


def load_gait_config(path, validate_spec=True):
    """Load a gait config file; missing keys fall back to the gait's preset."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    if not parser.has_section("gait") or "gait_name" not in parser["gait"]:
        raise ConfigError(f"{path}: missing [gait] section with gait_name")
    name = parser["gait"]["gait_name"].strip()
    spec = gait_preset(name)

    overrides = {}
    for key, text in parser["gait"].items():
        if key == "gait_name":
            continue
        if key in _GAIT_SCALARS:
            overrides[key] = _parse_scalar(text, _GAIT_SCALARS[key], key)
        elif key in _GAIT_TUPLES:
            overrides[key] = _parse_tuple(text, _GAIT_TUPLES[key], key)
        else:
            raise ConfigError(f"unknown key gait.{key}")
    spec = replace(spec, **overrides)

    gains = dict(spec.pd_gains)
    for joint in JOINT_NAMES_PER_LEG:
        sec = f"pd_gains.{joint}"
        if parser.has_section(sec):
            g = gains[joint]
            vals = {k: _parse_scalar(t, float, f"{sec}.{k}") for k, t in parser[sec].items()}
            unknown = set(vals) - {"kp", "kd", "tau_max"}
            if unknown:
                raise ConfigError(f"unknown key in [{sec}]: {sorted(unknown)}")
            gains[joint] = JointGains(Kp=vals.get("kp", g.Kp), Kd=vals.get("kd", g.Kd),
                                      tau_max=vals.get("tau_max", g.tau_max))
    spec = replace(spec, pd_gains=gains)

    if parser.has_section("reward_weights"):
        weights = dict(spec.reward_weights)
        for term, text in parser["reward_weights"].items():
            if term not in REWARD_TERMS:
                raise ConfigError(f"unknown reward term {term!r}")
            weights[term] = _parse_scalar(text, float, term)
        spec = replace(spec, reward_weights=weights)

    for sec, attr, cls in (("reward_scales", "reward_scales", RewardScales),
                           ("ppo", "ppo", PPOConfig),
                           ("randomization", "randomization", RandomizationRanges),
                           ("desk", "desk", DeskOverrides)):
        if parser.has_section(sec):
            spec = replace(spec, **{attr: _dataclass_from_section(
                cls, getattr(spec, attr), parser[sec], sec)})

    if validate_spec:
        violations = validate(spec)
        if violations:
            raise ConfigError(f"{path}: invalid config: " + "; ".join(violations))
    return spec


def save_gait_config(spec, path):
    """Write the full spec as a config file; load_gait_config round-trips it."""
    lines = ["[gait]", f"gait_name = {spec.gait_name}"]
    for key in _GAIT_SCALARS:
        if key == "gait_name":
            continue
        lines.append(f"{key} = {_format_value(getattr(spec, key))}")
    for key in _GAIT_TUPLES:
        lines.append(f"{key} = {_format_value(getattr(spec, key))}")
    for joint in JOINT_NAMES_PER_LEG:
        g = spec.pd_gains[joint]
        lines += ["", f"[pd_gains.{joint}]", f"Kp = {_format_value(g.Kp)}",
                  f"Kd = {_format_value(g.Kd)}", f"tau_max = {_format_value(g.tau_max)}"]
    lines += ["", "[reward_weights]"]
    lines += [f"{t} = {_format_value(w)}" for t, w in spec.reward_weights.items()]
    for sec, obj in (("reward_scales", spec.reward_scales), ("ppo", spec.ppo),
                     ("randomization", spec.randomization), ("desk", spec.desk)):
        lines += ["", f"[{sec}]"]
        for f in fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
