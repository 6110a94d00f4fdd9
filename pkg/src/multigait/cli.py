"""Command-line front end: training runs, policy evaluation, motion-prior
comparisons, metric plots, and reference/observation dumps.

Exit codes: 0 on success, 2 on usage errors (argparse), 3 on runtime
failures (bad files, missing data, training errors).
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import (
    GAIT_NAMES,
    ConfigError,
    apply_desk,
    gait_preset,
    load_gait_config,
)
from .observation import (
    ACTOR_FRAME_DIM,
    ACTOR_LAYOUT,
    ACTOR_OBS_DIM,
    ACTOR_STACK,
    ANG_VEL_SCALE,
    CRITIC_FRAME_DIM,
    CRITIC_LAYOUT,
    CRITIC_OBS_DIM,
    CRITIC_STACK,
    JOINT_VEL_SCALE,
    LIN_VEL_SCALE,
    TERRAIN_DIM,
    build_critic_observation,
)
from .ppo import (
    convergence_iteration,
    evaluate_policy,
    load_policy,
    moving_average,
    read_metrics,
    train,
)
from .reference import gait_reference, gait_stance_mask
from .robot import JOINT_NAMES

# alpha/beta used when a gait that ships without the motion prior has it
# forced on for a comparison arm
FORCED_AMP_ALPHA = 0.3
FORCED_AMP_BETA = 0.8


# ---------------------------------------------------------------------------
# shared plumbing

def _spec_from_args(args):
    if getattr(args, "config", None):
        spec = load_gait_config(args.config)
    else:
        spec = gait_preset(args.gait)
    if getattr(args, "paper", False):
        return spec
    return apply_desk(spec)


def _apply_amp_mode(spec, mode):
    """Resolve --amp {preset,on,off} against a gait spec."""
    if mode == "preset":
        return spec
    if mode == "off":
        return replace(spec, amp_alpha=0.0)
    if spec.amp_alpha > 0.0:
        return spec
    return replace(spec, amp_alpha=FORCED_AMP_ALPHA, amp_beta=FORCED_AMP_BETA)


def _invert_amp(spec):
    if spec.amp_alpha > 0.0:
        return _apply_amp_mode(spec, "off")
    return _apply_amp_mode(spec, "on")


def _seeds(args):
    return args.seed if args.seed else [0]


def _progress_logger(every):
    def log(record):
        if every > 0 and record.iteration % every == 0:
            print(f"  iter {record.iteration:5d}  reward {record.reward:9.3f}  "
                  f"fail {record.failure_rate:5.3f}  track {record.tracking_err:7.4f}  "
                  f"kl {record.kl:7.4f}  lr {record.lr:.1e}", flush=True)
    return log


def _train_one(spec, seed, out_dir, args):
    if spec.amp_alpha == 0.0:
        print(f"[{spec.gait_name} seed {seed}] AMP disabled (alpha = 0); "
              "training on pure task reward")
    else:
        print(f"[{spec.gait_name} seed {seed}] AMP enabled "
              f"(alpha {spec.amp_alpha}, beta {spec.amp_beta})")
    return train(spec, seed=seed, out_dir=out_dir,
                 num_envs=args.num_envs, iterations=args.iterations,
                 log_fn=_progress_logger(args.log_every))


# ---------------------------------------------------------------------------
# train

def cmd_train(args):
    spec = _apply_amp_mode(_spec_from_args(args), args.amp)
    scale = "paper" if args.paper else "desk"
    out_root = args.out or os.path.join("runs", f"{spec.gait_name}_{scale}")
    for seed in _seeds(args):
        out_dir = os.path.join(out_root, f"seed_{seed}")
        result = _train_one(spec, seed, out_dir, args)
        last = result.records[-1] if result.records else None
        if last is not None:
            print(f"[{spec.gait_name} seed {seed}] finished at iteration "
                  f"{last.iteration}: reward {last.reward:.3f}, "
                  f"failure rate {last.failure_rate:.3f}")
        print(f"  run directory: {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args):
    bundle = load_policy(args.bundle)
    if args.gait is None and not bundle.gait_name:
        raise ValueError("bundle carries no gait name; pass --gait")
    gait = args.gait or bundle.gait_name
    ns = argparse.Namespace(config=getattr(args, "config", None), gait=gait,
                            paper=args.paper)
    spec = _spec_from_args(ns)
    metrics = evaluate_policy(spec, bundle, episodes=args.episodes,
                              seed=args.seed[0] if args.seed else 0,
                              zero_lin_vel=args.zero_lin_vel)
    print(f"gait: {spec.gait_name}  episodes: {metrics['episodes']}")
    print(f"success rate:      {metrics['success_rate']:.3f}")
    print(f"fall rate:         {metrics['fall_rate']:.3f}")
    print(f"tracking error:    {metrics['tracking_error']:.4f} rad (mean |q - q_ref|, hip/knee)")
    print(f"posture stability: {metrics['posture_stability']:.4f} (RMS horizontal gravity)")
    print(f"mean episode:      {metrics['mean_episode_steps']:.1f} steps")
    if spec.gait_name == "jumping":
        print(f"max apex rise:     {metrics['max_apex_rise']:.4f} m")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval.json")
        payload = {k: v for k, v in metrics.items() if k != "per_episode"}
        payload.update(gait=spec.gait_name, bundle=os.path.abspath(args.bundle),
                       zero_lin_vel=bool(args.zero_lin_vel))
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# compare-amp

def _summarize_run(records):
    rewards = [r.reward for r in records]
    fails = [r.failure_rate for r in records]
    window = min(100, max(1, len(records)))
    return {
        "iterations": len(records),
        "convergence_iteration": convergence_iteration(rewards),
        "final_reward": float(moving_average(rewards, window)[-1]),
        "final_tracking_err": float(moving_average(
            [r.tracking_err for r in records], window)[-1]),
        "failure_rate_start": float(moving_average(fails, window)[min(window, len(fails)) - 1]),
        "failure_rate_end": float(moving_average(fails, window)[-1]),
        "max_ref_amplitude": float(max(r.squat_depth for r in records)),
        "final_apex_rise": float(records[-1].apex_rise),
    }


def run_amp_comparison(spec, seeds, out_dir, args):
    """Train AMP-as-preset against AMP-inverted for every seed; returns the
    summary structure written to ``out_dir/summary.json``."""
    arms = {}
    for arm_name, arm_spec in (("preset", spec), ("inverted", _invert_amp(spec))):
        label = f"amp_{'on' if arm_spec.amp_alpha > 0 else 'off'}"
        arms[label] = {"spec": arm_spec, "mode": arm_name, "seeds": {}}
    summary = {"gait": spec.gait_name, "seeds": list(seeds), "arms": {}}
    for label, arm in arms.items():
        for seed in seeds:
            run_dir = os.path.join(out_dir, label, f"seed_{seed}")
            print(f"=== arm {label} ({arm['mode']}) seed {seed} ===")
            result = _train_one(arm["spec"], seed, run_dir, args)
            arm["seeds"][seed] = _summarize_run(result.records)
        rows = list(arm["seeds"].values())
        agg = {"per_seed": {str(s): r for s, r in arm["seeds"].items()}}
        for key in ("convergence_iteration", "final_reward",
                    "final_tracking_err", "failure_rate_end",
                    "final_apex_rise"):
            vals = [r[key] for r in rows if r[key] is not None]
            agg[f"median_{key}"] = float(np.median(vals)) if vals else None
            # spread columns stay blank for a single seed
            agg[f"iqr_{key}"] = (float(np.subtract(*np.percentile(vals, [75, 25])))
                                 if len(vals) > 1 else None)
        summary["arms"][label] = agg

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "seed", "convergence_iteration", "final_reward",
                         "final_tracking_err", "failure_rate_start",
                         "failure_rate_end", "max_ref_amplitude",
                         "final_apex_rise"])
        for label, arm in arms.items():
            for seed, row in arm["seeds"].items():
                writer.writerow([label, seed, row["convergence_iteration"],
                                 repr(row["final_reward"]),
                                 repr(row["final_tracking_err"]),
                                 repr(row["failure_rate_start"]),
                                 repr(row["failure_rate_end"]),
                                 repr(row["max_ref_amplitude"]),
                                 repr(row["final_apex_rise"])])
    return summary


def cmd_compare_amp(args):
    spec = _spec_from_args(args)
    scale = "paper" if args.paper else "desk"
    out_dir = args.out or os.path.join("runs", f"compare_{spec.gait_name}_{scale}")
    summary = run_amp_comparison(spec, _seeds(args), out_dir, args)
    print(f"\ngait: {summary['gait']}  seeds: {summary['seeds']}")
    for label, agg in summary["arms"].items():
        print(f"  {label}: median convergence "
              f"{agg['median_convergence_iteration']}, median final reward "
              f"{agg['median_final_reward']:.3f}, median failure rate "
              f"{agg['median_failure_rate_end']:.3f}")
        if spec.gait_name == "jumping":
            print(f"    max knee-reference amplitude "
                  f"{max(r['max_ref_amplitude'] for r in agg['per_seed'].values()):.3f} rad, "
                  f"median final apex rise {agg['median_final_apex_rise']:.4f} m")
    print(f"summary: {os.path.join(out_dir, 'summary.json')}")
    return 0


# ---------------------------------------------------------------------------
# plot

PLOT_PANELS = (("reward", "mean total reward"),
               ("tracking_err", "tracking error [rad]"),
               ("failure_rate", "failure rate"))


def _find_metric_files(run_dir):
    direct = os.path.join(run_dir, "metrics.csv")
    if os.path.isfile(direct):
        return {"run": direct}
    found = {}
    for root, _, files in sorted(os.walk(run_dir)):
        if "metrics.csv" in files:
            label = os.path.relpath(root, run_dir)
            found[label] = os.path.join(root, "metrics.csv")
    return found


def _emit_plot_fallback(out_dir, curves):
    """Without matplotlib: write the panel data plus a plotting script."""
    data_path = os.path.join(out_dir, "plot_data.csv")
    with open(data_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "iteration"] + [k for k, _ in PLOT_PANELS])
        for label, records in curves.items():
            for r in records:
                writer.writerow([label, r.iteration, repr(r.reward),
                                 repr(r.tracking_err), repr(r.failure_rate)])
    script = os.path.join(out_dir, "render_plots.py")
    with open(script, "w") as fh:
        fh.write(
            "#!/usr/bin/env python3\n"
            '"""Render the three training panels from plot_data.csv\n'
            "(written because matplotlib was unavailable at plot time).\"\"\"\n"
            "import csv, collections\n"
            "import matplotlib.pyplot as plt\n"
            f"panels = {[k for k, _ in PLOT_PANELS]!r}\n"
            "rows = collections.defaultdict(lambda: collections.defaultdict(list))\n"
            "with open('plot_data.csv') as fh:\n"
            "    for row in csv.DictReader(fh):\n"
            "        for p in panels + ['iteration']:\n"
            "            rows[row['label']][p].append(float(row[p]))\n"
            "fig, axes = plt.subplots(1, 3, figsize=(15, 4))\n"
            "for ax, panel in zip(axes, panels):\n"
            "    for label, data in rows.items():\n"
            "        ax.plot(data['iteration'], data[panel], label=label)\n"
            "    ax.set_xlabel('iteration'); ax.set_title(panel); ax.legend()\n"
            "fig.tight_layout(); fig.savefig('metrics.png', dpi=150)\n")
    print(f"matplotlib unavailable: wrote {data_path} and {script}")


def cmd_plot(args):
    curves = {}
    for label, path in _find_metric_files(args.run_dir).items():
        records = read_metrics(path)
        if not records:
            raise ValueError(f"{path}: metrics file has no data rows")
        curves[label] = records
    if not curves:
        raise ValueError(f"{args.run_dir}: no metrics.csv found")
    out_dir = args.out or os.path.join(args.run_dir, "plots")
    os.makedirs(out_dir, exist_ok=True)
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        _emit_plot_fallback(out_dir, curves)
        return 0

    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    for (field_name, title), ax in zip(PLOT_PANELS, axes):
        for label, records in sorted(curves.items()):
            its = [r.iteration for r in records]
            vals = [getattr(r, field_name) for r in records]
            ax.plot(its, vals, label=label, linewidth=1.0)
        ax.set_xlabel("iteration")
        ax.set_ylabel(title)
        ax.grid(True, alpha=0.3)
        if len(curves) > 1:
            ax.legend(fontsize=8)
    fig.tight_layout()
    combined = os.path.join(out_dir, "metrics.png")
    fig.savefig(combined, dpi=150)
    plt.close(fig)
    written = [combined]
    for field_name, title in PLOT_PANELS:
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, records in sorted(curves.items()):
            ax.plot([r.iteration for r in records],
                    [getattr(r, field_name) for r in records],
                    label=label, linewidth=1.0)
        ax.set_xlabel("iteration")
        ax.set_ylabel(title)
        ax.grid(True, alpha=0.3)
        if len(curves) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{field_name}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# ref-dump

def cmd_ref_dump(args):
    spec = _spec_from_args(args)
    samples = args.samples or max(2, int(round(spec.cycle_time / spec.control_dt)))
    phase = np.arange(samples) / samples
    ref = gait_reference(spec, phase, args.squat_depth)
    stance = gait_stance_mask(spec, phase)
    header = ["phase"] + [f"ref_{name}" for name in JOINT_NAMES] + \
        ["stance_left", "stance_right"]
    rows = [[repr(float(p))] + [repr(float(v)) for v in ref[i]]
            + [int(stance[i, 0]), int(stance[i, 1])]
            for i, p in enumerate(phase)]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"reference_{spec.gait_name}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        print(f"wrote {path} ({samples} samples over one cycle)")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
    return 0


# ---------------------------------------------------------------------------
# obs-dump

def _layout_json(layout):
    out, pos = [], 0
    for name, size in layout:
        out.append({"name": name, "offset": pos, "size": size})
        pos += size
    return out


def cmd_obs_dump(args):
    from .env import VectorEnv

    spec = _spec_from_args(args)
    payload = {
        "gait": spec.gait_name,
        "actor": {
            "frame_dim": ACTOR_FRAME_DIM,
            "stack_depth": ACTOR_STACK,
            "obs_dim": ACTOR_OBS_DIM,
            "frame_layout": _layout_json(ACTOR_LAYOUT),
            "scales": {"base_lin_vel": LIN_VEL_SCALE,
                       "base_ang_vel": ANG_VEL_SCALE,
                       "joint_vel": JOINT_VEL_SCALE},
            "stacking": "oldest frame first, newest last",
        },
        "critic": {
            "frame_dim": CRITIC_FRAME_DIM,
            "stack_depth": CRITIC_STACK,
            "terrain_dim": TERRAIN_DIM,
            "obs_dim": CRITIC_OBS_DIM,
            "frame_layout": _layout_json(CRITIC_LAYOUT),
        },
    }
    if args.sample:
        env = VectorEnv(spec, num_envs=1, seed=args.seed[0] if args.seed else 0)
        actor_obs = env.actor_stack.flatten()
        critic_obs = build_critic_observation(env.critic_stack)
        payload["sample"] = {
            "seed": args.seed[0] if args.seed else 0,
            "actor_obs": [float(v) for v in actor_obs[0]],
            "critic_obs": [float(v) for v in critic_obs[0]],
        }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"observations_{spec.gait_name}.json")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(sub, gait_required=True, want_amp=False):
    group = sub.add_mutually_exclusive_group(required=gait_required)
    group.add_argument("--gait", choices=GAIT_NAMES,
                       help="gait preset to use")
    group.add_argument("--config", metavar="FILE",
                       help="gait config file (overrides --gait)")
    scale = sub.add_mutually_exclusive_group()
    scale.add_argument("--desk", dest="paper", action="store_false",
                       help="desk-scale run settings (default)")
    scale.add_argument("--paper", dest="paper", action="store_true",
                       help="full-scale run settings")
    sub.set_defaults(paper=False)
    sub.add_argument("--seed", type=int, action="append", metavar="N",
                     help="RNG seed; repeat the flag for multi-seed runs (default 0)")
    sub.add_argument("--out", metavar="DIR", help="output directory")
    if want_amp:
        sub.add_argument("--amp", choices=("preset", "on", "off"),
                         default="preset",
                         help="motion-prior override (default: gait preset)")


def _add_train_knobs(sub):
    sub.add_argument("--iterations", type=int, metavar="N",
                     help="override the spec's iteration count")
    sub.add_argument("--num-envs", type=int, metavar="N",
                     help="override the spec's environment count")
    sub.add_argument("--log-every", type=int, default=50, metavar="N",
                     help="progress print period in iterations (0 = silent)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="multigait",
        description="Multi-gait biped locomotion training and evaluation.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train a gait policy")
    _add_common(p, want_amp=True)
    _add_train_knobs(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a policy bundle")
    p.add_argument("--bundle", required=True, metavar="FILE",
                   help="policy bundle to evaluate")
    _add_common(p, gait_required=False)
    p.add_argument("--episodes", type=int, default=10, metavar="N")
    p.add_argument("--zero-lin-vel", action="store_true",
                   help="blank linear-velocity observations (deployment mode)")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("compare-amp",
                        help="train with the motion prior per preset and inverted")
    _add_common(p)
    _add_train_knobs(p)
    p.set_defaults(func=cmd_compare_amp)

    p = subs.add_parser("plot", help="render training curves from a run directory")
    p.add_argument("run_dir", metavar="RUN_DIR")
    p.add_argument("--out", metavar="DIR",
                   help="image output directory (default RUN_DIR/plots)")
    p.set_defaults(func=cmd_plot)

    p = subs.add_parser("ref-dump", help="dump one cycle of the gait reference")
    _add_common(p)
    p.add_argument("--samples", type=int, metavar="N",
                   help="samples over the cycle (default: one control step each)")
    p.add_argument("--squat-depth", type=float, metavar="D",
                   help="jump squat depth (default: gait maximum)")
    p.set_defaults(func=cmd_ref_dump)

    p = subs.add_parser("obs-dump",
                        help="dump the observation layout (and a live sample)")
    _add_common(p)
    p.add_argument("--sample", action="store_true",
                   help="include a reset-state observation sample")
    p.set_defaults(func=cmd_obs_dump)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "episodes", None) is not None and args.episodes <= 0:
        parser.error("--episodes must be a positive integer")
    if getattr(args, "iterations", None) is not None and args.iterations <= 0:
        parser.error("--iterations must be a positive integer")
    if getattr(args, "num_envs", None) is not None and args.num_envs <= 0:
        parser.error("--num-envs must be a positive integer")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
