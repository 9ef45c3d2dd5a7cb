"""Command-line front end.

Subcommands: train, evaluate, diagnose, ablate, grad-check.  Settings are
resolved profile defaults -> config file -> explicit flags, so a YAML file
reproduces a run exactly and any flag tweaks it.  Exit codes: 0 success,
1 failed check, 2 configuration problems, 3 numerical failure during
training (a diagnostic bundle is written before exiting).
"""

from __future__ import annotations

import argparse
import os

from ..errors import CheckpointError, ConfigError, NumericalFailure
from .ablation import AXES, ablate_command
from .config import ALGOS, PROFILES, TASKS, TrainerConfig
from .diagnostics import diagnose_command, grad_check
from .evaluate import evaluate_command
from .trainer import Trainer

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="YAML config file to start from")
    sp.add_argument("--profile", choices=PROFILES,
                    help="built-in settings profile (default: desk)")
    sp.add_argument("--stage", type=int, choices=(1, 2), help="training stage")
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--cpg-checkpoint", dest="cpg_checkpoint",
                    help="stage-1 bundle that supplies gait commands in stage 2")
    sp.add_argument("--out-dir", dest="out_dir", help="artifact directory")


def resolve_config(args: argparse.Namespace, **extra) -> TrainerConfig:
    """Profile defaults, overridden by the config file, then by flags."""
    overrides = dict(extra)
    for name in ("stage", "seed", "cpg_checkpoint", "task", "algo"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "samples", None) is not None:
        overrides["max_training_samples"] = args.samples
    if args.config is not None:
        return TrainerConfig.load(args.config).with_overrides(**overrides)
    return TrainerConfig.from_profile(args.profile or "desk", **overrides)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = args.out_dir or os.path.join("runs", f"{cfg.task}-{cfg.algo}-s{cfg.seed}")
    trainer = Trainer(cfg, out_dir=out_dir)
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "config.yaml"))
    summary = trainer.train()
    print(f"trained {summary['updates']} updates / {summary['samples']} samples")
    print(f"final mean reward {summary['final_reward']:.5f} "
          f"({summary['rollbacks']} rollbacks)")
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    out_dir = args.out_dir or "."
    out_path = os.path.join(out_dir, "walking_report.csv")
    rows = evaluate_command(args.checkpoint, args.episodes, args.seed or 0,
                            out_path, scripted=args.scripted)
    for row in rows:
        print(f"v*={row.v_target:.1f} h_max={row.h_max:.2f}: "
              f"success {row.success_rate:.2f} over {row.episodes} episodes")
    print(f"report: {out_path}")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    out_dir = args.out_dir or "."
    out_path = os.path.join(out_dir, "diagnostics.csv")
    eps_revs = tuple(args.eps_rev) if args.eps_rev else (0.7, 1.0)
    rows = diagnose_command(args.checkpoint, out_path, eps_revs=eps_revs,
                            samples=args.samples or 2048, seed=args.seed or 0,
                            adv_scale=args.adv_scale)
    for eps_rev in eps_revs:
        sub = [r for r in rows if r["eps_rev"] == eps_rev and r["count"] > 0]
        worst = min(r["min_extreme"] for r in sub)
        print(f"eps_rev={eps_rev}: worst log10 ratio excursion {worst:.3f}")
    print(f"report: {out_path}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = args.out_dir or "."
    out_path = os.path.join(out_dir, f"ablation_{args.axis}.csv")
    seeds = (cfg.seed,)
    runs = ablate_command(args.axis, cfg, out_path, seeds=seeds)
    for run in runs:
        extra = ("" if run.relax_steps != run.relax_steps else
                 f"  relax {run.relax_steps:.1f} steps, {run.relax_pct50:.0%} within 50")
        print(f"{run.axis}={run.value} seed={run.seed}: "
              f"final reward {run.final_reward:.5f}{extra}")
    print(f"report: {out_path}")
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rows = grad_check(n_nets=args.nets, max_sizes=sizes, beta=args.beta,
                      seed=args.seed or 0)
    ok = True
    for r in rows:
        good = r["cosine"] > 0.99 and r["rel_l2"] < 0.05
        ok &= good
        print(f"net {r['net']:2d} [{r['sizes']:>12s}]  cos {r['cosine']:.5f}  "
              f"relL2 {r['rel_l2']:.4f}  {'ok' if good else 'FAIL'}")
    print("gradient check", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqppo",
        description="Equilibrium-relaxation PPO for quadruped gait control")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="run the training loop")
    _add_common(sp)
    sp.add_argument("--task", choices=TASKS)
    sp.add_argument("--algo", choices=ALGOS)
    sp.add_argument("--samples", type=int, help="override the sample budget")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="walking-test grid for a checkpoint")
    _add_common(sp)
    sp.add_argument("--checkpoint", help="trained bundle to evaluate")
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--scripted", action="store_true",
                    help="evaluate the scripted gait reference instead")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("diagnose", help="nudging-ratio excursion probe")
    _add_common(sp)
    sp.add_argument("--checkpoint", help="bundle to probe (default: fresh net)")
    sp.add_argument("--samples", type=int, help="number of probe samples")
    sp.add_argument("--eps-rev", dest="eps_rev", type=float, action="append",
                    help="gate setting to probe; repeatable")
    sp.add_argument("--adv-scale", dest="adv_scale", type=float, default=4.0)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("ablate", help="matched-seed ablation over one axis")
    _add_common(sp)
    sp.add_argument("--axis", required=True, choices=sorted(AXES))
    sp.add_argument("--task", choices=TASKS)
    sp.add_argument("--algo", choices=ALGOS)
    sp.add_argument("--samples", type=int, help="override the sample budget")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("grad-check", help="contrastive vs finite-difference gradients")
    sp.add_argument("--nets", type=int, default=5)
    sp.add_argument("--sizes", default="8,16,16,4",
                    help="comma-separated layer size upper bounds")
    sp.add_argument("--beta", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_grad_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as err:
        print(f"configuration error: {err}")
        return EXIT_CONFIG
    except NumericalFailure as err:
        print(f"numerical failure: {err}")
        return EXIT_NUMERICAL
    except FileNotFoundError as err:
        print(f"configuration error: {err}")
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
