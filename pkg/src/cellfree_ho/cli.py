"""Command-line front end: ``cellfree-ho {train,evaluate,validate,action-space,bench}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, nn
from .config import ConfigError, RngStream, ScenarioConfig, dump_config, load_config
from .env import ModeError, reset
from .oracle import validation_report, write_validation_csv
from .sac import SacHyper, load_actor, train


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if getattr(args, "tau0", None) is not None:
        changes["tau_0"] = args.tau0
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    for name in ("B", "B_con"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    hyper = SacHyper(reward_scale=args.reward_scale)

    def progress(row):
        if args.verbose and row["episode"] % 100 == 0:
            print(f"episode {row['episode']}: rolling reward {row['rolling_reward']:.3f}", flush=True)

    dump_config(cfg, out / "config.ini")
    res = train(cfg, hyper, args.mode, args.episodes, cfg.seed, checkpoint_path=out / "checkpoint.npz",
                log_path=out / "train_log.csv", progress=progress)
    print(f"trained {args.episodes} episodes ({res.steps} steps); best rolling reward {res.best_rolling:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    actor = None
    if "drl" in policies:
        if not args.checkpoint:
            print("error: --checkpoint is required for the drl policy", file=sys.stderr)
            return 2
        actor, _ = load_actor(args.checkpoint)
        if actor.sizes[0] != 4 * cfg.B:
            raise ValueError(f"checkpoint expects B={actor.sizes[0] // 4} but the scenario has B={cfg.B}")
    seed = cfg.seed if args.seed is not None else 12345
    rep = harness.evaluate(cfg, args.mode, policies, args.episodes, seed, actor)
    harness.write_rate_cdf(out / "rate_cdf.csv", rep)
    harness.write_ho_accum(out / "ho_accum.csv", rep)
    harness.write_json(out / "eval_summary.json", rep.summary())
    harness.write_policy_trace(out / f"trace_{policies[0]}.csv", cfg, args.mode, policies[0], 0, seed, actor)
    reset(cfg, 0, args.mode, seed)[0].layout.to_csv(out / "layout.csv")
    for p, s in rep.summary().items():
        print(f"{p}: mean rate {s['mean_rate']:.4f}, mean reward {s['mean_reward']:.4f}, "
              f"HO steps/episode {s['mean_ho_steps']:.3f}")
    return 0


def cmd_validate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    rows = validation_report(cfg, args.instances, args.samples, cfg.seed)
    write_validation_csv(out / "validation.csv", rows)
    n_ok = sum(r.passes() for r in rows)
    print(f"{n_ok}/{len(rows)} terms within 2% or 3 standard errors")
    return 0 if n_ok == len(rows) else 1


def cmd_action_space(args) -> int:
    dim, card = harness.action_space_size(args.B, args.B_con)
    print(f"continuous dimension {dim}, discrete cardinality {card}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.checkpoint:
        actor, _ = load_actor(args.checkpoint)
        if actor.sizes[0] != 4 * cfg.B:
            raise ValueError(f"checkpoint expects B={actor.sizes[0] // 4} but the scenario has B={cfg.B}")
    else:
        actor = nn.init_xavier((4 * cfg.B, 64, 64, 2 * cfg.B), RngStream.for_purpose(cfg.seed, "init").gen)
    stats = harness.bench_latency(actor, cfg, args.calls)
    harness.write_json(out / "bench.json", stats)
    print(f"median {stats['median_ms']:.4f} ms, p95 {stats['p95_ms']:.4f} ms ({stats['backend']} kernels)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellfree-ho", description="Handoff learning for cell-free massive MIMO.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mode=True):
        sp.add_argument("--config", help="scenario file with a [scenario] section")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--tau0", type=float, default=None, help="handoff fixed cost in channel uses")
        if mode:
            sp.add_argument("--mode", choices=("da", "ha", "po-da", "po-ha"), default="da")

    sp = sub.add_parser("train", help="train a SAC handoff policy")
    common(sp)
    sp.add_argument("--episodes", type=int, default=1000)
    sp.add_argument("--reward-scale", type=float, default=0.1)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="compare policies on matched episodes")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--policies", default="drl,lsf,random")
    sp.add_argument("--episodes", type=int, default=200)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("validate", help="closed-form powers against Monte Carlo")
    common(sp, mode=False)
    sp.add_argument("--samples", type=int, default=200_000)
    sp.add_argument("--instances", type=int, default=10)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("action-space", help="continuous width and discrete cardinality")
    sp.add_argument("--B", type=int, default=27)
    sp.add_argument("--B-con", dest="B_con", type=int, default=5)
    sp.set_defaults(func=cmd_action_space)

    sp = sub.add_parser("bench", help="policy inference latency")
    common(sp, mode=False)
    sp.add_argument("--checkpoint")
    sp.add_argument("--calls", type=int, default=2000)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
