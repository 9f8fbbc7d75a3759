"""Command-line entry point: train, evaluate, oracle, report, dry-run.

Every command is non-interactive, reads a JSON scenario (or a named preset),
and writes its outputs into a fresh run directory containing a manifest.
The DOCASIM_CONFIG_ROOT environment variable sets the default directory for
relative scenario paths.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import (ConfigError, PRESETS, ScenarioConfig, load_scenario,
                     save_scenario)
from .engine import Simulation, build_scheduler
from .metrics import MetricsAggregator, loss_decomposition
from .pool import ResourcePoolConfig
from .runio import (RunManifest, TraceWriter, prepare_out_dir, read_csv,
                    write_loss_decomposition, write_metrics_csvs)
from .schedulers import oracle_prr_bound
from .rl.scheduler import PolicyScheduler, fresh_policy_scheduler
from .rl.state import StateBuilder
from .rl.training import TrainedPolicy, train, write_learning_curve


def _resolve_config(path):
    if os.path.exists(path):
        return path
    root = os.environ.get("DOCASIM_CONFIG_ROOT")
    if root and os.path.exists(os.path.join(root, path)):
        return os.path.join(root, path)
    return path


def _load(args) -> ScenarioConfig:
    if args.config in PRESETS:
        scenario = PRESETS[args.config]()
    else:
        scenario = load_scenario(_resolve_config(args.config))
    if getattr(args, "seed", None) is not None:
        scenario.seed = args.seed
    if getattr(args, "horizon", None) is not None:
        scenario.horizon_s = args.horizon
    if getattr(args, "scheduler", None):
        scenario.scheduler = args.scheduler
    return scenario.validate()


def _policy_scheduler(scenario, checkpoint, rng, mode):
    policy = TrainedPolicy.load(checkpoint)
    pk, pm = scenario.pool.subchannels, scenario.pool.subframes
    if pk > policy.master_k or pm > policy.master_m:
        raise ConfigError(
            f"checkpoint action space {policy.master_k}x{policy.master_m} cannot "
            f"host the scenario pool {pk}x{pm}")
    builder = StateBuilder(scenario.pool, scenario.doca,
                           scenario.mobility.avg_speed_ms,
                           master_k=policy.master_k, master_m=policy.master_m)
    return PolicyScheduler(policy.make_actor(), builder, rng, mode=mode)


def run_evaluation(scenario: ScenarioConfig, out_dir, checkpoint=None,
                   policy_mode="argmax", write_trace=True, reference=False,
                   record_decisions=False):
    """Run one seeded evaluation; returns (manifest, metrics, simulation)."""
    prepare_out_dir(out_dir)
    if reference:
        scenario = scenario.copy()
        scenario.channel.reference_mode = True
    manifest = RunManifest(scenario, scenario.seed, scenario.scheduler, out_dir)
    rng_sched = np.random.default_rng(np.random.SeedSequence(scenario.seed).spawn(7)[6])
    policy = None
    if scenario.scheduler in ("rl", "mixed"):
        if checkpoint:
            policy = _policy_scheduler(scenario, checkpoint, rng_sched, policy_mode)
        elif scenario.scheduler == "rl":
            raise ConfigError("scheduler 'rl' needs --checkpoint")
        else:
            policy = fresh_policy_scheduler(scenario, rng_sched, mode="sample",
                                            seed=scenario.seed)
    scheduler = build_scheduler(scenario, rng_sched, policy=policy,
                                record_decisions=record_decisions)
    trace = None
    if write_trace:
        trace_path = os.path.join(out_dir, "trace.csv")
        manifest.add_output(trace_path)
        trace = TraceWriter(trace_path, manifest_id=manifest.id)
    sim = Simulation(scenario, scheduler=scheduler, seed=scenario.seed, trace=trace)
    sim.run(int(scenario.horizon_s * 1000))
    if trace is not None:
        trace.close()
    write_metrics_csvs(out_dir, sim.metrics, manifest)
    manifest.write()
    return manifest, sim.metrics, sim


def cmd_dry_run(args):
    scenario = _load(args)
    print(f"scenario {scenario.name}: OK")
    print(json.dumps(scenario.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_train(args):
    scenario = _load(args)
    out_dir = prepare_out_dir(args.out)
    manifest = RunManifest(scenario, scenario.seed, "rl-train", out_dir)
    cfg = scenario.trainer
    if args.epochs is not None:
        cfg.max_epochs = args.epochs
    if args.workers is not None:
        cfg.n_workers = args.workers
    if args.resume:
        prev = TrainedPolicy.load(args.resume)
        start = prev.epochs
    else:
        prev = None
        start = 0

    if args.multi_pool:
        pools = [tuple(int(x) for x in p.split("x")) for p in args.multi_pool.split(",")]
        groups = []
        per_group = max(1, cfg.n_workers // len(pools))
        for (k, m) in pools:
            sc = scenario.copy()
            sc.pool = ResourcePoolConfig(k, m, scenario.pool.period_ms)
            sc.validate()
            groups.append((sc, per_group))
    else:
        groups = [(scenario, cfg.n_workers)]

    ckpt_path = os.path.join(out_dir, "checkpoint.npz")
    progress = {"last_ckpt": 0}

    def monitor(store, curve):
        if store.epoch - progress["last_ckpt"] >= cfg.checkpoint_interval:
            progress["last_ckpt"] = store.epoch
            _save_checkpoint(store, groups, cfg, ckpt_path, start)
        if args.verbose and curve:
            last = curve[-1]
            print(f"epoch {last.epoch}: worker {last.worker} "
                  f"mean reward {last.mean_reward:.3f}", flush=True)
        return False

    policy, curve = train(groups, cfg, seed=scenario.seed,
                          max_epochs=cfg.max_epochs, monitor=monitor)
    if prev is not None:
        policy.epochs += start
    policy.save(ckpt_path)
    manifest.add_output(ckpt_path)
    curve_path = os.path.join(out_dir, "learning_curve.csv")
    write_learning_curve(curve_path, curve, window=cfg.curve_smoothing,
                         manifest_id=manifest.id)
    manifest.add_output(curve_path)
    manifest.write()
    print(f"trained {policy.epochs} epochs -> {ckpt_path}")
    return 0


def _save_checkpoint(store, groups, cfg, path, start):
    a, c, epoch = store.snapshot()
    mk = max(sc.pool.subchannels for sc, _ in groups)
    mm = max(sc.pool.subframes for sc, _ in groups)
    TrainedPolicy(actor_params=a, critic_params=c, master_k=mk, master_m=mm,
                  epochs=start + epoch, trainer=cfg).save(path)


def cmd_evaluate(args):
    scenario = _load(args)
    _, metrics, _ = run_evaluation(
        scenario, args.out, checkpoint=args.checkpoint,
        policy_mode=args.policy_mode, write_trace=not args.no_trace,
        reference=args.reference)
    for (lo, hi), (mean, std, pooled) in zip(scenario.metrics.prr_bins,
                                             metrics.prr_by_bin()):
        print(f"PRR {lo:>4}-{hi:<4} m: mean {mean:.4f} std {std:.4f} "
              f"pooled {pooled:.4f}")
    print(f"fairness (per-user std): {metrics.fairness():.4f}")
    return 0


def cmd_oracle(args):
    pools = [tuple(int(x) for x in p.split("x")) for p in args.pools.split(",")]
    print("pool,n_vehicles,prr_bound")
    for k, m in pools:
        bound = oracle_prr_bound(args.vehicles, ResourcePoolConfig(k, m))
        print(f"{k}x{m},{args.vehicles},{bound:.6f}")
    return 0


def cmd_report(args):
    prepare_out_dir(args.out)
    rows = []
    for run_dir in args.runs:
        man_path = os.path.join(run_dir, "manifest.json")
        with open(man_path) as fh:
            man = json.load(fh)
        if man.get("schema_version") != 1:
            raise ConfigError(f"{man_path}: unsupported schema version")
        name = man["scenario"].get("name", run_dir)
        sched = man["scheduler"]
        prr_path = os.path.join(run_dir, "prr_by_bin.csv")
        if os.path.exists(prr_path):
            _, prr_rows, _, _ = read_csv(prr_path, expect_kind="prr_by_bin")
            for lo, hi, mean, std, pooled in prr_rows:
                rows.append((name, sched, lo, hi, mean, std, pooled))
        else:
            rows.append((name, sched, "NA", "NA", "NA", "NA", "NA"))
    out_path = os.path.join(args.out, "prr_comparison.csv")
    with open(out_path, "w") as fh:
        fh.write("# docasim prr_comparison v1 manifest=report\n")
        fh.write("scenario,scheduler,bin_low_m,bin_high_m,prr_mean,prr_std,prr_pooled\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
    print(f"wrote {out_path} ({len(rows)} rows)")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="docasim",
        description="Out-of-coverage V2V scheduling laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="scenario JSON path or preset name "
                             f"({', '.join(sorted(PRESETS))})")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--horizon", type=float, default=None,
                        help="simulation horizon in seconds")

    p = sub.add_parser("dry-run", parents=[common],
                       help="validate a scenario and print resolved parameters")
    p.set_defaults(func=cmd_dry_run, scheduler=None)

    p = sub.add_parser("train", parents=[common], help="train the policy network")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--multi-pool", default=None,
                   help="comma list of KxM pools for joint training, e.g. "
                        "2x10,4x5,5x4,10x2")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train, scheduler=None)

    p = sub.add_parser("evaluate", parents=[common],
                       help="run one simulation and emit metric CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--scheduler", default=None,
                   choices=["random", "mode4", "oracle", "rl", "mixed"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--policy-mode", default="argmax", choices=["argmax", "sample"])
    p.add_argument("--reference", action="store_true",
                   help="propagation-only reference run (no HD, no interference)")
    p.add_argument("--no-trace", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="closed-form orthogonal-assignment bounds")
    p.add_argument("--pools", default="2x10,4x5,5x4,10x2")
    p.add_argument("--vehicles", type=int, default=10)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="merge completed runs into comparison tables")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
