"""``ocgvf`` command line: run experiments, plot results, inspect slots and GVFs, run numeric checks."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ocgvf.baselines import get_variant
from ocgvf.config import ExperimentConfig, parse_text
from ocgvf.errors import ConfigurationError, DependencyError, TrainingAborted, UsageError
from ocgvf.presets import PRESETS, expand_preset

log = logging.getLogger("ocgvf")

EXIT_ABORTED = 1
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        key, _, val = pair.partition("=")
        out.update(parse_text(f"{key.strip()}: {val}", source="--set"))
    return out


def _planned_runs(args) -> list[tuple[ExperimentConfig, int, Path]]:
    overrides = _overrides(args.set)
    out = Path(args.out)
    runs = []
    if args.preset:
        if args.config or args.env or args.algo:
            raise ConfigurationError("--preset cannot be combined with --config, --env or --algo")
        for run in expand_preset(args.preset, seeds=args.seed, **overrides):
            for seed in run.config.seeds:
                runs.append((run.config, seed, out / args.preset / run.setting / run.config.algo / f"seed_{seed}"))
        return runs
    values = parse_text(Path(args.config).read_text(), args.config) if args.config else {}
    if args.env:
        values["env"] = args.env
    if args.algo:
        values["algo"] = args.algo
    if args.seed:
        values["seeds"] = list(args.seed)
    values.update(overrides)
    config = ExperimentConfig.from_dict(values, source=args.config or "<command line>")
    get_variant(config.algo)
    for seed in config.seeds:
        runs.append((config, seed, out / config.env / config.algo / f"seed_{seed}"))
    return runs


def cmd_run(args) -> int:
    from ocgvf.trainer import Trainer

    runs = _planned_runs(args)
    for config, seed, out_dir in runs:
        get_variant(config.algo)
        print(f"{out_dir}: env={config.env} algo={config.algo} seed={seed} config={config.hash()}")
    if args.dry_run:
        return 0
    aborted = 0
    for config, seed, out_dir in runs:
        try:
            latest = out_dir / "checkpoints" / "latest.pt"
            if args.resume and latest.exists():
                trainer = Trainer.from_checkpoint(latest, out_dir)
            else:
                trainer = Trainer(config, seed, out_dir)
            rows = trainer.run()
            final = next((r["eval_return_mean"] for r in reversed(rows) if r["eval_return_mean"] is not None), None)
            print(f"{out_dir}: finished {trainer.episode} episodes, last eval return {final}")
        except TrainingAborted as exc:
            aborted += 1
            print(f"{out_dir}: ABORTED: {exc} (dump: {exc.dump_path})", file=sys.stderr)
    return EXIT_ABORTED if aborted else 0


def cmd_plot(args) -> int:
    from ocgvf.viz import plot_curves

    curves = plot_curves(args.runs, args.out)
    for variant, c in sorted(curves.items()):
        print(f"{variant}: {c.num_seeds} seeds, final mean {c.mean[-1]:.3f} +/- {c.se[-1]:.3f}")
    print(f"wrote {Path(args.out).with_suffix('.png')} and {Path(args.out).with_suffix('.csv')}")
    return 0


def _observations(config: ExperimentConfig, count: int, seed: int) -> np.ndarray:
    from ocgvf.trainer import build_env

    env = build_env(config, seed)
    rng = np.random.default_rng(seed)
    frames = []
    obs = env.reset()
    while len(frames) < count:
        frames.append(obs)
        for _ in range(int(rng.integers(1, 8))):
            obs, _, done = env.step(int(rng.integers(env.num_actions)))
            if done:
                obs = env.reset()
                break
    return np.stack(frames)


def cmd_slots(args) -> int:
    from ocgvf.trainer import restore_agent
    from ocgvf.viz import plot_slots

    config, agent, _ = restore_agent(args.checkpoint)
    panels = plot_slots(agent, _observations(config, args.count, args.seed), args.out)
    print(f"wrote {args.out} ({panels.shape[0]} rows x {panels.shape[1]} panels)")
    return 0


def cmd_heatmap(args) -> int:
    from ocgvf.trainer import build_env, restore_agent
    from ocgvf.viz import gvf_heatmap, neighborhood_contrast

    config, agent, _ = restore_agent(args.checkpoint)
    env = build_env(config, args.seed)
    heat = gvf_heatmap(agent, env, out=args.out)
    np.save(Path(args.out).with_suffix(".npy"), heat.values)
    for k in range(heat.values.shape[0]):
        label = heat.slot_labels[k] if heat.slot_labels else "-"
        print(f"GVF {k} ({label}): min {np.nanmin(heat.values[k]):.4f} max {np.nanmax(heat.values[k]):.4f}")
    if heat.object_slots:
        for obj in heat.objects:
            k = heat.object_slots[obj.color]
            print(f"{obj.color} at {obj.position}: slot {k}, neighbourhood contrast "
                  f"{neighborhood_contrast(heat.values[k], obj.position):+.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_check(args) -> int:
    from ocgvf import checks

    funcs = {
        "mstde": checks.check_mstde_oracle,
        "ddqn": checks.check_ddqn_oracle,
        "meta_gradient": checks.check_meta_gradient,
        "tabular": checks.check_tabular_convergence,
    }
    if args.only:
        reports = [funcs[name]() for name in args.only]
        report = {"passed": all(r["passed"] for r in reports), "checks": reports}
    else:
        report = checks.run_all_checks()
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text if args.verbose else "\n".join(
        f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}" for r in report["checks"]))
    return 0 if report["passed"] else 1


def cmd_presets(args) -> int:
    for name, settings in PRESETS.items():
        for setting, env_overrides, variants in settings:
            print(f"{name:10s} {setting:20s} {env_overrides['env']:28s} {', '.join(variants)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ocgvf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one or more (config, seed) runs")
    r.add_argument("--config", help="key: value config file")
    r.add_argument("--env")
    r.add_argument("--algo", help="agent variant id")
    r.add_argument("--seed", type=int, action="append", help="repeatable")
    r.add_argument("--out", default="runs")
    r.add_argument("--preset", choices=sorted(PRESETS))
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    r.add_argument("--resume", action="store_true", help="continue from checkpoints/latest.pt when present")
    r.add_argument("--dry-run", action="store_true", help="print the planned runs and exit")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="learning curves with standard-error bands")
    pl.add_argument("runs", nargs="+", help="run directories (searched recursively)")
    pl.add_argument("--out", required=True, help="output path; .png and .csv are written")
    pl.set_defaults(func=cmd_plot)

    s = sub.add_parser("slots", help="slot decomposition panels from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_slots)

    h = sub.add_parser("heatmap", help="GVF values over agent positions (Collect Objects)")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--seed", type=int, default=0, help="environment seed for object placement")
    h.set_defaults(func=cmd_heatmap)

    c = sub.add_parser("check", help="numerical verification suite")
    c.add_argument("--only", nargs="+", choices=["mstde", "ddqn", "meta_gradient", "tabular"])
    c.add_argument("--out", help="write the JSON report here")
    c.set_defaults(func=cmd_check)

    ps = sub.add_parser("presets", help="list experiment presets")
    ps.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
