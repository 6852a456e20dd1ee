"""Command-line interface: scene generation, dataset generation, single
episode runs, and benchmarks.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import datagen, harness, world
from .harness import RuntimeConfig, render_report_table, report_to_json, run_benchmark
from .policy import make_policy
from .world import SceneParams, generate_scene, load_scene, sample_episode, save_scene


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _parse_mixture(text: str) -> dict[str, int]:
    alias = {"aux": "aux_spatial"}
    counts: dict[str, int] = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        key = key.strip()
        key = alias.get(key, key)
        if key not in datagen.KIND_ORDER or not value.strip().isdigit():
            raise UsageError(f"bad mixture entry {part!r}")
        counts[key] = int(value)
    return counts


def _parse_replan(text: str) -> tuple[str, int]:
    if text == "arrival":
        return "arrival", 1
    if text == "step":
        return "step", 1
    if text.startswith("n:") and text[2:].isdigit():
        return "n", int(text.split(":", 1)[1])
    raise UsageError(f"bad replan trigger {text!r} (use arrival | step | n:K)")


def _load_scenes(directory: str) -> list:
    paths = sorted(p for p in os.listdir(directory) if p.endswith(".json"))
    scenes = [load_scene(os.path.join(directory, p)) for p in paths]
    if not scenes:
        raise FileNotFoundError(f"no scene .json files in {directory}")
    return scenes


def _cmd_gen_scenes(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    params = SceneParams(
        width=args.width, height=args.height,
        categories=tuple(args.categories.split(",")) if args.categories else SceneParams().categories,
    )
    for i in range(args.count):
        scene = generate_scene(args.seed + i, params)
        save_scene(scene, os.path.join(args.out, f"{scene.id}.json"))
        print(f"wrote {scene.id}.json")
    return 0


def _cmd_gen_data(args) -> int:
    scenes = _load_scenes(args.scenes)
    mixture = datagen.MixtureConfig(counts=_parse_mixture(args.mixture), seed=args.seed)
    manifest = datagen.generate_dataset(scenes, mixture, args.out)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def _cmd_run(args) -> int:
    trigger, every_n = _parse_replan(args.replan)
    try:
        policy = make_policy(args.policy, seed=args.episode_seed, timeout_ms=args.timeout_ms)
    except ValueError as exc:
        raise UsageError(str(exc))
    scene = load_scene(args.scene)
    cfg = RuntimeConfig(replan_trigger=trigger, replan_every_n=every_n)
    episode = sample_episode(scene, args.episode_seed, args.task)
    if args.snapshot_dir:
        os.makedirs(args.snapshot_dir, exist_ok=True)
    result = harness.run_episode(scene, episode, policy, cfg,
                                 snapshot_dir=args.snapshot_dir,
                                 episode_id=f"{scene.id}-{args.episode_seed}")
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def _cmd_bench(args) -> int:
    policies = [p for chunk in args.policies for p in chunk.split(",") if p]
    for spec in policies:
        try:
            make_policy(spec)
        except ValueError as exc:
            raise UsageError(str(exc))
    scenes = _load_scenes(args.scenes)
    report = run_benchmark(scenes, args.episodes_per_scene, policies,
                           RuntimeConfig(debug_label_samples=args.debug_labels),
                           seed=args.seed, timeout_ms=args.timeout_ms,
                           debug_labels=args.debug_labels, workers=args.workers)
    with open(args.out, "w") as fh:
        fh.write(report_to_json(report))
        fh.write("\n")
    sys.stdout.write(render_report_table(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frontiernav",
                     description="Frontier-based 2D navigation stack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate procedural scenes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=SceneParams().width)
    p.add_argument("--height", type=int, default=SceneParams().height)
    p.add_argument("--categories", default=None, help="comma-separated category names")
    p.set_defaults(func=_cmd_gen_scenes)

    p = sub.add_parser("gen-data", help="generate a training dataset")
    p.add_argument("--scenes", required=True, help="directory of scene .json files")
    p.add_argument("--mixture", required=True,
                   help="e.g. objectnav=260,ovon=260,imagenav=400,aux=300")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("run", help="run a single episode")
    p.add_argument("--scene", required=True)
    p.add_argument("--episode-seed", type=int, required=True)
    p.add_argument("--policy", required=True,
                   help="nearest | random[:SEED] | oracle | greedy-oracle | external:URL")
    p.add_argument("--task", choices=("objectnav", "imagenav"), default="objectnav")
    p.add_argument("--replan", default="arrival", help="arrival | step | n:K")
    p.add_argument("--snapshot-dir", default=None)
    p.add_argument("--timeout-ms", type=float, default=5000.0)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", help="run a benchmark over scenes and policies")
    p.add_argument("--scenes", required=True)
    p.add_argument("--episodes-per-scene", type=int, required=True)
    p.add_argument("--policies", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout-ms", type=float, default=5000.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--debug-labels", action="store_true",
                   help="expose oracle labels to external policies (wire testing)")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # runtime failure
        sys.stderr.write(f"runtime failure: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
