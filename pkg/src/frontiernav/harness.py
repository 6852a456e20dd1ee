"""Episode runtime: the closed loop of mapping, frontier extraction,
policy decisions, local control, and detection-driven stopping; plus
SR/SPL metrics and the deterministic benchmark runner.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from . import world
from .mapping import (FrontierTracker, OccupancyGrid, ViewRecord, frontier_cell_mask,
                      integrate_scan, write_snapshot)
from .planning import (ControllerStuck, OracleConfig, Unreachable, geodesic_goal_distance,
                       goal_distance_field, label_correct_frontier, local_controller_step)
from .policy import (DecisionContext, EndpointError, InvalidChoice, NearestFrontierPolicy,
                     Policy, PolicyTimeout, PromptConfig, build_prompt_sample, make_policy)
from .world import (Action, ActionConfig, EpisodeSpec, ImageNavTask, ObjectNavTask, Pose,
                    Scene, SensorConfig, Task, apply_action, cell_of, oracle_detect_goal,
                    raycast_depth, sample_episode)


class EmptyBenchmark(Exception):
    pass


@dataclass(frozen=True)
class RuntimeConfig:
    sensor: SensorConfig = SensorConfig()
    action: ActionConfig = ActionConfig()
    oracle: OracleConfig = OracleConfig()
    prompt: PromptConfig = PromptConfig()
    replan_trigger: str = "arrival"  # "arrival" | "step" | "n"
    replan_every_n: int = 1
    min_frontier_cells: int = 3
    inflate_radius: float = 0.18
    arrival_radius: float = 0.25
    stuck_limit: int = 3
    geodesic_success: bool = False
    detection_enabled: bool = True
    debug_label_samples: bool = False
    # Translation-free look-around spins: the detector cone only covers the
    # heading, so sweep it at the start and at each reached waypoint.
    survey_spins: bool = True

    def __post_init__(self):
        if self.replan_trigger not in ("arrival", "step", "n"):
            raise ValueError(f"unknown replan trigger {self.replan_trigger!r}")
        if self.replan_every_n < 1:
            raise ValueError("replan_every_n must be >= 1")


@dataclass(frozen=True)
class StepLog:
    step: int
    action: str
    collided: bool
    letter: Optional[str] = None
    fallback: Optional[str] = None


@dataclass(frozen=True)
class EpisodeResult:
    success: int
    agent_path_length: float
    shortest_path_length: float
    steps: int
    termination: str  # stopped_success | stopped_far | timeout | stuck | error
    per_step_log: tuple[StepLog, ...] = ()

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "agent_path_length": self.agent_path_length,
            "shortest_path_length": self.shortest_path_length,
            "steps": self.steps,
            "termination": self.termination,
            "per_step_log": [dataclasses.asdict(s) for s in self.per_step_log],
        }


@dataclass(frozen=True)
class DecisionRecord:
    """Passed to run_episode recorders at each decision. The belief is the
    live grid; copy it if the record outlives the step."""
    step: int
    sample: object
    letter: str
    frontiers: tuple
    belief: OccupancyGrid
    pose: Pose


def success_distance(scene: Scene, pose: Pose, task: Task,
                     geodesic: bool = False) -> float:
    """Distance used by the success check: Euclidean to the nearest
    goal-instance cell boundary (ObjectNav) or to the goal pose (ImageNav);
    geodesic mode uses the true-map distance field instead."""
    if geodesic:
        col, row = cell_of(pose.x, pose.y, scene.resolution)
        return float(goal_distance_field(scene, task)[row, col])
    if isinstance(task, ImageNavTask):
        return math.hypot(pose.x - task.goal_pose.x, pose.y - task.goal_pose.y)
    res = scene.resolution
    best = math.inf
    for inst in scene.objects:
        if inst.category != task.category:
            continue
        for col, row in inst.cells:
            dx = max(col * res - pose.x, 0.0, pose.x - (col + 1) * res)
            dy = max(row * res - pose.y, 0.0, pose.y - (row + 1) * res)
            best = min(best, math.hypot(dx, dy))
    return best


def run_episode(scene: Scene, episode: EpisodeSpec, policy: Policy,
                cfg: RuntimeConfig = RuntimeConfig(),
                recorder: Optional[Callable[[DecisionRecord], None]] = None,
                view_log: Optional[list] = None,
                snapshot_dir: Optional[str] = None,
                episode_id: Optional[str] = None) -> EpisodeResult:
    """Run one closed-loop episode and score it.

    Each step integrates a depth scan, refreshes frontiers, consults the
    policy on the replan trigger, and executes one discrete action from the
    local controller. A detected goal bypasses the frontier policy; Stop is
    emitted within the success radius of the detected point."""
    if episode.scene_id != scene.id:
        raise ValueError(f"episode for scene {episode.scene_id!r} run on {scene.id!r}")
    start_cell = cell_of(episode.start.x, episode.start.y, scene.resolution)
    if not scene.is_free_cell(*start_cell):
        raise ValueError("episode start is not on a free cell")

    task = episode.task
    shortest = geodesic_goal_distance(scene, start_cell, task)
    belief = OccupancyGrid.for_scene(scene)
    tracker = FrontierTracker(cfg.min_frontier_cells)
    pose = episode.start
    history: list[ViewRecord] = []
    log: list[StepLog] = []
    path_length = 0.0
    detected: Optional[tuple[float, float]] = None
    target_id: Optional[int] = None
    target_waypoint: Optional[tuple[float, float]] = None
    prev_ids: Optional[frozenset] = None
    consecutive_stuck = 0
    spin_total = max(1, round(360.0 / cfg.action.turn_step))
    spin_left = spin_total if cfg.survey_spins else 0
    spun_at: set[tuple[float, float]] = set()
    eid = episode_id or f"{scene.id}-ep"

    success = 0
    termination = "timeout"
    steps_taken = episode.max_steps

    for step in range(episode.max_steps):
        scan = raycast_depth(scene, pose, cfg.sensor)
        integrate_scan(belief, scan)
        view = ViewRecord(frame_index=step, pose=pose)
        history.append(view)
        if view_log is not None:
            view_log.append(view)
        frontiers = tracker.update(belief)
        if snapshot_dir is not None:
            write_snapshot(belief, frontiers, os.path.join(snapshot_dir, f"{eid}_{step:04}.ppm"))

        if cfg.detection_enabled:
            det = oracle_detect_goal(scene, pose, task, cfg.sensor)
            if det is not None:
                detected = det

        letter: Optional[str] = None
        fallback: Optional[str] = None
        action: Optional[Action] = None
        drive_target: Optional[tuple[float, float]] = None

        if detected is not None:
            if math.hypot(pose.x - detected[0], pose.y - detected[1]) <= episode.success_radius:
                steps_taken = step + 1
                d = success_distance(scene, pose, task, cfg.geodesic_success)
                success = 1 if d <= episode.success_radius else 0
                termination = "stopped_success" if success else "stopped_far"
                log.append(StepLog(step, Action.STOP.value, False))
                break
            drive_target = detected
        elif spin_left > 0:
            spin_left -= 1
            action = Action.TURN_LEFT
            fallback = "survey_spin"
        elif not frontiers:
            if frontier_cell_mask(belief.cells).any():
                # Only sub-threshold frontier fragments remain; look around
                # until a selectable frontier forms.
                action = Action.TURN_LEFT
                fallback = "frontier_recovery"
            else:
                termination = "stuck"
                steps_taken = step
                break
        else:
            ids = frozenset(f.id for f in frontiers)
            arrived = (target_waypoint is not None
                       and math.hypot(pose.x - target_waypoint[0],
                                      pose.y - target_waypoint[1]) <= cfg.arrival_radius)
            if arrived and cfg.survey_spins and target_waypoint not in spun_at:
                spun_at.add(target_waypoint)
                spin_left = spin_total - 1
                action = Action.TURN_LEFT
                fallback = "survey_spin"
                prev_ids = ids
            else:
                if cfg.replan_trigger == "step":
                    need = True
                elif cfg.replan_trigger == "n":
                    need = target_id is None or step % cfg.replan_every_n == 0
                else:
                    need = (target_id is None or ids != prev_ids
                            or target_id not in ids or arrived)
                prev_ids = ids
                if need:
                    sample = build_prompt_sample(history, frontiers, task, belief,
                                                 cfg.sensor, cfg.prompt)
                    if cfg.debug_label_samples:
                        agent_cell = cell_of(pose.x, pose.y, scene.resolution)
                        fid = label_correct_frontier(scene, agent_cell, frontiers, task, belief)
                        answer = next(c.letter for c in sample.choices if c.frontier_id == fid)
                        sample = replace(sample, answer=answer)
                    ctx = DecisionContext(belief=belief, pose=pose, frontiers=tuple(frontiers),
                                          scene=scene, task=task)
                    try:
                        letter = policy.decide(sample, ctx).letter
                    except (PolicyTimeout, EndpointError, InvalidChoice) as exc:
                        fallback = type(exc).__name__
                        letter = NearestFrontierPolicy().decide(sample, ctx).letter
                    choice = next(c for c in sample.choices if c.letter == letter)
                    target_id = choice.frontier_id
                    target_waypoint = choice.waypoint
                    if recorder is not None:
                        recorder(DecisionRecord(step=step, sample=sample, letter=letter,
                                                frontiers=tuple(frontiers), belief=belief,
                                                pose=pose))
                drive_target = target_waypoint

        if action is None:
            try:
                action = local_controller_step(belief, pose, drive_target,
                                               cfg.action, cfg.inflate_radius)
                consecutive_stuck = 0
            except ControllerStuck:
                if detected is None:
                    # Fall back to the next-best reachable frontier.
                    for alt in sorted(frontiers, key=lambda f: f.id):
                        if alt.id == target_id:
                            continue
                        try:
                            action = local_controller_step(belief, pose, alt.waypoint,
                                                           cfg.action, cfg.inflate_radius)
                            target_id = alt.id
                            target_waypoint = alt.waypoint
                            fallback = "controller_retarget"
                            consecutive_stuck = 0
                            break
                        except ControllerStuck:
                            continue
                if action is None:
                    consecutive_stuck += 1
                    fallback = "controller_stuck"
                    if consecutive_stuck >= cfg.stuck_limit:
                        termination = "stuck"
                        steps_taken = step
                        break
                    action = Action.TURN_RIGHT  # recovery rotation

        new_pose, collided = apply_action(pose, action, scene, cfg.action)
        path_length += math.hypot(new_pose.x - pose.x, new_pose.y - pose.y)
        pose = new_pose
        log.append(StepLog(step, action.value, collided, letter, fallback))

    return EpisodeResult(success=success, agent_path_length=path_length,
                         shortest_path_length=shortest, steps=steps_taken,
                         termination=termination, per_step_log=tuple(log))


# --- metrics -------------------------------------------------------------

def compute_sr(results: Sequence[EpisodeResult]) -> float:
    if not results:
        raise EmptyBenchmark("no episode results")
    return sum(r.success for r in results) / len(results)


def compute_spl(results: Sequence[EpisodeResult]) -> float:
    """Success weighted by path length: mean of S * L / max(P, L)."""
    if not results:
        raise EmptyBenchmark("no episode results")
    total = 0.0
    for r in results:
        denom = max(r.agent_path_length, r.shortest_path_length)
        if denom <= 0.0:
            total += float(r.success)
        else:
            total += r.success * r.shortest_path_length / denom
    return total / len(results)


# --- benchmark runner ----------------------------------------------------

@dataclass(frozen=True)
class PolicyReport:
    name: str
    sr: float
    spl: float
    episode_count: int
    mean_steps: float
    episodes: tuple[EpisodeResult, ...]


@dataclass(frozen=True)
class BenchmarkReport:
    config_hash: str
    seeds: tuple[int, ...]
    policies: tuple[PolicyReport, ...]

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seeds": list(self.seeds),
            "policies": [
                {"name": p.name, "sr": p.sr, "spl": p.spl,
                 "episode_count": p.episode_count, "mean_steps": p.mean_steps,
                 "episodes": [e.to_dict() for e in p.episodes]}
                for p in self.policies
            ],
        }


def report_to_json(report: BenchmarkReport) -> str:
    return json.dumps(report.to_dict(), indent=2)


def render_report_table(report: BenchmarkReport) -> str:
    lines = [f"{'policy':<16} {'SR':>8} {'SPL':>8} {'episodes':>9} {'mean steps':>11}"]
    for p in report.policies:
        lines.append(f"{p.name:<16} {p.sr:>8.3f} {p.spl:>8.3f} "
                     f"{p.episode_count:>9d} {p.mean_steps:>11.1f}")
    return "\n".join(lines) + "\n"


def derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)


def _bench_episode(scene: Scene, ep_seed: int, policy_spec: str, cfg: RuntimeConfig,
                   kind: str, min_geodesic: float, seed: int, timeout_ms: float,
                   debug_labels: bool) -> EpisodeResult:
    try:
        episode = sample_episode(scene, ep_seed, kind, min_geodesic)
        policy = make_policy(policy_spec, seed=seed, timeout_ms=timeout_ms,
                             debug_labels=debug_labels)
        return run_episode(scene, episode, policy, cfg)
    except Exception:
        return EpisodeResult(success=0, agent_path_length=0.0, shortest_path_length=0.0,
                             steps=0, termination="error")


def run_benchmark(scenes: Sequence[Scene], episodes_per_scene: int,
                  policy_specs: Sequence[str],
                  cfg: RuntimeConfig = RuntimeConfig(), seed: int = 0,
                  kind: str = "objectnav", min_geodesic: float = 3.0,
                  timeout_ms: float = 5000.0, debug_labels: bool = False,
                  workers: int = 1) -> BenchmarkReport:
    """Run every (episode x policy) pair and aggregate SR/SPL per policy.

    Episode seeds derive deterministically from (seed, scene id, index);
    per-episode failures become termination="error" entries instead of
    aborting the run."""
    if not scenes or episodes_per_scene < 1 or not policy_specs:
        raise EmptyBenchmark("benchmark needs scenes, episodes, and policies")
    jobs = []
    ep_seeds = []
    for scene in scenes:
        for j in range(episodes_per_scene):
            ep_seed = derive_seed(seed, scene.id, j)
            ep_seeds.append(ep_seed)
            for spec in policy_specs:
                jobs.append((scene, ep_seed, spec))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                _bench_episode,
                [j[0] for j in jobs], [j[1] for j in jobs], [j[2] for j in jobs],
                [cfg] * len(jobs), [kind] * len(jobs), [min_geodesic] * len(jobs),
                [seed] * len(jobs), [timeout_ms] * len(jobs),
                [debug_labels] * len(jobs)))
    else:
        results = [_bench_episode(scene, ep_seed, spec, cfg, kind, min_geodesic,
                                  seed, timeout_ms, debug_labels)
                   for scene, ep_seed, spec in jobs]

    by_policy: dict[str, list[EpisodeResult]] = {spec: [] for spec in policy_specs}
    for (scene, ep_seed, spec), result in zip(jobs, results):
        by_policy[spec].append(result)

    config_doc = {
        "scenes": [s.id for s in scenes],
        "episodes_per_scene": episodes_per_scene,
        "policies": list(policy_specs),
        "seed": seed,
        "kind": kind,
        "min_geodesic": min_geodesic,
        "runtime": dataclasses.asdict(cfg),
    }
    config_hash = hashlib.sha256(
        json.dumps(config_doc, sort_keys=True).encode()).hexdigest()

    policies = []
    for spec in policy_specs:
        eps = by_policy[spec]
        policies.append(PolicyReport(
            name=spec, sr=compute_sr(eps), spl=compute_spl(eps),
            episode_count=len(eps),
            mean_steps=sum(e.steps for e in eps) / len(eps),
            episodes=tuple(eps)))
    return BenchmarkReport(config_hash=config_hash, seeds=tuple(ep_seeds),
                           policies=tuple(policies))
