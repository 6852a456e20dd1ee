"""Supervised dataset factory: greedy-oracle rollouts labeled with the
correct frontier, auxiliary spatial-reasoning samples, and deterministic
mixture-controlled JSONL export.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
import os
import random
import re
import string
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from . import harness, planning, world
from .harness import DecisionRecord, RuntimeConfig, derive_seed
from .mapping import ViewRecord
from .policy import (GreedyOraclePolicy, PromptSample, _view_from_wire, _view_to_wire)
from .world import EpisodeSpec, Pose, SamplingFailed, Scene, sample_episode

QUESTION_TEMPLATE = "Which part of the environment is located at ({x:.1f},{y:.1f})?"
_QUESTION_RE = re.compile(r"\((-?\d+\.\d),(-?\d+\.\d)\)")

KIND_ORDER = ("objectnav", "ovon", "imagenav", "aux_spatial")

# Paper-scale mixture is 26k/26k/40k/30k; scaled variants keep this ratio.
DEFAULT_MIXTURE_RATIO = {"objectnav": 26, "ovon": 26, "imagenav": 40, "aux_spatial": 30}


class SkippedTrajectory(Exception):
    pass


@dataclass(frozen=True)
class Candidate:
    letter: str
    view: ViewRecord


@dataclass(frozen=True)
class AuxSample:
    history: tuple[ViewRecord, ...]
    query_xy: tuple[float, float]  # robot-local frame at the final history frame
    candidates: tuple[Candidate, ...]
    answer: str


@dataclass(frozen=True)
class TrainingSample:
    sample_id: str
    task_kind: str  # objectnav | ovon | imagenav | aux_spatial
    prompt: object  # PromptSample or AuxSample
    answer: str


@dataclass(frozen=True)
class Trajectory:
    episode_id: str
    scene_id: str
    views: tuple[ViewRecord, ...]


@dataclass(frozen=True)
class AuxParams:
    candidates_per_sample: int = 4
    match_tolerance: float = 0.3
    distractor_separation: float = 1.0
    samples_per_trajectory: int = 2
    history_frames: int = 20


@dataclass(frozen=True)
class MixtureConfig:
    counts: dict = field(default_factory=lambda: dict(DEFAULT_MIXTURE_RATIO))
    seed: int = 0

    def __post_init__(self):
        for kind, count in self.counts.items():
            if count < 0:
                raise ValueError(f"negative count for {kind}")


@dataclass(frozen=True)
class DatagenConfig:
    seen_categories: tuple[str, ...] = ("bed", "chair", "plant")
    ovon_categories: tuple[str, ...] = ("sofa", "table", "toilet")
    min_geodesic: float = 3.0
    aux: AuxParams = AuxParams()
    runtime: RuntimeConfig = RuntimeConfig()


def relative_coords(current: Pose, target: tuple[float, float]) -> tuple[float, float]:
    """Target point in the robot's local frame: +x along heading, +y 90
    degrees counterclockwise from heading."""
    dx = target[0] - current.x
    dy = target[1] - current.y
    rad = math.radians(current.heading)
    c, s = math.cos(rad), math.sin(rad)
    return dx * c + dy * s, -dx * s + dy * c


def inverse_relative_coords(current: Pose, local: tuple[float, float]) -> tuple[float, float]:
    rad = math.radians(current.heading)
    c, s = math.cos(rad), math.sin(rad)
    return (current.x + local[0] * c - local[1] * s,
            current.y + local[0] * s + local[1] * c)


def rollout_and_record(scene: Scene, episode: EpisodeSpec, episode_id: str,
                       task_kind: str = "objectnav",
                       cfg: RuntimeConfig = RuntimeConfig(),
                       state_recorder=None):
    """Run the greedy exploration oracle and record one training sample per
    decision step; the answer is always the correct (shortest-path)
    frontier letter, which can differ from the frontier actually chased.

    Returns (trajectory, samples, episode_result)."""
    samples: list[TrainingSample] = []
    views: list[ViewRecord] = []

    def record(d: DecisionRecord):
        agent_cell = world.cell_of(d.pose.x, d.pose.y, scene.resolution)
        fid = planning.label_correct_frontier(scene, agent_cell, d.frontiers,
                                              episode.task, d.belief)
        letter = next(c.letter for c in d.sample.choices if c.frontier_id == fid)
        prompt = dataclasses.replace(d.sample, answer=letter)
        samples.append(TrainingSample(
            sample_id=f"{task_kind}_{episode_id}_{d.step:04d}",
            task_kind=task_kind, prompt=prompt, answer=letter))
        if state_recorder is not None:
            state_recorder(d)

    result = harness.run_episode(scene, episode, GreedyOraclePolicy(cfg.oracle), cfg,
                                 recorder=record, view_log=views, episode_id=episode_id)
    trajectory = Trajectory(episode_id=episode_id, scene_id=scene.id, views=tuple(views))
    return trajectory, samples, result


def generate_aux_samples(trajectory: Trajectory, params: AuxParams = AuxParams(),
                         seed: int = 0) -> list[TrainingSample]:
    """Spatial-reasoning samples: given recent history, which candidate
    view was captured at the queried local (X,Y)?

    Candidates are visited positions at least distractor_separation apart,
    so exactly one lies within match_tolerance of the query. Raises
    SkippedTrajectory when the trajectory has too few separated positions."""
    views = trajectory.views
    if len(views) < 2:
        raise SkippedTrajectory(f"{trajectory.episode_id}: trajectory too short")
    anchor = views[-1]
    history = views[-params.history_frames:]

    pool: list[ViewRecord] = []
    seen_pos: set[tuple[float, float]] = set()
    for v in views:
        key = (round(v.pose.x, 6), round(v.pose.y, 6))
        if key not in seen_pos:
            seen_pos.add(key)
            pool.append(v)

    k = params.candidates_per_sample
    samples: list[TrainingSample] = []
    for s_idx in range(params.samples_per_trajectory):
        rng = random.Random(derive_seed(seed, trajectory.episode_id, s_idx))
        order = list(range(len(pool)))
        rng.shuffle(order)
        chosen: list[ViewRecord] = []
        for idx in order:
            v = pool[idx]
            if all(math.hypot(v.pose.x - c.pose.x, v.pose.y - c.pose.y)
                   >= params.distractor_separation for c in chosen):
                chosen.append(v)
            if len(chosen) == k:
                break
        if len(chosen) < k:
            continue
        true_idx = rng.randrange(k)
        true_view = chosen[true_idx]
        qx, qy = relative_coords(anchor.pose, (true_view.pose.x, true_view.pose.y))
        query = (float(f"{qx:.1f}") + 0.0, float(f"{qy:.1f}") + 0.0)
        candidates = tuple(Candidate(letter=string.ascii_uppercase[i], view=chosen[i])
                           for i in range(k))
        answer = candidates[true_idx].letter
        aux = AuxSample(history=tuple(history), query_xy=query,
                        candidates=candidates, answer=answer)
        samples.append(TrainingSample(
            sample_id=f"aux_{trajectory.episode_id}_{s_idx:03d}",
            task_kind="aux_spatial", prompt=aux, answer=answer))
    if not samples:
        raise SkippedTrajectory(
            f"{trajectory.episode_id}: fewer than {k} positions separated by "
            f"{params.distractor_separation} m")
    return samples


# --- JSONL serialization ---------------------------------------------------

def sample_to_json(sample: TrainingSample) -> str:
    if sample.task_kind == "aux_spatial":
        aux: AuxSample = sample.prompt
        doc = {
            "sample_id": sample.sample_id,
            "task_kind": sample.task_kind,
            "history": [_view_to_wire(v) for v in aux.history],
            "question": QUESTION_TEMPLATE.format(x=aux.query_xy[0], y=aux.query_xy[1]),
            "candidates": [{"letter": c.letter, "view": _view_to_wire(c.view)}
                           for c in aux.candidates],
            "answer": aux.answer,
        }
    else:
        prompt: PromptSample = sample.prompt
        doc = {
            "sample_id": sample.sample_id,
            "task_kind": sample.task_kind,
            "instruction": prompt.instruction,
            "history": [_view_to_wire(v) for v in prompt.history],
            "imagenav_goal": (_view_to_wire(prompt.imagenav_goal)
                              if prompt.imagenav_goal else None),
            "choices": [
                {"letter": c.letter, "frontier_id": c.frontier_id,
                 "view": _view_to_wire(c.view), "waypoint": [c.waypoint[0], c.waypoint[1]]}
                for c in prompt.choices
            ],
            "answer": sample.answer,
        }
    return json.dumps(doc, separators=(",", ":"))


def sample_from_json(line: str) -> TrainingSample:
    doc = json.loads(line)
    kind = doc["task_kind"]
    if kind == "aux_spatial":
        m = _QUESTION_RE.search(doc["question"])
        if m is None:
            raise ValueError(f"malformed aux question: {doc['question']!r}")
        query = (float(m.group(1)) + 0.0, float(m.group(2)) + 0.0)
        aux = AuxSample(
            history=tuple(_view_from_wire(v) for v in doc["history"]),
            query_xy=query,
            candidates=tuple(Candidate(letter=c["letter"], view=_view_from_wire(c["view"]))
                             for c in doc["candidates"]),
            answer=doc["answer"],
        )
        return TrainingSample(sample_id=doc["sample_id"], task_kind=kind,
                              prompt=aux, answer=doc["answer"])
    from .policy import Choice
    goal = doc.get("imagenav_goal")
    prompt = PromptSample(
        history=tuple(_view_from_wire(v) for v in doc["history"]),
        instruction=doc["instruction"],
        imagenav_goal=_view_from_wire(goal) if goal else None,
        choices=tuple(
            Choice(letter=c["letter"], frontier_id=int(c["frontier_id"]),
                   view=_view_from_wire(c["view"]),
                   waypoint=(float(c["waypoint"][0]), float(c["waypoint"][1])))
            for c in doc["choices"]),
        answer=doc["answer"],
    )
    return TrainingSample(sample_id=doc["sample_id"], task_kind=kind,
                          prompt=prompt, answer=doc["answer"])


# --- dataset assembly ------------------------------------------------------

def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_dataset(streams: dict[str, Iterable[TrainingSample]],
                  mixture: MixtureConfig, out_dir: str) -> dict:
    """Write one JSONL file per task kind plus a seeded-shuffle combined
    file and a manifest; byte-identical given identical inputs and seed."""
    os.makedirs(out_dir, exist_ok=True)
    manifest: dict = {
        "seeds": {"mixture": mixture.seed},
        "config_hash": hashlib.sha256(json.dumps(
            {"counts": mixture.counts, "seed": mixture.seed},
            sort_keys=True).encode()).hexdigest(),
        "files": {},
    }
    all_lines: list[str] = []
    for kind in KIND_ORDER:
        if kind not in mixture.counts:
            continue
        requested = mixture.counts[kind]
        taken = list(itertools.islice(iter(streams.get(kind, ())), requested))
        lines = [sample_to_json(s) for s in taken]
        path = os.path.join(out_dir, f"{kind}.jsonl")
        with open(path, "w") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        manifest["files"][kind] = {
            "path": os.path.basename(path),
            "requested": requested,
            "written": len(lines),
            "sha256": _sha256_file(path),
        }
        all_lines.extend(lines)

    rng = random.Random(mixture.seed)
    rng.shuffle(all_lines)
    combined_path = os.path.join(out_dir, "combined.jsonl")
    with open(combined_path, "w") as fh:
        for line in all_lines:
            fh.write(line)
            fh.write("\n")
    manifest["combined"] = {
        "path": "combined.jsonl",
        "written": len(all_lines),
        "sha256": _sha256_file(combined_path),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _nav_sample_stream(scenes: Sequence[Scene], kind: str,
                       categories: Optional[tuple[str, ...]], seed: int,
                       gen: DatagenConfig) -> Iterator[TrainingSample]:
    episode_kind = "imagenav" if kind == "imagenav" else "objectnav"
    for i in range(100000):
        scene = scenes[i % len(scenes)]
        ep_seed = derive_seed(seed, kind, i)
        try:
            episode = sample_episode(scene, ep_seed, episode_kind,
                                     gen.min_geodesic, categories=categories)
        except SamplingFailed:
            continue
        episode_id = f"{scene.id}-{kind}-{i:05d}"
        try:
            _, samples, _ = rollout_and_record(scene, episode, episode_id,
                                               task_kind=kind, cfg=gen.runtime)
        except planning.Unreachable:
            continue
        yield from samples


def _aux_sample_stream(scenes: Sequence[Scene], seed: int,
                       gen: DatagenConfig) -> Iterator[TrainingSample]:
    for i in range(100000):
        scene = scenes[i % len(scenes)]
        ep_seed = derive_seed(seed, "aux", i)
        try:
            episode = sample_episode(scene, ep_seed, "objectnav",
                                     gen.min_geodesic, categories=gen.seen_categories)
        except SamplingFailed:
            continue
        episode_id = f"{scene.id}-aux-{i:05d}"
        try:
            trajectory, _, _ = rollout_and_record(scene, episode, episode_id,
                                                  task_kind="objectnav", cfg=gen.runtime)
        except planning.Unreachable:
            continue
        try:
            yield from generate_aux_samples(trajectory, gen.aux,
                                            seed=derive_seed(seed, "aux-sample", i))
        except SkippedTrajectory:
            continue


def generate_dataset(scenes: Sequence[Scene], mixture: MixtureConfig,
                     out_dir: str, gen: DatagenConfig = DatagenConfig()) -> dict:
    """Generate and write the full mixture from the given scenes."""
    if not scenes:
        raise ValueError("need at least one scene")
    streams = {
        "objectnav": _nav_sample_stream(scenes, "objectnav", gen.seen_categories,
                                        mixture.seed, gen),
        "ovon": _nav_sample_stream(scenes, "ovon", gen.ovon_categories,
                                   mixture.seed, gen),
        "imagenav": _nav_sample_stream(scenes, "imagenav", None, mixture.seed, gen),
        "aux_spatial": _aux_sample_stream(scenes, mixture.seed, gen),
    }
    return write_dataset(streams, mixture, out_dir)
