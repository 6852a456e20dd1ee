"""Frontier-selection policies: prompt-sample construction, built-in
baselines, and the HTTP client slot where a learned policy would sit.

A prompt sample is the structural analog of the model input sequence:
subsampled history frames, an instruction, optional image-goal reference,
and lettered frontier choices backed by representative views.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import string
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import requests

from . import planning, world
from .mapping import Frontier, NoHistory, OccupancyGrid, ViewRecord, select_representative_view
from .world import ImageNavTask, ObjectNavTask, Pose, Scene, SensorConfig, Task


class TooManyChoices(Exception):
    pass


class EndpointError(Exception):
    pass


class InvalidChoice(Exception):
    pass


class PolicyTimeout(Exception):
    pass


@dataclass(frozen=True)
class PromptConfig:
    max_history_frames: int = 20
    letters: str = string.ascii_uppercase

    def __post_init__(self):
        if self.max_history_frames < 1:
            raise ValueError("max_history_frames must be >= 1")


@dataclass(frozen=True)
class Choice:
    letter: str
    frontier_id: int
    view: ViewRecord
    waypoint: tuple[float, float]


@dataclass(frozen=True)
class PromptSample:
    history: tuple[ViewRecord, ...]
    instruction: str
    imagenav_goal: Optional[ViewRecord]
    choices: tuple[Choice, ...]
    answer: Optional[str] = None


@dataclass(frozen=True)
class PolicyDecision:
    letter: str
    latency_ms: float


@dataclass(frozen=True)
class DecisionContext:
    belief: OccupancyGrid
    pose: Pose
    frontiers: tuple[Frontier, ...]
    scene: Optional[Scene] = None
    task: Optional[Task] = None


def subsample_history(history: Sequence[ViewRecord], max_frames: int) -> tuple[ViewRecord, ...]:
    """Uniform temporal subsample keeping the first and latest frames."""
    n = len(history)
    if n <= max_frames:
        return tuple(history)
    idxs = sorted({round(k * (n - 1) / (max_frames - 1)) for k in range(max_frames)})
    return tuple(history[i] for i in idxs)


def instruction_for(task: Task) -> str:
    if isinstance(task, ObjectNavTask):
        return f"Find the {task.category}."
    return "Go to the location shown in the goal image."


def build_prompt_sample(history: Sequence[ViewRecord], frontiers: Sequence[Frontier],
                        task: Task, belief: OccupancyGrid,
                        sensor: SensorConfig = SensorConfig(),
                        cfg: PromptConfig = PromptConfig()) -> PromptSample:
    """Assemble the decision record shown to a policy: lettered frontier
    choices in discovery-id order, each backed by its representative view."""
    if not history:
        raise NoHistory("cannot build a prompt sample without history")
    if not frontiers:
        raise ValueError("frontiers must be non-empty")
    ordered = sorted(frontiers, key=lambda f: f.id)
    if len(ordered) > len(cfg.letters):
        raise TooManyChoices(f"{len(ordered)} frontiers exceed the {len(cfg.letters)}-letter alphabet")
    by_frame = {v.frame_index: v for v in history}
    choices = []
    for i, f in enumerate(ordered):
        frame = select_representative_view(f, list(history), belief, sensor)
        choices.append(Choice(letter=cfg.letters[i], frontier_id=f.id,
                              view=by_frame[frame], waypoint=f.waypoint))
    goal_ref = None
    if isinstance(task, ImageNavTask):
        goal_ref = ViewRecord(frame_index=-1, pose=task.goal_pose)
    return PromptSample(
        history=subsample_history(history, cfg.max_history_frames),
        instruction=instruction_for(task),
        imagenav_goal=goal_ref,
        choices=tuple(choices),
    )


# --- wire protocol -------------------------------------------------------

def _view_to_wire(v: ViewRecord) -> dict:
    return {"frame": v.frame_index, "x": v.pose.x, "y": v.pose.y, "heading": v.pose.heading}


def _view_from_wire(d: dict) -> ViewRecord:
    return ViewRecord(frame_index=int(d["frame"]),
                      pose=Pose(float(d["x"]), float(d["y"]), float(d["heading"])))


def sample_to_wire(sample: PromptSample, include_answer: bool = False) -> dict:
    doc = {
        "version": 1,
        "task": {
            "kind": "imagenav" if sample.imagenav_goal is not None else "objectnav",
            "instruction": sample.instruction,
        },
        "history": [_view_to_wire(v) for v in sample.history],
        "imagenav_goal": _view_to_wire(sample.imagenav_goal) if sample.imagenav_goal else None,
        "choices": [
            {"letter": c.letter, "frontier_id": c.frontier_id,
             "view": _view_to_wire(c.view), "waypoint": [c.waypoint[0], c.waypoint[1]]}
            for c in sample.choices
        ],
    }
    if include_answer and sample.answer is not None:
        doc["answer"] = sample.answer
    return doc


def sample_from_wire(doc: dict) -> PromptSample:
    """Inverse of sample_to_wire; unknown extra fields are ignored."""
    goal = doc.get("imagenav_goal")
    return PromptSample(
        history=tuple(_view_from_wire(v) for v in doc["history"]),
        instruction=doc["task"]["instruction"],
        imagenav_goal=_view_from_wire(goal) if goal else None,
        choices=tuple(
            Choice(letter=c["letter"], frontier_id=int(c["frontier_id"]),
                   view=_view_from_wire(c["view"]),
                   waypoint=(float(c["waypoint"][0]), float(c["waypoint"][1])))
            for c in doc["choices"]
        ),
        answer=doc.get("answer"),
    )


def external_roundtrip(endpoint: str, sample: PromptSample, timeout_ms: float,
                       include_answer: bool = False) -> PolicyDecision:
    """POST the serialized sample and parse the {"letter": ...} reply."""
    payload = sample_to_wire(sample, include_answer=include_answer)
    t0 = time.perf_counter()
    try:
        resp = requests.post(endpoint, json=payload, timeout=timeout_ms / 1000.0)
    except requests.exceptions.Timeout as exc:
        raise PolicyTimeout(f"no reply from {endpoint} within {timeout_ms} ms") from exc
    except requests.exceptions.RequestException as exc:
        raise EndpointError(f"transport error talking to {endpoint}: {exc}") from exc
    latency = (time.perf_counter() - t0) * 1000.0
    if not (200 <= resp.status_code < 300):
        raise EndpointError(f"endpoint returned status {resp.status_code}")
    try:
        letter = resp.json()["letter"]
    except (ValueError, KeyError) as exc:
        raise EndpointError(f"malformed reply from {endpoint}") from exc
    valid = {c.letter for c in sample.choices}
    if letter not in valid:
        raise InvalidChoice(f"reply letter {letter!r} not among choices {sorted(valid)}")
    return PolicyDecision(letter=letter, latency_ms=latency)


# --- policies ------------------------------------------------------------

class Policy:
    name = "policy"

    def decide(self, sample: PromptSample, context: DecisionContext) -> PolicyDecision:
        raise NotImplementedError


class NearestFrontierPolicy(Policy):
    """Pick the choice with the shortest belief-space path to its waypoint."""

    name = "nearest"

    def decide(self, sample, context):
        t0 = time.perf_counter()
        agent_cell = context.belief.cell_of(context.pose.x, context.pose.y)
        dist = planning.distance_field_from(context.belief, agent_cell, unknown_is="free")
        best = None
        best_d = math.inf
        for c in sample.choices:
            col, row = context.belief.cell_of(*c.waypoint)
            d = float(dist[row, col])
            if d < best_d:
                best_d = d
                best = c
        if best is None:
            best = sample.choices[0]
        return PolicyDecision(letter=best.letter,
                              latency_ms=(time.perf_counter() - t0) * 1000.0)


class RandomPolicy(Policy):
    """Seeded uniform choice; a pure function of (seed, sample)."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def decide(self, sample, context):
        t0 = time.perf_counter()
        payload = json.dumps(sample_to_wire(sample), sort_keys=True)
        digest = hashlib.sha256(f"{self.seed}|{payload}".encode()).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        letter = sample.choices[rng.randrange(len(sample.choices))].letter
        return PolicyDecision(letter=letter,
                              latency_ms=(time.perf_counter() - t0) * 1000.0)


class GroundTruthOraclePolicy(Policy):
    """Always selects the frontier on the true shortest path to the goal;
    keys on frontier id, not letter order."""

    name = "oracle"

    def decide(self, sample, context):
        if context.scene is None or context.task is None:
            raise ValueError("oracle policy needs scene and task in the context")
        t0 = time.perf_counter()
        agent_cell = world.cell_of(context.pose.x, context.pose.y, context.scene.resolution)
        fid = planning.label_correct_frontier(context.scene, agent_cell,
                                              context.frontiers, context.task,
                                              context.belief)
        for c in sample.choices:
            if c.frontier_id == fid:
                return PolicyDecision(letter=c.letter,
                                      latency_ms=(time.perf_counter() - t0) * 1000.0)
        raise InvalidChoice(f"labeled frontier {fid} missing from choices")


class GreedyOraclePolicy(Policy):
    """Data-generation behavior: nearest frontier until the goal is within
    the switch distance, then the goal-leading frontier."""

    name = "greedy-oracle"

    def __init__(self, cfg: planning.OracleConfig = planning.OracleConfig()):
        self.cfg = cfg

    def decide(self, sample, context):
        if context.scene is None or context.task is None:
            raise ValueError("greedy oracle needs scene and task in the context")
        t0 = time.perf_counter()
        fid = planning.greedy_oracle_step(context.scene, context.belief, context.pose,
                                          context.frontiers, context.task, self.cfg)
        for c in sample.choices:
            if c.frontier_id == fid:
                return PolicyDecision(letter=c.letter,
                                      latency_ms=(time.perf_counter() - t0) * 1000.0)
        raise InvalidChoice(f"greedy frontier {fid} missing from choices")


class ExternalPolicy(Policy):
    """Wire client for an external policy server."""

    name = "external"

    def __init__(self, endpoint: str, timeout_ms: float = 5000.0, debug_labels: bool = False):
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms
        self.debug_labels = debug_labels

    def decide(self, sample, context):
        return external_roundtrip(self.endpoint, sample, self.timeout_ms,
                                  include_answer=self.debug_labels)


def make_policy(spec: str, seed: int = 0, timeout_ms: float = 5000.0,
                debug_labels: bool = False) -> Policy:
    """Build a policy from a CLI spec: nearest | random[:SEED] | oracle |
    greedy-oracle | external:URL."""
    if spec == "nearest":
        return NearestFrontierPolicy()
    if spec == "oracle":
        return GroundTruthOraclePolicy()
    if spec == "greedy-oracle":
        return GreedyOraclePolicy()
    if spec == "random":
        return RandomPolicy(seed)
    if spec.startswith("random:"):
        return RandomPolicy(int(spec.split(":", 1)[1]))
    if spec.startswith("external:"):
        return ExternalPolicy(spec.split(":", 1)[1], timeout_ms=timeout_ms,
                              debug_labels=debug_labels)
    raise ValueError(f"unknown policy spec {spec!r}")
