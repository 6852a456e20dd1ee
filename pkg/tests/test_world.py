import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontiernav import world
from frontiernav.world import (FLOOR, OBSTACLE, Action, ActionConfig, GoalAbsent,
                               ImageNavTask, InvalidPose, ObjectNavTask, Pose,
                               SceneParams, SensorConfig, apply_action, cell_of,
                               generate_scene, oracle_detect_goal, raycast_depth,
                               sample_episode, scene_from_json, scene_to_json)

from conftest import make_scene, object_at, open_room


class TestPose:
    def test_heading_normalized(self):
        assert Pose(0, 0, 370.0).heading == 10.0
        assert Pose(0, 0, -30.0).heading == 330.0
        assert Pose(0, 0, 360.0).heading == 0.0

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidPose):
            Pose(float("nan"), 0, 0)
        with pytest.raises(InvalidPose):
            Pose(0, float("inf"), 0)


class TestConfigs:
    def test_sensor_validation(self):
        with pytest.raises(ValueError):
            SensorConfig(num_rays=1)
        with pytest.raises(ValueError):
            SensorConfig(fov=0)
        with pytest.raises(ValueError):
            SensorConfig(max_range=-1)

    def test_turn_step_must_divide_360(self):
        with pytest.raises(ValueError):
            ActionConfig(turn_step=50.0)
        ActionConfig(turn_step=45.0)


class TestApplyAction:
    def test_forward_on_open_floor(self):
        scene = make_scene(open_room())
        pose, collided = apply_action(Pose(1.0, 1.0, 0.0), Action.FORWARD, scene)
        assert not collided
        assert (pose.x, pose.y, pose.heading) == (1.25, 1.0, 0.0)

    def test_turn_left_30(self):
        scene = make_scene(open_room())
        pose, collided = apply_action(Pose(1.0, 1.0, 90.0), Action.TURN_LEFT, scene)
        assert not collided
        assert (pose.x, pose.y, pose.heading) == (1.0, 1.0, 120.0)

    def test_turn_wraps_modulo_360(self):
        scene = make_scene(open_room())
        pose, _ = apply_action(Pose(1.0, 1.0, 350.0), Action.TURN_LEFT, scene)
        assert pose.heading == 20.0

    def test_blocked_forward_is_noop_with_flag(self):
        scene = make_scene(open_room())
        # wall 0.1 m ahead of the east-facing pose
        start = Pose(2.85, 1.5, 0.0)
        assert scene.cells[15, 29] == OBSTACLE
        pose, collided = apply_action(start, Action.FORWARD, scene)
        assert collided
        assert pose == start

    def test_stop_is_noop(self):
        scene = make_scene(open_room())
        start = Pose(1.0, 1.0, 45.0)
        pose, collided = apply_action(start, Action.STOP, scene)
        assert pose == start and not collided

    def test_off_grid_pose_rejected(self):
        scene = make_scene(open_room())
        with pytest.raises(InvalidPose):
            apply_action(Pose(-5.0, 1.0, 0.0), Action.FORWARD, scene)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_never_lands_on_obstacle(self, scene_seed, action_seed):
        scene = generate_scene(scene_seed % 5 + 42, SceneParams())
        rng = random.Random(action_seed)
        free = scene.free_cells()
        col, row = free[rng.randrange(len(free))]
        pose = Pose(*world.cell_center(col, row, scene.resolution),
                    rng.randrange(12) * 30.0)
        actions = [Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT]
        for _ in range(60):
            pose, _ = apply_action(pose, rng.choice(actions), scene)
            c, r = cell_of(pose.x, pose.y, scene.resolution)
            assert scene.cells[r, c] == FLOOR

    @given(st.floats(0.3, 2.5), st.floats(0.3, 2.5), st.integers(0, 11))
    @settings(max_examples=50, deadline=None)
    def test_forward_then_reverse_returns(self, x, y, k):
        scene = make_scene(open_room())
        start = Pose(x, y, k * 30.0)
        fwd, c1 = apply_action(start, Action.FORWARD, scene)
        back = Pose(fwd.x, fwd.y, fwd.heading + 180.0)
        rev, c2 = apply_action(back, Action.FORWARD, scene)
        if not c1 and not c2:
            assert math.hypot(rev.x - start.x, rev.y - start.y) < 1e-9


def _fine_march_range(scene, pose, angle_deg, max_range, step=0.001):
    """Independent raycast oracle: march in 1 mm increments until a sample
    falls inside an obstacle cell."""
    rad = math.radians(angle_deg)
    dx, dy = math.cos(rad), math.sin(rad)
    d = 0.0
    while d <= max_range:
        col, row = cell_of(pose.x + d * dx, pose.y + d * dy, scene.resolution)
        if not scene.in_bounds(col, row) or scene.cells[row, col] == OBSTACLE:
            return d, True
        d += step
    return max_range, False


class TestRaycast:
    def test_head_on_wall_range(self):
        # wall face at x = 2.9, agent at x = 1.9: exactly 1.0 m
        scene = make_scene(open_room())
        pose = Pose(1.9, 1.5, 0.0)
        scan = raycast_depth(scene, pose, SensorConfig(num_rays=3, fov=2.0))
        mid = scan.ranges[1]
        assert scan.hits[1]
        assert mid == pytest.approx(1.0, abs=1e-9)

    def test_clamped_to_max_range_without_hit(self):
        scene = make_scene(open_room(80, 80))
        pose = Pose(0.5, 4.0, 0.0)
        scan = raycast_depth(scene, pose, SensorConfig(num_rays=3, fov=2.0, max_range=5.0))
        assert not scan.hits[1]
        assert scan.ranges[1] == 5.0

    def test_oblique_ray_matches_fine_marching_oracle(self):
        scene = make_scene(open_room())
        pose = Pose(1.35, 1.35, 45.0)
        cfg = SensorConfig(num_rays=5, fov=20.0)
        scan = raycast_depth(scene, pose, cfg)
        for i in range(5):
            expected, hit = _fine_march_range(scene, pose, scan.angles_deg[i], cfg.max_range)
            assert scan.hits[i] == hit
            assert scan.ranges[i] == pytest.approx(expected, abs=2e-3)

    def test_diagonal_is_sqrt2_times_perpendicular(self):
        scene = make_scene(open_room())
        cfg = SensorConfig(num_rays=3, fov=2.0)
        perp = raycast_depth(scene, Pose(1.9, 1.5, 0.0), cfg)
        diag = raycast_depth(scene, Pose(1.9, 1.5, 45.0), cfg)
        # wall plane at x=2.9 in both cases: oblique range is perpendicular / cos(45)
        assert diag.ranges[1] == pytest.approx(perp.ranges[1] * math.sqrt(2.0), abs=1e-9)

    @given(st.floats(0.5, 2.4), st.floats(0.5, 2.4), st.floats(0.0, 360.0))
    @settings(max_examples=30, deadline=None)
    def test_random_rays_match_marching_oracle(self, x, y, heading):
        scene = make_scene(open_room())
        pose = Pose(x, y, heading)
        cfg = SensorConfig(num_rays=7, fov=90.0)
        scan = raycast_depth(scene, pose, cfg)
        for i in range(7):
            expected, _ = _fine_march_range(scene, pose, scan.angles_deg[i], cfg.max_range)
            assert scan.ranges[i] == pytest.approx(expected, abs=2e-3)

    def test_monotone_as_wall_approaches(self):
        ranges = []
        for wall_col in (25, 20, 15):
            cells = open_room()
            cells[:, wall_col] = OBSTACLE
            scene = make_scene(cells)
            scan = raycast_depth(scene, Pose(0.5, 1.5, 0.0), SensorConfig(num_rays=2, fov=1e-6))
            ranges.append(scan.ranges[0])
        assert ranges[0] > ranges[1] > ranges[2]


class TestOracleDetect:
    def test_goal_straight_ahead(self, room_scene):
        pose = Pose(1.0, 1.5, 0.0)  # chair cells at col 28, ~1.85 m away
        hit = oracle_detect_goal(room_scene, pose, ObjectNavTask("chair"))
        assert hit is not None
        assert hit[0] == pytest.approx(2.85)

    def test_goal_behind_wall(self):
        cells = open_room()
        cells[10:20, 14] = OBSTACLE  # wall between agent and chair
        chair = [(28, 14), (28, 15)]
        for c, r in chair:
            cells[r, c] = OBSTACLE
        scene = make_scene(cells, [object_at("chair", chair)])
        assert oracle_detect_goal(scene, Pose(1.0, 1.5, 0.0), ObjectNavTask("chair")) is None

    def test_goal_outside_fov(self, room_scene):
        # goal is 80 degrees off-axis with a 45-degree half fov: every
        # instance cell must fail the angle predicate.
        pose = Pose(1.0, 1.5, 80.0)
        task = ObjectNavTask("chair")
        for inst in room_scene.objects:
            for c, r in inst.cells:
                px, py = world.cell_center(c, r, room_scene.resolution)
                bearing = (math.degrees(math.atan2(py - pose.y, px - pose.x))
                           - pose.heading + 180.0) % 360.0 - 180.0
                assert abs(bearing) > 45.0
        assert oracle_detect_goal(room_scene, pose, task) is None

    def test_beyond_detect_range(self, room_scene):
        pose = Pose(1.0, 1.5, 0.0)
        near = SensorConfig(detect_range=1.0)
        assert oracle_detect_goal(room_scene, pose, ObjectNavTask("chair"), near) is None

    def test_absent_category_raises(self, room_scene):
        with pytest.raises(GoalAbsent):
            oracle_detect_goal(room_scene, Pose(1.0, 1.5, 0.0), ObjectNavTask("piano"))

    def test_imagenav_goal_pose_detection(self, room_scene):
        goal = Pose(2.0, 1.5, 0.0)
        hit = oracle_detect_goal(room_scene, Pose(1.0, 1.5, 0.0), ImageNavTask(goal))
        assert hit == (2.0, 1.5)

    def test_nearest_of_visible_cells(self, room_scene):
        pose = Pose(2.0, 1.45, 0.0)
        hit = oracle_detect_goal(room_scene, pose, ObjectNavTask("chair"))
        cells = sorted(room_scene.objects[0].cells)
        dists = [math.hypot(world.cell_center(c, r, 0.1)[0] - pose.x,
                            world.cell_center(c, r, 0.1)[1] - pose.y)
                 for c, r in cells]
        assert math.hypot(hit[0] - pose.x, hit[1] - pose.y) == pytest.approx(min(dists))


def _flood_fill_floor(cells):
    """Independent 8-connected reachability oracle."""
    floor = {(int(c), int(r)) for r, c in zip(*np.nonzero(cells == FLOOR))}
    start = next(iter(sorted(floor)))
    seen = {start}
    stack = [start]
    while stack:
        c, r = stack.pop()
        for dc in (-1, 0, 1):
            for dr in (-1, 0, 1):
                nxt = (c + dc, r + dr)
                if nxt in floor and nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return seen, floor


class TestGenerateScene:
    def test_deterministic_in_seed(self):
        a = generate_scene(42)
        b = generate_scene(42)
        assert scene_to_json(a) == scene_to_json(b)

    def test_different_seeds_differ(self):
        assert scene_to_json(generate_scene(1)) != scene_to_json(generate_scene(2))

    @pytest.mark.parametrize("seed", [0, 7, 123])
    def test_floor_fully_connected(self, seed):
        scene = generate_scene(seed)
        seen, floor = _flood_fill_floor(scene.cells)
        assert seen == floor

    def test_requested_categories_present(self):
        params = SceneParams(categories=("chair", "plant"))
        scene = generate_scene(5, params)
        assert set(scene.categories()) == {"chair", "plant"}
        for cat in ("chair", "plant"):
            assert sum(1 for o in scene.objects if o.category == cat) >= 1

    def test_objects_occupy_obstacle_cells(self, generated_scene):
        for obj in generated_scene.objects:
            assert obj.cells
            for c, r in obj.cells:
                assert generated_scene.cells[r, c] == OBSTACLE

    def test_object_cells_8_connected(self, generated_scene):
        for obj in generated_scene.objects:
            cells = set(obj.cells)
            start = next(iter(sorted(cells)))
            seen = {start}
            stack = [start]
            while stack:
                c, r = stack.pop()
                for dc in (-1, 0, 1):
                    for dr in (-1, 0, 1):
                        nxt = (c + dc, r + dr)
                        if nxt in cells and nxt not in seen:
                            seen.add(nxt)
                            stack.append(nxt)
            assert seen == cells

    def test_infeasible_params_rejected(self):
        with pytest.raises(ValueError):
            SceneParams(width=10, height=10, room_size_range=(16, 34))


class TestSampleEpisode:
    def test_objectnav_category_present_and_reachable(self, generated_scene):
        ep = sample_episode(generated_scene, 3, "objectnav")
        assert isinstance(ep.task, ObjectNavTask)
        assert ep.task.category in generated_scene.categories()
        c, r = cell_of(ep.start.x, ep.start.y, generated_scene.resolution)
        assert generated_scene.cells[r, c] == FLOOR

    def test_imagenav_goal_on_free_cell(self, generated_scene):
        ep = sample_episode(generated_scene, 3, "imagenav")
        assert isinstance(ep.task, ImageNavTask)
        c, r = cell_of(ep.task.goal_pose.x, ep.task.goal_pose.y, generated_scene.resolution)
        assert generated_scene.cells[r, c] == FLOOR

    @pytest.mark.parametrize("kind", ["objectnav", "imagenav"])
    def test_min_geodesic_honored(self, generated_scene, kind):
        from frontiernav import planning
        for seed in range(5):
            ep = sample_episode(generated_scene, seed, kind, min_geodesic=3.0)
            start_cell = cell_of(ep.start.x, ep.start.y, generated_scene.resolution)
            d = planning.geodesic_goal_distance(generated_scene, start_cell, ep.task)
            assert d >= 3.0

    def test_deterministic(self, generated_scene):
        assert (sample_episode(generated_scene, 9, "objectnav")
                == sample_episode(generated_scene, 9, "objectnav"))

    def test_category_filter(self, generated_scene):
        ep = sample_episode(generated_scene, 3, "objectnav", categories=["plant"])
        assert ep.task.category == "plant"

    def test_unknown_kind_rejected(self, generated_scene):
        with pytest.raises(ValueError):
            sample_episode(generated_scene, 0, "surfnav")


class TestSceneJson:
    def test_roundtrip_preserves_everything(self, generated_scene):
        text = scene_to_json(generated_scene)
        back = scene_from_json(text)
        assert np.array_equal(back.cells, generated_scene.cells)
        assert back.id == generated_scene.id
        assert back.seed == generated_scene.seed
        assert back.resolution == generated_scene.resolution
        assert {o.category for o in back.objects} == {o.category for o in generated_scene.objects}
        assert sorted(frozenset(o.cells) for o in back.objects) == \
            sorted(frozenset(o.cells) for o in generated_scene.objects)

    def test_key_order_is_stable(self, generated_scene):
        doc = json.loads(scene_to_json(generated_scene))
        assert list(doc.keys()) == ["id", "seed", "resolution", "width_cells",
                                    "height_cells", "cells", "objects"]
        assert list(doc["objects"][0].keys()) == ["category", "cells"]

    @given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2 ** 16))
    @settings(max_examples=30, deadline=None)
    def test_rle_roundtrip_random_grids(self, w, h, seed):
        rng = np.random.default_rng(seed)
        cells = rng.integers(0, 2, size=(h, w)).astype(np.uint8)
        encoded = world._rle_encode(cells)
        assert np.array_equal(world._rle_decode(encoded, w, h), cells)
