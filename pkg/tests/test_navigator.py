import numpy as np
import pytest

from uasnav.errors import InvalidStateError, PolicyInconsistencyError
from uasnav.grid import Action, LandmarkId, landmark_position, manhattan
from uasnav.imagery import PerturbationSpec
from uasnav.matching import MatchParams
from uasnav.navigator import (
    MissionConfig,
    MissionOutcome,
    expected_landmark,
    export_trajectory,
    read_mission_poses,
    run_mission,
    write_mission_csv,
)
from uasnav.policy import PolicyTable


class TestExpectedLandmark:
    def test_lattice_arithmetic(self, grid):
        assert expected_landmark(grid, LandmarkId(2, 2), Action.RIGHT) == LandmarkId(3, 2)
        assert expected_landmark(grid, LandmarkId(5, 4), Action.FORWARD) == LandmarkId(5, 5)

    def test_wall_command_is_policy_inconsistency(self, grid):
        with pytest.raises(PolicyInconsistencyError):
            expected_landmark(grid, LandmarkId(0, 0), Action.LEFT)


class TestMissionConfig:
    def test_start_equals_goal_rejected(self, optimal_policy, goal):
        with pytest.raises(InvalidStateError):
            MissionConfig(start=goal, goal=goal, policy=optimal_policy)

    def test_bad_kinematics_rejected(self, optimal_policy, goal):
        with pytest.raises(ValueError):
            MissionConfig(start=LandmarkId(0, 0), goal=goal, policy=optimal_policy, control_step_m=0.0)
        with pytest.raises(ValueError):
            MissionConfig(start=LandmarkId(0, 0), goal=goal, policy=optimal_policy, observation_period=0)


class TestMission:
    def test_adjacent_start_single_leg(self, world_and_reg, grid, optimal_policy, goal, library):
        world, reg = world_and_reg
        cfg = MissionConfig(start=LandmarkId(5, 4), goal=goal, policy=optimal_policy)
        log = run_mission(world, reg, grid, cfg, library=library)
        assert log.outcome == MissionOutcome.REACHED_GOAL
        assert len(log.arrivals) == 1
        # one leg of one row spacing, up to one sampling interval of latency
        sampling = cfg.observation_period * cfg.control_step_m
        assert abs(log.distance_flown_m - grid.spacing_y) <= 2 * sampling

    def test_arrival_count_equals_manhattan(self, world_and_reg, grid, optimal_policy, goal, library):
        world, reg = world_and_reg
        start = LandmarkId(2, 3)
        cfg = MissionConfig(start=start, goal=goal, policy=optimal_policy)
        log = run_mission(world, reg, grid, cfg, library=library)
        assert log.outcome == MissionOutcome.REACHED_GOAL
        assert len(log.arrivals) == manhattan(start, goal)
        assert all(ev.confirmed for ev in log.arrivals)
        assert log.arrivals[-1].landmark == goal

    def test_distance_flown_bound(self, world_and_reg, grid, optimal_policy, goal, library):
        world, reg = world_and_reg
        start = LandmarkId(3, 5)
        cfg = MissionConfig(start=start, goal=goal, policy=optimal_policy)
        log = run_mission(world, reg, grid, cfg, library=library)
        commanded = (
            abs(start.col - goal.col) * grid.spacing_x + abs(start.row - goal.row) * grid.spacing_y
        )
        assert log.distance_flown_m <= 1.1 * commanded

    def test_arrival_poses_near_landmarks(self, world_and_reg, grid, optimal_policy, goal, library):
        world, reg = world_and_reg
        cfg = MissionConfig(start=LandmarkId(4, 3), goal=goal, policy=optimal_policy)
        log = run_mission(world, reg, grid, cfg, library=library)
        assert log.outcome == MissionOutcome.REACHED_GOAL
        by_tick = {r.tick: r for r in log.records}
        bound = cfg.match_params.distance_threshold_m + cfg.control_step_m
        for ev in log.arrivals:
            rec = by_tick[ev.tick]
            pos = landmark_position(grid, ev.landmark)
            assert np.hypot(rec.x - pos[0], rec.y - pos[1]) <= bound

    def test_mission_is_deterministic(self, world_and_reg, grid, optimal_policy, goal, library, tmp_path):
        world, reg = world_and_reg
        perturb = PerturbationSpec(
            gain=1.1, bias=-8.0, noise_sigma=3.0,
            rotation_jitter=0.05, translation_jitter=2.0, rng_seed=31,
        )
        cfg = MissionConfig(start=LandmarkId(5, 3), goal=goal, policy=optimal_policy, perturbation=perturb)
        log1 = run_mission(world, reg, grid, cfg, library=library)
        log2 = run_mission(world, reg, grid, cfg, library=library)
        p1, p2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        write_mission_csv(log1, p1)
        write_mission_csv(log2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_cyclic_policy_times_out(self, world_and_reg, grid, goal, library):
        world, reg = world_and_reg
        cyclic = {}
        for lid in grid.all_landmarks():
            if lid == goal:
                continue
            cyclic[lid] = Action.RIGHT if lid.col < grid.cols - 1 else Action.LEFT
        bad = PolicyTable(best_action=cyclic, goal=goal, cols=grid.cols, rows=grid.rows)
        cfg = MissionConfig(start=LandmarkId(0, 0), goal=goal, policy=bad, max_ticks=900)
        log = run_mission(world, reg, grid, cfg, library=library)
        assert log.outcome == MissionOutcome.TIMEOUT
        assert log.ticks == 900

    def test_unrecognizable_landmark_is_match_failure(self, world_and_reg, grid, optimal_policy, goal, library):
        world, reg = world_and_reg
        # an impossible inlier requirement keeps the gate shut; the craft
        # passes the landmark and the leg budget expires
        params = MatchParams(min_inliers=100_000)
        cfg = MissionConfig(
            start=LandmarkId(5, 4), goal=goal, policy=optimal_policy, match_params=params
        )
        log = run_mission(world, reg, grid, cfg, library=library)
        assert log.outcome == MissionOutcome.MATCH_FAILURE
        assert log.nearest_miss_m is not None
        assert log.nearest_miss_m <= min(grid.spacing_x, grid.spacing_y) / 2.0

    def test_policy_wall_command_raises(self, world_and_reg, grid, goal, library):
        world, reg = world_and_reg
        suicidal = {
            lid: Action.LEFT
            for lid in grid.all_landmarks()
            if lid != goal
        }
        bad = PolicyTable(best_action=suicidal, goal=goal, cols=grid.cols, rows=grid.rows)
        cfg = MissionConfig(start=LandmarkId(0, 5), goal=goal, policy=bad)
        with pytest.raises(PolicyInconsistencyError):
            run_mission(world, reg, grid, cfg, library=library)


@pytest.fixture(scope="module")
def mission_log(world_and_reg, grid, optimal_policy, goal, library):
    world, reg = world_and_reg
    cfg = MissionConfig(start=LandmarkId(5, 7), goal=goal, policy=optimal_policy)
    return run_mission(world, reg, grid, cfg, library=library)


class TestExport:
    def test_csv_row_count_equals_ticks(self, mission_log, tmp_path):
        path = tmp_path / "mission.csv"
        write_mission_csv(mission_log, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + mission_log.ticks

    def test_csv_pose_round_trip(self, mission_log, tmp_path):
        path = tmp_path / "mission.csv"
        write_mission_csv(mission_log, path)
        rows = read_mission_poses(path)
        assert len(rows) == mission_log.ticks
        for (tick, x, y), rec in zip(rows, mission_log.records):
            assert tick == rec.tick
            assert abs(x - rec.x) <= 1e-3
            assert abs(y - rec.y) <= 1e-3

    def test_svg_overlay(self, mission_log, world_and_reg, grid, tmp_path):
        world, reg = world_and_reg
        csv_path = tmp_path / "mission.csv"
        svg_path = tmp_path / "mission.svg"
        export_trajectory(mission_log, csv_path, svg_path, world=world, reg=reg, grid=grid)
        text = svg_path.read_text()
        assert text.startswith("<svg")
        assert "data:image/png;base64," in text
        assert "polyline" in text
        assert "goal (reached_goal)" in text

    def test_svg_needs_world_context(self, mission_log, tmp_path):
        with pytest.raises(ValueError):
            export_trajectory(mission_log, tmp_path / "m.csv", tmp_path / "m.svg")
