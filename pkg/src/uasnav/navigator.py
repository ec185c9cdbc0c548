"""Phase 2 closed loop: fly the learned policy over the raster world.

The craft moves at constant speed along the commanded cardinal direction
and periodically renders a (perturbed) observation. Arrival at the expected
next landmark is a perception event: the observation is matched against
that landmark's descriptor image, and the landmark counts as reached at the
shortest perceived center distance once the arrival gate has passed. The
pose is never snapped to the lattice, so perception latency and jitter show
up as honest drift; at each arrival a four-way ranking pass over the
departure cell's neighbors re-confirms which landmark was reached.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InvalidStateError, PolicyInconsistencyError
from .grid import Action, GridSpec, LandmarkId, landmark_position, neighbors
from .imagery import PerturbationSpec, Pose, landmark_descriptor_image, render_observation
from .matching import (
    DescriptorSet,
    MatchParams,
    arrival_check,
    build_descriptor_set,
    match_images,
    rank_neighbors,
)
from .policy import PolicyTable
from .raster import GeoRegistration, RasterImage
from . import svgplot


class MissionOutcome(Enum):
    REACHED_GOAL = "reached_goal"
    TIMEOUT = "timeout"
    MATCH_FAILURE = "match_failure"


@dataclass
class MissionConfig:
    start: LandmarkId
    goal: LandmarkId
    policy: PolicyTable
    control_step_m: float = 1.0
    observation_period: int = 2  # ticks per match attempt
    max_ticks: int = 4000
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    match_params: MatchParams = field(default_factory=MatchParams)
    leg_slack_m: float = 10.0  # extra travel allowed past a landmark before giving up

    def __post_init__(self):
        if self.start == self.goal:
            raise InvalidStateError("mission start equals goal")
        if self.control_step_m <= 0:
            raise ValueError("control step must be positive")
        if self.observation_period < 1:
            raise ValueError("observation period must be >= 1 tick")


@dataclass
class TickRecord:
    tick: int
    x: float
    y: float
    heading: float
    action: Action
    attempted: bool = False
    n_matches: int = 0
    inliers: int = 0
    center_distance_m: float | None = None
    arrival: LandmarkId | None = None
    confirmed: bool | None = None


@dataclass(frozen=True)
class ArrivalEvent:
    tick: int
    landmark: LandmarkId
    inliers: int
    center_distance_m: float
    confirmed: bool


@dataclass
class MissionLog:
    start: LandmarkId
    goal: LandmarkId
    records: list[TickRecord]
    arrivals: list[ArrivalEvent]
    outcome: MissionOutcome
    distance_flown_m: float
    nearest_miss_m: float | None = None

    @property
    def ticks(self) -> int:
        return len(self.records)


class LandmarkLibrary:
    """Lazy cache of per-landmark descriptor sets cut from the world raster."""

    def __init__(self, world: RasterImage, reg: GeoRegistration, grid: GridSpec, params: MatchParams):
        self.world = world
        self.reg = reg
        self.grid = grid
        self.params = params
        self._cache: dict[LandmarkId, DescriptorSet] = {}

    def get(self, lid: LandmarkId) -> DescriptorSet:
        if lid not in self._cache:
            crop = landmark_descriptor_image(self.world, self.reg, self.grid, lid)
            self._cache[lid] = build_descriptor_set(crop, self.params)
        return self._cache[lid]


def expected_landmark(grid: GridSpec, current: LandmarkId, action: Action) -> LandmarkId:
    """The 4-neighbor in the commanded direction; commanding into a wall is
    a policy-validation failure, not a navigation outcome."""
    nbr = neighbors(grid, current)[action]
    if nbr is None:
        raise PolicyInconsistencyError(
            f"policy commands {action.token} off the grid at ({current.col},{current.row})"
        )
    return nbr


_ACTION_DIRECTION = {
    Action.FORWARD: np.array([0.0, 1.0]),
    Action.BACKWARD: np.array([0.0, -1.0]),
    Action.LEFT: np.array([-1.0, 0.0]),
    Action.RIGHT: np.array([1.0, 0.0]),
}


def run_mission(
    world: RasterImage,
    reg: GeoRegistration,
    grid: GridSpec,
    cfg: MissionConfig,
    library: LandmarkLibrary | None = None,
) -> MissionLog:
    """Fly from start to goal under the policy; deterministic given seeds.

    Each tick advances the pose by ``control_step_m`` along the commanded
    cardinal direction. Every ``observation_period`` ticks an observation is
    rendered and matched against the expected landmark. Arrival is declared
    at the shortest perceived center distance: checks must first pass the
    arrival gate (model + inliers + distance threshold), and the landmark
    counts as reached on the next solid match whose distance stops
    shrinking. The policy is then consulted at the reached landmark; the
    next leg starts from the true, drifted pose. Legs that overrun their
    travel budget end the mission: MATCH_FAILURE if the craft actually
    passed near the landmark (recognition failed), TIMEOUT otherwise;
    exceeding ``max_ticks`` is always TIMEOUT.
    """
    grid.check(cfg.start)
    grid.check(cfg.goal)
    diameter_m = (grid.cols - 1) * grid.spacing_x + (grid.rows - 1) * grid.spacing_y
    if cfg.max_ticks * cfg.control_step_m <= diameter_m:
        raise ValueError("max_ticks too small to cross the grid")
    if library is None:
        library = LandmarkLibrary(world, reg, grid, cfg.match_params)

    rng = np.random.default_rng(cfg.perturbation.rng_seed)
    pose = landmark_position(grid, cfg.start).astype(np.float64)
    cell = cfg.start
    records: list[TickRecord] = []
    arrivals: list[ArrivalEvent] = []
    tick = 0
    attempt = 0
    outcome: MissionOutcome | None = None
    nearest_miss: float | None = None
    near_pass_m = min(grid.spacing_x, grid.spacing_y) / 2.0

    while outcome is None:
        if cell == cfg.goal:
            outcome = MissionOutcome.REACHED_GOAL
            break
        try:
            action = cfg.policy.action_at(cell)
        except KeyError:
            raise PolicyInconsistencyError(f"policy undefined at ({cell.col},{cell.row})") from None
        target = expected_landmark(grid, cell, action)
        target_pos = landmark_position(grid, target)
        direction = _ACTION_DIRECTION[action]
        leg_budget = (
            float(np.linalg.norm(target_pos - pose))
            + 2.0 * cfg.match_params.distance_threshold_m
            + cfg.leg_slack_m
        )
        travelled = 0.0
        min_true = math.inf
        best_cd: float | None = None  # smallest gate-passing center distance this leg
        arrived = False

        while not arrived:
            if tick >= cfg.max_ticks:
                outcome = MissionOutcome.TIMEOUT
                break
            pose = pose + cfg.control_step_m * direction
            tick += 1
            travelled += cfg.control_step_m
            min_true = min(min_true, float(np.linalg.norm(pose - target_pos)))
            rec = TickRecord(tick=tick, x=float(pose[0]), y=float(pose[1]), heading=0.0, action=action)

            if tick % cfg.observation_period == 0:
                attempt += 1
                obs = render_observation(
                    world, reg, Pose(float(pose[0]), float(pose[1])), cfg.perturbation, rng=rng
                )
                obs_set = build_descriptor_set(obs, cfg.match_params)
                attempt_params = replace(
                    cfg.match_params, rng_seed=cfg.match_params.rng_seed + attempt
                )
                res = match_images(obs_set, library.get(target), attempt_params, reg.gsd, target=target)
                rec.attempted = True
                rec.n_matches = res.n_matches
                rec.inliers = res.inliers
                rec.center_distance_m = res.center_distance_m
                # Arrival = shortest perceived center distance: once a check has
                # passed the arrival gate, the first solid match whose distance
                # stops shrinking marks the closest approach. A distance already
                # below one sampling interval cannot meaningfully improve, so it
                # counts as the closest approach outright.
                passes = arrival_check(
                    res, cfg.match_params.distance_threshold_m, cfg.match_params.min_inliers
                )
                sample_floor = min(
                    cfg.control_step_m * cfg.observation_period,
                    cfg.match_params.distance_threshold_m,
                )
                rising = (
                    best_cd is not None
                    and res.affine is not None
                    and res.inliers >= cfg.match_params.min_inliers
                    and res.center_distance_m >= best_cd
                )
                if (passes and res.center_distance_m <= sample_floor) or rising:
                    arrived = True
                    cand = [
                        (nid, library.get(nid))
                        for nid in neighbors(grid, cell).values()
                        if nid is not None
                    ]
                    ranked = rank_neighbors(obs_set, cand, cfg.match_params, reg.gsd)
                    confirmed = ranked[0].target == target
                    arrivals.append(
                        ArrivalEvent(tick, target, res.inliers, res.center_distance_m, confirmed)
                    )
                    rec.arrival = target
                    rec.confirmed = confirmed
                    cell = target
                elif passes:
                    best_cd = res.center_distance_m if best_cd is None else min(best_cd, res.center_distance_m)
            records.append(rec)

            if not arrived and outcome is None and travelled >= leg_budget:
                if min_true <= near_pass_m:
                    outcome = MissionOutcome.MATCH_FAILURE
                    nearest_miss = min_true
                else:
                    outcome = MissionOutcome.TIMEOUT
                break

    return MissionLog(
        start=cfg.start,
        goal=cfg.goal,
        records=records,
        arrivals=arrivals,
        outcome=outcome,
        distance_flown_m=tick * cfg.control_step_m,
        nearest_miss_m=nearest_miss,
    )


MISSION_CSV_HEADER = (
    "tick,x_m,y_m,heading_rad,action,attempted,matches,inliers,"
    "center_distance_m,arrival_col,arrival_row,confirmed"
)


def write_mission_csv(log: MissionLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MISSION_CSV_HEADER.split(","))
        for r in log.records:
            writer.writerow([
                r.tick,
                f"{r.x:.6f}",
                f"{r.y:.6f}",
                f"{r.heading:.6f}",
                r.action.token,
                int(r.attempted),
                r.n_matches if r.attempted else "",
                r.inliers if r.attempted else "",
                f"{r.center_distance_m:.6f}" if r.center_distance_m is not None else "",
                r.arrival.col if r.arrival else "",
                r.arrival.row if r.arrival else "",
                "" if r.confirmed is None else int(r.confirmed),
            ])


def read_mission_poses(path) -> np.ndarray:
    """(tick, x, y) rows back from a mission CSV; used by round-trip checks."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [(int(r["tick"]), float(r["x_m"]), float(r["y_m"])) for r in reader]
    return np.array(rows)


def export_trajectory(
    log: MissionLog,
    csv_path,
    svg_path=None,
    world: RasterImage | None = None,
    reg: GeoRegistration | None = None,
    grid: GridSpec | None = None,
    downsample: int = 4,
) -> None:
    """Write the per-tick CSV and, when the world context is supplied, an
    SVG overlay of the flight on a downsampled world raster with the
    landmark lattice and arrival events marked."""
    write_mission_csv(log, csv_path)
    if svg_path is None:
        return
    if world is None or reg is None or grid is None:
        raise ValueError("SVG export needs world, registration, and grid")

    small = world.pixels[::downsample, ::downsample]
    scale = 1.0 / downsample

    def to_svg(x_m: float, y_m: float) -> tuple[float, float]:
        p = reg.world_to_pixel(np.array([x_m, y_m]))
        return float(p[0]) * scale, float(p[1]) * scale

    body = [svgplot.image_panel(small, 0, 0)]
    for lid in grid.all_landmarks():
        pos = landmark_position(grid, lid)
        x, y = to_svg(pos[0], pos[1])
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="none" stroke="#ffcf40" stroke-width="1"/>')
    pts = " ".join(f"{to_svg(r.x, r.y)[0]:.2f},{to_svg(r.x, r.y)[1]:.2f}" for r in log.records)
    if pts:
        body.append(f'<polyline points="{pts}" fill="none" stroke="#00d0ff" stroke-width="1.5"/>')
    for ev in log.arrivals:
        pos = landmark_position(grid, ev.landmark)
        x, y = to_svg(pos[0], pos[1])
        color = "#30e030" if ev.landmark == log.goal else "#ff4040"
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="5" fill="none" stroke="{color}" stroke-width="2"/>')
    sx, sy = to_svg(*landmark_position(grid, log.start))
    body.append(f'<text x="{sx + 7:.2f}" y="{sy - 7:.2f}" fill="#00d0ff">start</text>')
    gx, gy = to_svg(*landmark_position(grid, log.goal))
    body.append(f'<text x="{gx + 7:.2f}" y="{gy - 7:.2f}" fill="#30e030">goal ({log.outcome.value})</text>')

    h, w = small.shape[:2]
    with open(svg_path, "w") as fh:
        fh.write(svgplot.svg_document(w, h, body))
