"""
core/simulator.py
Replanning harness: the robot walks its planned path and, at scheduled
cells, takes a new scan. Each scan is registered onto the previous one,
its obstacles are accumulated into the map in the original grid frame,
and D* Lite repairs the path from the robot's current cell.

Schedule entries are (trigger, scan) or ScheduledScan; `trigger` is a
vertex index along the path the robot is following at that moment,
clipped to the path's end.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from config.settings import PipelineConfig, log
from core.errors import ConfigError, NoPath, StageError
from core.geometry import (
    PointCloud, RigidTransform, apply_transform, compose, transform_error, voxel_downsample,
)
from core.mapping import OccupancyGrid, filter_heights, project_into
from core.pipeline import (
    PipelineRun, PreparedScan, RunReport, build_field, execute, prepare_scan, register_pair, stage,
)
from core.planner import GridPath, extract_path, update_cells


@dataclass(frozen=True)
class ScheduledScan:
    trigger: int
    cloud: PointCloud
    pose: Optional[RigidTransform] = None    # known scan→map transform; skips registration
    truth: Optional[RigidTransform] = None   # for error reporting only


ScheduleEntry = Union[ScheduledScan, tuple[int, PointCloud]]


class _ScanChain:
    """Scans seen so far with their map transforms; prepared lazily."""

    def __init__(self, config: PipelineConfig, run: PipelineRun, scans: Sequence[PointCloud]):
        self.config = config
        self.clouds = list(scans)
        self.transforms = list(run.transforms)
        self._prepared: dict[int, PreparedScan] = dict(enumerate(run.prepared))

    def prepared(self, i: int, report: RunReport, index: int) -> PreparedScan:
        if i not in self._prepared:
            with stage(report, "normals", index):
                self._prepared[i] = prepare_scan(self.config, self.clouds[i])
        return self._prepared[i]

    def add(self, cloud: PointCloud, pose: Optional[RigidTransform], report: RunReport,
            index: int) -> RigidTransform:
        self.clouds.append(cloud)
        new = len(self.clouds) - 1
        if pose is None:
            pair = register_pair(self.config, self.prepared(new, report, index),
                                 self.prepared(new - 1, report, index), report, index)
            pose = compose(self.transforms[-1], pair)
        self.transforms.append(pose)
        return pose


def _accumulate(config: PipelineConfig, run: PipelineRun, grid: OccupancyGrid,
                cloud: PointCloud, pose: RigidTransform, report: RunReport,
                index: int) -> OccupancyGrid:
    with stage(report, "merge", index):
        moved = voxel_downsample(apply_transform(PointCloud(cloud.points), pose), config.voxel_edge)
    with stage(report, "filter", index):
        obstacles = filter_heights(moved, run.products.plane,
                                   (config.band_low, config.band_high), config.ceiling)
    with stage(report, "project", index):
        seen = project_into(obstacles, grid)
    return OccupancyGrid(grid.origin, grid.resolution, grid.occupied | seen.occupied, grid.basis)


def _entry(item: ScheduleEntry) -> ScheduledScan:
    if isinstance(item, ScheduledScan):
        return item
    trigger, cloud = item
    return ScheduledScan(int(trigger), cloud)


def simulate_replanning(config: PipelineConfig, scans: Sequence[PointCloud],
                        schedule: Sequence[ScheduleEntry],
                        truth: Optional[Sequence[RigidTransform]] = None
                        ) -> list[tuple[GridPath, RunReport]]:
    """Initial plan followed by one repaired plan per schedule entry."""
    run = execute(config, scans, truth)
    if run.path is None or run.state is None:
        raise ConfigError("replanning needs a goal (goal or goal_point)")

    results: list[tuple[GridPath, RunReport]] = [(run.path, run.report)]
    chain = _ScanChain(config, run, scans)
    state, path, grid = run.state, run.path, run.products.grid

    for k, item in enumerate(schedule, start=1):
        entry = _entry(item)
        report = RunReport(scans=1, points=len(entry.cloud))
        robot = path.vertices[min(max(entry.trigger, 0), len(path.vertices) - 1)]

        pose = chain.add(entry.cloud, entry.pose, report, k)
        report.transforms = [pose]
        if entry.truth is not None:
            rot, trans = transform_error(pose, entry.truth)
            report.rotation_errors_deg.append(rot)
            report.translation_errors_m.append(trans)

        grid = _accumulate(config, run, grid, entry.cloud, pose, report, k)
        with stage(report, "inflate", k):
            field, radius = build_field(config, grid)
        changes = state.field.diff(field)

        before = state.expansions
        try:
            with stage(report, "plan", k):
                update_cells(state, state.field, changes, start=robot)
                path = extract_path(state)
        except StageError as e:
            if isinstance(e.cause, NoPath):
                log.error(f"[Simulator] no path after scan #{k} from {robot}")
            raise

        report.grid_shape = grid.shape
        report.occupied_cells = int(np.count_nonzero(grid.occupied))
        report.embodiment_radius = radius
        report.start, report.goal = robot, state.goal
        report.changed_cells = len(changes)
        report.expansions = state.expansions - before
        report.record_path(path)
        log.info(f"[Simulator] scan #{k} at {robot}: {len(changes)} changed cells, "
                 f"path cost {path.cost:.4f} over {len(path.vertices) - 1} moves")
        results.append((path, report))

    return results
