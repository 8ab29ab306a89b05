"""
core/pipeline.py
End-to-end run: register → map → inflate → plan.

  normals      per-scan downsampling (coarse and ICP resolutions) + PCA normals
  coarse       FPFH consensus alignment of scan i onto scan i−1
  icp          point-to-plane refinement (surface-gated when configured)
  merge        all scans into scan 0's frame, voxelized
  ground       constrained RANSAC floor
  filter       ground band and ceiling removal
  project      top-down occupancy grid
  inflate      embodiment radius + accumulated Gaussian penalties
  plan         D* Lite from start to goal

Every stage is timed into the RunReport; failures surface as StageError
carrying the stage name.
"""

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

from config.settings import PipelineConfig, log
from core.coarse import CoarseAlignParams, OrientationPrior, coarse_align
from core.costmap import (
    CostField, EmbodimentSpec, GaussianParams, embodiment_radius_cells, inflate,
)
from core.errors import NoCorrespondences, RovermapError, StageError
from core.geometry import (
    PointCloud, RigidTransform, compose, estimate_normals, transform_error, voxel_downsample,
)
from core.icp import IcpParams, IcpResult, icp_point_to_plane
from core.mapping import (
    OccupancyGrid, PlaneModel, filter_heights, merge_clouds, project_into, project_topdown,
    ransac_plane,
)
from core.planner import GridPath, GridVertex, PlannerState, plan


# ── Report ────────────────────────────────────────────────────────────────────

@dataclass
class RunReport:
    timings: dict[str, float] = field(default_factory=dict)
    scans: int = 0
    points: int = 0
    transforms: list[RigidTransform] = field(default_factory=list)
    inlier_fractions: list[float] = field(default_factory=list)
    icp_rms: list[float] = field(default_factory=list)
    icp_gated: list[bool] = field(default_factory=list)
    rotation_errors_deg: list[float] = field(default_factory=list)
    translation_errors_m: list[float] = field(default_factory=list)
    grid_shape: Optional[tuple[int, int]] = None
    occupied_cells: int = 0
    embodiment_radius: int = 0
    start: Optional[GridVertex] = None
    goal: Optional[GridVertex] = None
    path_cost: Optional[float] = None
    path_cells: Optional[int] = None
    expansions: int = 0
    changed_cells: Optional[int] = None

    def seconds(self, stage: str) -> Optional[float]:
        return self.timings.get(stage)

    @property
    def rotation_error_deg(self) -> Optional[float]:
        return max(self.rotation_errors_deg) if self.rotation_errors_deg else None

    @property
    def translation_error_m(self) -> Optional[float]:
        return max(self.translation_errors_m) if self.translation_errors_m else None

    def record_path(self, path: GridPath) -> None:
        self.path_cost = path.cost
        self.path_cells = len(path.vertices) - 1

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {"scans": self.scans, "points": self.points}
        for stage, secs in self.timings.items():
            out[f"time_{stage}_s"] = secs
        out.update({
            "inlier_fractions": self.inlier_fractions or None,
            "icp_rms_m": self.icp_rms or None,
            "rotation_error_deg": self.rotation_error_deg,
            "translation_error_m": self.translation_error_m,
            "grid_shape": self.grid_shape,
            "occupied_cells": self.occupied_cells,
            "embodiment_radius_cells": self.embodiment_radius,
            "start": self.start,
            "goal": self.goal,
            "path_cost": self.path_cost,
            "path_cells": self.path_cells,
            "expansions": self.expansions,
        })
        if self.changed_cells is not None:
            out["changed_cells"] = self.changed_cells
        return out


@contextmanager
def stage(report: RunReport, name: str, index: Optional[int] = None) -> Iterator[None]:
    """Time a stage into `report` and label any failure with its name."""
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (RovermapError, ValueError) as e:
        raise StageError(name, e, index) from e
    finally:
        report.timings[name] = report.timings.get(name, 0.0) + (time.perf_counter() - t0)


# ── Registration ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PreparedScan:
    coarse: PointCloud    # coarse_voxel resolution, with normals
    fine: PointCloud      # icp_voxel resolution, with normals


def prepare_scan(config: PipelineConfig, cloud: PointCloud) -> PreparedScan:
    coarse = voxel_downsample(cloud, config.coarse_voxel)
    fine = voxel_downsample(cloud, config.icp_voxel)
    return PreparedScan(estimate_normals(coarse, config.normal_k),
                        estimate_normals(fine, config.normal_k))


def coarse_params(config: PipelineConfig) -> CoarseAlignParams:
    return CoarseAlignParams(
        feature_radius=config.feature_radius,
        iterations=config.consensus_iterations,
        inlier_threshold=config.inlier_threshold,
        min_inlier_fraction=config.min_inlier_fraction,
        seed=config.seed,
        max_correspondences=config.max_correspondences,
        edge_similarity=config.edge_similarity,
    )


def icp_params(config: PipelineConfig) -> IcpParams:
    return IcpParams(
        max_iterations=config.icp_max_iterations,
        distance_cap=config.distance_cap,
        translation_eps=config.icp_translation_eps,
        rotation_eps=config.icp_rotation_eps,
        surface_gating=config.surface_gating,
        gating_threshold=config.gating_threshold,
        gating_planes=config.gating_planes,
        gating_min_inliers=config.gating_min_inliers,
        seed=config.seed,
    )


def refine(config: PipelineConfig, src: PointCloud, dst: PointCloud,
           init: RigidTransform) -> IcpResult:
    params = icp_params(config)
    try:
        return icp_point_to_plane(src, dst, init, params)
    except NoCorrespondences:
        if not params.surface_gating:
            raise
        log.warning("[Pipeline] no correspondences on shared surfaces; retrying ICP ungated")
        return icp_point_to_plane(src, dst, init, replace(params, surface_gating=False))


def register_pair(config: PipelineConfig, src: PreparedScan, dst: PreparedScan,
                  report: RunReport, index: int) -> RigidTransform:
    """Transform taking `src` onto `dst` (coarse consensus then ICP)."""
    prior = OrientationPrior(*config.prior) if config.prior is not None else None
    with stage(report, "coarse", index):
        rough, fraction = coarse_align(src.coarse, dst.coarse, coarse_params(config), prior)
    with stage(report, "icp", index):
        result = refine(config, src.fine, dst.fine, rough)
    report.inlier_fractions.append(fraction)
    report.icp_rms.append(result.rms)
    report.icp_gated.append(result.gated)
    return result.transform


def register_scans(config: PipelineConfig, scans: Sequence[PointCloud], report: RunReport
                   ) -> tuple[list[RigidTransform], list[PreparedScan]]:
    """Chain registration: scan i onto scan i−1, composed into scan 0's frame."""
    to_map = [RigidTransform.identity()]
    prepared: list[PreparedScan] = []
    if len(scans) < 2:
        return to_map, prepared
    for i, cloud in enumerate(scans):
        with stage(report, "normals", i):
            prepared.append(prepare_scan(config, cloud))
    for i in range(1, len(scans)):
        pair = register_pair(config, prepared[i], prepared[i - 1], report, i)
        to_map.append(compose(to_map[i - 1], pair))
    return to_map, prepared


# ── Mapping ───────────────────────────────────────────────────────────────────

@dataclass
class MapProducts:
    merged: PointCloud
    plane: PlaneModel
    grid: OccupancyGrid
    field: CostField


def build_field(config: PipelineConfig, grid: OccupancyGrid) -> tuple[CostField, int]:
    radius = embodiment_radius_cells(EmbodimentSpec(config.robot_length, config.robot_width),
                                     config.resolution)
    cost = inflate(grid, radius, GaussianParams(config.sigma_x, config.sigma_y, radius))
    if config.no_embodiment:
        cost = cost.without_penalties()
    return cost, radius


def build_map(config: PipelineConfig, clouds: Sequence[PointCloud],
              transforms: Sequence[RigidTransform], report: RunReport) -> MapProducts:
    with stage(report, "merge"):
        merged = merge_clouds(clouds, transforms, config.voxel_edge)
    with stage(report, "ground"):
        plane, _ = ransac_plane(merged, config.ransac_threshold, config.ransac_iterations,
                                config.axis, math.radians(config.max_tilt_deg), config.seed)
    with stage(report, "filter"):
        obstacles = filter_heights(merged, plane, (config.band_low, config.band_high), config.ceiling)
    with stage(report, "project"):
        # the grid spans everything observed so free ground stays plannable
        frame = project_topdown(merged, plane, config.resolution)
        grid = project_into(obstacles, frame)
    with stage(report, "inflate"):
        cost, radius = build_field(config, grid)
    report.grid_shape = grid.shape
    report.occupied_cells = int(grid.occupied.sum())
    report.embodiment_radius = radius
    return MapProducts(merged, plane, grid, cost)


def resolve_cell(grid: OccupancyGrid, cell: Optional[tuple[int, int]],
                 point: Optional[tuple[float, float, float]]) -> Optional[GridVertex]:
    if cell is not None:
        return (int(cell[0]), int(cell[1]))
    if point is not None:
        return grid.cell_of(point)
    return None


# ── Orchestration ─────────────────────────────────────────────────────────────

@dataclass
class PipelineRun:
    field: CostField
    path: Optional[GridPath]
    report: RunReport
    products: MapProducts
    transforms: list[RigidTransform]
    prepared: list[PreparedScan]
    state: Optional[PlannerState] = None


def execute(config: PipelineConfig, scans: Sequence[PointCloud],
            truth: Optional[Sequence[RigidTransform]] = None) -> PipelineRun:
    """run_pipeline with every intermediate product kept."""
    if not scans:
        raise StageError("input", ValueError("no scans given"))
    report = RunReport(scans=len(scans), points=sum(len(s) for s in scans))
    log.info(f"[Pipeline] {len(scans)} scans, {report.points} points")

    transforms, prepared = register_scans(config, scans, report)
    report.transforms = transforms
    if truth is not None:
        for estimate, expected in zip(transforms[1:], truth[1:]):
            rot, trans = transform_error(estimate, expected)
            report.rotation_errors_deg.append(rot)
            report.translation_errors_m.append(trans)
        if report.rotation_errors_deg:
            log.info(f"[Pipeline] registration error {report.rotation_error_deg:.3f}° / "
                     f"{100 * report.translation_error_m:.2f} cm")

    products = build_map(config, scans, transforms, report)
    grid = products.grid

    goal = resolve_cell(grid, config.goal, config.goal_point)
    start = resolve_cell(grid, config.start, config.start_point)
    if start is None:
        # robot sits at the last scan's sensor origin
        start = grid.cell_of(transforms[-1].translation)
    report.start, report.goal = start, goal

    path, state = None, None
    if goal is None:
        log.warning("[Pipeline] no goal configured; skipping planning")
    else:
        with stage(report, "plan"):
            path, state = plan(products.field, start, goal)
        report.record_path(path)
        report.expansions = state.expansions

    log.info("[Pipeline] stage times: " +
             ", ".join(f"{k}={v:.3f}s" for k, v in report.timings.items()))
    return PipelineRun(products.field, path, report, products, transforms, prepared, state)


def run_pipeline(config: PipelineConfig, scans: Sequence[PointCloud],
                 truth: Optional[Sequence[RigidTransform]] = None
                 ) -> tuple[CostField, Optional[GridPath], RunReport]:
    """Full pipeline; the path is None when no goal is configured."""
    run = execute(config, scans, truth)
    return run.field, run.path, run.report
