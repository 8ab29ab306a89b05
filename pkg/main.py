"""
rovermap v1.2.0
Entry point: register scans, build the cost map, plan and replan paths.

Subcommands:
  register SRC DST           align SRC onto DST, print the 4×4 transform
  map      [CLOUDS...]       registered, ground-filtered, inflated cost map (PGM)
  plan     COSTMAP.pgm       D* Lite on a saved cost map (--start/--goal required)
  pipeline [CLOUDS...]       everything above, plus path CSV, overlay PPM and report
  synth                      write a synthetic scan pair with ground truth
  simulate [CLOUDS...]       replanning walk with scans added at path cells (--at)
  bench    [CLOUDS...]       mean ± std stage timings over repeated runs

Without cloud files, map/pipeline/simulate/bench run on the seeded
synthetic scene. Outputs go to --out-dir (ROVERMAP_OUT_DIR, default "out").

USAGE:
  python main.py pipeline scan0.xyz scan1.pcd --goal 120,340 --out-dir out
  python main.py pipeline --seed 3 --no-embodiment
  python main.py bench --reps 5
  ROVERMAP_LOG_LEVEL=DEBUG python main.py register a.xyz b.xyz

Exit codes: 0 success, 2 parse/config error, 3 stage failure, 4 no path.
"""

import argparse
import os
import sys
from typing import Optional, Sequence

from config.settings import OUT_DIR, VERSION, PipelineConfig, load_config, log, parse_value
from core.costmap import CostField
from core.diagnostics import benchmark
from core.errors import ConfigError, EmptyFile, NoPath, ParseError, RovermapError, StageError
from core.mapping import OccupancyGrid, plane_basis
from core.pipeline import RunReport, execute, prepare_scan, register_pair
from core.planner import plan
from core.simulator import ScheduledScan, simulate_replanning
from render.export import (
    pixels_to_layers, read_pgm, save_cloud_xyz, save_costfield_pgm, save_overlay_ppm,
    save_path_csv, save_text,
)
from render.report import format_benchmark, format_report, format_transform
from sources.base import ScanSource
from sources.file_source import FileSource, load_cloud
from sources.synthetic import SyntheticSource, two_pose_scene

EXIT_OK       = 0
EXIT_CONFIG   = 2
EXIT_STAGE    = 3
EXIT_NO_PATH  = 4


# ── Argument parsing ──────────────────────────────────────────────────────────

def _cell(raw: str) -> tuple[int, int]:
    return parse_value("start", raw)


def _key_value(raw: str) -> tuple[str, object]:
    if "=" not in raw:
        raise ConfigError(f"expected KEY=VALUE, got '{raw}'")
    key, value = raw.split("=", 1)
    return key.strip(), parse_value(key.strip(), value)


def _trigger(raw: str) -> tuple[int, str]:
    index, sep, path = raw.partition(":")
    if not sep or not path:
        raise ConfigError(f"expected TRIGGER:FILE, got '{raw}'")
    return int(index), path


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                        metavar="KEY=VALUE", help="override one configuration key")
    common.add_argument("--seed", type=int, help="seed for every seeded stage")
    common.add_argument("--out-dir", default=OUT_DIR, help="output directory")
    common.add_argument("--start", type=_cell, metavar="R,C", help="start cell")
    common.add_argument("--goal", type=_cell, metavar="R,C", help="goal cell")
    common.add_argument("--no-embodiment", action="store_true",
                        help="plan on lethal cells only, without inflation penalties")

    parser = argparse.ArgumentParser(prog="rovermap", description="Scan registration, "
                                     "cost mapping and D* Lite planning.")
    parser.add_argument("--version", action="version", version=f"rovermap {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", parents=[common], help="align two clouds")
    p.add_argument("source")
    p.add_argument("target")

    for name, text in (("map", "build the cost map"), ("pipeline", "run the full pipeline")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("clouds", nargs="*")

    p = sub.add_parser("plan", parents=[common], help="plan on a saved PGM cost map")
    p.add_argument("costmap")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scan pair")
    p.add_argument("--yaw", type=float, default=10.0, help="relative yaw, degrees")
    p.add_argument("--offset", type=float, nargs=2, default=(0.5, 0.1), metavar=("DX", "DY"))
    p.add_argument("--noise", type=float, default=0.005, help="noise sigma, meters")
    p.add_argument("--points", type=int, default=100_000, help="points per scan")

    p = sub.add_parser("simulate", parents=[common], help="replanning walk")
    p.add_argument("clouds", nargs="*")
    p.add_argument("--at", dest="schedule", action="append", type=_trigger, default=[],
                   metavar="TRIGGER:FILE", help="take scan FILE at path vertex TRIGGER")

    p = sub.add_parser("bench", parents=[common], help="stage timing benchmark")
    p.add_argument("clouds", nargs="*")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--compare-gating", action="store_true",
                   help="also time ICP with the opposite gating setting")
    return parser


def _config(args: argparse.Namespace) -> PipelineConfig:
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.start is not None:
        overrides["start"] = args.start
    if args.goal is not None:
        overrides["goal"] = args.goal
    if args.no_embodiment:
        overrides["no_embodiment"] = True
    return load_config(args.config, overrides)


def _source(args: argparse.Namespace, config: PipelineConfig) -> ScanSource:
    if getattr(args, "clouds", None):
        return FileSource(args.clouds)
    return SyntheticSource(two_pose_scene(seed=config.seed))


def _with_endpoints(config: PipelineConfig, source: ScanSource) -> PipelineConfig:
    start, goal = source.endpoints()
    overrides = {}
    if config.start is None and config.start_point is None and start is not None:
        overrides["start_point"] = tuple(float(v) for v in start)
    if config.goal is None and config.goal_point is None and goal is not None:
        overrides["goal_point"] = tuple(float(v) for v in goal)
    return config.with_overrides(**overrides) if overrides else config


def _out(args: argparse.Namespace, name: str) -> str:
    return os.path.join(args.out_dir, name)


# ── Commands ──────────────────────────────────────────────────────────────────

def cmd_register(args, config: PipelineConfig) -> int:
    src, dst = load_cloud(args.source), load_cloud(args.target)
    report = RunReport(scans=2, points=len(src) + len(dst))
    t = register_pair(config, prepare_scan(config, src), prepare_scan(config, dst), report, 1)
    text = format_transform(t)
    save_text(text, _out(args, "transform.txt"))
    print(text, end="")
    log.info(f"[CLI] inlier fraction {report.inlier_fractions[0]:.3f}, ICP rms {report.icp_rms[0]:.5f} m")
    return EXIT_OK


def _run(args, config: PipelineConfig, with_plan: bool):
    source = _source(args, config)
    log.info(f"[CLI] source: {source.describe()}")
    config = _with_endpoints(config, source) if with_plan else config
    if not with_plan:
        config = config.with_overrides(goal=None, goal_point=None)
    return execute(config, source.scans(), source.ground_truth())


def cmd_map(args, config: PipelineConfig) -> int:
    run = _run(args, config, with_plan=False)
    save_costfield_pgm(run.field, _out(args, "costmap.pgm"))
    save_text(format_report(run.report), _out(args, "report.txt"))
    return EXIT_OK


def cmd_pipeline(args, config: PipelineConfig) -> int:
    run = _run(args, config, with_plan=True)
    save_costfield_pgm(run.field, _out(args, "costmap.pgm"))
    if run.path is not None:
        save_path_csv(run.path, _out(args, "path.csv"))
        save_overlay_ppm(run.field, run.path, _out(args, "overlay.ppm"))
    text = format_report(run.report)
    save_text(text, _out(args, "report.txt"))
    print(text, end="")
    return EXIT_OK


def cmd_plan(args, config: PipelineConfig) -> int:
    if config.start is None or config.goal is None:
        raise ConfigError("plan needs --start and --goal")
    lethal, penalty = pixels_to_layers(read_pgm(args.costmap))
    grid = OccupancyGrid((0.0, 0.0), config.resolution, lethal, plane_basis((0.0, 0.0, 1.0)))
    field = CostField(grid, lethal, penalty)
    if config.no_embodiment:
        field = field.without_penalties()
    try:
        path, _ = plan(field, config.start, config.goal)
    except NoPath as e:
        raise StageError("plan", e) from e
    save_path_csv(path, _out(args, "path.csv"))
    save_overlay_ppm(field, path, _out(args, "overlay.ppm"))
    print(f"path_cost={path.cost:.9g}\npath_cells={len(path.vertices) - 1}")
    return EXIT_OK


def cmd_synth(args, config: PipelineConfig) -> int:
    spec = two_pose_scene(seed=config.seed, yaw_deg=args.yaw, offset=tuple(args.offset),
                          noise=args.noise, points_per_scan=args.points)
    source = SyntheticSource(spec)
    truth_lines = []
    for i, (cloud, t) in enumerate(zip(source.scans(), source.ground_truth())):
        save_cloud_xyz(cloud, _out(args, f"scan_{i:02d}.xyz"))
        truth_lines.append(f"# scan {i} into scan 0\n" + format_transform(t))
    save_text("".join(truth_lines), _out(args, "truth.txt"))
    start, goal = source.endpoints()
    log.info(f"[CLI] wrote {len(truth_lines)} scans to {args.out_dir}; "
             f"suggested start_point={tuple(round(float(v), 4) for v in start)} "
             f"goal_point={tuple(round(float(v), 4) for v in goal)}")
    return EXIT_OK


def cmd_simulate(args, config: PipelineConfig) -> int:
    source = _source(args, config)
    config = _with_endpoints(config, source)
    schedule = [ScheduledScan(trigger, load_cloud(path)) for trigger, path in args.schedule]
    results = simulate_replanning(config, source.scans(), schedule, source.ground_truth())
    for k, (path, report) in enumerate(results):
        save_path_csv(path, _out(args, f"path_{k:02d}.csv"))
        save_text(format_report(report), _out(args, f"report_{k:02d}.txt"))
    print(f"plans={len(results)} final_cost={results[-1][0].cost:.9g}")
    return EXIT_OK


def cmd_bench(args, config: PipelineConfig) -> int:
    if args.clouds:
        source = FileSource(args.clouds)
        scenarios = {"input": source.scans()}
        config = _with_endpoints(config, source)
    else:
        near = SyntheticSource(two_pose_scene(seed=config.seed, offset=(0.5, 0.1)))
        far = SyntheticSource(two_pose_scene(seed=config.seed, yaw_deg=20.0, offset=(1.5, 0.4)))
        config = _with_endpoints(config, near)
        scenarios = {"near": near.scans(), "far": far.scans()}
    table = benchmark(config, scenarios, args.reps, args.compare_gating)
    text = format_benchmark(table)
    save_text(text, _out(args, "bench.txt"))
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "register": cmd_register,
    "map":      cmd_map,
    "plan":     cmd_plan,
    "pipeline": cmd_pipeline,
    "synth":    cmd_synth,
    "simulate": cmd_simulate,
    "bench":    cmd_bench,
}


def exit_code(error: RovermapError) -> int:
    cause = error.cause if isinstance(error, StageError) else error
    if isinstance(cause, NoPath):
        return EXIT_NO_PATH
    if isinstance(cause, (ConfigError, ParseError, EmptyFile)):
        return EXIT_CONFIG
    return EXIT_STAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    log.info(f"rovermap {VERSION}: {args.command}")
    try:
        config = _config(args)
        return COMMANDS[args.command](args, config)
    except RovermapError as e:
        log.error(f"[CLI] {e}")
        return exit_code(e)
    except ValueError as e:
        log.error(f"[CLI] invalid argument: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
