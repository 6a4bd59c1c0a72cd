from analysis.evaluation import canopy_report, position_placements, road_alignment_ratio, run_placement_study, run_seed_sweep, yaw_placements
from config import RunConfig, load_run_config, override_keys
from containers import Dataset, StatisticsBook
from errors import ConfigError, DatasetError, MissingPoseError, PipelineError
from geometry import Pose
from interfaces import ConsolePrinter
from lanelet_map import LaneletMap, build_polygon_map
from localization import localize_dataset, moving_cloud, prepare_target, project_cloud, track_sheet
from occupancy import AssignFilters, HeatMapAccumulator, WindowAggregator, accumulate, assign_frame, fuse_messages, render, save_rendering
from parsers import get_parser, read_any
from parsers.dataset import DatasetParser
from parsers.messages import MessageParser, write_messages
from parsers.poses import write_poses
from parsers.pts import write_cloud
from printers import get_printer, print_book
from simulator import ScenarioConfig, load_scenario_config, run_scenario, scenario_keys
from pathlib import Path
from typing import Any, Optional

from argparse import ArgumentParser, Namespace
import logging
import sys
import time

from pydantic import ValidationError

LOG = logging.getLogger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3

OVERRIDE_PREFIX = "set:"


def configure_logging(args: Namespace):
	level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
	logging.basicConfig(level=level, stream=sys.stdout, format="%(levelname)s [%(name)s]: %(message)s", force=True)


def collect_overrides(args: Namespace) -> dict[str, Any]:
	overrides = {
		key[len(OVERRIDE_PREFIX):]: value
		for key, value in vars(args).items()
		if key.startswith(OVERRIDE_PREFIX) and value is not None
	}
	if args.seed is not None:
		overrides["seed"] = args.seed
		overrides["scenario.seed"] = args.seed
	if getattr(args, "n_seeds", None) is not None:
		overrides["evaluation.n_seeds"] = args.n_seeds
	return overrides


def read_input(path: Path, kind: type, what: str) -> Any:
	""" Reads `path` with whichever registered parser accepts it and checks what came back """
	data = read_any(path)
	if not isinstance(data, kind):
		raise DatasetError(f"{path} is not a {what}")
	return data


def load_dataset(path: Path) -> Dataset:
	if not Path(path).is_dir():
		raise DatasetError(f"dataset directory {path} not found")
	return read_input(path, Dataset, "dataset directory")


def cmd_simulate(args: Namespace, config: RunConfig, scenario: ScenarioConfig) -> int:
	out = Path(args.out)
	dataset = run_scenario(scenario, out)
	print(f"Dataset written to {out}")
	print(f"  map: {len(dataset.lanelet_map.lanelets)} lanelets, scan: {len(dataset.scan)} points")
	for sensor_id in dataset.sensor_ids:
		frames = dataset.frames[sensor_id]
		print(f"  {sensor_id}: {len(frames)} frames, {sum(len(f) for f in frames)} detections")
	return EXIT_OK


def cmd_localize(args: Namespace, config: RunConfig, scenario: ScenarioConfig) -> int:
	dataset = load_dataset(args.dataset)
	out = Path(args.out)
	out.mkdir(parents=True, exist_ok=True)
	polygon_map, target = prepare_target(dataset, config)

	poses: dict[str, Pose] = {}
	for sensor_id in args.sensor or dataset.sensor_ids:
		try:
			state, track = localize_dataset(dataset, config, sensor_ids=[sensor_id], target=target)[sensor_id]
		except PipelineError as error:
			raise type(error)(f"localize {sensor_id}: {error}") from error
		poses[sensor_id] = state.pose
		print_book(out / f"{sensor_id}.csv", StatisticsBook([track_sheet("track", track)]))

		projected = project_cloud(moving_cloud(dataset.frames[sensor_id], config), state.pose)
		write_cloud(out / f"{sensor_id}_projected.pts", projected)

		x, y, z = state.pose.translation
		print(f"{sensor_id}: x={x:.3f} y={y:.3f} z={z:.3f} yaw={state.pose.yaw:.3f} deg")
		if len(projected) > 0:
			print(f"  on-road share of projected points: {road_alignment_ratio(projected, polygon_map):.3f}")
		if sensor_id in dataset.truth:
			truth = dataset.truth[sensor_id]
			offset = state.pose.translation - truth.translation
			print(f"  2D error vs truth: {float((offset[0] ** 2 + offset[1] ** 2) ** 0.5):.3f} m")
			if args.canopies:
				for match in canopy_report(dataset, sensor_id, state.pose, config):
					print(f"  off-road cluster {match.label} ({match.size} points): {match.distance:.2f} m from scan")

	write_poses(out / "localized.poses", poses)
	return EXIT_OK


def cmd_evaluate(args: Namespace, config: RunConfig, scenario: ScenarioConfig) -> int:
	dataset = load_dataset(args.dataset)
	out = Path(args.out)
	table = Path(args.table) if args.table is not None else out / "evaluation.csv"
	if get_printer(table, book=StatisticsBook()) is None:
		raise ConfigError(f"no printer for '{table.suffix}' files, use .csv or .xlsx")

	if args.study is None:
		book = run_seed_sweep(dataset, config, sensor_ids=args.sensor)
		summaries = StatisticsBook([s for s in book.sheets if s.name.endswith("_summary")])
		ConsolePrinter(summaries).printStatistics()
	else:
		if not dataset.scenario:
			raise DatasetError("placement studies need a simulated dataset (scenario.json)")
		try:
			base = ScenarioConfig.model_validate(dataset.scenario)
		except ValidationError as error:
			raise ConfigError(str(error))
		sensors = [s for s in base.sensors if args.sensor is None or s.id in args.sensor]
		if len(sensors) == 0:
			raise DatasetError("no sensor to place")
		placements = yaw_placements(sensors[0]) if args.study == "yaw" else position_placements(sensors[0])
		book = run_placement_study(base, placements, args.study, config)
		ConsolePrinter(book).printStatistics()

	print_book(table, book)
	return EXIT_OK


def sensor_messages(dataset: Dataset, poses: dict[str, Pose], config: RunConfig, polygon_map) -> list:
	filters = AssignFilters.from_config(config.occupancy)
	messages = []
	for sensor_id in dataset.sensor_ids:
		if sensor_id not in poses:
			raise MissingPoseError(f"no localized pose for {sensor_id}")
		for frame in dataset.frames[sensor_id]:
			messages.append(assign_frame(project_cloud(frame, poses[sensor_id]), polygon_map, filters, sensor_id=sensor_id))
	# recorded in arrival order so a replay streams without late drops
	messages.sort(key=lambda m: (m.frame_timestamp, m.sensor_id))
	return messages


def replay(parser: MessageParser, config: RunConfig, realtime: bool) -> tuple[list, int]:
	""" Streams a recorded message file through the window aggregator """
	occupancy = config.occupancy
	aggregator = WindowAggregator(occupancy.window_len_ms, occupancy.finalization_lag)
	windows = []
	started, first_stamp = time.monotonic(), None
	for message in parser.iterData():
		if realtime:
			first_stamp = message.frame_timestamp if first_stamp is None else first_stamp
			delay = (message.frame_timestamp - first_stamp) / 1e9 - (time.monotonic() - started)
			if delay > 0:
				time.sleep(delay)
		windows.extend(aggregator.push(message))
	windows.extend(aggregator.flush())
	return windows, aggregator.late_messages


def cmd_heatmap(args: Namespace, config: RunConfig, scenario: ScenarioConfig) -> int:
	source = Path(args.source)
	out = Path(args.out)
	out.mkdir(parents=True, exist_ok=True)
	occupancy = config.occupancy

	parser = get_parser([source])
	if isinstance(parser, DatasetParser):
		dataset = parser.readData()
		lanelet_map = dataset.lanelet_map
		poses_path = Path(args.poses) if args.poses is not None else out / "localized.poses"
		if not poses_path.is_file():
			raise MissingPoseError(f"no pose file {poses_path}, run localize first or pass --poses")
		polygon_map = build_polygon_map(lanelet_map.lanelets, occupancy.step)
		messages = sensor_messages(dataset, read_input(poses_path, dict, "pose file"), config, polygon_map)
		write_messages(out / "messages.jsonl", messages)
		windows = fuse_messages(messages, occupancy.window_len_ms)
		late = 0
	elif isinstance(parser, MessageParser):
		if args.map is None:
			raise DatasetError("replaying messages needs --map")
		lanelet_map = read_input(Path(args.map), LaneletMap, "lanelet map")
		polygon_map = build_polygon_map(lanelet_map.lanelets, occupancy.step)
		windows, late = replay(parser, config, args.realtime)
	else:
		raise DatasetError(f"{source} is neither a dataset directory nor a .jsonl message file")

	cumulative = accumulate(windows, occupancy.horizon_windows)
	instantaneous = HeatMapAccumulator(1)
	if len(windows) > 0:
		instantaneous.add(windows[-1])
	save_rendering(render(polygon_map, cumulative, config.render), out / "heatmap")
	save_rendering(render(polygon_map, instantaneous.snapshot(), config.render), out / "instant")

	print(f"{len(windows)} windows, {len(cumulative.counts)} occupied polygons, max count {cumulative.max_count} of {cumulative.horizon_windows}")
	if late > 0:
		print(f"{late} late messages dropped")
	return EXIT_OK


def build_parser() -> ArgumentParser:
	common = ArgumentParser(add_help=False)
	common.add_argument('-c', '--config', type=Path, default=None, help="JSON config file, missing keys use defaults")
	common.add_argument('--seed', type=int, default=None, help="Random seed for simulation and evaluation")
	common.add_argument('-o', '--out', type=Path, default=Path('./out'), help="Output directory (Default: ./out)")
	verbosity = common.add_mutually_exclusive_group()
	verbosity.add_argument('-v', '--verbose', action='store_true', help="Debug logging")
	verbosity.add_argument('-q', '--quiet', action='store_true', help="Warnings and errors only")
	overrides = common.add_argument_group("config overrides")
	for key in override_keys() + scenario_keys():
		overrides.add_argument(f"--{key}", dest=OVERRIDE_PREFIX + key, default=None, metavar="VALUE")

	argparser = ArgumentParser(
		prog="src",
		description="Localize roadside radars against a road map and build occupancy heat maps"
	)
	commands = argparser.add_subparsers(dest='command', required=True)

	simulate = commands.add_parser('simulate', parents=[common], help="Generate a synthetic dataset")
	simulate.set_defaults(handler=cmd_simulate)

	localize = commands.add_parser('localize', parents=[common], help="Localize every sensor of a dataset")
	localize.add_argument('dataset', type=Path, help="Dataset directory")
	localize.add_argument('-s', '--sensor', action='append', default=None, help="Only this sensor (repeatable)")
	localize.add_argument('--canopies', action='store_true', help="Report how off-road clusters line up with the scan")
	localize.set_defaults(handler=cmd_localize)

	evaluate = commands.add_parser('evaluate', parents=[common], help="Seed sweep or placement study")
	evaluate.add_argument('dataset', type=Path, help="Dataset directory")
	evaluate.add_argument('-n', '--n-seeds', type=int, default=None, help="Number of random initial poses")
	evaluate.add_argument('-s', '--sensor', action='append', default=None, help="Only this sensor (repeatable)")
	evaluate.add_argument('--study', choices=['yaw', 'position'], default=None, help="Re-simulate different placements instead")
	evaluate.add_argument('-t', '--table', type=Path, default=None, help="Table file, .csv or .xlsx (Default: <out>/evaluation.csv)")
	evaluate.set_defaults(handler=cmd_evaluate)

	heatmap = commands.add_parser('heatmap', parents=[common], help="Occupancy heat map from a dataset or a message file")
	heatmap.add_argument('source', type=Path, help="Dataset directory or .jsonl message file")
	heatmap.add_argument('-p', '--poses', type=Path, default=None, help="Localized poses (Default: <out>/localized.poses)")
	heatmap.add_argument('-m', '--map', type=Path, default=None, help="Lanelet map, needed for message files")
	heatmap.add_argument('--realtime', action='store_true', help="Replay messages at wall-clock speed")
	heatmap.set_defaults(handler=cmd_heatmap)
	return argparser


def main(argv: Optional[list[str]] = None) -> int:
	args = build_parser().parse_args(argv)
	configure_logging(args)
	print("Running...")

	# STEP 1 : Validate configuration before any work

	try:
		overrides = collect_overrides(args)
		config = load_run_config(args.config, overrides)
		scenario = load_scenario_config(args.config, overrides)
	except ConfigError as error:
		LOG.error(f"{args.command}: {error}")
		return EXIT_CONFIG

	# STEP 2 : Run the command

	try:
		code = args.handler(args, config, scenario)
	except ConfigError as error:
		LOG.error(f"{args.command}: {error}")
		return EXIT_CONFIG
	except PipelineError as error:
		LOG.error(f"{args.command}: {error}")
		return EXIT_PIPELINE

	print("Finished!")
	return code


if __name__ == "__main__":
	sys.exit(main())
