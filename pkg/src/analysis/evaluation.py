"""
Localization error statistics: random initial poses around the manual hint,
errors against ground truth and sensor placement studies.
"""
from dataclasses import dataclass
from typing import Optional, Sequence
import logging
import math

import numpy
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation
from pydantic import ValidationError

from config import EvaluationConfig, RunConfig
from containers import Dataset, StatisticsBook, StatisticsRow, StatisticsSheet
from errors import ConfigError, EmptyInputError, MissingPoseError, PipelineError
from geometry import PointCloud, Pose, transform_cloud
from interfaces import PoseStatistics
from lanelet_map import PolygonMap, ROAD_KINDS, build_polygon_map
from localization import localize_sensor, moving_cloud, prepare_target
from preprocess import ClusterLabeling, build_source_cloud, dbscan
from registration import COMPASS, CoarseHint, IcpResult, compass_token, multiscale_icp
from simulator import ScenarioConfig, SensorSetup, run_scenario

LOG = logging.getLogger(__name__)


def wrap_degrees(angle: float) -> float:
	""" Into (-180, 180] """
	wrapped = (angle + 180.0) % 360.0 - 180.0
	return 180.0 if wrapped == -180.0 else wrapped


@dataclass(frozen=True)
class LocalizationError:
	dx: float
	dy: float
	dz: float
	d2d: float
	roll: float
	pitch: float
	yaw: float
	""" degrees """

	COLUMNS = ["dx", "dy", "dz", "d2d", "roll", "pitch", "yaw"]

	def values(self) -> list[float]:
		return [self.dx, self.dy, self.dz, self.d2d, self.roll, self.pitch, self.yaw]


def pose_error(estimate: Pose, truth: Pose) -> LocalizationError:
	"""
	Translation difference in the map frame; angles of the rotation taking the
	true orientation to the estimated one, as intrinsic z-y-x.
	"""
	dx, dy, dz = (float(v) for v in estimate.translation - truth.translation)
	relative = truth.rotation_object.inv() * estimate.rotation_object
	yaw, pitch, roll = relative.as_euler('ZYX', degrees=True)
	return LocalizationError(
		dx=dx, dy=dy, dz=dz,
		d2d=math.hypot(dx, dy),
		roll=wrap_degrees(float(roll)),
		pitch=wrap_degrees(float(pitch)),
		yaw=wrap_degrees(float(yaw)),
	)


def apply_error(truth: Pose, error: LocalizationError) -> Pose:
	""" Inverse of pose_error: the estimate that would produce `error` """
	relative = Rotation.from_euler('ZYX', [error.yaw, error.pitch, error.roll], degrees=True)
	return Pose.from_rotation(truth.rotation_object * relative, truth.translation + numpy.array([error.dx, error.dy, error.dz]))


def seed_poses(hint: CoarseHint, n_seeds: int, seed_radius: float, yaw_spread: float, rng: numpy.random.Generator) -> list[Pose]:
	""" Uniform in a disc around the hinted point, yaw uniform around the compass heading """
	if n_seeds < 1:
		raise ValueError("n_seeds must be at least 1")
	if seed_radius < 0 or yaw_spread < 0:
		raise ValueError("seed_radius and yaw_spread must be non-negative")
	heading = COMPASS[compass_token(hint.heading)]
	seeds = []
	for _ in range(n_seeds):
		angle = rng.uniform(0.0, 2 * math.pi)
		distance = seed_radius * math.sqrt(rng.uniform())
		yaw = heading + rng.uniform(-yaw_spread, yaw_spread)
		position = (hint.position[0] + distance * math.cos(angle), hint.position[1] + distance * math.sin(angle), hint.height)
		seeds.append(Pose.from_euler(yaw, translation=position))
	return seeds


@dataclass(frozen=True)
class SeedRun:
	index: int
	init: Pose
	result: Optional[IcpResult]
	error: Optional[LocalizationError]
	failure: str = ""

	@property
	def succeeded(self) -> bool:
		return self.result is not None


def sweep(source: PointCloud, target: PointCloud, truth: Pose, seeds: Sequence[Pose], voxel: float, config: RunConfig) -> list[SeedRun]:
	""" Multiscale ICP from every seed; seeds that cannot be registered are kept as failures """
	runs = []
	reg = config.registration
	for index, init in enumerate(seeds):
		try:
			result = multiscale_icp(
				source, target, init, voxel=voxel, coarse_dist=reg.coarse_dist, max_iter=reg.max_iter, rel_tol=reg.rel_tol,
				yaw_span=reg.yaw_span, yaw_step=reg.yaw_step, yaw_keep=reg.yaw_keep,
			)
		except PipelineError as error:
			LOG.warning(f"Seed {index} failed: {error}")
			runs.append(SeedRun(index, init, None, None, str(error)))
			continue
		runs.append(SeedRun(index, init, result, pose_error(result.transform, truth)))
	return runs


def spread(poses: Sequence[Pose]) -> float:
	""" RMS horizontal distance of converged positions to their centroid """
	if len(poses) == 0:
		return math.nan
	xy = numpy.array([p.translation[:2] for p in poses])
	return float(numpy.sqrt(numpy.mean(numpy.sum((xy - xy.mean(axis=0)) ** 2, axis=1))))


def _fmt(value: float) -> str:
	return "nan" if value is None or not math.isfinite(value) else f"{value:.6f}"


class SeedSweep(PoseStatistics):
	"""
	Error table of one sensor over random initial poses: one row per seed, a
	mean row of absolute errors, the converged positions and a summary.
	"""

	HEADER = ["seed", "x0", "y0", "yaw0"] + LocalizationError.COLUMNS + ["fitness", "rmse", "iterations"]

	def __init__(self, truth: dict[str, Pose], dataset: Dataset, sensor_id: str, config: RunConfig, seeds: Optional[Sequence[Pose]] = None, target: Optional[PointCloud] = None) -> None:
		super().__init__(truth=truth)
		if sensor_id not in truth:
			raise MissingPoseError(f"no ground truth for {sensor_id}")
		self.dataset = dataset
		self.sensor_id = sensor_id
		self.config = config
		self.seeds = seeds
		self.target = target
		self.runs: list[SeedRun] = []

	def makeSeeds(self) -> list[Pose]:
		if self.seeds is not None:
			return list(self.seeds)
		if self.sensor_id not in self.dataset.hints:
			raise MissingPoseError(f"no manual hint for {self.sensor_id}")
		ev = self.config.evaluation
		rng = numpy.random.default_rng([self.config.seed, 7])
		return seed_poses(self.dataset.hints[self.sensor_id], ev.n_seeds, ev.seed_radius, ev.yaw_spread, rng)

	def analyze(self) -> StatisticsBook:
		pre = self.config.preprocess
		target = self.target
		if target is None:
			_, target = prepare_target(self.dataset, self.config)
		# Source and target do not depend on the seed, build them once
		window = self.dataset.frames.get(self.sensor_id, [])[-self.config.cycle.window_frames:]
		source = build_source_cloud(window, pre.v_min, pre.eps, pre.min_pts, pre.cell_size)
		self.runs = sweep(source, target, self.truth[self.sensor_id], self.makeSeeds(), pre.cell_size, self.config)
		return self.book()

	def book(self) -> StatisticsBook:
		name = self.sensor_id
		rows = [StatisticsRow(list(self.HEADER))]
		for run in self.runs:
			yaw0 = run.init.yaw
			values = [str(run.index), _fmt(run.init.translation[0]), _fmt(run.init.translation[1]), _fmt(yaw0)]
			if run.succeeded:
				values += [_fmt(v) for v in run.error.values()]
				values += [_fmt(run.result.fitness), _fmt(run.result.inlier_rmse), str(run.result.iterations)]
			else:
				values += ["nan"] * (len(LocalizationError.COLUMNS) + 2) + ["0"]
			rows.append(StatisticsRow(values))

		succeeded = [r for r in self.runs if r.succeeded]
		mean = ["mean", "", "", ""]
		for k in range(len(LocalizationError.COLUMNS)):
			mean.append(_fmt(numpy.mean([abs(r.error.values()[k]) for r in succeeded]) if succeeded else math.nan))
		mean += [_fmt(numpy.mean([r.result.fitness for r in succeeded]) if succeeded else math.nan), "", ""]
		rows.append(StatisticsRow(mean))

		scatter = [StatisticsRow(["seed", "x", "y", "z", "yaw"])]
		for run in succeeded:
			t = run.result.transform
			scatter.append(StatisticsRow([str(run.index), _fmt(t.translation[0]), _fmt(t.translation[1]), _fmt(t.translation[2]), _fmt(t.yaw)]))

		summary = [
			StatisticsRow(["n_seeds", "converged", "mean_d2d", "mean_abs_yaw", "spread"]),
			StatisticsRow([
				str(len(self.runs)),
				str(len(succeeded)),
				mean[4 + LocalizationError.COLUMNS.index("d2d")],
				mean[4 + LocalizationError.COLUMNS.index("yaw")],
				_fmt(spread([r.result.transform for r in succeeded])),
			]),
		]
		return StatisticsBook([
			StatisticsSheet(f"{name}_errors", rows),
			StatisticsSheet(f"{name}_scatter", scatter),
			StatisticsSheet(f"{name}_summary", summary),
		])

	def meanError(self, column: str) -> float:
		values = [abs(getattr(r.error, column)) for r in self.runs if r.succeeded]
		return float(numpy.mean(values)) if values else math.nan


def run_seed_sweep(dataset: Dataset, config: RunConfig, sensor_ids: Optional[Sequence[str]] = None, n_seeds: Optional[int] = None, seed_radius: Optional[float] = None) -> StatisticsBook:
	"""
	Seed sweep for every sensor with ground truth; sheets of all sensors in one book.
	Each seed runs multiscale ICP once on the sensor's whole window, not the cycle loop of localize.
	"""
	update = {k: v for k, v in (("n_seeds", n_seeds), ("seed_radius", seed_radius)) if v is not None}
	if update:
		try:
			evaluation = EvaluationConfig.model_validate({**config.evaluation.model_dump(), **update})
		except ValidationError as error:
			raise ConfigError(str(error))
		config = config.model_copy(update={"evaluation": evaluation})
	_, target = prepare_target(dataset, config)
	book = StatisticsBook()
	for sensor_id in sensor_ids or dataset.sensor_ids:
		analyzer = SeedSweep(dataset.truth, dataset, sensor_id, config, target=target)
		book.sheets.extend(analyzer.analyze().sheets)
		LOG.info(f"{sensor_id}: mean 2D error {analyzer.meanError('d2d'):.3f} m, mean |yaw| error {analyzer.meanError('yaw'):.3f} deg")
	return book


def road_alignment_ratio(cloud: PointCloud, polygon_map: PolygonMap) -> float:
	""" Share of map-frame points whose footprint lies on a road polygon """
	if len(cloud) == 0:
		raise EmptyInputError("cannot score an empty cloud")
	return float(numpy.mean(polygon_map.covered_mask(cloud.positions[:, :2], kinds=ROAD_KINDS)))


@dataclass(frozen=True)
class CanopyMatch:
	label: int
	size: int
	centroid: tuple[float, float, float]
	""" map frame """
	distance: float
	""" to the nearest laser-scan point, m """


def canopy_alignment(source: PointCloud, labeling: ClusterLabeling, scan: PointCloud, pose: Pose, polygon_map: PolygonMap) -> list[CanopyMatch]:
	"""
	Off-road clusters of moving radar points (swaying tree canopies) placed on
	the map with `pose`, and how far each lands from the laser scan.
	"""
	if len(scan) == 0:
		raise EmptyInputError("scan is empty")
	tree = cKDTree(scan.positions)
	placed = transform_cloud(pose, source, frame_id="map")
	matches = []
	for label in range(labeling.cluster_count):
		members = placed.positions[labeling.labels == label]
		centroid = members.mean(axis=0)
		if polygon_map.covered_mask(centroid[None, :2]).any():
			continue
		distance, _ = tree.query(centroid)
		matches.append(CanopyMatch(label, len(members), tuple(float(v) for v in centroid), float(distance)))
	return matches


def canopy_report(dataset: Dataset, sensor_id: str, pose: Pose, config: RunConfig) -> list[CanopyMatch]:
	polygon_map = build_polygon_map(dataset.lanelet_map.lanelets, config.occupancy.step)
	moving = moving_cloud(dataset.frames[sensor_id], config)
	labeling = dbscan(moving, config.preprocess.eps, config.preprocess.min_pts)
	return canopy_alignment(moving, labeling, dataset.scan, pose, polygon_map)


def yaw_placements(sensor: SensorSetup, offsets: Sequence[float] = (-20.0, -10.0, 0.0, 10.0, 20.0)) -> list[SensorSetup]:
	""" Same mast, different boresight yaw """
	return [sensor.model_copy(update={"id": f"{sensor.id}_yaw{int(round(o)):+d}", "yaw": sensor.yaw + o}) for o in offsets]


def position_placements(sensor: SensorSetup, positions: Sequence[tuple[float, float]] = ((-12.0, -12.0), (12.0, -12.0), (12.0, 12.0), (-12.0, 12.0), (-25.0, -8.0))) -> list[SensorSetup]:
	""" Different masts, each looking at the junction center """
	placements = []
	for k, (x, y) in enumerate(positions):
		yaw = math.degrees(math.atan2(-y, -x))
		placements.append(sensor.model_copy(update={"id": f"{sensor.id}_pos{k}", "position": (x, y, sensor.position[2]), "yaw": yaw}))
	return placements


class PlacementStudy(PoseStatistics):
	"""
	Re-simulates a scenario for each sensor placement and localizes it from a
	manual hint. `yaw` mode reports X, Y, Z and yaw errors, `position` mode
	the 2D error and all three angles.
	"""

	MODES = {
		"yaw": ["dx", "dy", "dz", "yaw"],
		"position": ["d2d", "roll", "pitch", "yaw"],
	}

	def __init__(self, base: ScenarioConfig, placements: Sequence[SensorSetup], mode: str, config: RunConfig) -> None:
		if mode not in self.MODES:
			raise ValueError(f"mode must be one of {sorted(self.MODES)}")
		super().__init__(truth={p.id: p.pose() for p in placements})
		self.base = base
		self.placements = list(placements)
		self.mode = mode
		self.config = config

	def analyze(self) -> StatisticsBook:
		columns = self.MODES[self.mode]
		rows = [StatisticsRow(["placement", "x", "y", "yaw"] + columns)]
		errors = []
		for placement in self.placements:
			dataset = run_scenario(self.base.model_copy(update={"sensors": [placement]}))
			values = [placement.id, _fmt(placement.position[0]), _fmt(placement.position[1]), _fmt(placement.yaw)]
			try:
				_, target = prepare_target(dataset, self.config)
				state, _ = localize_sensor(dataset.frames[placement.id], target, dataset.hints[placement.id],
					self.config.cycle, self.config.filter, preprocess=self.config.preprocess, registration=self.config.registration)
			except PipelineError as error:
				LOG.warning(f"Placement {placement.id} failed: {error}")
				rows.append(StatisticsRow(values + ["nan"] * len(columns)))
				continue
			error = pose_error(state.pose, self.truth[placement.id])
			errors.append(error)
			rows.append(StatisticsRow(values + [_fmt(getattr(error, c)) for c in columns]))

		mean = ["mean", "", "", ""]
		mean += [_fmt(numpy.mean([abs(getattr(e, c)) for e in errors])) if errors else "nan" for c in columns]
		rows.append(StatisticsRow(mean))
		return StatisticsBook([StatisticsSheet(f"placement_{self.mode}", rows)])


def run_placement_study(base: ScenarioConfig, placements: Sequence[SensorSetup], mode: str, config: RunConfig) -> StatisticsBook:
	return PlacementStudy(base, placements, mode, config).analyze()
