"""
Static-model Kalman filter over the sensor pose.

State x = [x, y, z, qx, qy, qz, qw]; the measurement is the ICP pose itself
(identity measurement matrix). The quaternion block is updated additively
and renormalized afterwards.
"""
from dataclasses import dataclass
from typing import Optional, Sequence
import logging
import math

import numpy

from config import CycleConfig, FilterConfig, PreprocessConfig, RegistrationConfig, RunConfig
from containers import Dataset, StatisticsRow, StatisticsSheet
from errors import DatasetError, DegenerateConfigurationError, NoMovingPointsError, PipelineError, SingularCovarianceError
from geometry import PointCloud, Pose, transform_cloud
from lanelet_map import PolygonMap, build_polygon_map
from preprocess import accumulate_frames, build_source_cloud, build_target_cloud, doppler_filter, planar_spread
from registration import CoarseHint, IcpResult, multiscale_icp, seed_from_hint

LOG = logging.getLogger(__name__)

STATE_SIZE = 7
SYMMETRY_TOLERANCE = 1e-9
# (P + R) with a condition number above this is treated as singular
MAX_CONDITION = 1e12


def _check_covariance(name: str, matrix: numpy.ndarray) -> numpy.ndarray:
	matrix = numpy.asarray(matrix, dtype=numpy.float64)
	if matrix.shape != (STATE_SIZE, STATE_SIZE):
		raise ValueError(f"{name} must be {STATE_SIZE}x{STATE_SIZE}")
	if not numpy.allclose(matrix, matrix.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
		raise ValueError(f"{name} must be symmetric")
	scale = max(1.0, float(numpy.abs(matrix).max()))
	if numpy.linalg.eigvalsh(matrix).min() < -SYMMETRY_TOLERANCE * scale:
		raise ValueError(f"{name} must be positive semi-definite")
	return matrix


def _normalized(x: numpy.ndarray) -> numpy.ndarray:
	x = numpy.array(x, dtype=numpy.float64).reshape(STATE_SIZE)
	norm = numpy.linalg.norm(x[3:])
	if norm < 1e-12:
		raise ValueError("quaternion block must be non-zero")
	x[3:] /= norm
	return x


@dataclass(frozen=True, eq=False)
class FilterState:
	x: numpy.ndarray
	P: numpy.ndarray
	Q: numpy.ndarray
	R: numpy.ndarray

	def __post_init__(self):
		object.__setattr__(self, 'x', _normalized(self.x))
		for name in ('P', 'Q', 'R'):
			object.__setattr__(self, name, _check_covariance(name, getattr(self, name)))

	@classmethod
	def from_pose(cls, pose: Pose, cfg: FilterConfig) -> "FilterState":
		return cls(
			x=pose.as_vector(),
			P=numpy.diag([cfg.p0_translation] * 3 + [cfg.p0_rotation] * 4),
			Q=numpy.diag([cfg.q_translation] * 3 + [cfg.q_rotation] * 4),
			R=numpy.diag([cfg.r_translation] * 3 + [cfg.r_rotation] * 4),
		)

	@property
	def pose(self) -> Pose:
		return Pose.from_vector(self.x)

	def position_std(self) -> numpy.ndarray:
		return numpy.sqrt(numpy.diag(self.P)[:3])


def predict(state: FilterState) -> FilterState:
	""" Static model: the estimate stays, the uncertainty grows by Q """
	return FilterState(x=state.x, P=state.P + state.Q, Q=state.Q, R=state.R)


def update(state: FilterState, z: Sequence[float]) -> FilterState:
	z = numpy.array(z, dtype=numpy.float64).reshape(STATE_SIZE)
	z_norm = numpy.linalg.norm(z[3:])
	if abs(z_norm - 1.0) > 1e-6:
		raise ValueError("measurement quaternion must be unit-norm")
	z[3:] /= z_norm
	# q and -q are the same rotation, difference against the closer one
	if numpy.dot(z[3:], state.x[3:]) < 0:
		z[3:] = -z[3:]

	innovation_cov = state.P + state.R
	if numpy.linalg.cond(innovation_cov) > MAX_CONDITION:
		raise SingularCovarianceError("P + R is numerically singular")
	# K = P (P + R)^-1, solved without forming the inverse
	K = numpy.linalg.solve(innovation_cov.T, state.P.T).T

	x = state.x + K @ (z - state.x)
	I_K = numpy.eye(STATE_SIZE) - K
	P = I_K @ state.P @ I_K.T + K @ state.R @ K.T
	P = 0.5 * (P + P.T)
	return FilterState(x=x, P=P, Q=state.Q, R=state.R)


def pose_to_measurement(pose: Pose) -> numpy.ndarray:
	return pose.as_vector()


def run_localization_cycle(
	frames: Sequence[PointCloud],
	map_target: PointCloud,
	state: FilterState,
	cfg: CycleConfig,
	preprocess: Optional[PreprocessConfig] = None,
	registration: Optional[RegistrationConfig] = None,
	min_fitness: float = 0.2,
	min_spread: float = 0.0,
	search: bool = False,
) -> tuple[FilterState, Optional[IcpResult]]:
	"""
	One ICP + Kalman cycle over the rolling window. If the window cannot be
	registered, or the result is too poor to trust, the filter only predicts.
	With `search` the first ICP stage also tries turned seeds, for a state
	that is still only the manual hint.
	"""
	preprocess = preprocess or PreprocessConfig()
	registration = registration or RegistrationConfig()

	predicted = predict(state)
	try:
		window = accumulate_frames(frames, cfg.window_frames)
		source = build_source_cloud([window], preprocess.v_min, preprocess.eps, preprocess.min_pts, preprocess.cell_size)
		spread = planar_spread(source)
		if spread < min_spread:
			raise DegenerateConfigurationError(f"source spreads {spread:.2f} m across its main axis, need {min_spread}")
		result = multiscale_icp(
			source, map_target, state.pose,
			voxel=preprocess.cell_size,
			coarse_dist=registration.coarse_dist,
			max_iter=registration.max_iter,
			rel_tol=registration.rel_tol,
			yaw_span=registration.yaw_span if search else 0.0,
			yaw_step=registration.yaw_step,
			yaw_keep=registration.yaw_keep,
		)
	except PipelineError as error:
		LOG.warning(f"Cycle coasts, registration failed: {error}")
		return predicted, None

	if result.fitness < min_fitness:
		LOG.warning(f"Cycle coasts, ICP fitness {result.fitness:.3f} below {min_fitness}")
		return predicted, result

	return update(predicted, pose_to_measurement(result.transform)), result


@dataclass(frozen=True)
class TrackEntry:
	cycle_index: int
	t: float
	""" seconds since the first frame """
	pose: Pose
	fitness: float
	rmse: float

	def values(self) -> list[str]:
		fields = [self.cycle_index, f"{self.t:.3f}"]
		fields += [repr(float(v)) for v in self.pose.as_vector()]
		fields += [repr(float(self.fitness)), repr(float(self.rmse))]
		return [str(f) for f in fields]


TRACK_COLUMNS = ["cycle_index", "t", "x", "y", "z", "qx", "qy", "qz", "qw", "fitness", "rmse"]


def frame_stamps(frames: Sequence[PointCloud], cfg: CycleConfig) -> list[int]:
	"""
	Stamp of every frame in ns. A frame without one is placed a frame period
	after its predecessor, the first such frame at 0.
	"""
	period = int(round(1e9 / cfg.frame_rate))
	stamps = []
	for frame in frames:
		if frame.stamp is not None:
			stamps.append(int(frame.stamp))
		elif len(frame) > 0:
			stamps.append(int(frame.timestamps.max()))
		else:
			stamps.append(stamps[-1] + period if stamps else 0)
	return stamps


def cycle_stamps(frames: Sequence[PointCloud], cfg: CycleConfig) -> list[int]:
	""" Cycle times in ns: every `cycle_period` after the first frame, at least one """
	stamps = frame_stamps(frames, cfg)
	if len(stamps) == 0:
		return []
	period = int(round(cfg.cycle_period * 1e9))
	first, last = stamps[0], stamps[-1]
	result = list(range(first + period, last + 1, period))
	if len(result) == 0 or result[-1] < last:
		result.append(last)
	return result


def localize_sensor(
	frames: Sequence[PointCloud],
	map_target: PointCloud,
	hint: CoarseHint,
	cycle: CycleConfig,
	filter_cfg: FilterConfig,
	preprocess: Optional[PreprocessConfig] = None,
	registration: Optional[RegistrationConfig] = None,
) -> tuple[FilterState, list[TrackEntry]]:
	""" Runs the cycle loop over a recorded frame sequence, seeded by the manual hint """
	state = FilterState.from_pose(seed_from_hint(hint), filter_cfg)
	stamps = frame_stamps(frames, cycle)
	track: list[TrackEntry] = []
	if len(frames) == 0:
		return state, track
	if len(doppler_filter(PointCloud.concatenate(list(frames)), (preprocess or PreprocessConfig()).v_min)) == 0:
		raise NoMovingPointsError()

	end = 0
	fused = False
	for cycle_index, stamp in enumerate(cycle_stamps(frames, cycle)):
		while end < len(frames) and stamps[end] <= stamp:
			end += 1
		state, result = run_localization_cycle(
			frames[:end], map_target, state, cycle,
			preprocess=preprocess, registration=registration,
			min_fitness=filter_cfg.min_fitness, min_spread=filter_cfg.min_spread, search=not fused,
		)
		fused = fused or (result is not None and result.fitness >= filter_cfg.min_fitness)
		track.append(TrackEntry(
			cycle_index=cycle_index,
			t=(stamp - stamps[0]) / 1e9,
			pose=state.pose,
			fitness=result.fitness if result is not None else 0.0,
			rmse=result.inlier_rmse if result is not None else math.nan,
		))
		LOG.info(f"Cycle {cycle_index}: {end} frames, position {numpy.round(state.x[:3], 3).tolist()}, std {numpy.round(state.position_std(), 3).tolist()}")
	return state, track


def project_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
	""" Sensor-frame cloud expressed in the map frame """
	return transform_cloud(pose, cloud, frame_id="map")


def prepare_target(dataset: Dataset, config: RunConfig) -> tuple[PolygonMap, PointCloud]:
	""" Sub-lane polygons of the dataset's map and the registration target built from its scan """
	polygon_map = build_polygon_map(dataset.lanelet_map.lanelets, config.occupancy.step)
	pre = config.preprocess
	target = build_target_cloud(dataset.scan, polygon_map, pre.scan_eps, pre.scan_min_pts, pre.scan_cell_size, height=pre.target_height)
	return polygon_map, target


def localize_dataset(dataset: Dataset, config: RunConfig, sensor_ids: Optional[Sequence[str]] = None, target: Optional[PointCloud] = None) -> dict[str, tuple[FilterState, list[TrackEntry]]]:
	""" Runs every sensor of a dataset through the cycle loop, seeded from its manual hint """
	if target is None:
		_, target = prepare_target(dataset, config)
	results = {}
	for sensor_id in sensor_ids or dataset.sensor_ids:
		if sensor_id not in dataset.frames:
			raise DatasetError(f"dataset has no frames for {sensor_id}")
		if sensor_id not in dataset.hints:
			raise DatasetError(f"no manual hint for {sensor_id}")
		LOG.info(f"Localizing {sensor_id} from hint {dataset.hints[sensor_id]}")
		results[sensor_id] = localize_sensor(
			dataset.frames[sensor_id], target, dataset.hints[sensor_id],
			config.cycle, config.filter, preprocess=config.preprocess, registration=config.registration,
		)
	return results


def moving_cloud(frames: Sequence[PointCloud], config: RunConfig) -> PointCloud:
	""" Doppler-gated points of the most recent window, sensor frame """
	return doppler_filter(accumulate_frames(frames, config.cycle.window_frames), config.preprocess.v_min)


def track_sheet(name: str, track: Sequence[TrackEntry]) -> StatisticsSheet:
	rows = [StatisticsRow(list(TRACK_COLUMNS))]
	rows += [StatisticsRow(entry.values()) for entry in track]
	return StatisticsSheet(name, rows)
