from dataclasses import dataclass, field
from typing import Optional, Sequence
import logging

import numpy
from scipy.spatial import cKDTree

from errors import DegenerateConfigurationError, EmptyInputError, NoCorrespondencesError, PipelineError, UnknownCompassError
from geometry import PointCloud, Pose, compose

LOG = logging.getLogger(__name__)

# Relative distance band in which two target points count as tied
TIE_TOLERANCE = 1e-9
# Singular-value ratio below which the pair set is treated as collinear
RANK_TOLERANCE = 1e-10
# Inlier RMSE treated as an exact fit
RMSE_FLOOR = 1e-12

# Yaw in degrees, counter-clockwise from east (map frame x = east, y = north)
COMPASS = {
	"E": 0.0,
	"NE": 45.0,
	"N": 90.0,
	"NW": 135.0,
	"W": 180.0,
	"SW": -135.0,
	"S": -90.0,
	"SE": -45.0,
}
_COMPASS_WORDS = {
	"EAST": "E", "NORTHEAST": "NE", "NORTH": "N", "NORTHWEST": "NW",
	"WEST": "W", "SOUTHWEST": "SW", "SOUTH": "S", "SOUTHEAST": "SE",
}


@dataclass(frozen=True, eq=False)
class Correspondences:
	source_indices: numpy.ndarray
	target_indices: numpy.ndarray
	squared_distances: numpy.ndarray
	max_distance: float

	def __len__(self) -> int:
		return len(self.source_indices)

	@property
	def pairs(self) -> list[tuple[int, int, float]]:
		return [(int(s), int(t), float(d)) for s, t, d in zip(self.source_indices, self.target_indices, self.squared_distances)]

	def rmse(self) -> float:
		if len(self) == 0:
			return 0.0
		return float(numpy.sqrt(numpy.mean(self.squared_distances)))


@dataclass(frozen=True)
class IcpResult:
	transform: Pose
	fitness: float
	""" fraction of source points with a correspondence """
	inlier_rmse: float
	iterations: int
	converged: bool
	rmse_history: tuple[float, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class CoarseHint:
	""" Manual deployment guess: a point on the map and a compass direction """
	position: tuple[float, float]
	heading: str
	height: float = 0.0


def _nearest(tree: cKDTree, targets: numpy.ndarray, points: numpy.ndarray, max_dist: float) -> Correspondences:
	if len(points) == 0:
		empty = numpy.zeros(0, dtype=numpy.int64)
		return Correspondences(empty, empty, numpy.zeros(0), max_dist)

	k = min(2, len(targets))
	bound = max_dist * (1.0 + TIE_TOLERANCE) + 1e-12
	distances, indices = tree.query(points, k=k, distance_upper_bound=bound)
	if k == 1:
		distances, indices = distances[:, None], indices[:, None]

	found = numpy.isfinite(distances[:, 0])
	source_idx = numpy.flatnonzero(found)
	target_idx = indices[found, 0].astype(numpy.int64)

	# Resolve near-ties exactly: smallest squared distance, then lowest index
	if k == 2:
		first, second = distances[found, 0], distances[found, 1]
		tied = numpy.flatnonzero(second <= first * (1.0 + TIE_TOLERANCE) + 1e-12)
		for pos in tied:
			point = points[source_idx[pos]]
			candidates = numpy.array(sorted(tree.query_ball_point(point, r=first[pos] * (1.0 + TIE_TOLERANCE) + 1e-12)), dtype=numpy.int64)
			if len(candidates) == 0:
				continue
			d2 = ((targets[candidates] - point) ** 2).sum(axis=1)
			target_idx[pos] = candidates[int(numpy.argmin(d2))]

	squared = ((targets[target_idx] - points[source_idx]) ** 2).sum(axis=1)
	inside = squared <= max_dist * max_dist
	return Correspondences(source_idx[inside], target_idx[inside], squared[inside], max_dist)


def nearest_correspondences(source: PointCloud, target: PointCloud, max_dist: float) -> Correspondences:
	"""
	Nearest target point for every source point within `max_dist`.
	Ties go to the lowest target index, so results equal a brute-force scan.
	"""
	if len(target) == 0:
		raise EmptyInputError("target cloud is empty")
	if max_dist <= 0:
		raise ValueError("max_dist must be positive")
	return _nearest(cKDTree(target.positions), target.positions, source.positions, max_dist)


def _fit_rigid(source: numpy.ndarray, target: numpy.ndarray) -> Pose:
	if len(source) < 3:
		raise DegenerateConfigurationError(f"need at least 3 point pairs, got {len(source)}")
	source_center = source.mean(axis=0)
	target_center = target.mean(axis=0)
	covariance = (source - source_center).T @ (target - target_center)

	u, s, vt = numpy.linalg.svd(covariance)
	if s[0] <= 0.0 or s[1] <= RANK_TOLERANCE * s[0]:
		raise DegenerateConfigurationError("point pairs are collinear or coincident")

	# Reflection guard: force det(R) = +1
	d = numpy.sign(numpy.linalg.det(vt.T @ u.T))
	if d == 0:
		d = 1.0
	rotation = vt.T @ numpy.diag([1.0, 1.0, d]) @ u.T
	translation = target_center - rotation @ source_center

	matrix = numpy.eye(4)
	matrix[:3, :3] = rotation
	matrix[:3, 3] = translation
	return Pose.from_matrix(matrix)


def estimate_rigid_transform(source: PointCloud, target: PointCloud, pairs: Correspondences) -> Pose:
	""" Closed-form least-squares rigid motion taking paired source points onto target points """
	return _fit_rigid(source.positions[pairs.source_indices], target.positions[pairs.target_indices])


def _capped_rmse(pairs: Correspondences, n_source: int) -> float:
	""" RMSE over every source point, distances beyond max_dist counted as max_dist """
	missing = n_source - len(pairs)
	total = float(pairs.squared_distances.sum()) + missing * pairs.max_distance ** 2
	return float(numpy.sqrt(total / n_source))


def _icp(tree: cKDTree, targets: numpy.ndarray, source: numpy.ndarray, init: Pose, max_dist: float, max_iter: int, rel_tol: float) -> IcpResult:
	transform = init
	moved = transform.apply(source)
	pairs = _nearest(tree, targets, moved, max_dist)
	if len(pairs) == 0:
		raise NoCorrespondencesError(f"no correspondences within {max_dist} m at the initial pose")

	capped = _capped_rmse(pairs, len(source))
	history = [capped]
	converged = pairs.rmse() <= RMSE_FLOOR
	iterations = 0

	while not converged and iterations < max_iter:
		try:
			delta = _fit_rigid(moved[pairs.source_indices], targets[pairs.target_indices])
		except DegenerateConfigurationError as error:
			LOG.debug(f"ICP stopped: {error}")
			break
		candidate = compose(delta, transform)
		candidate_moved = candidate.apply(source)
		candidate_pairs = _nearest(tree, targets, candidate_moved, max_dist)
		iterations += 1
		if len(candidate_pairs) == 0:
			break
		candidate_capped = _capped_rmse(candidate_pairs, len(source))
		# Only rounding can make the fitted step worse
		if candidate_capped > capped:
			converged = True
			break

		change = capped - candidate_capped
		transform, moved, pairs = candidate, candidate_moved, candidate_pairs
		previous, capped = capped, candidate_capped
		history.append(capped)
		if pairs.rmse() <= RMSE_FLOOR or change < rel_tol * previous:
			converged = True

	return IcpResult(
		transform=transform,
		fitness=len(pairs) / len(source),
		inlier_rmse=pairs.rmse(),
		iterations=iterations,
		converged=converged,
		rmse_history=tuple(history),
	)


def icp(source: PointCloud, target: PointCloud, init: Pose, max_dist: float, max_iter: int = 50, rel_tol: float = 1e-6) -> IcpResult:
	"""
	Point-to-point ICP from `init`.

	Iterations minimize the capped RMSE, where a source point without a partner
	within `max_dist` counts as `max_dist` away. It never increases and equals
	the inlier RMSE while every source point has a partner. The inlier RMSE
	alone can grow when points come into range, so it is only reported.
	"""
	if len(source) == 0 or len(target) == 0:
		raise EmptyInputError("ICP needs non-empty source and target clouds")
	if max_dist <= 0:
		raise ValueError("max_dist must be positive")
	if max_iter < 0:
		raise ValueError("max_iter must be non-negative")
	return _icp(cKDTree(target.positions), target.positions, source.positions, init, max_dist, max_iter, rel_tol)


def yaw_candidates(init: Pose, yaw_span: float, yaw_step: float) -> list[Pose]:
	""" `init` turned about its own vertical axis by every multiple of yaw_step within +/- yaw_span, init first """
	if yaw_step <= 0:
		raise ValueError("yaw_step must be positive")
	count = int(numpy.floor(yaw_span / yaw_step + 1e-9))
	offsets = [0.0]
	for k in range(1, count + 1):
		offsets += [-k * yaw_step, k * yaw_step]
	return [compose(init, Pose.from_euler(offset)) for offset in offsets]


def _coarse_stage(tree: cKDTree, targets: numpy.ndarray, source: numpy.ndarray, init: Pose, voxel: float, coarse_dist: float, max_iter: int, rel_tol: float, yaw_span: float, yaw_step: float, keep: int) -> IcpResult:
	if yaw_span <= 0:
		return _icp(tree, targets, source, init, coarse_dist, max_iter, rel_tol)

	# Rank the turned seeds by how well they already fit, refine the best few
	scored = []
	for index, candidate in enumerate(yaw_candidates(init, yaw_span, yaw_step)):
		pairs = _nearest(tree, targets, candidate.apply(source), coarse_dist)
		if len(pairs) > 0:
			scored.append((_capped_rmse(pairs, len(source)), index, candidate))
	if len(scored) == 0:
		raise NoCorrespondencesError(f"no correspondences within {coarse_dist} m around the initial pose")
	scored.sort(key=lambda item: (item[0], item[1]))

	best, best_key = None, None
	for _, index, candidate in scored[:keep]:
		try:
			result = _icp(tree, targets, source, candidate, coarse_dist, max_iter, rel_tol)
		except PipelineError as error:
			LOG.debug(f"Yaw candidate {index} dropped: {error}")
			continue
		close = _nearest(tree, targets, result.transform.apply(source), 2 * voxel)
		key = (-len(close), _capped_rmse(close, len(source)), index)
		LOG.debug(f"Yaw candidate {index}: yaw {result.transform.yaw:.2f}, {len(close)} points within {2 * voxel:.2f} m")
		if best_key is None or key < best_key:
			best, best_key = result, key
	if best is None:
		raise NoCorrespondencesError("no yaw candidate could be registered")
	return best


def multiscale_icp(
	source: PointCloud,
	target: PointCloud,
	init: Pose,
	voxel: float,
	coarse_dist: float,
	max_iter: int = 50,
	rel_tol: float = 1e-6,
	yaw_span: float = 0.0,
	yaw_step: float = 5.0,
	yaw_keep: int = 3,
) -> IcpResult:
	"""
	ICP at correspondence distances coarse_dist, 2 x voxel and 1 x voxel, chained.

	With a positive `yaw_span` the first stage starts from `init` turned by
	every `yaw_step` within +/- yaw_span degrees, refines the `yaw_keep`
	turns that fit best and continues with the one that brings most source
	points within 2 x voxel of the target.
	"""
	if voxel <= 0:
		raise ValueError("voxel must be positive")
	if coarse_dist < 2 * voxel:
		raise ValueError("coarse_dist must be at least twice the voxel size")
	if yaw_keep < 1:
		raise ValueError("yaw_keep must be at least 1")
	if len(source) == 0 or len(target) == 0:
		raise EmptyInputError("ICP needs non-empty source and target clouds")

	tree = cKDTree(target.positions)
	targets, points = target.positions, source.positions
	result = _coarse_stage(tree, targets, points, init, voxel, coarse_dist, max_iter, rel_tol, yaw_span, yaw_step, yaw_keep)
	LOG.debug(f"ICP @ {coarse_dist:.2f} m: fitness {result.fitness:.3f}, rmse {result.inlier_rmse:.4f} m, {result.iterations} iterations")
	for max_dist in (2 * voxel, voxel):
		result = _icp(tree, targets, points, result.transform, max_dist, max_iter, rel_tol)
		LOG.debug(f"ICP @ {max_dist:.2f} m: fitness {result.fitness:.3f}, rmse {result.inlier_rmse:.4f} m, {result.iterations} iterations")
	return result


def compass_token(heading: str) -> str:
	token = heading.strip().upper().replace("-", "").replace("_", "").replace(" ", "")
	token = _COMPASS_WORDS.get(token, token)
	if token not in COMPASS:
		raise UnknownCompassError(f"unknown compass direction '{heading}'")
	return token


def nearest_compass(yaw: float) -> str:
	""" Compass token closest to a yaw in degrees """
	def gap(token: str) -> float:
		return abs((yaw - COMPASS[token] + 180.0) % 360.0 - 180.0)
	return min(COMPASS, key=gap)


def coarse_init(position_hint: Sequence[float], heading_hint: str, height_hint: float) -> Pose:
	""" Pose at the hinted point, facing the compass direction, no roll or pitch """
	yaw = COMPASS[compass_token(heading_hint)]
	return Pose.from_euler(yaw, translation=(float(position_hint[0]), float(position_hint[1]), float(height_hint)))


def seed_from_hint(hint: CoarseHint) -> Pose:
	return coarse_init(hint.position, hint.heading, hint.height)
