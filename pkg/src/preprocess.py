"""
Road descriptions for registration.

Source side (radar): accumulate frames -> Doppler gate -> DBSCAN -> largest
cluster -> voxel centers. Target side (aerial laser scan): road mask from the
lanelet map -> DBSCAN noise removal -> voxel centers.
"""
from dataclasses import dataclass
from typing import Sequence
import logging

import numpy
from sklearn.cluster import DBSCAN

from errors import EmptyInputError, EmptyMapError, NoMovingPointsError
from geometry import PointCloud
from lanelet_map import PolygonMap, ROAD_KINDS

LOG = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
	cell_size: float
	origin: numpy.ndarray
	occupied_cells: numpy.ndarray
	""" K x 3 unique integer indices, lexicographically sorted """

	def __post_init__(self):
		if self.cell_size <= 0:
			raise ValueError("cell_size must be positive")

	def __len__(self) -> int:
		return len(self.occupied_cells)

	def cells(self) -> set[tuple[int, int, int]]:
		return {tuple(int(v) for v in cell) for cell in self.occupied_cells}

	def centers(self) -> numpy.ndarray:
		return self.origin + (self.occupied_cells + 0.5) * self.cell_size


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
	labels: numpy.ndarray
	""" -1 for noise, cluster ids contiguous from 0 """
	eps: float
	min_pts: int

	def __len__(self) -> int:
		return len(self.labels)

	@property
	def cluster_count(self) -> int:
		return int(self.labels.max()) + 1 if len(self.labels) > 0 else 0

	def sizes(self) -> numpy.ndarray:
		return numpy.bincount(self.labels[self.labels >= 0], minlength=self.cluster_count)


def doppler_filter(cloud: PointCloud, v_min: float) -> PointCloud:
	""" Keeps points with |radial velocity| strictly above `v_min` """
	if v_min < 0:
		raise ValueError("v_min must be non-negative")
	return cloud.select(numpy.abs(cloud.radial_velocity) > v_min)


def dbscan(cloud: PointCloud, eps: float, min_pts: int) -> ClusterLabeling:
	"""
	Standard DBSCAN in 3D. The eps-neighbourhood is inclusive and counts the
	point itself; a border point belongs to the lowest-id cluster reaching it.
	"""
	if eps <= 0:
		raise ValueError("eps must be positive")
	if min_pts < 1:
		raise ValueError("min_pts must be at least 1")
	if len(cloud) == 0:
		return ClusterLabeling(numpy.zeros(0, dtype=numpy.int64), eps, min_pts)

	labels = DBSCAN(eps=eps, min_samples=min_pts, algorithm='kd_tree').fit_predict(cloud.positions)
	return ClusterLabeling(numpy.asarray(labels, dtype=numpy.int64), eps, min_pts)


def largest_cluster(cloud: PointCloud, labeling: ClusterLabeling) -> PointCloud:
	if len(labeling) != len(cloud):
		raise ValueError("labeling does not match the cloud")
	sizes = labeling.sizes()
	if len(sizes) == 0:
		raise EmptyInputError("all points are noise")
	# argmax returns the first maximum, i.e. the lowest cluster id on ties
	return cloud.select(labeling.labels == int(numpy.argmax(sizes)))


def voxel_grid(cloud: PointCloud, cell_size: float) -> VoxelGrid:
	if cell_size <= 0:
		raise ValueError("cell_size must be positive")
	indices = numpy.floor(cloud.positions / cell_size).astype(numpy.int64)
	occupied = numpy.unique(indices, axis=0) if len(indices) > 0 else numpy.zeros((0, 3), dtype=numpy.int64)
	return VoxelGrid(cell_size=cell_size, origin=numpy.zeros(3), occupied_cells=occupied)


def voxelize(cloud: PointCloud, cell_size: float) -> PointCloud:
	""" One point per occupied cell, placed at the cell center """
	grid = voxel_grid(cloud, cell_size)
	return PointCloud(grid.centers(), frame_id=cloud.frame_id, stamp=cloud.stamp)


def mask_road(scan: PointCloud, polygon_map: PolygonMap, kinds=ROAD_KINDS) -> PointCloud:
	""" Keeps scan points whose (x, y) footprint is inside a road polygon """
	if len(polygon_map) == 0:
		raise EmptyMapError("map has no polygons")
	return scan.select(polygon_map.covered_mask(scan.positions[:, :2], kinds=kinds))


def accumulate_frames(frames: Sequence[PointCloud], n_f: int) -> PointCloud:
	""" Concatenation of the most recent `n_f` frames """
	if n_f < 1:
		raise ValueError("n_f must be at least 1")
	window = list(frames)[-n_f:]
	if len(window) == 0:
		return PointCloud.empty()
	return PointCloud.concatenate(window)


def build_source_cloud(frames: Sequence[PointCloud], v_min: float, eps: float, min_pts: int, cell_size: float) -> PointCloud:
	accumulated = PointCloud.concatenate(list(frames)) if len(frames) > 0 else PointCloud.empty()
	moving = doppler_filter(accumulated, v_min)
	if len(moving) == 0:
		raise NoMovingPointsError()
	labeling = dbscan(moving, eps, min_pts)
	try:
		road = largest_cluster(moving, labeling)
	except EmptyInputError:
		raise NoMovingPointsError("no moving points (all moving points are noise)")
	source = voxelize(road, cell_size)
	LOG.info(
		f"Source cloud: {len(accumulated)} points -> {len(moving)} moving -> "
		f"{len(road)} in largest of {labeling.cluster_count} clusters -> {len(source)} voxels"
	)
	return source


def stack_layers(cloud: PointCloud, height: float, cell_size: float) -> PointCloud:
	""" Copies of `cloud` raised by every multiple of cell_size up to `height` """
	if height < 0:
		raise ValueError("height must be non-negative")
	layers = int(numpy.floor(height / cell_size + 1e-9))
	if layers == 0:
		return cloud
	positions = numpy.concatenate([cloud.positions + [0.0, 0.0, k * cell_size] for k in range(layers + 1)])
	return PointCloud(positions, frame_id=cloud.frame_id, stamp=cloud.stamp)


def planar_spread(cloud: PointCloud) -> float:
	""" Standard deviation along the second principal axis: small for blobs and single lanes """
	if len(cloud) < 3:
		return 0.0
	eigenvalues = numpy.linalg.eigvalsh(numpy.cov(cloud.positions.T))
	return float(numpy.sqrt(max(eigenvalues[1], 0.0)))


def build_target_cloud(scan: PointCloud, polygon_map: PolygonMap, eps: float, min_pts: int, cell_size: float, height: float = 0.0) -> PointCloud:
	"""
	Road voxels of the laser scan. A positive `height` stacks them into the
	volume vehicle bodies sweep, which is where the radar sees reflections.
	"""
	road = mask_road(scan, polygon_map)
	labeling = dbscan(road, eps, min_pts)
	kept = road.select(labeling.labels >= 0)
	if len(kept) == 0:
		raise EmptyInputError("no laser-scan points left on the road")
	surface = voxelize(kept, cell_size)
	target = stack_layers(surface, height, cell_size)
	LOG.info(f"Target cloud: {len(scan)} scan points -> {len(road)} on road -> {len(kept)} after noise removal -> {len(surface)} voxels, {len(target)} stacked")
	return target
