import math

import numpy
import pytest

from errors import EmptyInputError, EmptyMapError, NoMovingPointsError
from geometry import PointCloud
from lanelet_map import Lanelet, LaneletKind, PolygonMap, build_polygon_map
from preprocess import (
	ClusterLabeling, accumulate_frames, build_source_cloud, build_target_cloud, dbscan,
	doppler_filter, largest_cluster, mask_road, planar_spread, stack_layers, voxel_grid, voxelize,
)


def reference_dbscan(points: numpy.ndarray, eps: float, min_pts: int) -> numpy.ndarray:
	""" Quadratic DBSCAN: clusters grow from the lowest unlabeled core point """
	n = len(points)
	distances = numpy.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
	neighbours = [numpy.flatnonzero(distances[i] <= eps) for i in range(n)]
	core = [len(neighbours[i]) >= min_pts for i in range(n)]
	labels = numpy.full(n, -1)
	cluster = 0
	for i in range(n):
		if labels[i] != -1 or not core[i]:
			continue
		labels[i] = cluster
		stack = [i]
		while stack:
			j = stack.pop()
			if not core[j]:
				continue
			for k in neighbours[j]:
				if labels[k] == -1:
					labels[k] = cluster
					stack.append(k)
		cluster += 1
	return labels


def partition(labels: numpy.ndarray) -> set[frozenset[int]]:
	return {frozenset(numpy.flatnonzero(labels == label).tolist()) for label in set(labels.tolist()) if label >= 0}


def moving(positions, velocity=1.0) -> PointCloud:
	positions = numpy.asarray(positions, dtype=float).reshape(-1, 3)
	return PointCloud(positions, radial_velocity=numpy.full(len(positions), velocity))


def rectangle_lanelet(lanelet_id=1, length=10.0, width=3.0, kind=LaneletKind.DRIVING, y0=0.0) -> Lanelet:
	return Lanelet(lanelet_id, [[0.0, y0 + width], [length, y0 + width]], [[0.0, y0], [length, y0]], kind)


# --- doppler_filter ---

def test_doppler_filter_threshold_is_strict():
	cloud = PointCloud(numpy.zeros((4, 3)), radial_velocity=[0.10, 0.15, -0.2, 0.16])
	kept = doppler_filter(cloud, 0.15)
	assert kept.radial_velocity.tolist() == [-0.2, 0.16]


def test_doppler_filter_empty():
	assert len(doppler_filter(PointCloud.empty(), 0.15)) == 0


def test_doppler_filter_rejects_negative_threshold():
	with pytest.raises(ValueError):
		doppler_filter(PointCloud.empty(), -0.1)


def test_doppler_filter_matches_linear_scan():
	rng = numpy.random.default_rng(0)
	n = 5000
	velocity = numpy.where(rng.uniform(size=n) < 0.93, rng.uniform(-0.15, 0.15, size=n), rng.uniform(-15.0, 15.0, size=n))
	cloud = PointCloud(rng.normal(size=(n, 3)), radial_velocity=velocity)
	expected = [i for i in range(n) if abs(velocity[i]) > 0.15]
	kept = doppler_filter(cloud, 0.15)
	assert numpy.array_equal(kept.positions, cloud.positions[expected])
	assert len(kept) / n == len(expected) / n
	# idempotent
	assert numpy.array_equal(doppler_filter(kept, 0.15).positions, kept.positions)


# --- dbscan ---

def test_dbscan_two_far_points_are_two_clusters():
	labeling = dbscan(PointCloud(numpy.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])), eps=0.5, min_pts=1)
	assert labeling.labels.tolist() == [0, 1]
	assert labeling.cluster_count == 2


def test_dbscan_ball_and_outlier():
	rng = numpy.random.default_rng(1)
	ball = rng.normal(scale=0.03, size=(12, 3))
	points = numpy.concatenate([ball, [[5.0, 0.0, 0.0]]])
	labeling = dbscan(PointCloud(points), eps=0.5, min_pts=10)
	assert labeling.labels.tolist() == [0] * 12 + [-1]
	assert numpy.array_equal(labeling.labels, reference_dbscan(points, 0.5, 10))


def test_dbscan_empty():
	labeling = dbscan(PointCloud.empty(), eps=0.5, min_pts=10)
	assert len(labeling) == 0
	assert labeling.cluster_count == 0


@pytest.mark.parametrize("eps,min_pts", [(0.0, 1), (0.5, 0)])
def test_dbscan_rejects_bad_parameters(eps, min_pts):
	with pytest.raises(ValueError):
		dbscan(PointCloud.empty(), eps=eps, min_pts=min_pts)


def test_dbscan_matches_reference():
	rng = numpy.random.default_rng(2)
	for instance in range(100):
		n = int(rng.integers(1, 301))
		blobs = rng.uniform(0.0, 4.0, size=(int(rng.integers(1, 5)), 3))
		points = blobs[rng.integers(0, len(blobs), size=n)] + rng.normal(scale=rng.uniform(0.1, 0.6), size=(n, 3))
		if instance % 2 == 0:
			eps, min_pts = 0.5, 10
		else:
			eps, min_pts = float(rng.uniform(0.2, 1.0)), int(rng.integers(1, 15))

		labeling = dbscan(PointCloud(points), eps, min_pts)
		expected = reference_dbscan(points, eps, min_pts)
		assert partition(labeling.labels) == partition(expected)
		assert numpy.array_equal(labeling.labels, expected)


def test_dbscan_is_permutation_invariant_as_partition():
	rng = numpy.random.default_rng(3)
	points = rng.normal(scale=0.4, size=(200, 3))
	order = rng.permutation(len(points))
	labels = dbscan(PointCloud(points), 0.5, 10).labels
	permuted = dbscan(PointCloud(points[order]), 0.5, 10).labels
	core_noise = set(numpy.flatnonzero(labels == -1).tolist())
	assert {order[i] for i in numpy.flatnonzero(permuted == -1)} == core_noise
	assert len(partition(labels)) == len(partition(permuted))


# --- largest_cluster ---

def test_largest_cluster_single():
	cloud = PointCloud(numpy.zeros((3, 3)))
	labeling = ClusterLabeling(numpy.array([0, 0, 0]), 0.5, 1)
	assert len(largest_cluster(cloud, labeling)) == 3


def test_largest_cluster_picks_bigger():
	cloud = PointCloud(numpy.arange(140, dtype=float)[:, None] * numpy.ones(3))
	labels = numpy.array([1] * 40 + [0] * 100)
	result = largest_cluster(cloud, ClusterLabeling(labels, 0.5, 10))
	assert len(result) == 100
	assert numpy.array_equal(result.positions, cloud.positions[40:])


def test_largest_cluster_tie_goes_to_lowest_id():
	cloud = PointCloud(numpy.arange(100, dtype=float)[:, None] * numpy.ones(3))
	labels = numpy.array([1] * 50 + [0] * 50)
	result = largest_cluster(cloud, ClusterLabeling(labels, 0.5, 10))
	assert numpy.array_equal(result.positions, cloud.positions[50:])


def test_largest_cluster_all_noise():
	with pytest.raises(EmptyInputError):
		largest_cluster(PointCloud(numpy.zeros((2, 3))), ClusterLabeling(numpy.array([-1, -1]), 0.5, 10))


def test_largest_cluster_length_mismatch():
	with pytest.raises(ValueError):
		largest_cluster(PointCloud(numpy.zeros((2, 3))), ClusterLabeling(numpy.array([0]), 0.5, 1))


# --- voxelize ---

def test_voxelize_uses_cell_center():
	result = voxelize(PointCloud(numpy.array([[0.3, 0.2, 0.1]])), 0.5)
	assert numpy.allclose(result.positions, [[0.25, 0.25, 0.25]])


def test_voxelize_merges_points_of_one_cell():
	result = voxelize(PointCloud(numpy.array([[0.1, 0.1, 0.1], [0.4, 0.3, 0.2]])), 0.5)
	assert len(result) == 1


def test_voxelize_negative_coordinates_floor():
	result = voxelize(PointCloud(numpy.array([[-0.1, -0.6, 0.0]])), 0.5)
	assert numpy.allclose(result.positions, [[-0.25, -0.75, 0.25]])


def test_voxelize_matches_index_set():
	rng = numpy.random.default_rng(4)
	points = rng.uniform(0.0, 1.0, size=(1000, 3))
	expected = {tuple(int(math.floor(v / 0.5)) for v in p) for p in points}
	result = voxelize(PointCloud(points), 0.5)
	assert len(result) == len(expected)
	assert voxel_grid(PointCloud(points), 0.5).cells() == expected


def test_voxelize_properties():
	rng = numpy.random.default_rng(5)
	points = rng.uniform(-20.0, 20.0, size=(2000, 3))
	result = voxelize(PointCloud(points), 0.5)
	cells = numpy.floor(result.positions / 0.5)
	assert len(numpy.unique(cells, axis=0)) == len(result)
	# every center is close to some input point
	for center in result.positions[:200]:
		assert numpy.linalg.norm(points - center, axis=1).min() <= 0.5 * math.sqrt(3) / 2 + 1e-12
	# fixed point
	assert numpy.array_equal(voxelize(result, 0.5).positions, result.positions)


def test_voxelize_rejects_bad_cell():
	with pytest.raises(ValueError):
		voxelize(PointCloud.empty(), 0.0)


# --- mask_road ---

def test_mask_road_grid_count():
	polygon_map = build_polygon_map([rectangle_lanelet()], 0.5)
	xs = numpy.arange(-5.0, 15.0, 0.25) + 0.125
	ys = numpy.arange(-5.0, 8.0, 0.25) + 0.125
	grid = numpy.array([[x, y, 0.0] for x in xs for y in ys])
	kept = mask_road(PointCloud(grid, frame_id="map"), polygon_map)
	# 30 m2 at one point per 0.0625 m2
	assert len(kept) == 480
	assert numpy.array_equal(mask_road(kept, polygon_map).positions, kept.positions)


def test_mask_road_centroid_and_far_point():
	polygon_map = build_polygon_map([rectangle_lanelet()], 0.5)
	centroid = polygon_map.get(3).centroid
	scan = PointCloud(numpy.array([[centroid[0], centroid[1], 0.0], [100.0, 100.0, 0.0]]))
	kept = mask_road(scan, polygon_map)
	assert len(kept) == 1
	assert numpy.allclose(kept.positions[0, :2], centroid)


def test_mask_road_skips_parking():
	polygon_map = build_polygon_map([rectangle_lanelet(), rectangle_lanelet(2, kind=LaneletKind.PARKING, y0=3.0)], 0.5)
	scan = PointCloud(numpy.array([[5.0, 1.5, 0.0], [5.0, 4.5, 0.0]]))
	assert mask_road(scan, polygon_map).positions[:, 1].tolist() == [1.5]


def test_mask_road_empty_map():
	with pytest.raises(EmptyMapError):
		mask_road(PointCloud(numpy.zeros((1, 3))), PolygonMap([]))


# --- accumulate_frames ---

def test_accumulate_frames_takes_most_recent():
	frames = [PointCloud(numpy.full((2, 3), float(k))) for k in range(3)]
	accumulated = accumulate_frames(frames, 2)
	assert len(accumulated) == 4
	assert accumulated.positions[:, 0].tolist() == [1.0, 1.0, 2.0, 2.0]


def test_accumulate_frames_fewer_than_window():
	frames = [PointCloud(numpy.full((2, 3), float(k))) for k in range(3)]
	assert len(accumulate_frames(frames, 2000)) == 6


def test_accumulate_frames_rejects_zero_window():
	with pytest.raises(ValueError):
		accumulate_frames([], 0)


# --- build_source_cloud / build_target_cloud ---

def test_build_source_cloud_all_static():
	frames = [PointCloud(numpy.random.default_rng(6).normal(size=(50, 3)))]
	with pytest.raises(NoMovingPointsError, match="no moving points"):
		build_source_cloud(frames, 0.15, 0.5, 10, 0.5)


def test_build_source_cloud_keeps_largest_moving_cluster():
	rng = numpy.random.default_rng(7)
	track = numpy.column_stack([numpy.arange(0.0, 20.0, 0.05), rng.normal(scale=0.05, size=400), rng.normal(scale=0.05, size=400)])
	tree = numpy.array([50.0, 50.0, 5.0]) + rng.normal(scale=0.05, size=(20, 3))
	static = rng.uniform(-30.0, 30.0, size=(500, 3))
	frames = [
		moving(track[:200], 8.0),
		PointCloud(numpy.concatenate([track[200:], static]), radial_velocity=numpy.concatenate([numpy.full(200, -8.0), numpy.zeros(500)])),
		moving(tree, 0.4),
	]
	source = build_source_cloud(frames, 0.15, 0.5, 10, 0.5)
	assert len(source) > 0
	assert source.positions[:, 0].min() >= -0.5
	assert source.positions[:, 0].max() <= 20.5
	assert numpy.abs(source.positions[:, 1]).max() <= 0.75
	assert numpy.array_equal(voxelize(source, 0.5).positions, source.positions)


def test_build_target_cloud_stays_on_road():
	rng = numpy.random.default_rng(8)
	polygon_map = build_polygon_map([rectangle_lanelet(length=20.0), rectangle_lanelet(2, length=20.0, kind=LaneletKind.PARKING, y0=3.0)], 0.5)
	road = numpy.column_stack([rng.uniform(0.0, 20.0, 6000), rng.uniform(0.0, 3.0, 6000), numpy.zeros(6000)])
	parking = numpy.column_stack([rng.uniform(0.0, 20.0, 3000), rng.uniform(3.0, 6.0, 3000), numpy.zeros(3000)])
	lonely = numpy.array([[10.0, 1.5, 30.0]])
	scan = PointCloud(numpy.concatenate([road, parking, lonely]), frame_id="map")
	target = build_target_cloud(scan, polygon_map, 0.5, 10, 0.5)
	assert len(target) > 0
	xy = target.positions[:, :2]
	assert xy[:, 0].min() >= -0.5 and xy[:, 0].max() <= 20.5
	assert xy[:, 1].min() >= -0.5 and xy[:, 1].max() <= 3.5
	assert target.positions[:, 2].max() < 1.0


def test_build_target_cloud_nothing_on_road():
	polygon_map = build_polygon_map([rectangle_lanelet()], 0.5)
	with pytest.raises(EmptyInputError):
		build_target_cloud(PointCloud(numpy.array([[50.0, 50.0, 0.0]])), polygon_map, 0.5, 10, 0.5)


def test_build_target_cloud_stacked():
	rng = numpy.random.default_rng(9)
	polygon_map = build_polygon_map([rectangle_lanelet(length=20.0)], 0.5)
	scan = PointCloud(numpy.column_stack([rng.uniform(0.0, 20.0, 6000), rng.uniform(0.0, 3.0, 6000), numpy.zeros(6000)]), frame_id="map")
	surface = build_target_cloud(scan, polygon_map, 0.5, 10, 0.5)
	stacked = build_target_cloud(scan, polygon_map, 0.5, 10, 0.5, height=1.5)
	assert len(stacked) == 4 * len(surface)
	assert numpy.array_equal(stacked.positions[:len(surface)], surface.positions)
	assert stacked.positions[:, 2].max() == pytest.approx(surface.positions[:, 2].max() + 1.5)


# --- stack_layers / planar_spread ---

def test_stack_layers_offsets():
	cloud = PointCloud(numpy.array([[0.25, 0.25, 0.25], [1.25, 0.25, 0.25]]), frame_id="map")
	stacked = stack_layers(cloud, 1.0, 0.5)
	assert stacked.positions[:, 2].tolist() == [0.25, 0.25, 0.75, 0.75, 1.25, 1.25]
	assert stacked.frame_id == "map"
	assert stack_layers(cloud, 0.4, 0.5) is cloud
	assert stack_layers(cloud, 0.0, 0.5) is cloud
	with pytest.raises(ValueError):
		stack_layers(cloud, -1.0, 0.5)


def test_planar_spread():
	rng = numpy.random.default_rng(10)
	blob = PointCloud(rng.normal(scale=0.5, size=(200, 3)))
	lane = PointCloud(numpy.column_stack([rng.uniform(0.0, 40.0, 200), rng.uniform(0.0, 3.0, 200), rng.uniform(0.0, 1.5, 200)]))
	corner = PointCloud(numpy.concatenate([
		numpy.column_stack([rng.uniform(0.0, 40.0, 200), rng.uniform(0.0, 3.0, 200), numpy.zeros(200)]),
		numpy.column_stack([rng.uniform(0.0, 3.0, 200), rng.uniform(0.0, 40.0, 200), numpy.zeros(200)]),
	]))
	assert planar_spread(blob) < 1.0
	assert planar_spread(lane) < 1.0
	assert planar_spread(corner) > 3.0
	assert planar_spread(PointCloud(numpy.zeros((2, 3)))) == 0.0
