import math

import numpy
import pytest

from analysis.evaluation import (
	LocalizationError, PlacementStudy, SeedSweep, apply_error, canopy_alignment, pose_error,
	position_placements, road_alignment_ratio, run_seed_sweep, seed_poses, spread, wrap_degrees, yaw_placements,
)
from config import EvaluationConfig, PreprocessConfig, RegistrationConfig, RunConfig
from containers import Dataset
from errors import ConfigError, EmptyInputError, MissingPoseError
from geometry import PointCloud, Pose
from lanelet_map import Lanelet, LaneletKind, LaneletMap, build_polygon_map
from preprocess import ClusterLabeling
from registration import CoarseHint
from simulator import ScenarioConfig, SensorSetup

TRUTH = Pose.from_euler(90.0, translation=(5.0, -3.0, 6.0))
CELL = 0.5


def road_points() -> numpy.ndarray:
	""" Jittered 9 m grid in the sensor frame, snapped to voxel centers """
	rng = numpy.random.default_rng(0)
	grid = numpy.array([[x, y, z] for x in (10.0, 19.0, 28.0) for y in (-9.0, 0.0, 9.0) for z in (-6.0, 3.0)])
	grid += rng.uniform(-1.0, 1.0, size=grid.shape)
	return (numpy.floor(grid / CELL) + 0.5) * CELL


def sweep_dataset() -> tuple[Dataset, PointCloud]:
	points = road_points()
	frames = [
		PointCloud(points[:9], numpy.full(9, 2.0), numpy.zeros(9), frame_id="sensor_a", stamp=0),
		PointCloud(points[9:], numpy.full(9, -2.0), numpy.full(9, 50_000_000), frame_id="sensor_a", stamp=50_000_000),
	]
	dataset = Dataset(
		root=None,
		lanelet_map=LaneletMap(),
		scan=PointCloud.empty("map"),
		frames={"sensor_a": frames},
		truth={"sensor_a": TRUTH},
		hints={"sensor_a": CoarseHint((5.0, -3.0), "N", 6.0)},
	)
	return dataset, PointCloud(TRUTH.apply(points), frame_id="map")


def sweep_config() -> RunConfig:
	return RunConfig(
		preprocess=PreprocessConfig(eps=20.0, min_pts=1, cell_size=CELL),
		registration=RegistrationConfig(yaw_span=0.0),
		evaluation=EvaluationConfig(n_seeds=5, seed_radius=1.0, yaw_spread=2.0),
	)


def strip_map():
	return build_polygon_map([
		Lanelet(1, [[0.0, 3.0], [10.0, 3.0]], [[0.0, 0.0], [10.0, 0.0]]),
		Lanelet(2, [[0.0, 5.5], [10.0, 5.5]], [[0.0, 3.0], [10.0, 3.0]], LaneletKind.PARKING),
	], 1.0)


# --- errors ---

def test_pose_error_of_truth_is_zero():
	error = pose_error(TRUTH, TRUTH)
	assert error.values() == pytest.approx([0.0] * 7, abs=1e-9)


def test_pose_error_components():
	truth = Pose.from_euler(0.0, translation=(10.0, 20.0, 6.0))
	estimate = Pose.from_euler(0.11, translation=(10.59, 19.31, 4.95))
	error = pose_error(estimate, truth)
	assert (error.dx, error.dy, error.dz) == pytest.approx((0.59, -0.69, -1.05), abs=1e-9)
	assert error.d2d == pytest.approx(math.hypot(0.59, 0.69), abs=1e-9)
	assert error.yaw == pytest.approx(0.11, abs=1e-9)
	assert error.roll == pytest.approx(0.0, abs=1e-9)


def test_pose_error_is_relative_to_true_heading():
	truth = Pose.from_euler(170.0, 5.0, -3.0)
	error = pose_error(Pose.from_euler(-175.0, 5.0, -3.0), truth)
	assert error.yaw == pytest.approx(15.0, abs=0.5)


def test_apply_error_inverts_pose_error():
	rng = numpy.random.default_rng(1)
	for _ in range(50):
		truth = Pose.from_euler(*rng.uniform(-180.0, 180.0, size=1), *rng.uniform(-10.0, 10.0, size=2), translation=rng.uniform(-50.0, 50.0, size=3))
		error = LocalizationError(*rng.normal(size=3), 0.0, *rng.uniform(-20.0, 20.0, size=3))
		recovered = pose_error(apply_error(truth, error), truth)
		assert [recovered.dx, recovered.dy, recovered.dz] == pytest.approx([error.dx, error.dy, error.dz], abs=1e-9)
		assert [recovered.roll, recovered.pitch, recovered.yaw] == pytest.approx([error.roll, error.pitch, error.yaw], abs=1e-6)


@pytest.mark.parametrize("angle,wrapped", [(0.0, 0.0), (190.0, -170.0), (-180.0, 180.0), (540.0, 180.0), (-190.0, 170.0)])
def test_wrap_degrees(angle, wrapped):
	assert wrap_degrees(angle) == pytest.approx(wrapped)


# --- seeds ---

def test_seed_poses_without_spread():
	hint = CoarseHint((1.0, 2.0), "NE", 7.0)
	seeds = seed_poses(hint, 4, 0.0, 0.0, numpy.random.default_rng(2))
	assert len(seeds) == 4
	for seed in seeds:
		assert seed.translation.tolist() == [1.0, 2.0, 7.0]
		assert seed.yaw == pytest.approx(45.0, abs=1e-9)
	assert spread(seeds) == 0.0


def test_seed_poses_stay_in_disc():
	hint = CoarseHint((1.0, 2.0), "W", 7.0)
	seeds = seed_poses(hint, 200, 15.0, 45.0, numpy.random.default_rng(3))
	for seed in seeds:
		assert math.dist(seed.translation[:2], (1.0, 2.0)) <= 15.0
		assert abs(wrap_degrees(seed.yaw - 180.0)) <= 45.0
	with pytest.raises(ValueError):
		seed_poses(hint, 0, 1.0, 1.0, numpy.random.default_rng(3))


def test_spread():
	poses = [Pose.from_euler(0.0, translation=(x, 0.0, 0.0)) for x in (-1.0, 1.0)]
	assert spread(poses) == pytest.approx(1.0)
	assert math.isnan(spread([]))


# --- seed sweep ---

def test_seed_sweep_tables():
	dataset, target = sweep_dataset()
	analyzer = SeedSweep(dataset.truth, dataset, "sensor_a", sweep_config(), target=target)
	book = analyzer.analyze()

	assert [s.name for s in book.sheets] == ["sensor_a_errors", "sensor_a_scatter", "sensor_a_summary"]
	errors = book.sheet("sensor_a_errors")
	assert errors.header() == SeedSweep.HEADER
	assert [r.values[0] for r in errors.rows[1:]] == ["0", "1", "2", "3", "4", "mean"]
	assert len(book.sheet("sensor_a_scatter").rows) == 6

	summary = book.sheet("sensor_a_summary").rows[1].values
	assert summary[:2] == ["5", "5"]
	assert float(summary[2]) < 1e-3
	assert float(summary[3]) < 1e-3
	assert analyzer.meanError("d2d") < 1e-3


def test_seed_sweep_is_reproducible():
	dataset, target = sweep_dataset()
	first = SeedSweep(dataset.truth, dataset, "sensor_a", sweep_config(), target=target).analyze()
	second = SeedSweep(dataset.truth, dataset, "sensor_a", sweep_config(), target=target).analyze()
	assert first == second


def test_seed_sweep_keeps_failed_seeds():
	dataset, target = sweep_dataset()
	seeds = [Pose.from_euler(91.0, translation=(5.5, -3.0, 6.0)), Pose.from_euler(90.0, translation=(5000.0, 0.0, 6.0))]
	book = SeedSweep(dataset.truth, dataset, "sensor_a", sweep_config(), seeds=seeds, target=target).analyze()
	failed = book.sheet("sensor_a_errors").rows[2].values
	assert failed[4:] == ["nan"] * 9 + ["0"]
	assert book.sheet("sensor_a_summary").rows[1].values[:2] == ["2", "1"]


def test_seed_sweep_needs_truth():
	dataset, _ = sweep_dataset()
	with pytest.raises(MissingPoseError):
		SeedSweep({}, dataset, "sensor_a", sweep_config())


def test_seed_sweep_rejects_bad_seed_count():
	dataset, _ = sweep_dataset()
	with pytest.raises(ConfigError):
		run_seed_sweep(dataset, sweep_config(), n_seeds=0)
	with pytest.raises(ConfigError):
		run_seed_sweep(dataset, sweep_config(), seed_radius=-1.0)


def test_seed_sweep_on_junction(junction):
	# Seeds within 15 m and 45 degrees of the manual hint
	analyzer = SeedSweep(junction.truth, junction, "sensor_a", RunConfig(evaluation=EvaluationConfig(n_seeds=6)))
	analyzer.analyze()
	assert all(run.succeeded for run in analyzer.runs)
	assert analyzer.meanError("d2d") <= 0.5
	assert analyzer.meanError("yaw") <= 0.5


def test_seed_sweep_with_range_noise_and_clutter(noisy_junction):
	analyzer = SeedSweep(noisy_junction.truth, noisy_junction, "sensor_a", RunConfig(evaluation=EvaluationConfig(n_seeds=8)))
	analyzer.analyze()
	assert all(run.succeeded for run in analyzer.runs)
	assert analyzer.meanError("yaw") <= 1.0


# --- map consistency ---

def test_road_alignment_ratio():
	points = numpy.array([[1.0, 1.0, 0.0], [5.0, 2.0, 0.0], [9.0, 0.5, 0.0], [5.0, 4.0, 0.0]])
	# The last point is on the parking lane, not on the road
	assert road_alignment_ratio(PointCloud(points, frame_id="map"), strip_map()) == pytest.approx(0.75)
	with pytest.raises(EmptyInputError):
		road_alignment_ratio(PointCloud.empty("map"), strip_map())


def test_canopy_alignment():
	source = PointCloud(numpy.array([[5.0, 1.0, 0.0], [5.0, 2.0, 0.0], [20.0, 19.0, 6.0], [20.0, 21.0, 6.0]]))
	labeling = ClusterLabeling(numpy.array([0, 0, 1, 1]), 2.0, 1)
	scan = PointCloud(numpy.array([[20.0, 20.0, 6.5], [0.0, 0.0, 0.0]]), frame_id="map")
	matches = canopy_alignment(source, labeling, scan, Pose.identity(), strip_map())
	assert len(matches) == 1
	assert matches[0].label == 1
	assert matches[0].size == 2
	assert matches[0].centroid == pytest.approx((20.0, 20.0, 6.0))
	assert matches[0].distance == pytest.approx(0.5)


def test_canopy_alignment_needs_scan():
	with pytest.raises(EmptyInputError):
		canopy_alignment(PointCloud(numpy.zeros((1, 3))), ClusterLabeling(numpy.zeros(1, dtype=int), 1.0, 1), PointCloud.empty("map"), Pose.identity(), strip_map())


# --- placements ---

def test_yaw_placements():
	sensor = SensorSetup(id="s", position=(1.0, 2.0, 6.0), yaw=40.0)
	placements = yaw_placements(sensor, (-10.0, 0.0, 10.0))
	assert [p.id for p in placements] == ["s_yaw-10", "s_yaw+0", "s_yaw+10"]
	assert [p.yaw for p in placements] == [30.0, 40.0, 50.0]
	assert all(p.position == (1.0, 2.0, 6.0) for p in placements)


def test_position_placements_face_the_junction():
	placements = position_placements(SensorSetup(id="s", position=(0.0, 0.0, 6.0)), ((-12.0, -12.0), (0.0, 12.0)))
	assert [p.id for p in placements] == ["s_pos0", "s_pos1"]
	assert placements[0].yaw == pytest.approx(45.0)
	assert placements[1].yaw == pytest.approx(-90.0)
	assert placements[1].position == (0.0, 12.0, 6.0)


def test_placement_study_mode():
	with pytest.raises(ValueError):
		PlacementStudy(ScenarioConfig(), [], "pitch", RunConfig())
