import json

import numpy
import pytest
from openpyxl import load_workbook

from containers import StatisticsBook, StatisticsRow, StatisticsSheet
from errors import ConfigError, DatasetError
from geometry import PointCloud, Pose
from occupancy import OccupancyMessage
from parsers import get_parser, read_any
from parsers.dataset import DatasetParser, read_dataset, write_dataset
from parsers.lanelets import LaneletMapParser, read_map, write_map
from parsers.messages import MessageParser, read_messages, write_messages
from parsers.poses import read_poses, write_poses
from parsers.pts import PointCloudParser, read_cloud, write_cloud
from printers import print_book
from simulator import MapSpec, ScenarioConfig, build_intersection_map, run_scenario


def radar_frame(rng: numpy.random.Generator, n: int = 25, stamp: int = 1_700_000_000_123_456_789) -> PointCloud:
	return PointCloud(
		rng.normal(scale=30.0, size=(n, 3)),
		rng.normal(scale=5.0, size=n),
		numpy.full(n, stamp),
		rng.normal(scale=4.0, size=n),
		frame_id="sensor_a",
		stamp=stamp,
	)


def book() -> StatisticsBook:
	return StatisticsBook([
		StatisticsSheet("errors", [StatisticsRow(["seed", "d2d"]), StatisticsRow(["0", "0.125000"]), StatisticsRow(["mean", "nan"])]),
		StatisticsSheet("summary", [StatisticsRow(["n_seeds"]), StatisticsRow(["1"])]),
	])


# --- point clouds ---

def test_cloud_round_trip(tmp_path):
	cloud = radar_frame(numpy.random.default_rng(0))
	write_cloud(tmp_path / "frame.pts", cloud)
	loaded = read_cloud(tmp_path / "frame.pts")
	assert numpy.array_equal(loaded.positions, cloud.positions)
	assert numpy.array_equal(loaded.radial_velocity, cloud.radial_velocity)
	assert numpy.array_equal(loaded.timestamps, cloud.timestamps)
	assert numpy.array_equal(loaded.rcs, cloud.rcs)
	assert loaded.frame_id == "sensor_a"
	assert loaded.stamp == cloud.stamp


def test_single_point_cloud(tmp_path):
	cloud = radar_frame(numpy.random.default_rng(1), n=1)
	write_cloud(tmp_path / "one.pts", cloud)
	assert numpy.array_equal(read_cloud(tmp_path / "one.pts").positions, cloud.positions)


def test_empty_frame_round_trip(tmp_path):
	write_cloud(tmp_path / "empty.pts", PointCloud.empty("sensor_b", stamp=42, with_rcs=True))
	loaded = read_cloud(tmp_path / "empty.pts")
	assert len(loaded) == 0
	assert loaded.stamp == 42
	assert loaded.frame_id == "sensor_b"
	assert loaded.has_rcs


def test_scan_round_trip(tmp_path):
	scan = PointCloud(numpy.random.default_rng(2).uniform(-50.0, 50.0, size=(100, 3)), frame_id="map")
	write_cloud(tmp_path / "scan.pts", scan, scan=True)
	assert (tmp_path / "scan.pts").read_text().splitlines()[1] == "# fields: x,y,z"
	loaded = read_cloud(tmp_path / "scan.pts")
	assert numpy.array_equal(loaded.positions, scan.positions)
	assert loaded.frame_id == "map"
	assert loaded.stamp is None
	assert not loaded.has_rcs


def test_cloud_errors(tmp_path):
	(tmp_path / "fields.pts").write_text("# fields: a,b,c\n1,2,3\n")
	with pytest.raises(DatasetError):
		read_cloud(tmp_path / "fields.pts")
	(tmp_path / "row.pts").write_text("# fields: x,y,z\n1,2,3\n1,2\n")
	with pytest.raises(DatasetError):
		read_cloud(tmp_path / "row.pts")
	with pytest.raises(DatasetError):
		read_cloud(tmp_path / "missing.pts")


def test_cloud_fields_from_column_count(tmp_path):
	(tmp_path / "scan.pts").write_text("1.0,2.0,3.0\n4.0,5.0,6.0\n")
	scan = read_cloud(tmp_path / "scan.pts")
	assert scan.positions.shape == (2, 3)
	assert scan.radial_velocity is None

	(tmp_path / "radar.pts").write_text("# frame_id: sensor_a\n1.0,2.0,3.0,0.5,1000\n")
	radar = read_cloud(tmp_path / "radar.pts")
	assert radar.frame_id == "sensor_a"
	assert numpy.array_equal(radar.positions, [[1.0, 2.0, 3.0]])
	assert radar.radial_velocity.tolist() == [0.5]
	assert radar.timestamps.tolist() == [1000]
	assert not radar.has_rcs

	(tmp_path / "rcs.pts").write_text("1.0,2.0,3.0,0.5,1000,7.5\n")
	assert read_cloud(tmp_path / "rcs.pts").rcs.tolist() == [7.5]

	(tmp_path / "four.pts").write_text("1.0,2.0,3.0,0.5\n")
	with pytest.raises(DatasetError, match="4 columns"):
		read_cloud(tmp_path / "four.pts")


def test_cloud_with_non_finite_point(tmp_path):
	(tmp_path / "nan.pts").write_text("# fields: x,y,z\n1,2,3\nnan,2,3\n")
	with pytest.raises(DatasetError):
		read_cloud(tmp_path / "nan.pts")
	(tmp_path / "stamp.pts").write_text("# timestamp_ns: soon\n# fields: x,y,z\n1,2,3\n")
	with pytest.raises(DatasetError):
		read_cloud(tmp_path / "stamp.pts")


# --- maps ---

def test_map_round_trip(tmp_path):
	lanelet_map = build_intersection_map(MapSpec())
	write_map(tmp_path / "map.json", lanelet_map)
	loaded = read_map(tmp_path / "map.json")
	assert [l.id for l in loaded.lanelets] == [l.id for l in lanelet_map.lanelets]
	for original, copy in zip(lanelet_map.lanelets, loaded.lanelets):
		assert copy.kind is original.kind
		assert numpy.array_equal(copy.left, original.left)
		assert numpy.array_equal(copy.right, original.right)


def test_map_errors(tmp_path):
	lanelet = {"id": 1, "left": [[0, 3], [10, 3]], "right": [[0, 0], [10, 0]]}
	(tmp_path / "duplicate.json").write_text(json.dumps({"lanelets": [lanelet, lanelet]}))
	with pytest.raises(DatasetError):
		read_map(tmp_path / "duplicate.json")
	(tmp_path / "kind.json").write_text(json.dumps({"lanelets": [{**lanelet, "kind": "sidewalk"}]}))
	with pytest.raises(DatasetError):
		read_map(tmp_path / "kind.json")


def test_map_with_reversed_lanelet(tmp_path):
	reversed_lanelet = {"id": 1, "left": [[0, 3], [10, 3]], "right": [[10, 0], [0, 0]]}
	(tmp_path / "reversed.json").write_text(json.dumps({"lanelets": [reversed_lanelet]}))
	with pytest.raises(DatasetError, match="invalid map"):
		read_map(tmp_path / "reversed.json")


# --- poses and messages ---

def test_poses_round_trip(tmp_path):
	poses = {"sensor_b": Pose.from_euler(220.0, 8.0, translation=(12.0, 12.0, 6.0)), "sensor_a": Pose.from_euler(40.0, translation=(-12.0, -12.0, 6.0))}
	write_poses(tmp_path / "truth.poses", poses)
	lines = (tmp_path / "truth.poses").read_text().splitlines()
	assert lines[0] == "# sensor_id,x,y,z,qx,qy,qz,qw"
	assert lines[1].startswith("sensor_a,")
	loaded = read_poses(tmp_path / "truth.poses")
	assert sorted(loaded) == ["sensor_a", "sensor_b"]
	for sensor_id, pose in poses.items():
		assert numpy.allclose(loaded[sensor_id].as_vector(), pose.as_vector(), rtol=0.0, atol=1e-15)


def test_pose_file_errors(tmp_path):
	(tmp_path / "short.poses").write_text("sensor_a,1,2,3\n")
	with pytest.raises(DatasetError):
		read_poses(tmp_path / "short.poses")
	(tmp_path / "text.poses").write_text("sensor_a,1,2,3,0,0,0,one\n")
	with pytest.raises(DatasetError):
		read_poses(tmp_path / "text.poses")


def test_messages_round_trip(tmp_path):
	messages = [OccupancyMessage("sensor_a", 50_000_000, (4, 1)), OccupancyMessage("sensor_b", 70_000_000, ())]
	write_messages(tmp_path / "messages.jsonl", messages)
	assert read_messages(tmp_path / "messages.jsonl") == messages


def test_malformed_message(tmp_path):
	(tmp_path / "bad.jsonl").write_text('{"sensor_id": "a", "t_ns": 1, "polygon_ids": []}\n{"sensor_id": "a"}\n')
	with pytest.raises(DatasetError, match=":2:"):
		read_messages(tmp_path / "bad.jsonl")


def test_message_parser_streams(tmp_path):
	messages = [OccupancyMessage("sensor_a", 50_000_000, (4, 1)), OccupancyMessage("sensor_a", 100_000_000, (4,))]
	write_messages(tmp_path / "messages.jsonl", messages)
	parser = get_parser([tmp_path / "messages.jsonl"])
	stream = parser.iterData()
	assert next(stream) == messages[0]
	assert list(stream) == messages[1:]


# --- datasets ---

def test_dataset_round_trip(tmp_path):
	cfg = ScenarioConfig.model_validate({"duration": 1.0, "map": {"arm_lengths": [40.0, 40.0, 40.0, 40.0]}, "scan": {"point_density": 2.0, "canopy_points": 0}})
	dataset = run_scenario(cfg, tmp_path / "data")
	loaded = read_dataset(tmp_path / "data")

	assert loaded.sensor_ids == dataset.sensor_ids
	assert loaded.scenario == dataset.scenario
	assert loaded.hints == dataset.hints
	assert numpy.array_equal(loaded.scan.positions, dataset.scan.positions)
	for sensor_id in dataset.sensor_ids:
		assert len(loaded.frames[sensor_id]) == len(dataset.frames[sensor_id]) == 20
		for original, copy in zip(dataset.frames[sensor_id], loaded.frames[sensor_id]):
			assert copy.stamp == original.stamp
			assert numpy.array_equal(copy.positions, original.positions)
			assert numpy.array_equal(copy.radial_velocity, original.radial_velocity)
		assert numpy.allclose(loaded.truth[sensor_id].as_vector(), dataset.truth[sensor_id].as_vector(), rtol=0.0, atol=1e-15)


def test_dataset_needs_map(tmp_path):
	(tmp_path / "scenario.json").write_text("{}")
	with pytest.raises(DatasetError):
		read_dataset(tmp_path)


# --- parser selection ---

def test_parser_selection(tmp_path):
	write_cloud(tmp_path / "frame.pts", PointCloud.empty(stamp=0))
	write_map(tmp_path / "map.json", build_intersection_map(MapSpec(arm_lengths=(40.0, 40.0, 40.0, 40.0))))
	write_messages(tmp_path / "messages.jsonl", [])
	(tmp_path / "other.json").write_text('{"name": "not a map"}')

	assert isinstance(get_parser([tmp_path / "frame.pts"]), PointCloudParser)
	assert isinstance(get_parser([tmp_path / "map.json"]), LaneletMapParser)
	assert isinstance(get_parser([tmp_path / "messages.jsonl"]), MessageParser)
	assert isinstance(get_parser([tmp_path]), DatasetParser)
	assert get_parser([tmp_path / "other.json"]) is None
	assert get_parser([tmp_path / "missing.pts"]) is None
	with pytest.raises(DatasetError):
		read_any(tmp_path / "other.json")


# --- printers ---

def test_csv_printer(tmp_path):
	print_book(tmp_path / "evaluation.csv", book())
	assert (tmp_path / "evaluation_errors.csv").read_text() == "seed,d2d\n0,0.125000\nmean,nan\n"
	assert (tmp_path / "evaluation_summary.csv").read_text() == "n_seeds\n1\n"


def test_excel_printer(tmp_path):
	print_book(tmp_path / "evaluation.xlsx", book())
	workbook = load_workbook(tmp_path / "evaluation.xlsx")
	assert workbook.sheetnames == ["errors", "summary"]
	rows = list(workbook["errors"].iter_rows(values_only=True))
	assert rows[0] == ("seed", "d2d")
	assert rows[1] == (0, 0.125)
	assert rows[2] == ("mean", "nan")
	assert workbook["summary"]["A2"].value == 1


def test_unknown_table_format(tmp_path):
	with pytest.raises(ConfigError):
		print_book(tmp_path / "evaluation.txt", book())
