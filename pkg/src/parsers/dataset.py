"""
Dataset directory layout:

	scenario.json              scenario document (optional for recorded data)
	map.json                   lanelet map
	scan.pts                   aerial laser scan, map frame
	frames/<sensor>/NNNNNN.pts radar frames, sensor frame, one file per frame
	truth.poses                ground-truth sensor poses (simulated data only)
	hints.json                 manual placement hints per sensor
"""
from interfaces import DataParser
from containers import Dataset
from errors import DatasetError
from geometry import PointCloud
from registration import CoarseHint
from parsers.lanelets import read_map, write_map
from parsers.poses import read_poses, write_poses
from parsers.pts import read_cloud, write_cloud
from pathlib import Path
from typing import Any
import json

SCENARIO_FILE = "scenario.json"
MAP_FILE = "map.json"
SCAN_FILE = "scan.pts"
FRAMES_DIR = "frames"
TRUTH_FILE = "truth.poses"
HINTS_FILE = "hints.json"

def read_hints(path: Path) -> dict[str, CoarseHint]:
	try:
		document = json.loads(Path(path).read_text(encoding='utf-8'))
		return {
			sensor_id: CoarseHint(
				position=(float(entry['position'][0]), float(entry['position'][1])),
				heading=str(entry['heading']),
				height=float(entry.get('height', 0.0)),
			)
			for sensor_id, entry in document.items()
		}
	except OSError as error:
		raise DatasetError(f"cannot read hints {path}: {error}")
	except (ValueError, KeyError, TypeError, IndexError) as error:
		raise DatasetError(f"invalid hints {path}: {error}")

def write_hints(path: Path, hints: dict[str, CoarseHint]):
	document = {
		sensor_id: {"position": list(hint.position), "heading": hint.heading, "height": hint.height}
		for sensor_id, hint in sorted(hints.items())
	}
	Path(path).write_text(json.dumps(document, indent=2) + "\n", encoding='utf-8')

def read_frames(directory: Path) -> list[PointCloud]:
	""" Frames of one sensor in file-name order """
	return [read_cloud(file) for file in sorted(Path(directory).glob("*.pts"))]

def read_dataset(root: Path) -> Dataset:
	root = Path(root)
	for required in (MAP_FILE, SCAN_FILE):
		if not (root / required).is_file():
			raise DatasetError(f"dataset {root} has no {required}")

	scenario: dict[str, Any] = {}
	if (root / SCENARIO_FILE).is_file():
		try:
			scenario = json.loads((root / SCENARIO_FILE).read_text(encoding='utf-8'))
		except (OSError, ValueError) as error:
			raise DatasetError(f"cannot read {root / SCENARIO_FILE}: {error}")

	frames = {}
	if (root / FRAMES_DIR).is_dir():
		for directory in sorted(p for p in (root / FRAMES_DIR).iterdir() if p.is_dir()):
			frames[directory.name] = read_frames(directory)

	lanelet_map = read_map(root / MAP_FILE)
	scan = read_cloud(root / SCAN_FILE)
	truth = read_poses(root / TRUTH_FILE) if (root / TRUTH_FILE).is_file() else {}
	hints = read_hints(root / HINTS_FILE) if (root / HINTS_FILE).is_file() else {}
	return Dataset(root, lanelet_map, scan, frames, truth, hints, scenario)


def write_dataset(dataset: Dataset, root: Path):
	root = Path(root)
	root.mkdir(parents=True, exist_ok=True)
	if dataset.scenario:
		(root / SCENARIO_FILE).write_text(json.dumps(dataset.scenario, indent=2) + "\n", encoding='utf-8')
	write_map(root / MAP_FILE, dataset.lanelet_map)
	write_cloud(root / SCAN_FILE, dataset.scan, scan=True)
	for sensor_id, frames in sorted(dataset.frames.items()):
		for index, frame in enumerate(frames):
			write_cloud(root / FRAMES_DIR / sensor_id / f"{index:06d}.pts", frame)
	if dataset.truth:
		write_poses(root / TRUTH_FILE, dataset.truth)
	if dataset.hints:
		write_hints(root / HINTS_FILE, dataset.hints)

class DatasetParser(DataParser):
	EXTENSIONS: set[str] = set()

	def readData(self) -> Dataset:
		return read_dataset(self.path)

	@classmethod
	def canParse(cls, args: list[Any]) -> bool:
		path = Path(args[0])
		return path.is_dir() and ((path / SCENARIO_FILE).is_file() or (path / MAP_FILE).is_file())

DataParser.register(DatasetParser)
