from interfaces import DataParser
from errors import DatasetError
from geometry import Pose
from pathlib import Path
import csv

COLUMNS = ["sensor_id", "x", "y", "z", "qx", "qy", "qz", "qw"]

def read_poses(path: Path) -> dict[str, Pose]:
	""" `sensor_id,x,y,z,qx,qy,qz,qw` per line, `#` lines are comments """
	path = Path(path)
	poses: dict[str, Pose] = {}
	try:
		with open(path, 'r', encoding='utf-8', newline='') as file:
			rows = csv.reader(line for line in file if line.strip() and not line.startswith('#'))
			for row in rows:
				if len(row) != len(COLUMNS):
					raise DatasetError(f"{path}: expected {len(COLUMNS)} columns, got {len(row)}")
				values = [float(v) for v in row[1:]]
				poses[row[0].strip()] = Pose(values[:3], values[3:])
	except DatasetError:
		raise
	except OSError as error:
		raise DatasetError(f"cannot read poses {path}: {error}")
	except ValueError as error:
		raise DatasetError(f"{path}: {error}")
	return poses

def write_poses(path: Path, poses: dict[str, Pose]):
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with open(path, 'w', encoding='utf-8', newline='') as file:
		file.write("# " + ",".join(COLUMNS) + "\n")
		writer = csv.writer(file, lineterminator="\n")
		for sensor_id in sorted(poses):
			writer.writerow([sensor_id] + [repr(float(v)) for v in poses[sensor_id].as_vector()])

class PoseFileParser(DataParser):
	EXTENSIONS = {'.poses'}

	def readData(self) -> dict[str, Pose]:
		return read_poses(self.path)

DataParser.register(PoseFileParser)
