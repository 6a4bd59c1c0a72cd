"""
Point clouds as text: `#` header lines (`frame_id`, `timestamp_ns`, `fields`)
followed by one comma-separated row per point.
"""
from interfaces import DataParser
from errors import DatasetError
from geometry import PointCloud
from pathlib import Path

import numpy

RADAR_FIELDS = ("x", "y", "z", "radial_velocity", "timestamp_ns", "rcs")
SCAN_FIELDS = ("x", "y", "z")

# Column layouts of files written without a `fields` header
FIELDS_BY_COUNT = {3: SCAN_FIELDS, 5: RADAR_FIELDS[:-1], 6: RADAR_FIELDS}

def _header(lines: list[str]) -> dict[str, str]:
	header = {}
	for line in lines:
		if not line.startswith('#'):
			break
		key, _, value = line[1:].partition(':')
		header[key.strip()] = value.strip()
	return header

def _fields(path: Path, header: dict[str, str], body: list[str]) -> tuple[str, ...]:
	if 'fields' in header:
		fields = tuple(name.strip() for name in header['fields'].split(','))
	elif len(body) == 0:
		fields = SCAN_FIELDS
	else:
		count = len(body[0].split(','))
		if count not in FIELDS_BY_COUNT:
			raise DatasetError(f"{path}: cannot tell the fields of {count} columns, add a '# fields:' line")
		fields = FIELDS_BY_COUNT[count]
	if fields[:3] != SCAN_FIELDS:
		raise DatasetError(f"{path}: fields must start with x,y,z")
	return fields

def read_cloud(path: Path) -> PointCloud:
	path = Path(path)
	try:
		lines = path.read_text(encoding='utf-8').splitlines()
	except OSError as error:
		raise DatasetError(f"cannot read point cloud {path}: {error}")

	header = _header(lines)
	body = [line for line in lines if line.strip() and not line.startswith('#')]
	fields = _fields(path, header, body)
	frame_id = header.get('frame_id', "sensor")
	try:
		stamp = int(header['timestamp_ns']) if 'timestamp_ns' in header else None
	except ValueError as error:
		raise DatasetError(f"{path}: {error}")

	if len(body) == 0:
		return PointCloud.empty(frame_id=frame_id, stamp=stamp, with_rcs='rcs' in fields)

	dtype = [(name, numpy.int64 if name == 'timestamp_ns' else numpy.float64) for name in fields]
	try:
		table = numpy.loadtxt(body, dtype=dtype, delimiter=',', ndmin=1)
		return PointCloud(
			positions=numpy.column_stack([table['x'], table['y'], table['z']]),
			radial_velocity=table['radial_velocity'] if 'radial_velocity' in fields else None,
			timestamps=table['timestamp_ns'] if 'timestamp_ns' in fields else None,
			rcs=table['rcs'] if 'rcs' in fields else None,
			frame_id=frame_id,
			stamp=stamp,
		)
	except ValueError as error:
		raise DatasetError(f"{path}: {error}")

def write_cloud(path: Path, cloud: PointCloud, scan: bool = False):
	""" `scan=True` writes positions only """
	fields = SCAN_FIELDS if scan else RADAR_FIELDS if cloud.has_rcs else RADAR_FIELDS[:-1]
	columns = {
		'x': cloud.positions[:, 0],
		'y': cloud.positions[:, 1],
		'z': cloud.positions[:, 2],
		'radial_velocity': cloud.radial_velocity,
		'timestamp_ns': cloud.timestamps,
		'rcs': cloud.rcs,
	}
	formats = ['%d' if name == 'timestamp_ns' else '%.17g' for name in fields]

	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with open(path, 'w', encoding='utf-8', newline='\n') as file:
		file.write(f"# frame_id: {cloud.frame_id}\n")
		if cloud.stamp is not None:
			file.write(f"# timestamp_ns: {int(cloud.stamp)}\n")
		file.write(f"# fields: {','.join(fields)}\n")
		if len(cloud) > 0:
			table = numpy.rec.fromarrays([columns[name] for name in fields], names=list(fields))
			numpy.savetxt(file, table, fmt=formats, delimiter=',')

class PointCloudParser(DataParser):
	EXTENSIONS = {'.pts'}

	def readData(self) -> PointCloud:
		return read_cloud(self.path)

DataParser.register(PointCloudParser)
