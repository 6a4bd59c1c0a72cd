"""
Occupancy messages, one JSON object per line:
{"sensor_id": "...", "t_ns": 123, "polygon_ids": [1, 2]}
"""
from interfaces import DataParser
from errors import DatasetError
from occupancy import OccupancyMessage
from pathlib import Path
from typing import Iterable, Iterator
import json

def iter_messages(path: Path) -> Iterator[OccupancyMessage]:
	""" Messages in file order, for replay """
	path = Path(path)
	try:
		with open(path, 'r', encoding='utf-8') as file:
			for number, line in enumerate(file, start=1):
				if not line.strip():
					continue
				try:
					record = json.loads(line)
					yield OccupancyMessage(record['sensor_id'], int(record['t_ns']), tuple(record['polygon_ids']))
				except (ValueError, KeyError, TypeError) as error:
					raise DatasetError(f"{path}:{number}: malformed message ({error})")
	except OSError as error:
		raise DatasetError(f"cannot read messages {path}: {error}")

def read_messages(path: Path) -> list[OccupancyMessage]:
	return list(iter_messages(path))

def write_messages(path: Path, messages: Iterable[OccupancyMessage]):
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with open(path, 'w', encoding='utf-8', newline='\n') as file:
		for message in messages:
			record = {"sensor_id": message.sensor_id, "t_ns": message.frame_timestamp, "polygon_ids": list(message.polygon_ids)}
			file.write(json.dumps(record) + "\n")

class MessageParser(DataParser):
	EXTENSIONS = {'.jsonl'}

	def readData(self) -> list[OccupancyMessage]:
		return read_messages(self.path)

	def iterData(self) -> Iterator[OccupancyMessage]:
		return iter_messages(self.path)

DataParser.register(MessageParser)
