"""
Lanelet maps as JSON:
{"origin": {"easting", "northing", "zone"}, "lanelets": [{"id", "kind", "left", "right"}]}
with boundaries as lists of [x, y] in the local metric frame.
"""
from interfaces import DataParser
from errors import DatasetError
from lanelet_map import Lanelet, LaneletKind, LaneletMap, MapOrigin
from pathlib import Path
from typing import Any
import json

from pydantic import BaseModel, Field, ValidationError

class OriginDocument(BaseModel):
	easting: float = 0.0
	northing: float = 0.0
	zone: str = ""

class LaneletDocument(BaseModel):
	id: int
	kind: LaneletKind = LaneletKind.DRIVING
	left: list[tuple[float, float]]
	right: list[tuple[float, float]]

class MapDocument(BaseModel):
	origin: OriginDocument = Field(default_factory=OriginDocument)
	lanelets: list[LaneletDocument]

def read_map(path: Path) -> LaneletMap:
	path = Path(path)
	try:
		document = MapDocument.model_validate_json(path.read_text(encoding='utf-8'))
	except OSError as error:
		raise DatasetError(f"cannot read map {path}: {error}")
	except ValidationError as error:
		raise DatasetError(f"invalid map {path}: {error}")

	ids = [l.id for l in document.lanelets]
	if len(ids) != len(set(ids)):
		raise DatasetError(f"{path}: lanelet ids must be unique")
	origin = MapOrigin(document.origin.easting, document.origin.northing, document.origin.zone)
	try:
		return LaneletMap([Lanelet(l.id, l.left, l.right, l.kind) for l in document.lanelets], origin)
	except ValueError as error:
		raise DatasetError(f"invalid map {path}: {error}")

def map_document(lanelet_map: LaneletMap) -> dict[str, Any]:
	return {
		"origin": {
			"easting": lanelet_map.origin.easting,
			"northing": lanelet_map.origin.northing,
			"zone": lanelet_map.origin.zone,
		},
		"lanelets": [
			{
				"id": lanelet.id,
				"kind": lanelet.kind.value,
				"left": lanelet.left.tolist(),
				"right": lanelet.right.tolist(),
			}
			for lanelet in lanelet_map.lanelets
		],
	}

def write_map(path: Path, lanelet_map: LaneletMap):
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	path.write_text(json.dumps(map_document(lanelet_map), indent=2) + "\n", encoding='utf-8')

class LaneletMapParser(DataParser):
	EXTENSIONS = {'.json'}

	def readData(self) -> LaneletMap:
		return read_map(self.path)

	@classmethod
	def canParse(cls, args: list[Any]) -> bool:
		if not super().canParse(args):
			return False
		try:
			return "lanelets" in json.loads(Path(args[0]).read_text(encoding='utf-8'))
		except (OSError, ValueError, TypeError):
			return False

DataParser.register(LaneletMapParser)
