from interfaces import DataParser
from errors import DatasetError
import parsers.pts
import parsers.lanelets
import parsers.messages
import parsers.poses
import parsers.dataset

from pathlib import Path
from typing import Any, Optional

def get_parser(args: list[Any]) -> Optional[DataParser]:
	return DataParser.getParser(args=args)

def get_parser_result(args: list[Any]) -> Optional[Any]:
	if parser := get_parser(args=args):
		return parser.readData()
	else:
		return None

def read_any(path: Path) -> Any:
	""" Reads a file or dataset directory with whichever parser accepts it """
	parser = get_parser([Path(path)])
	if parser is None:
		raise DatasetError(f"no reader for {path}")
	return parser.readData()
