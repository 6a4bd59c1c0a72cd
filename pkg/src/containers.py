from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from geometry import PointCloud, Pose
from lanelet_map import LaneletMap
from registration import CoarseHint

@dataclass
class StatisticsRow:
	values: list[str] = field(default_factory=lambda:[])

@dataclass
class StatisticsSheet:
	name: str
	rows: list[StatisticsRow] = field(default_factory=lambda:[])

	def header(self) -> list[str]:
		return self.rows[0].values if len(self.rows) > 0 else []

@dataclass
class StatisticsBook:
	sheets: list[StatisticsSheet] = field(default_factory=lambda:[])

	def sheet(self, name: str) -> StatisticsSheet:
		for sheet in self.sheets:
			if sheet.name == name:
				return sheet
		raise KeyError(name)

@dataclass
class Dataset:
	"""
	Everything a run needs: the map, the laser scan and per-sensor frame
	sequences. `truth` is only known for simulated data.
	"""
	root: Optional[Path]
	lanelet_map: LaneletMap
	scan: PointCloud
	frames: dict[str, list[PointCloud]] = field(default_factory=lambda:{})
	truth: dict[str, Pose] = field(default_factory=lambda:{})
	hints: dict[str, CoarseHint] = field(default_factory=lambda:{})
	scenario: dict[str, Any] = field(default_factory=lambda:{})
	""" scenario document as written by the simulator """

	@property
	def sensor_ids(self) -> list[str]:
		return sorted(self.frames)

	def truncated(self, fraction: float) -> "Dataset":
		""" Copy keeping only the first `fraction` of every sensor's frames """
		if not 0 < fraction <= 1:
			raise ValueError("fraction must be in (0, 1]")
		frames = {sid: f[:max(1, int(len(f) * fraction))] for sid, f in self.frames.items()}
		return Dataset(self.root, self.lanelet_map, self.scan, frames, dict(self.truth), dict(self.hints), dict(self.scenario))
