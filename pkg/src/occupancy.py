"""
Sub-lane occupancy: per-frame polygon messages, 50 ms window fusion across
sensors and heat-map accumulation / rendering.
"""
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional
import logging
import math
import zlib

import cv2
import numpy

from config import OccupancyConfig, RenderConfig
from containers import StatisticsBook, StatisticsRow, StatisticsSheet
from errors import EmptyMapError
from geometry import PointCloud
from lanelet_map import PolygonMap
from printers import get_printer

LOG = logging.getLogger(__name__)

NS_PER_MS = 1_000_000


@dataclass(frozen=True)
class OccupancyMessage:
	sensor_id: str
	frame_timestamp: int
	""" ns, sensor clock """
	polygon_ids: tuple[int, ...] = ()

	def __post_init__(self):
		object.__setattr__(self, 'frame_timestamp', int(self.frame_timestamp))
		object.__setattr__(self, 'polygon_ids', tuple(sorted({int(p) for p in self.polygon_ids})))


@dataclass(frozen=True)
class OccupancyWindow:
	window_index: int
	occupied: frozenset[int] = frozenset()
	contributing_sensors: frozenset[str] = frozenset()
	message_count: int = 0


@dataclass(frozen=True)
class HeatMap:
	counts: dict[int, int]
	""" polygon id -> number of windows occupied, zero counts may be left out """
	horizon_windows: int
	max_count: int = 0

	def __post_init__(self):
		if self.horizon_windows < 1:
			raise ValueError("horizon_windows must be at least 1")
		if any(c < 0 or c > self.horizon_windows for c in self.counts.values()):
			raise ValueError("counts must lie in [0, horizon_windows]")
		object.__setattr__(self, 'max_count', max(self.counts.values(), default=0))

	def count(self, polygon_id: int) -> int:
		return self.counts.get(polygon_id, 0)


@dataclass(frozen=True)
class AssignFilters:
	"""
	Optional point filters applied before polygon lookup. A point with unknown
	rcs fails an rcs filter.
	"""
	min_speed: Optional[float] = None
	z_min: Optional[float] = None
	z_max: Optional[float] = None
	min_rcs: Optional[float] = None

	@classmethod
	def from_config(cls, cfg: OccupancyConfig) -> "AssignFilters":
		return cls(min_speed=cfg.min_speed, z_min=cfg.z_min, z_max=cfg.z_max, min_rcs=cfg.min_rcs)

	def mask(self, frame: PointCloud) -> numpy.ndarray:
		keep = numpy.ones(len(frame), dtype=bool)
		if self.min_speed is not None:
			keep &= numpy.abs(frame.radial_velocity) > self.min_speed
		if self.z_min is not None:
			keep &= frame.positions[:, 2] >= self.z_min
		if self.z_max is not None:
			keep &= frame.positions[:, 2] <= self.z_max
		if self.min_rcs is not None:
			rcs = frame.rcs if frame.rcs is not None else numpy.full(len(frame), numpy.nan)
			with numpy.errstate(invalid='ignore'):
				keep &= rcs >= self.min_rcs
		return keep


def _frame_time(frame: PointCloud) -> int:
	if frame.stamp is not None:
		return int(frame.stamp)
	if len(frame) > 0:
		return int(frame.timestamps.max())
	return 0


def assign_frame(frame: PointCloud, polygon_map: PolygonMap, filters: Optional[AssignFilters] = None, sensor_id: str = "sensor") -> OccupancyMessage:
	""" Compresses a map-frame radar frame into the ids of the polygons it hits """
	kept = frame.select((filters or AssignFilters()).mask(frame))
	occupied: set[int] = set()
	for x, y in kept.positions[:, :2]:
		occupied.update(polygon_map.query_point((x, y)))
	return OccupancyMessage(sensor_id=sensor_id, frame_timestamp=_frame_time(frame), polygon_ids=tuple(occupied))


def _window_len_ns(window_len: float) -> int:
	if window_len <= 0:
		raise ValueError("window_len must be positive")
	length = int(round(window_len * NS_PER_MS))
	if length < 1:
		raise ValueError("window_len must be at least 1 ns")
	return length


def window_of(timestamp: int, window_len: float = 50.0) -> int:
	""" Window index for a ns timestamp; a boundary stamp opens the next window """
	return int(timestamp) // _window_len_ns(window_len)


class _OpenWindow:
	def __init__(self):
		self.occupied: set[int] = set()
		self.sensors: set[str] = set()
		self.messages = 0

	def add(self, message: OccupancyMessage):
		self.occupied.update(message.polygon_ids)
		self.sensors.add(message.sensor_id)
		self.messages += 1

	def close(self, window_index: int) -> OccupancyWindow:
		return OccupancyWindow(window_index, frozenset(self.occupied), frozenset(self.sensors), self.messages)


def fuse_messages(messages: Iterable[OccupancyMessage], window_len: float = 50.0) -> list[OccupancyWindow]:
	"""
	Batch fusion of a complete message set. Every window between the first and
	the last message is emitted, empty ones included; the result does not
	depend on message order.
	"""
	length = _window_len_ns(window_len)
	open_windows: dict[int, _OpenWindow] = {}
	for message in sorted(messages, key=lambda m: (m.frame_timestamp, m.sensor_id, m.polygon_ids)):
		open_windows.setdefault(message.frame_timestamp // length, _OpenWindow()).add(message)
	if len(open_windows) == 0:
		return []
	first, last = min(open_windows), max(open_windows)
	return [open_windows.get(w, _OpenWindow()).close(w) for w in range(first, last + 1)]


class WindowAggregator:
	"""
	Streaming fusion for messages arriving roughly in time order. A window is
	finalized once a message `finalization_lag` windows newer has arrived;
	messages for finalized windows are dropped and counted.
	"""

	def __init__(self, window_len: float = 50.0, finalization_lag: int = 5) -> None:
		if finalization_lag < 0:
			raise ValueError("finalization_lag must be non-negative")
		self.window_len = window_len
		self.finalization_lag = finalization_lag
		self.late_messages = 0
		self._length = _window_len_ns(window_len)
		self._open: dict[int, _OpenWindow] = {}
		self._next: Optional[int] = None
		""" lowest window not yet emitted, once anything has been emitted """
		self._oldest: Optional[int] = None
		self._newest: Optional[int] = None

	def push(self, message: OccupancyMessage) -> list[OccupancyWindow]:
		""" Adds one message, returns the windows this finalizes """
		window = message.frame_timestamp // self._length
		if self._next is not None and window < self._next:
			self.late_messages += 1
			LOG.warning(f"Late message from {message.sensor_id} for window {window} dropped ({self.late_messages} so far)")
			return []

		self._open.setdefault(window, _OpenWindow()).add(message)
		self._oldest = window if self._oldest is None else min(self._oldest, window)
		self._newest = window if self._newest is None else max(self._newest, window)
		return self._emit_until(self._newest - self.finalization_lag - 1)

	def flush(self) -> list[OccupancyWindow]:
		""" Finalizes everything still open """
		if self._newest is None:
			return []
		return self._emit_until(self._newest)

	def _emit_until(self, last: int) -> list[OccupancyWindow]:
		start = self._next if self._next is not None else self._oldest
		if start is None or last < start:
			return []
		emitted = [self._open.pop(w, _OpenWindow()).close(w) for w in range(start, last + 1)]
		self._next = last + 1
		return emitted


class HeatMapAccumulator:
	""" Rolling per-polygon window counts over the most recent `horizon_windows` """

	def __init__(self, horizon_windows: int) -> None:
		if horizon_windows < 1:
			raise ValueError("horizon_windows must be at least 1")
		self.horizon_windows = horizon_windows
		self._windows: deque[OccupancyWindow] = deque()
		self._counts: dict[int, int] = {}
		self._last: Optional[int] = None

	def add(self, window: OccupancyWindow):
		if self._last is not None and window.window_index <= self._last:
			raise ValueError("windows must be added in increasing order")
		self._last = window.window_index

		# Horizon is measured in window indices, gaps count as empty windows
		while len(self._windows) > 0 and self._windows[0].window_index <= window.window_index - self.horizon_windows:
			expired = self._windows.popleft()
			for pid in expired.occupied:
				self._counts[pid] -= 1
				if self._counts[pid] == 0:
					del self._counts[pid]

		self._windows.append(window)
		for pid in window.occupied:
			self._counts[pid] = self._counts.get(pid, 0) + 1

	def snapshot(self) -> HeatMap:
		return HeatMap(counts=dict(sorted(self._counts.items())), horizon_windows=self.horizon_windows)


def accumulate(windows: Iterable[OccupancyWindow], horizon_windows: int) -> HeatMap:
	accumulator = HeatMapAccumulator(horizon_windows)
	for window in sorted(windows, key=lambda w: w.window_index):
		accumulator.add(window)
	return accumulator.snapshot()


@dataclass(frozen=True, eq=False)
class HeatMapRendering:
	image: numpy.ndarray
	""" H x W x 3, BGR """
	table: StatisticsBook = field(default_factory=StatisticsBook)


# Gray level of a zero count and of the maximum count
LIGHTEST = 235
DARKEST = 20
BACKGROUND = 255
# Fixed-point bits for cv2.fillPoly
SHIFT = 4
LEGEND_HEIGHT = 40


def shade(count: int, max_count: int) -> int:
	""" Monotone: higher count, darker shade """
	if max_count <= 0:
		return LIGHTEST
	return int(round(LIGHTEST - (LIGHTEST - DARKEST) * min(count, max_count) / max_count))


def _color(value: int, colormap: str) -> tuple[int, int, int]:
	if colormap == 'inferno':
		bgr = cv2.applyColorMap(numpy.array([[value]], dtype=numpy.uint8), cv2.COLORMAP_INFERNO)[0, 0]
		return (int(bgr[0]), int(bgr[1]), int(bgr[2]))
	return (value, value, value)


def heat_table(polygon_map: PolygonMap, heat: HeatMap) -> StatisticsBook:
	rows = [
		StatisticsRow(["horizon_windows", "max_count"]),
		StatisticsRow([str(heat.horizon_windows), str(heat.max_count)]),
		StatisticsRow(["polygon_id", "count"]),
	]
	rows += [StatisticsRow([str(p.id), str(heat.count(p.id))]) for p in polygon_map]
	return StatisticsBook([StatisticsSheet("counts", rows)])


def render(polygon_map: PolygonMap, heat: HeatMap, style: Optional[RenderConfig] = None) -> HeatMapRendering:
	if len(polygon_map) == 0:
		raise EmptyMapError("cannot render an empty map")
	style = style or RenderConfig()
	xmin, ymin, xmax, ymax = polygon_map.bounds()
	ppm, margin = style.pixels_per_meter, style.margin
	width = int(math.ceil((xmax - xmin) * ppm)) + 2 * margin + 1
	map_height = int(math.ceil((ymax - ymin) * ppm)) + 2 * margin + 1
	image = numpy.full((map_height + LEGEND_HEIGHT, width, 3), BACKGROUND, dtype=numpy.uint8)

	scale = 1 << SHIFT
	# Darker polygons on top where polygons overlap
	for polygon in sorted(polygon_map, key=lambda p: (heat.count(p.id), p.id)):
		px = (polygon.vertices[:, 0] - xmin) * ppm + margin
		py = (ymax - polygon.vertices[:, 1]) * ppm + margin
		points = numpy.round(numpy.column_stack([px, py]) * scale).astype(numpy.int32)
		color = _color(shade(heat.count(polygon.id), heat.max_count), style.colormap)
		cv2.fillPoly(image, [points], color, lineType=cv2.LINE_8, shift=SHIFT)

	_draw_legend(image, map_height, heat.max_count, style.colormap)
	return HeatMapRendering(image=image, table=heat_table(polygon_map, heat))


def _draw_legend(image: numpy.ndarray, top: int, max_count: int, colormap: str):
	""" Color bar from zero (left) to max_count (right), max_count written above its end """
	width = image.shape[1]
	left, right = 10, max(11, width - 60)
	bar_top, bar_bottom = top + 18, top + LEGEND_HEIGHT - 6
	for x in range(left, right):
		value = int(round(LIGHTEST - (LIGHTEST - DARKEST) * (x - left) / max(1, right - left - 1)))
		cv2.line(image, (x, bar_top), (x, bar_bottom), _color(value, colormap), 1)
	cv2.putText(image, str(max_count), (right - 10, top + 14), cv2.FONT_HERSHEY_SIMPLEX, 0.4, (0, 0, 0), 1, cv2.LINE_AA)


def save_rendering(rendering: HeatMapRendering, path: Path) -> list[Path]:
	""" Writes `<path>.png` and `<path>.csv` (as `<stem>_counts.csv`) """
	path = Path(path)
	image_path = path.with_suffix('.png')
	if not cv2.imwrite(str(image_path), rendering.image):
		raise OSError(f"cannot write {image_path}")
	printer = get_printer(path.with_suffix('.csv'), book=rendering.table)
	printer.printStatistics()
	return [image_path, path.with_name(f"{path.stem}_counts.csv")]


def skewed_clock(sensor_id: str, true_time: int, offset: float = 0.0, drift: float = 0.0, jitter: float = 0.0, seed: int = 0) -> int:
	"""
	Sensor timestamp (ns) for a true time (ns): offset and jitter sigma in ns,
	drift dimensionless (1e-4 = 100 ppm). Jitter is a deterministic function
	of (seed, sensor_id, true_time).
	"""
	true_time = int(true_time)
	shift = offset + drift * true_time
	if jitter > 0:
		rng = numpy.random.default_rng([seed, zlib.crc32(sensor_id.encode('utf-8')), true_time % (1 << 63)])
		shift += rng.normal(0.0, jitter)
	# Integer base keeps epoch-scale stamps exact
	return true_time + int(round(shift))
