from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Sequence
import logging
import math

import numpy
import shapely
from shapely.geometry import LineString, Polygon
from rtree import index

from errors import DegenerateLaneletError, EmptyMapError

LOG = logging.getLogger(__name__)


class LaneletKind(str, Enum):
	DRIVING = "driving"
	TURN = "turn"
	JUNCTION = "junction"
	PARKING = "parking"

# Kinds that describe travelled road. Parking lanes are mapped for occupancy
# but are cut out of the registration target.
ROAD_KINDS = frozenset({LaneletKind.DRIVING, LaneletKind.TURN, LaneletKind.JUNCTION})


def _polyline(points) -> numpy.ndarray:
	array = numpy.asarray(points, dtype=numpy.float64)
	if array.ndim != 2 or array.shape[1] != 2:
		raise ValueError("boundary must be a sequence of [x, y] pairs")
	return array


def polyline_length(points: numpy.ndarray) -> float:
	return float(numpy.sum(numpy.linalg.norm(numpy.diff(points, axis=0), axis=1)))


def resample_polyline(points: numpy.ndarray, segments: int) -> numpy.ndarray:
	""" `segments + 1` points at equal arc-length spacing; end points are kept bit-exact """
	seg_lengths = numpy.linalg.norm(numpy.diff(points, axis=0), axis=1)
	cumulative = numpy.concatenate([[0.0], numpy.cumsum(seg_lengths)])
	# Drop repeated vertices, numpy.interp needs increasing sample positions
	keep = numpy.concatenate([[True], seg_lengths > 0.0])
	cumulative, points = cumulative[keep], points[keep]
	stations = numpy.linspace(0.0, cumulative[-1], segments + 1)
	resampled = numpy.column_stack([
		numpy.interp(stations, cumulative, points[:, 0]),
		numpy.interp(stations, cumulative, points[:, 1]),
	])
	resampled[0], resampled[-1] = points[0], points[-1]
	return resampled


def signed_area(vertices: numpy.ndarray) -> float:
	x, y = vertices[:, 0], vertices[:, 1]
	return 0.5 * float(numpy.dot(x, numpy.roll(y, -1)) - numpy.dot(numpy.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class Lanelet:
	id: int
	left: numpy.ndarray
	right: numpy.ndarray
	kind: LaneletKind = LaneletKind.DRIVING

	def __post_init__(self):
		left, right = _polyline(self.left), _polyline(self.right)
		if len(left) < 2 or len(right) < 2:
			raise DegenerateLaneletError(f"lanelet {self.id}: each boundary needs at least 2 vertices")
		object.__setattr__(self, 'left', left)
		object.__setattr__(self, 'right', right)
		object.__setattr__(self, 'kind', LaneletKind(self.kind))

		# Same direction: start pairs with start and end with end
		straight = numpy.linalg.norm(left[0] - right[0]) + numpy.linalg.norm(left[-1] - right[-1])
		crossed = numpy.linalg.norm(left[0] - right[-1]) + numpy.linalg.norm(left[-1] - right[0])
		if straight > crossed:
			raise ValueError(f"lanelet {self.id}: boundaries point in opposite directions")
		if not LineString(left).is_simple or not LineString(right).is_simple:
			raise ValueError(f"lanelet {self.id}: boundary intersects itself")

	@property
	def left_length(self) -> float:
		return polyline_length(self.left)

	@property
	def right_length(self) -> float:
		return polyline_length(self.right)

	def centerline(self, segments: Optional[int] = None) -> numpy.ndarray:
		if segments is None:
			segments = max(len(self.left), len(self.right)) - 1
		return 0.5 * (resample_polyline(self.left, segments) + resample_polyline(self.right, segments))

	def width(self) -> float:
		""" Mean distance between matched boundary points """
		left, right = resample_polyline(self.left, 16), resample_polyline(self.right, 16)
		return float(numpy.mean(numpy.linalg.norm(left - right, axis=1)))

	def outline(self) -> Polygon:
		return Polygon(numpy.concatenate([self.left, self.right[::-1]]))


@dataclass(frozen=True, eq=False)
class SubLanePolygon:
	id: int
	vertices: numpy.ndarray
	""" 4 x 2, counter-clockwise """
	parent_lanelet: int
	along_index: int
	kind: LaneletKind = LaneletKind.DRIVING

	@cached_property
	def shape(self) -> Polygon:
		return Polygon(self.vertices)

	@property
	def area(self) -> float:
		return abs(signed_area(self.vertices))

	@property
	def centroid(self) -> numpy.ndarray:
		c = self.shape.centroid
		return numpy.array([c.x, c.y])

	@property
	def bounds(self) -> tuple[float, float, float, float]:
		""" (minx, miny, maxx, maxy) """
		mins, maxs = self.vertices.min(axis=0), self.vertices.max(axis=0)
		return (float(mins[0]), float(mins[1]), float(maxs[0]), float(maxs[1]))

	def covers(self, x: float, y: float) -> bool:
		""" Boundary-inclusive point test """
		return bool(shapely.intersects_xy(self.shape, x, y))


@dataclass(frozen=True)
class MapOrigin:
	""" Metadata only, no geodetic conversion is done anywhere """
	easting: float = 0.0
	northing: float = 0.0
	zone: str = ""


@dataclass
class LaneletMap:
	lanelets: list[Lanelet] = field(default_factory=lambda:[])
	origin: MapOrigin = field(default_factory=MapOrigin)

	def get(self, lanelet_id: int) -> Lanelet:
		for lanelet in self.lanelets:
			if lanelet.id == lanelet_id:
				return lanelet
		raise KeyError(lanelet_id)


def subdivide_lanelet(lanelet: Lanelet, step: float, first_id: int = 0) -> list[SubLanePolygon]:
	if step <= 0:
		raise ValueError("step must be positive")
	left_length, right_length = lanelet.left_length, lanelet.right_length
	if left_length <= 0.0 or right_length <= 0.0:
		raise DegenerateLaneletError(f"lanelet {lanelet.id}: zero-length boundary")

	# One segment count for both sides, driven by the shorter one
	segments = max(1, math.ceil(min(left_length, right_length) / step))
	left = resample_polyline(lanelet.left, segments)
	right = resample_polyline(lanelet.right, segments)

	polygons = []
	for k in range(segments):
		vertices = numpy.array([left[k], left[k + 1], right[k + 1], right[k]])
		if signed_area(vertices) < 0:
			vertices = vertices[::-1].copy()
		polygons.append(SubLanePolygon(
			id=first_id + k,
			vertices=vertices,
			parent_lanelet=lanelet.id,
			along_index=k,
			kind=lanelet.kind,
		))
	return polygons


class PolygonMap:
	"""
	Immutable set of sub-lane polygons with an R-tree over their bounding boxes.
	"""

	# Bulk-loaded, build once and query many times
	LEAF_CAPACITY = 16
	INDEX_CAPACITY = 16

	def __init__(self, polygons: Iterable[SubLanePolygon]) -> None:
		self._polygons: tuple[SubLanePolygon, ...] = tuple(sorted(polygons, key=lambda p: p.id))
		self._by_id = {p.id: p for p in self._polygons}
		if len(self._by_id) != len(self._polygons):
			raise ValueError("polygon ids must be unique")

		self.index = None
		if len(self._polygons) > 0:
			properties = index.Property()
			properties.dimension = 2
			properties.leaf_capacity = self.LEAF_CAPACITY
			properties.index_capacity = self.INDEX_CAPACITY
			stream = ((p.id, p.bounds, None) for p in self._polygons)
			self.index = index.Index(stream, properties=properties)

	@property
	def polygons(self) -> tuple[SubLanePolygon, ...]:
		return self._polygons

	def __len__(self) -> int:
		return len(self._polygons)

	def __iter__(self):
		return iter(self._polygons)

	def __contains__(self, polygon_id: int) -> bool:
		return polygon_id in self._by_id

	def get(self, polygon_id: int) -> SubLanePolygon:
		return self._by_id[polygon_id]

	def bounds(self) -> tuple[float, float, float, float]:
		if len(self) == 0:
			raise EmptyMapError("map has no polygons")
		boxes = numpy.array([p.bounds for p in self._polygons])
		return (float(boxes[:, 0].min()), float(boxes[:, 1].min()), float(boxes[:, 2].max()), float(boxes[:, 3].max()))

	def query_point(self, xy: Sequence[float]) -> list[int]:
		""" IDs of all polygons containing `xy` (boundary included), ascending """
		if self.index is None:
			return []
		x, y = float(xy[0]), float(xy[1])
		candidates = self.index.intersection((x, y, x, y))
		return sorted(pid for pid in candidates if self._by_id[pid].covers(x, y))

	def query_point_brute_force(self, xy: Sequence[float]) -> list[int]:
		x, y = float(xy[0]), float(xy[1])
		return [p.id for p in self._polygons if p.covers(x, y)]

	def covered_mask(self, xy: numpy.ndarray, kinds: Optional[Iterable[LaneletKind]] = None) -> numpy.ndarray:
		""" Per-point flag: footprint inside at least one polygon of the given kinds """
		xy = numpy.asarray(xy, dtype=numpy.float64).reshape(-1, 2)
		kinds = None if kinds is None else set(kinds)
		mask = numpy.zeros(len(xy), dtype=bool)
		for polygon in self._polygons:
			if kinds is not None and polygon.kind not in kinds:
				continue
			minx, miny, maxx, maxy = polygon.bounds
			candidates = numpy.flatnonzero(
				~mask
				& (xy[:, 0] >= minx) & (xy[:, 0] <= maxx)
				& (xy[:, 1] >= miny) & (xy[:, 1] <= maxy)
			)
			if len(candidates) == 0:
				continue
			inside = shapely.intersects_xy(polygon.shape, xy[candidates, 0], xy[candidates, 1])
			mask[candidates[inside]] = True
		return mask


def build_polygon_map(lanelets: Sequence[Lanelet], step: float) -> PolygonMap:
	if len(lanelets) == 0:
		raise EmptyMapError("no lanelets to subdivide")
	polygons: list[SubLanePolygon] = []
	for lanelet in lanelets:
		polygons.extend(subdivide_lanelet(lanelet, step, first_id=len(polygons)))
	LOG.debug(f"Subdivided {len(lanelets)} lanelets into {len(polygons)} polygons")
	return PolygonMap(polygons)
