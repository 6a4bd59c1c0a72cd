"""
Synthetic worlds for the localization and occupancy pipelines: a lanelet road
network, vehicle traffic on it, radar frames of static roadside sensors and an
aerial-laser-scan-like road cloud.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
import logging
import math
import zlib

import numpy
import shapely
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import SCENARIO_SECTION, merge_overrides, model_keys, read_document, validate_section
from containers import Dataset
from errors import EmptyMapError
from geometry import PointCloud, Pose
from lanelet_map import Lanelet, LaneletKind, LaneletMap, MapOrigin, ROAD_KINDS, polyline_length
from occupancy import skewed_clock
from parsers.dataset import write_dataset
from parsers.lanelets import read_map
from registration import CoarseHint, nearest_compass

LOG = logging.getLogger(__name__)


class _Model(BaseModel):
	model_config = ConfigDict(extra='forbid')


class RadarSpec(_Model):
	azimuth_fov: float = Field(120.0, gt=0, le=360, description="degrees")
	elevation_fov: float = Field(30.0, gt=0, le=180, description="degrees")
	max_range: float = Field(300.0, gt=0, description="m")
	frame_rate: float = Field(20.0, gt=0, description="Hz")
	points_per_frame: float = Field(500.0, gt=0, description="Mean detections of a frame without moving targets")
	range_noise_sigma: float = Field(0.05, ge=0, description="m")
	angle_noise_sigma: float = Field(0.1, ge=0, description="degrees")
	velocity_noise_sigma: float = Field(0.05, ge=0, description="m/s")


class SensorSetup(_Model):
	id: str
	position: tuple[float, float, float]
	yaw: float = 0.0
	pitch: float = Field(0.0, description="degrees, positive tilts the boresight down")
	roll: float = 0.0
	radar: RadarSpec = Field(default_factory=RadarSpec)
	clock_offset_ms: float = 0.0
	clock_drift_ppm: float = 0.0
	clock_jitter_ms: float = Field(0.0, ge=0)
	start_phase_ms: float = Field(0.0, ge=0)

	def pose(self) -> Pose:
		return Pose.from_euler(self.yaw, self.pitch, self.roll, translation=self.position)


def _default_sensors() -> list[SensorSetup]:
	return [
		SensorSetup(id="sensor_a", position=(-12.0, -12.0, 6.0), yaw=40.0, pitch=8.0, start_phase_ms=0.0),
		SensorSetup(id="sensor_b", position=(12.0, 12.0, 6.0), yaw=220.0, pitch=8.0,
			clock_offset_ms=20.0, clock_drift_ppm=50.0, clock_jitter_ms=1.0, start_phase_ms=13.0),
	]


class MapSpec(_Model):
	arm_lengths: tuple[float, float, float, float] = Field((150.0, 120.0, 100.0, 130.0), description="East, north, west, south arm in m")
	lane_width: float = Field(3.5, gt=0)
	parking: bool = True
	map_file: Optional[str] = Field(None, description="Lanelet map file used instead of the built-in crossing")

	@model_validator(mode='after')
	def check_arms(self):
		if min(self.arm_lengths) <= self.lane_width:
			raise ValueError("every arm must be longer than the lane width")
		return self


class ClutterConfig(_Model):
	static_fraction: float = Field(0.93, ge=0, lt=1, description="Share of detections that are static clutter")
	canopy_rate: float = Field(2.0, ge=0, description="Mean detections per canopy and frame")
	canopies: list[tuple[float, float]] = Field(default_factory=lambda: [
		(-25.0, 18.0), (28.0, -20.0), (45.0, 14.0), (-40.0, -12.0), (14.0, 35.0), (-15.0, -45.0),
	])
	canopy_radius: float = Field(1.5, gt=0)
	canopy_height: float = Field(6.0, gt=0)
	canopy_speed: tuple[float, float] = Field((0.2, 1.0), description="Range of |radial velocity| of leaves in m/s")


class ScanConfig(_Model):
	point_density: float = Field(20.0, gt=0, description="points per m^2")
	noise_sigma: float = Field(0.03, ge=0, description="vertical noise in m")
	canopy_points: int = Field(300, ge=0)


class ScenarioConfig(_Model):
	seed: int = Field(0, ge=0)
	duration: float = Field(100.0, gt=0, description="s")
	map: MapSpec = Field(default_factory=MapSpec)
	sensors: list[SensorSetup] = Field(default_factory=_default_sensors)
	arrival_rate: float = Field(0.1, ge=0, description="Vehicles per second and route")
	desired_speed: float = Field(10.0, gt=0, description="m/s")
	speed_sigma: float = Field(2.0, ge=0)
	speed_variation: float = Field(0.1, ge=0, description="Relative speed change between route segments")
	lateral_spread: float = Field(1.0, ge=0, description="Half-width of the uniform lateral offset in m, clamped so bodies stay in their lane")
	lane_bias: float = Field(0.0, description="Systematic lateral offset of all vehicles to the right in m")
	clutter: ClutterConfig = Field(default_factory=ClutterConfig)
	scan: ScanConfig = Field(default_factory=ScanConfig)
	hint_offset: float = Field(3.0, ge=0, description="Distance of the manual position hint from the truth in m")

	@model_validator(mode='after')
	def check_sensors(self):
		ids = [s.id for s in self.sensors]
		if len(ids) != len(set(ids)):
			raise ValueError("sensor ids must be unique")
		return self


def scenario_keys() -> list[str]:
	return [f"{SCENARIO_SECTION}.{key}" for key in model_keys(ScenarioConfig)]


def load_scenario_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> ScenarioConfig:
	""" The "scenario" section of a config document, with "scenario.*" overrides applied """
	document = merge_overrides(read_document(path), overrides or {})
	return validate_section(ScenarioConfig, document.get(SCENARIO_SECTION, {}))


def _stream(seed: int, *keys: int) -> numpy.random.Generator:
	""" Independent generator per purpose, so adding a sensor does not reshuffle traffic """
	return numpy.random.default_rng([seed, *keys])


def _sensor_key(sensor_id: str) -> int:
	return zlib.crc32(sensor_id.encode('utf-8'))


# --- Map ---

def _straight_lanelet(lanelet_id: int, start, end, right_offset: float, left_offset: float = 0.0, kind=LaneletKind.DRIVING) -> Lanelet:
	start, end = numpy.asarray(start, dtype=float), numpy.asarray(end, dtype=float)
	direction = (end - start) / numpy.linalg.norm(end - start)
	normal = numpy.array([-direction[1], direction[0]])
	left = numpy.array([start + normal * left_offset, end + normal * left_offset])
	right = numpy.array([start + normal * right_offset, end + normal * right_offset])
	return Lanelet(lanelet_id, left, right, kind)


def build_intersection_map(spec: Optional[MapSpec] = None) -> LaneletMap:
	"""
	Two crossing roads with one lane per direction (right-hand traffic). Every
	through route is split into approach, junction and exit lanelets.
	"""
	spec = spec or MapSpec()
	east, north, west, south = spec.arm_lengths
	w = spec.lane_width
	h = w

	routes = [
		((-west, 0.0), (east, 0.0)),
		((east, 0.0), (-west, 0.0)),
		((0.0, -south), (0.0, north)),
		((0.0, north), (0.0, -south)),
	]
	lanelets = []
	for r, (start, end) in enumerate(routes):
		start, end = numpy.array(start), numpy.array(end)
		direction = (end - start) / numpy.linalg.norm(end - start)
		# Points where the road axis enters and leaves the junction box
		enter = -h * direction
		leave = h * direction
		pieces = [(start, enter, LaneletKind.DRIVING), (enter, leave, LaneletKind.JUNCTION), (leave, end, LaneletKind.DRIVING)]
		for k, (a, b, kind) in enumerate(pieces):
			lanelets.append(_straight_lanelet(3 * r + k + 1, a, b, right_offset=-w, kind=kind))

	if spec.parking:
		x0, x1 = min(20.0, east - 1.0), min(60.0, east)
		lanelets.append(_straight_lanelet(100, (x0, w), (x1, w), right_offset=0.0, left_offset=2.5, kind=LaneletKind.PARKING))
	return LaneletMap(lanelets=lanelets, origin=MapOrigin())


def _follows(a: Lanelet, b: Lanelet, tolerance: float = 1e-6) -> bool:
	return bool(numpy.linalg.norm(a.left[-1] - b.left[0]) <= tolerance and numpy.linalg.norm(a.right[-1] - b.right[0]) <= tolerance)


def find_routes(lanelet_map: LaneletMap) -> list[list[Lanelet]]:
	""" Maximal chains of connected road lanelets, from lanelets without predecessor to ones without successor """
	road = [l for l in lanelet_map.lanelets if l.kind in ROAD_KINDS]
	successors = {l.id: [m for m in road if m.id != l.id and _follows(l, m)] for l in road}
	has_predecessor = {m.id for l in road for m in successors[l.id]}

	routes = []
	def walk(chain: list[Lanelet]):
		nexts = [m for m in successors[chain[-1].id] if m not in chain]
		if len(nexts) == 0:
			routes.append(chain)
			return
		for m in nexts:
			walk(chain + [m])

	for lanelet in road:
		if lanelet.id not in has_predecessor:
			walk([lanelet])
	return routes


def route_centerline(route: Sequence[Lanelet]) -> numpy.ndarray:
	points = []
	for lanelet in route:
		center = lanelet.centerline()
		points.extend(center if len(points) == 0 else center[1:])
	return numpy.array(points)


def _offset_polyline(points: numpy.ndarray, offset: float) -> numpy.ndarray:
	""" Shifts a polyline sideways, positive to the left """
	if offset == 0.0:
		return points
	directions = numpy.diff(points, axis=0)
	directions /= numpy.linalg.norm(directions, axis=1)[:, None]
	normals = numpy.column_stack([-directions[:, 1], directions[:, 0]])
	vertex_normals = numpy.concatenate([normals[:1], normals[:-1] + normals[1:], normals[-1:]])
	vertex_normals /= numpy.linalg.norm(vertex_normals, axis=1)[:, None]
	return points + offset * vertex_normals


# --- Traffic ---

@dataclass(frozen=True)
class Waypoint:
	t: float
	position: tuple[float, float]
	speed: float
	""" speed on the segment starting here, m/s """


@dataclass(frozen=True)
class VehicleTrack:
	id: int
	waypoints: tuple[Waypoint, ...]

	# Vehicle body, m
	LENGTH = 4.5
	WIDTH = 1.8
	HEIGHT = 1.5

	def __post_init__(self):
		if len(self.waypoints) < 2:
			raise ValueError("a track needs at least two waypoints")
		times = numpy.array([w.t for w in self.waypoints])
		if numpy.any(numpy.diff(times) <= 0):
			raise ValueError("waypoint times must be strictly increasing")
		if any(w.speed < 0 for w in self.waypoints):
			raise ValueError("speeds must be non-negative")

	@property
	def start(self) -> float:
		return self.waypoints[0].t

	@property
	def end(self) -> float:
		return self.waypoints[-1].t

	@property
	def duration(self) -> float:
		return self.end - self.start

	def active(self, t: float) -> bool:
		return self.start <= t <= self.end

	def _times(self) -> numpy.ndarray:
		return numpy.array([w.t for w in self.waypoints])

	def position_at(self, t: float) -> numpy.ndarray:
		times = self._times()
		xy = numpy.array([w.position for w in self.waypoints])
		return numpy.array([numpy.interp(t, times, xy[:, 0]), numpy.interp(t, times, xy[:, 1])])

	def velocity_at(self, t: float) -> numpy.ndarray:
		times = self._times()
		k = int(numpy.clip(numpy.searchsorted(times, t, side='right') - 1, 0, len(times) - 2))
		a, b = self.waypoints[k], self.waypoints[k + 1]
		return (numpy.array(b.position) - numpy.array(a.position)) / (b.t - a.t)

	def heading_at(self, t: float) -> float:
		""" radians """
		v = self.velocity_at(t)
		return float(math.atan2(v[1], v[0]))


def track_along(path: numpy.ndarray, speed: float, start_time: float = 0.0, vehicle_id: int = 0,
		rng: Optional[numpy.random.Generator] = None, speed_variation: float = 0.0, segment_length: float = 40.0) -> VehicleTrack:
	"""
	Track following `path` with piecewise-constant speed: every `segment_length`
	metres the speed is redrawn around `speed`.
	"""
	if speed <= 0:
		raise ValueError("speed must be positive")
	path = numpy.asarray(path, dtype=float)
	steps = numpy.linalg.norm(numpy.diff(path, axis=0), axis=1)
	stations = numpy.concatenate([[0.0], numpy.cumsum(steps)])
	length = stations[-1]
	if length <= 0:
		raise ValueError("path has zero length")

	breaks = numpy.unique(numpy.concatenate([stations, numpy.arange(0.0, length, segment_length), [length]]))
	xy = numpy.column_stack([numpy.interp(breaks, stations, path[:, 0]), numpy.interp(breaks, stations, path[:, 1])])

	segment_speeds = numpy.full(int(math.ceil(length / segment_length)) + 1, float(speed))
	if rng is not None and speed_variation > 0:
		segment_speeds *= 1.0 + speed_variation * rng.standard_normal(len(segment_speeds))
		segment_speeds = numpy.maximum(segment_speeds, 0.2 * speed)

	waypoints = []
	t = start_time
	for k in range(len(breaks)):
		piece = min(int(breaks[k] // segment_length), len(segment_speeds) - 1)
		if k == len(breaks) - 1:
			piece = min(int(breaks[k - 1] // segment_length), len(segment_speeds) - 1)
		v = float(segment_speeds[piece])
		waypoints.append(Waypoint(t=t, position=(float(xy[k, 0]), float(xy[k, 1])), speed=v))
		if k < len(breaks) - 1:
			t += (breaks[k + 1] - breaks[k]) / v
	return VehicleTrack(id=vehicle_id, waypoints=tuple(waypoints))


def simulate_traffic(lanelet_map: LaneletMap, cfg: ScenarioConfig, rng: Optional[numpy.random.Generator] = None) -> list[VehicleTrack]:
	"""
	Poisson arrivals on every route. Vehicles start early enough that the
	road is already populated at t = 0; tracks that end before 0 are dropped.
	"""
	routes = find_routes(lanelet_map)
	if len(routes) == 0:
		raise EmptyMapError("no routes in map")
	rng = rng or _stream(cfg.seed, 1)
	if cfg.arrival_rate == 0:
		return []

	tracks = []
	for route in routes:
		center = route_centerline(route)
		width = float(numpy.mean([l.width() for l in route]))
		spread = min(cfg.lateral_spread, max(0.0, (width - VehicleTrack.WIDTH) / 2))
		warmup = polyline_length(center) / cfg.desired_speed
		t = -warmup
		while True:
			t += rng.exponential(1.0 / cfg.arrival_rate)
			if t >= cfg.duration:
				break
			speed = max(1.0, rng.normal(cfg.desired_speed, cfg.speed_sigma))
			lateral = -cfg.lane_bias + rng.uniform(-spread, spread)
			track = track_along(_offset_polyline(center, lateral), speed, start_time=t, vehicle_id=len(tracks),
				rng=rng, speed_variation=cfg.speed_variation)
			if track.end >= 0.0:
				tracks.append(track)
	LOG.info(f"Traffic: {len(tracks)} vehicles on {len(routes)} routes")
	return tracks


# --- Laser scan ---

def generate_scan(lanelet_map: LaneletMap, point_density: float, noise_sigma: float = 0.0,
		rng: Optional[numpy.random.Generator] = None, canopies: Sequence[tuple[float, float]] = (),
		canopy_points: int = 0, canopy_radius: float = 1.5, canopy_height: float = 6.0) -> PointCloud:
	""" Uniform road-surface samples at z = 0 plus vertical point blobs for tree canopies """
	if point_density <= 0:
		raise ValueError("point_density must be positive")
	if noise_sigma < 0:
		raise ValueError("noise_sigma must be non-negative")
	rng = rng or numpy.random.default_rng(0)

	chunks = []
	for lanelet in lanelet_map.lanelets:
		outline = lanelet.outline()
		count = int(rng.poisson(point_density * outline.area))
		minx, miny, maxx, maxy = outline.bounds
		box_area = (maxx - minx) * (maxy - miny)
		samples = numpy.zeros((0, 2))
		while len(samples) < count:
			draw = int((count - len(samples)) * box_area / max(outline.area, 1e-12) * 1.2) + 8
			xy = rng.uniform((minx, miny), (maxx, maxy), size=(draw, 2))
			samples = numpy.concatenate([samples, xy[shapely.contains_xy(outline, xy[:, 0], xy[:, 1])]])
		samples = samples[:count]
		z = rng.normal(0.0, noise_sigma, size=count) if noise_sigma > 0 else numpy.zeros(count)
		chunks.append(numpy.column_stack([samples, z]))

	for cx, cy in canopies:
		xy = rng.normal((cx, cy), canopy_radius / 2, size=(canopy_points, 2))
		z = rng.uniform(canopy_height - canopy_radius, canopy_height + canopy_radius, size=canopy_points)
		chunks.append(numpy.column_stack([xy, z]))

	positions = numpy.concatenate(chunks) if len(chunks) > 0 else numpy.zeros((0, 3))
	return PointCloud(positions, frame_id="map")


# --- Radar ---

def _spherical(points: numpy.ndarray) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
	r = numpy.linalg.norm(points, axis=1)
	azimuth = numpy.arctan2(points[:, 1], points[:, 0])
	elevation = numpy.arcsin(numpy.clip(points[:, 2] / numpy.maximum(r, 1e-12), -1.0, 1.0))
	return r, azimuth, elevation


def _cartesian(r, azimuth, elevation) -> numpy.ndarray:
	return numpy.column_stack([
		r * numpy.cos(elevation) * numpy.cos(azimuth),
		r * numpy.cos(elevation) * numpy.sin(azimuth),
		r * numpy.sin(elevation),
	])


def in_fov(spec: RadarSpec, sensor_pose: Pose, points_map: numpy.ndarray) -> numpy.ndarray:
	local = (numpy.asarray(points_map, dtype=float).reshape(-1, 3) - sensor_pose.translation) @ sensor_pose.rotation_matrix
	r, azimuth, elevation = _spherical(local)
	return (
		(r <= spec.max_range)
		& (numpy.abs(numpy.degrees(azimuth)) <= spec.azimuth_fov / 2)
		& (numpy.abs(numpy.degrees(elevation)) <= spec.elevation_fov / 2)
	)


def _body_points(track: VehicleTrack, t: float, sensor: numpy.ndarray, count: int, rng: numpy.random.Generator) -> numpy.ndarray:
	""" `count` points on the faces of the vehicle box that face the sensor, in the map frame """
	center_xy = track.position_at(t)
	heading = track.heading_at(t)
	c, s = math.cos(heading), math.sin(heading)
	forward, left, up = numpy.array([c, s, 0.0]), numpy.array([-s, c, 0.0]), numpy.array([0.0, 0.0, 1.0])
	center = numpy.array([center_xy[0], center_xy[1], VehicleTrack.HEIGHT / 2])
	hl, hw, hh = VehicleTrack.LENGTH / 2, VehicleTrack.WIDTH / 2, VehicleTrack.HEIGHT / 2

	# (normal, tangent u, half extent u, tangent v, half extent v, offset from center)
	faces = [
		(forward, left, hw, up, hh, hl), (-forward, left, hw, up, hh, hl),
		(left, forward, hl, up, hh, hw), (-left, forward, hl, up, hh, hw),
		(up, forward, hl, left, hw, hh),
	]
	weights = []
	for normal, _, a, _, b, offset in faces:
		face_center = center + normal * offset
		view = sensor - face_center
		cosine = float(numpy.dot(normal, view) / numpy.linalg.norm(view))
		weights.append(max(0.0, cosine) * 4 * a * b)
	weights = numpy.array(weights)
	if weights.sum() <= 0:
		return numpy.zeros((0, 3))

	chosen = rng.choice(len(faces), size=count, p=weights / weights.sum())
	points = numpy.zeros((count, 3))
	for i, f in enumerate(chosen):
		normal, u, a, v, b, offset = faces[f]
		points[i] = center + normal * offset + u * rng.uniform(-a, a) + v * rng.uniform(-b, b)
	return points


def simulate_radar_frame(spec: RadarSpec, sensor_pose: Pose, tracks: Sequence[VehicleTrack], t: float,
		rng: Optional[numpy.random.Generator] = None, clutter: Optional[ClutterConfig] = None,
		sensor_id: str = "sensor", stamp: Optional[int] = None) -> PointCloud:
	"""
	One radar frame in the sensor frame. Vehicle points carry the line-of-sight
	projection of the vehicle velocity; static clutter stays below the Doppler
	gate and canopy clutter moves slowly. Occlusion is not modelled.
	"""
	rng = rng or numpy.random.default_rng(0)
	stamp = int(round(t * 1e9)) if stamp is None else int(stamp)
	sensor = sensor_pose.translation

	positions, velocities, rcs = [], [], []

	for track in tracks:
		if not track.active(t):
			continue
		center_xy = track.position_at(t)
		center = numpy.array([center_xy[0], center_xy[1], VehicleTrack.HEIGHT / 2])
		if not in_fov(spec, sensor_pose, center)[0]:
			continue
		points = _body_points(track, t, sensor, int(rng.integers(3, 11)), rng)
		if len(points) == 0:
			continue
		velocity = numpy.append(track.velocity_at(t), 0.0)
		sight = points - sensor
		sight /= numpy.linalg.norm(sight, axis=1)[:, None]
		positions.append(points)
		velocities.append(sight @ velocity + rng.normal(0.0, spec.velocity_noise_sigma, size=len(points)))
		rcs.append(rng.normal(10.0, 3.0, size=len(points)))

	if clutter is not None:
		for cx, cy in clutter.canopies:
			center = numpy.array([cx, cy, clutter.canopy_height])
			if not in_fov(spec, sensor_pose, center)[0]:
				continue
			count = int(rng.poisson(clutter.canopy_rate))
			points = center + rng.normal(0.0, clutter.canopy_radius / 2, size=(count, 3))
			speed = rng.uniform(clutter.canopy_speed[0], clutter.canopy_speed[1], size=count)
			positions.append(points)
			velocities.append(speed * rng.choice([-1.0, 1.0], size=count))
			rcs.append(rng.normal(-5.0, 3.0, size=count))

	moving = sum(len(p) for p in positions)
	if clutter is not None and clutter.static_fraction > 0:
		f = clutter.static_fraction
		mean = moving * f / (1.0 - f) if moving > 0 else spec.points_per_frame * f
		count = int(rng.poisson(mean))
		local = _cartesian(
			rng.uniform(2.0, min(spec.max_range, 150.0), size=count),
			numpy.radians(rng.uniform(-spec.azimuth_fov / 2, spec.azimuth_fov / 2, size=count)),
			numpy.radians(rng.uniform(-spec.elevation_fov / 2, spec.elevation_fov / 2, size=count)),
		)
		positions.append(sensor_pose.apply(local))
		velocities.append(rng.normal(0.0, spec.velocity_noise_sigma, size=count))
		rcs.append(rng.normal(0.0, 5.0, size=count))

	if sum(len(p) for p in positions) == 0:
		return PointCloud.empty(frame_id=sensor_id, stamp=stamp, with_rcs=True)

	world = numpy.concatenate(positions)
	local = (world - sensor) @ sensor_pose.rotation_matrix
	r, azimuth, elevation = _spherical(local)
	n = len(local)
	local = _cartesian(
		r + rng.normal(0.0, spec.range_noise_sigma, size=n),
		azimuth + numpy.radians(rng.normal(0.0, spec.angle_noise_sigma, size=n)),
		elevation + numpy.radians(rng.normal(0.0, spec.angle_noise_sigma, size=n)),
	)
	return PointCloud(
		positions=local,
		radial_velocity=numpy.concatenate(velocities),
		timestamps=numpy.full(n, stamp, dtype=numpy.int64),
		rcs=numpy.concatenate(rcs),
		frame_id=sensor_id,
		stamp=stamp,
	)


def frame_count(duration: float, frame_rate: float) -> int:
	return int(math.floor(duration * frame_rate + 1e-9))


def simulate_sensor(setup: SensorSetup, tracks: Sequence[VehicleTrack], cfg: ScenarioConfig) -> list[PointCloud]:
	""" All frames of one sensor, stamped by its skewed clock """
	rng = _stream(cfg.seed, 3, _sensor_key(setup.id))
	pose = setup.pose()
	frames = []
	for k in range(frame_count(cfg.duration, setup.radar.frame_rate)):
		t = setup.start_phase_ms / 1e3 + k / setup.radar.frame_rate
		stamp = skewed_clock(
			setup.id, int(round(t * 1e9)),
			offset=setup.clock_offset_ms * 1e6,
			drift=setup.clock_drift_ppm * 1e-6,
			jitter=setup.clock_jitter_ms * 1e6,
			seed=cfg.seed,
		)
		frames.append(simulate_radar_frame(setup.radar, pose, tracks, t, rng=rng, clutter=cfg.clutter, sensor_id=setup.id, stamp=stamp))
	return frames


def manual_hint(setup: SensorSetup, offset: float, rng: numpy.random.Generator) -> CoarseHint:
	""" What an operator would note down: a nearby map point, a compass direction and the mast height """
	angle = rng.uniform(0.0, 2 * math.pi)
	distance = offset * math.sqrt(rng.uniform())
	x, y, z = setup.position
	return CoarseHint(
		position=(x + distance * math.cos(angle), y + distance * math.sin(angle)),
		heading=nearest_compass(setup.yaw),
		height=z,
	)


def load_scenario_map(spec: MapSpec) -> LaneletMap:
	if spec.map_file is None:
		return build_intersection_map(spec)
	return read_map(Path(spec.map_file))


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[Path] = None) -> Dataset:
	""" Fully seeded dataset; written to `out_dir` when given """
	lanelet_map = load_scenario_map(cfg.map)
	tracks = simulate_traffic(lanelet_map, cfg, rng=_stream(cfg.seed, 1))
	scan = generate_scan(
		lanelet_map, cfg.scan.point_density, cfg.scan.noise_sigma, rng=_stream(cfg.seed, 2),
		canopies=cfg.clutter.canopies, canopy_points=cfg.scan.canopy_points,
		canopy_radius=cfg.clutter.canopy_radius, canopy_height=cfg.clutter.canopy_height,
	)

	frames, truth, hints = {}, {}, {}
	hint_rng = _stream(cfg.seed, 4)
	for setup in cfg.sensors:
		frames[setup.id] = simulate_sensor(setup, tracks, cfg)
		truth[setup.id] = setup.pose()
		hints[setup.id] = manual_hint(setup, cfg.hint_offset, hint_rng)
		points = sum(len(f) for f in frames[setup.id])
		LOG.info(f"{setup.id}: {len(frames[setup.id])} frames, {points} detections")

	dataset = Dataset(
		root=None if out_dir is None else Path(out_dir),
		lanelet_map=lanelet_map,
		scan=scan,
		frames=frames,
		truth=truth,
		hints=hints,
		scenario=cfg.model_dump(mode='json'),
	)
	if out_dir is not None:
		write_dataset(dataset, Path(out_dir))
	return dataset
