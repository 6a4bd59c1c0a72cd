from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy
from scipy.spatial.transform import Rotation

# Quaternions are stored in (x, y, z, w) order everywhere, which is also the
# order scipy uses. Files and state vectors keep this order.

QUATERNION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RadarPoint:
	position: tuple[float, float, float]
	radial_velocity: float = 0.0
	""" m/s, positive when moving away from the sensor """
	timestamp: int = 0
	""" ns since epoch """
	rcs: Optional[float] = None
	""" dBsm """


def _readonly(array: numpy.ndarray) -> numpy.ndarray:
	array = numpy.array(array, copy=True)
	array.setflags(write=False)
	return array


@dataclass(frozen=True, eq=False)
class PointCloud:
	"""
	Column-wise point cloud. All points share `frame_id`.

	`stamp` is the acquisition time of a single radar frame; it survives even
	when the frame has no detections. Laser-scan clouds carry zeros for
	velocity and time.
	"""
	positions: numpy.ndarray
	radial_velocity: Optional[numpy.ndarray] = None
	timestamps: Optional[numpy.ndarray] = None
	rcs: Optional[numpy.ndarray] = None
	frame_id: str = "sensor"
	stamp: Optional[int] = None

	def __post_init__(self):
		positions = numpy.asarray(self.positions, dtype=numpy.float64).reshape(-1, 3)
		if not numpy.all(numpy.isfinite(positions)):
			raise ValueError("point positions must be finite")
		n = positions.shape[0]

		velocity = numpy.zeros(n) if self.radial_velocity is None else numpy.asarray(self.radial_velocity, dtype=numpy.float64).reshape(-1)
		timestamps = numpy.zeros(n, dtype=numpy.int64) if self.timestamps is None else numpy.asarray(self.timestamps, dtype=numpy.int64).reshape(-1)
		if velocity.shape[0] != n or timestamps.shape[0] != n:
			raise ValueError("per-point columns must match the number of positions")

		object.__setattr__(self, 'positions', _readonly(positions))
		object.__setattr__(self, 'radial_velocity', _readonly(velocity))
		object.__setattr__(self, 'timestamps', _readonly(timestamps))

		if self.rcs is not None:
			rcs = numpy.asarray(self.rcs, dtype=numpy.float64).reshape(-1)
			if rcs.shape[0] != n:
				raise ValueError("rcs column must match the number of positions")
			object.__setattr__(self, 'rcs', _readonly(rcs))

	@classmethod
	def empty(cls, frame_id: str = "sensor", stamp: Optional[int] = None, with_rcs: bool = False) -> "PointCloud":
		return cls(numpy.zeros((0, 3)), rcs=numpy.zeros(0) if with_rcs else None, frame_id=frame_id, stamp=stamp)

	@classmethod
	def from_points(cls, points: Iterable[RadarPoint], frame_id: str = "sensor", stamp: Optional[int] = None) -> "PointCloud":
		points = list(points)
		with_rcs = any(p.rcs is not None for p in points)
		if len(points) == 0:
			return cls.empty(frame_id, stamp=stamp)
		return cls(
			positions=[p.position for p in points],
			radial_velocity=[p.radial_velocity for p in points],
			timestamps=[p.timestamp for p in points],
			rcs=[numpy.nan if p.rcs is None else p.rcs for p in points] if with_rcs else None,
			frame_id=frame_id,
			stamp=stamp,
		)

	@classmethod
	def concatenate(cls, clouds: Sequence["PointCloud"], frame_id: Optional[str] = None) -> "PointCloud":
		if len(clouds) == 0:
			return cls.empty(frame_id or "sensor")
		frame_id = frame_id or clouds[0].frame_id
		if any(c.frame_id != frame_id for c in clouds):
			raise ValueError("cannot concatenate clouds from different frames")
		with_rcs = any(c.rcs is not None for c in clouds)
		rcs = None
		if with_rcs:
			rcs = numpy.concatenate([c.rcs if c.rcs is not None else numpy.full(len(c), numpy.nan) for c in clouds])
		return cls(
			positions=numpy.concatenate([c.positions for c in clouds]),
			radial_velocity=numpy.concatenate([c.radial_velocity for c in clouds]),
			timestamps=numpy.concatenate([c.timestamps for c in clouds]),
			rcs=rcs,
			frame_id=frame_id,
		)

	@property
	def has_rcs(self) -> bool:
		return self.rcs is not None

	def __len__(self) -> int:
		return self.positions.shape[0]

	def __getitem__(self, idx: int) -> RadarPoint:
		rcs = None
		if self.rcs is not None and not numpy.isnan(self.rcs[idx]):
			rcs = float(self.rcs[idx])
		return RadarPoint(
			position=tuple(float(v) for v in self.positions[idx]),
			radial_velocity=float(self.radial_velocity[idx]),
			timestamp=int(self.timestamps[idx]),
			rcs=rcs,
		)

	def __iter__(self) -> Iterator[RadarPoint]:
		for idx in range(len(self)):
			yield self[idx]

	def select(self, selection) -> "PointCloud":
		""" Subset by boolean mask or index array, preserving order """
		return PointCloud(
			positions=self.positions[selection],
			radial_velocity=self.radial_velocity[selection],
			timestamps=self.timestamps[selection],
			rcs=None if self.rcs is None else self.rcs[selection],
			frame_id=self.frame_id,
			stamp=self.stamp,
		)

	def with_positions(self, positions: numpy.ndarray, frame_id: Optional[str] = None) -> "PointCloud":
		return PointCloud(
			positions=positions,
			radial_velocity=self.radial_velocity,
			timestamps=self.timestamps,
			rcs=self.rcs,
			frame_id=self.frame_id if frame_id is None else frame_id,
			stamp=self.stamp,
		)


@dataclass(frozen=True, eq=False)
class Pose:
	"""
	Rigid transform mapping sensor-frame points into the map frame:
	p_map = R * p_sensor + translation.
	"""
	translation: numpy.ndarray
	rotation: numpy.ndarray
	""" unit quaternion (x, y, z, w) """

	def __post_init__(self):
		translation = numpy.asarray(self.translation, dtype=numpy.float64).reshape(3)
		rotation = numpy.asarray(self.rotation, dtype=numpy.float64).reshape(4)
		norm = numpy.linalg.norm(rotation)
		if not numpy.isfinite(norm) or norm < 1e-12:
			raise ValueError("rotation quaternion must be non-zero")
		if not numpy.all(numpy.isfinite(translation)):
			raise ValueError("translation must be finite")
		object.__setattr__(self, 'translation', _readonly(translation))
		object.__setattr__(self, 'rotation', _readonly(rotation / norm))

	@classmethod
	def identity(cls) -> "Pose":
		return cls(numpy.zeros(3), numpy.array([0.0, 0.0, 0.0, 1.0]))

	@classmethod
	def from_rotation(cls, rotation: Rotation, translation=(0.0, 0.0, 0.0)) -> "Pose":
		return cls(numpy.asarray(translation, dtype=numpy.float64), rotation.as_quat())

	@classmethod
	def from_euler(cls, yaw: float, pitch: float = 0.0, roll: float = 0.0, translation=(0.0, 0.0, 0.0), degrees: bool = True) -> "Pose":
		""" Intrinsic z-y-x (yaw, pitch, roll) """
		return cls.from_rotation(Rotation.from_euler('ZYX', [yaw, pitch, roll], degrees=degrees), translation)

	@classmethod
	def from_matrix(cls, matrix: numpy.ndarray) -> "Pose":
		matrix = numpy.asarray(matrix, dtype=numpy.float64)
		return cls.from_rotation(Rotation.from_matrix(matrix[:3, :3]), matrix[:3, 3])

	@classmethod
	def from_vector(cls, vector: Sequence[float]) -> "Pose":
		""" [x, y, z, qx, qy, qz, qw] """
		vector = numpy.asarray(vector, dtype=numpy.float64).reshape(7)
		return cls(vector[:3], vector[3:])

	def as_vector(self) -> numpy.ndarray:
		return numpy.concatenate([self.translation, self.rotation])

	@property
	def rotation_object(self) -> Rotation:
		return Rotation.from_quat(self.rotation)

	@property
	def rotation_matrix(self) -> numpy.ndarray:
		return self.rotation_object.as_matrix()

	def as_matrix(self) -> numpy.ndarray:
		matrix = numpy.eye(4)
		matrix[:3, :3] = self.rotation_matrix
		matrix[:3, 3] = self.translation
		return matrix

	def euler(self, degrees: bool = True) -> tuple[float, float, float]:
		""" (yaw, pitch, roll), intrinsic z-y-x """
		yaw, pitch, roll = self.rotation_object.as_euler('ZYX', degrees=degrees)
		return float(yaw), float(pitch), float(roll)

	@property
	def yaw(self) -> float:
		""" Heading in degrees, counter-clockwise from east """
		return self.euler()[0]

	def apply(self, points: numpy.ndarray) -> numpy.ndarray:
		points = numpy.asarray(points, dtype=numpy.float64).reshape(-1, 3)
		return points @ self.rotation_matrix.T + self.translation


def compose(a: Pose, b: Pose) -> Pose:
	""" Applies `b` first, then `a` """
	rotation = a.rotation_object * b.rotation_object
	translation = a.rotation_matrix @ b.translation + a.translation
	return Pose.from_rotation(rotation, translation)


def invert(a: Pose) -> Pose:
	rotation = a.rotation_object.inv()
	translation = -(rotation.as_matrix() @ a.translation)
	return Pose.from_rotation(rotation, translation)


def pose_difference(a: Pose, b: Pose) -> tuple[float, float]:
	""" Translation distance (m) and rotation angle (rad) between two poses """
	delta = compose(invert(b), a)
	return float(numpy.linalg.norm(delta.translation)), float(delta.rotation_object.magnitude())


def transform_cloud(T: Pose, cloud: PointCloud, frame_id: Optional[str] = None) -> PointCloud:
	""" Rotates then translates every position; per-point attributes are untouched """
	return cloud.with_positions(T.apply(cloud.positions), frame_id=frame_id)
