"""
Run configuration. Every section mirrors one module's tunable defaults and is
validated before any work starts.
"""
from pathlib import Path
from typing import Any, Literal, Optional
import json

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigError


class Section(BaseModel):
	model_config = ConfigDict(extra='forbid', validate_assignment=True)


class PreprocessConfig(Section):
	v_min: float = Field(0.15, ge=0, description="Doppler gate in m/s, strict")
	eps: float = Field(0.5, gt=0, description="DBSCAN radius for radar points in m")
	min_pts: int = Field(10, ge=1)
	cell_size: float = Field(0.5, gt=0, description="Voxel edge length in m")
	scan_eps: float = Field(0.5, gt=0, description="DBSCAN radius for laser-scan points in m")
	scan_min_pts: int = Field(10, ge=1)
	scan_cell_size: float = Field(0.5, gt=0)
	target_height: float = Field(1.5, ge=0, description="Height in m the road target is stacked up to, the body height of passing vehicles")


class RegistrationConfig(Section):
	coarse_dist: float = Field(10.0, gt=0, description="Correspondence distance of the first ICP stage in m")
	max_iter: int = Field(50, ge=1)
	rel_tol: float = Field(1e-6, gt=0)
	yaw_span: float = Field(60.0, ge=0, lt=180, description="Degrees either side of a coarse seed the first ICP stage also starts from, 0 disables")
	yaw_step: float = Field(5.0, gt=0)
	yaw_keep: int = Field(3, ge=1, description="Best-fitting turned seeds refined by the first stage")


class CycleConfig(Section):
	cycle_period: float = Field(5.0, gt=0, description="Seconds between localization cycles")
	window_frames: int = Field(2000, gt=0, description="Rolling window length in frames")
	frame_rate: float = Field(20.0, gt=0, description="Hz, spaces frames recorded without a timestamp")


class FilterConfig(Section):
	q_translation: float = Field(1e-4, ge=0, description="Process noise, m^2")
	q_rotation: float = Field(1e-6, ge=0)
	r_translation: float = Field(0.25, ge=0, description="Measurement noise, m^2")
	r_rotation: float = Field(1e-4, ge=0)
	p0_translation: float = Field(100.0, gt=0, description="Initial covariance around the manual hint, m^2")
	p0_rotation: float = Field(0.1, gt=0)
	min_fitness: float = Field(0.2, ge=0, le=1, description="ICP results below this fitness are not fused")
	min_spread: float = Field(3.0, ge=0, description="Sources whose second principal extent (standard deviation, m) is below this are not registered")


class OccupancyConfig(Section):
	step: float = Field(0.5, gt=0, description="Sub-lane polygon length in m")
	window_len_ms: float = Field(50.0, gt=0)
	finalization_lag: int = Field(5, ge=0, description="Windows kept open for late messages")
	horizon_windows: int = Field(2000, ge=1, description="Cumulative heat-map horizon")
	min_speed: Optional[float] = Field(0.15, ge=0, description="Doppler filter in m/s, None keeps static points")
	z_min: Optional[float] = None
	z_max: Optional[float] = None
	min_rcs: Optional[float] = None

	@model_validator(mode='after')
	def check_band(self):
		if self.z_min is not None and self.z_max is not None and self.z_min > self.z_max:
			raise ValueError("z_min must not exceed z_max")
		return self


class RenderConfig(Section):
	pixels_per_meter: float = Field(4.0, gt=0)
	margin: int = Field(20, ge=0, description="Border in pixels")
	colormap: Literal['gray', 'inferno'] = 'gray'


class EvaluationConfig(Section):
	n_seeds: int = Field(50, ge=1)
	seed_radius: float = Field(15.0, ge=0, description="Radius of the disc initial positions are drawn from, m")
	yaw_spread: float = Field(45.0, ge=0, description="Initial yaw drawn uniformly within +/- this many degrees of the hint")


class RunConfig(Section):
	seed: int = Field(0, ge=0)
	preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
	registration: RegistrationConfig = Field(default_factory=RegistrationConfig)
	cycle: CycleConfig = Field(default_factory=CycleConfig)
	filter: FilterConfig = Field(default_factory=FilterConfig)
	occupancy: OccupancyConfig = Field(default_factory=OccupancyConfig)
	render: RenderConfig = Field(default_factory=RenderConfig)
	evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

	@model_validator(mode='after')
	def check_schedule(self):
		if self.registration.coarse_dist < 2 * self.preprocess.cell_size:
			raise ValueError("registration.coarse_dist must be at least twice preprocess.cell_size")
		return self


# Documents may carry a "scenario" section for the simulator; it is validated there
SCENARIO_SECTION = "scenario"


def model_keys(model: type[BaseModel], prefix: str = "") -> list[str]:
	""" Dotted names of every scalar field, nested models included """
	keys = []
	for name, info in model.model_fields.items():
		annotation = info.annotation
		if isinstance(annotation, type) and issubclass(annotation, BaseModel):
			keys.extend(model_keys(annotation, f"{prefix}{name}."))
			continue
		default = info.get_default(call_default_factory=True)
		if isinstance(default, (list, tuple, dict, BaseModel)):
			continue
		keys.append(f"{prefix}{name}")
	return keys


def override_keys() -> list[str]:
	""" 'section.field' for every run setting that can be set from the command line """
	return [key for key in model_keys(RunConfig) if key != "seed"]


def merge_overrides(document: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
	merged = json.loads(json.dumps(document))
	for key, value in overrides.items():
		*path, name = key.split('.')
		node = merged
		for part in path:
			node = node.setdefault(part, {})
			if not isinstance(node, dict):
				raise ConfigError(f"cannot override '{key}': '{part}' is not a section")
		node[name] = value
	return merged


def read_document(path: Optional[Path]) -> dict[str, Any]:
	if path is None:
		return {}
	try:
		document = json.loads(Path(path).read_text(encoding='utf-8'))
	except (OSError, json.JSONDecodeError) as error:
		raise ConfigError(f"cannot read config {path}: {error}")
	if not isinstance(document, dict):
		raise ConfigError(f"config {path} must be a JSON object")
	return document


def validate_section(model: type[BaseModel], document: dict[str, Any]) -> BaseModel:
	try:
		return model.model_validate(document)
	except ValidationError as error:
		raise ConfigError(str(error))


def load_run_config(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
	document = merge_overrides(read_document(path), overrides or {})
	document.pop(SCENARIO_SECTION, None)
	return validate_section(RunConfig, document)
