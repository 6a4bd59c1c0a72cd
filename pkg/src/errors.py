
class PipelineError(ValueError):
	""" Base class for failures while processing data (exit code 3) """

class ConfigError(ValueError):
	""" Invalid configuration, detected before any work starts (exit code 2) """

class EmptyInputError(PipelineError):
	pass

class NoMovingPointsError(PipelineError):
	def __init__(self, message: str = "no moving points") -> None:
		super().__init__(message)

class DegenerateConfigurationError(PipelineError):
	""" Too few or rank-deficient point pairs for a rigid fit """

class NoCorrespondencesError(PipelineError):
	pass

class SingularCovarianceError(PipelineError):
	pass

class DegenerateLaneletError(PipelineError):
	pass

class EmptyMapError(PipelineError):
	pass

class UnknownCompassError(PipelineError):
	pass

class MissingPoseError(PipelineError):
	pass

class DatasetError(PipelineError):
	pass
