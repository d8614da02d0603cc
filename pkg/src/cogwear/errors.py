"""Exception types shared across the pipeline."""


class CogwearError(Exception):
    """Base class for all pipeline errors."""


class SchemaError(CogwearError):
    """An input file does not match its documented schema."""


class DataError(CogwearError):
    """Data is structurally valid but unusable for the requested operation."""


class FitError(CogwearError):
    """A model cannot be fitted on the given inputs."""
