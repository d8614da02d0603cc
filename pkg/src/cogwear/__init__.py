"""Wearable-based screening pipeline for poor cognitive test performance.

Minute-level wrist accelerometry and ambient light are turned into sleep,
circadian, statistical, and spectral features; boosted-tree and logistic
models are then selected, tuned, and evaluated with repeated
cross-validation to flag older adults likely to score in the bottom
quartile of three cognitive tests.
"""

__version__ = "0.1.0"

from .errors import CogwearError, DataError, FitError, SchemaError
from .matrix import FeatureMatrix

__all__ = [
    "CogwearError",
    "DataError",
    "FeatureMatrix",
    "FitError",
    "SchemaError",
    "__version__",
]
