"""Multi-component coagulation with source: measures, kernels, solvers and checks."""

from .composition import CompositionVector, WeightParams, l1_norm, strictly_below, weight_eval
from .errors import ConfigError, IncompatibleGridError, MulticoagError, NumericalError
from .kernels import KernelSpec
from .measures import SignedDiscreteMeasure

__version__ = "0.1.0"

__all__ = [
    "CompositionVector", "WeightParams", "l1_norm", "strictly_below", "weight_eval",
    "ConfigError", "IncompatibleGridError", "MulticoagError", "NumericalError",
    "KernelSpec", "SignedDiscreteMeasure", "__version__",
]
