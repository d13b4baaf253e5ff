"""POD/GPR reduced-order modeling of parameterized plume dispersion fields."""

from .errors import ConfigError, DataError, NumericalError, PlumeRomError
from .gpr import GammaPrior, GaussianPrior, GpModel, Hyperparameters, PriorSet
from .plume import FieldSnapshot, Grid, SnapshotSet, generate_dataset, generate_field
from .pod import ReducedBasis
from .priors import NoiseEstimate
from .rom import EvaluationReport, RomModel, evaluate, predict, robustness_sweep, split, train
from .sampling import Design, ParameterSample, ParameterSpace, design

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Design",
    "EvaluationReport",
    "FieldSnapshot",
    "GammaPrior",
    "GaussianPrior",
    "GpModel",
    "Grid",
    "Hyperparameters",
    "NoiseEstimate",
    "NumericalError",
    "ParameterSample",
    "ParameterSpace",
    "PlumeRomError",
    "PriorSet",
    "ReducedBasis",
    "RomModel",
    "SnapshotSet",
    "design",
    "evaluate",
    "generate_dataset",
    "generate_field",
    "predict",
    "robustness_sweep",
    "split",
    "train",
    "__version__",
]
