"""Class-conditional score priors over PDE coefficients and states.

The package builds unified (coefficient, initial, terminal) samples from
reference solvers, fits a conditional denoiser over them and answers
forward, inverse, parameter and model-selection queries by guided sampling.
"""

from .errors import DataCorruption, DivergenceError, FormatError, InvalidArgument, SelectionError
from .fields import Field, Grid2D, ObservationMask, derive_rng, derive_seed, make_mask
from .prior import MixtureOraclePrior
from .unified import Dataset, PDEClass, generate_dataset, read_dataset, registry, write_dataset

__version__ = "0.1.0"

__all__ = [
    "DataCorruption", "DivergenceError", "FormatError", "InvalidArgument", "SelectionError",
    "Field", "Grid2D", "ObservationMask", "derive_rng", "derive_seed", "make_mask",
    "MixtureOraclePrior", "Dataset", "PDEClass", "generate_dataset", "read_dataset",
    "registry", "write_dataset",
]
