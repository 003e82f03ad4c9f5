"""Learning quantum states from non-i.i.d. (permutation-invariant) data."""

from . import definetti, linalg, measurements, noniid, shadows, states
from .linalg import CapacityError, DimensionError, ValidationError
from .measurements import Povm, clifford_group, computational_povm, pauli6_povm
from .shadows import ShadowEstimator, median_of_means, shadow_mean_exact
from .states import DenseState, ProductMixture, basis_mixture, ghz_pure, haar_mixture, iid_state

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "DenseState",
    "DimensionError",
    "Povm",
    "ProductMixture",
    "ShadowEstimator",
    "ValidationError",
    "basis_mixture",
    "clifford_group",
    "computational_povm",
    "definetti",
    "ghz_pure",
    "haar_mixture",
    "iid_state",
    "linalg",
    "measurements",
    "median_of_means",
    "noniid",
    "pauli6_povm",
    "shadow_mean_exact",
    "shadows",
    "states",
]
