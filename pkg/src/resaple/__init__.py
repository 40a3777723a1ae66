"""One-step restricted-likelihood estimation and testing of residual spatial
dependence in Gaussian spatial error models."""

from .errors import (
    DegenerateError,
    DimensionError,
    InternalConsistencyError,
    IsolatedUnitError,
    NumericalError,
    OptimizationError,
    RankError,
    ResapleError,
    SingularityError,
    ValidationError,
)
from .esda import ScatterData, WeightComparison, compare_weights, local_contributions, scatter_coordinates
from .estimators import (
    EstimateResult,
    RemlProblem,
    aple,
    aple_residual,
    approximate_curvature,
    estimate_all,
    maple,
    moran_residual,
    reml_fit,
    resaple,
    restricted_profile_loglik,
    restricted_score,
)
from .inference import LocalTestResult, TestResult, exact_test, local_tests, permutation_test, z_test
from .quadform import imhof, imhof_tail, rayleigh_moments, test_spectrum
from .residual_space import DesignMatrix, ResidualSpace, build_residual_space, contrasts, restricted_information
from .weights import (
    AdjacencyGraph,
    WeightMatrix,
    b07_like,
    build_knn,
    build_lattice,
    degree_identities,
    raw_weights,
    read_weights,
    row_standardize,
    write_weights,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
