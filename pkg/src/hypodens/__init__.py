"""Small-time density estimates for hypoelliptic diffusions.

Library plus batch CLI covering: Lie-bracket directional matrices and
anisotropic norms, Brownian sub-interval grids with iterated integrals and
conditional covariances, Stratonovich SDE and tangent-flow integration, the
small-time key decomposition with its local-inversion density bounds, and
Monte Carlo verification of the two-sided small-time density estimates.
"""

from ._backend import backend_name
from .fields import (
    DirectionalMatrix,
    VectorFieldModel,
    alpha_factor,
    aniso_norm,
    dim_span_sigma,
    directional_matrix,
    gamma_extension,
    get_model,
    hoermander_lambda,
    lie_bracket,
    model_from_tables,
    registered_models,
    scale_matrix,
)
from .paths import (
    BrownianGrid,
    conditional_covariance,
    increments_and_iterated,
    localization_weights,
    mollifier,
    sample_path,
    support_quantities,
    theta_vector,
)

__version__ = "0.1.0"

__all__ = [
    "BrownianGrid", "DirectionalMatrix", "VectorFieldModel",
    "alpha_factor", "aniso_norm", "backend_name", "conditional_covariance",
    "dim_span_sigma", "directional_matrix", "gamma_extension", "get_model",
    "hoermander_lambda", "increments_and_iterated", "lie_bracket",
    "localization_weights", "model_from_tables", "mollifier",
    "registered_models", "sample_path", "scale_matrix", "support_quantities",
    "theta_vector", "__version__",
]
