"""State-varying latent factor models estimated by kernel-projected PCA."""

from .errors import *  # noqa: F401,F403
from .estimator import (
    CommonComponentResult,
    ConditionalFit,
    NormalizedFit,
    align_signs,
    common_components,
    fit_conditional,
    normalize_fit,
    state_sweep,
    unprojected_factors,
)
from .inference import (
    CommonSE,
    FactorCov,
    GcTestResult,
    LoadingCov,
    estimate_common_se,
    estimate_factor_cov,
    estimate_loading_cov,
    gc_test,
    generalized_correlation,
    pairwise_test_grid,
)
from .kernels import KERNELS, KernelWeights, density_estimate, kernel_roughness, kernel_value, kernel_weights
from .linalg import EigenResult, top_r_symmetric_eig
from .sparsity import SparsitySets

__version__ = "0.1.0"
