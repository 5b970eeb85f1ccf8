"""Nonparametric GP density estimation with Gibbs and variational inference."""

from .base_measure import (
    Dataset,
    DiagonalGaussian,
    GaussianMixtureMeasure,
    StandardNormal,
    fit_gmm,
    whiten,
)
from .density import (
    DensityEstimate,
    FlaggedEstimateError,
    log_expected_test_likelihood,
    posterior_density_samples,
)
from .gibbs import GibbsChain, GibbsConfig, run_chain
from .kernel_gp import KernelParams
from .synthgen import generate_dataset
from .variational import SparseVBState, VBConfig, run_vb

__all__ = [
    "Dataset",
    "DiagonalGaussian",
    "GaussianMixtureMeasure",
    "StandardNormal",
    "fit_gmm",
    "whiten",
    "DensityEstimate",
    "FlaggedEstimateError",
    "log_expected_test_likelihood",
    "posterior_density_samples",
    "GibbsChain",
    "GibbsConfig",
    "run_chain",
    "KernelParams",
    "generate_dataset",
    "SparseVBState",
    "VBConfig",
    "run_vb",
]

__version__ = "0.1.0"
