"""Ellipsoid-Gaussian distribution: density, sampling, fitting and post-processing."""

from .core import (
    Dataset,
    EGGradient,
    EGParams,
    GaussianFactorModel,
    Standardization,
    eg_cov,
    eg_limit_construction,
    eg_log_density,
    eg_log_density_grad,
    eg_log_mgf,
    eg_marginal,
    eg_mean,
    eg_sample,
    gaussian_limit,
)
from .ctef import EllipsoidFit, ctef_fit
from .fisher_bingham import FBArgs, FisherBinghamA, FisherBinghamError, fb_log_const, fb_log_const_mc
from .sampler import FitConfig, PosteriorSamples, Prior, fit, log_posterior
from .special import bessel_ratio, inverse_bessel_ratio, log_bessel_i, log_bessel_i_scaled, log_vmf_const
from .vmf import VMFParams, vmf_log_density, vmf_sample

__version__ = "0.1.0"
