"""Gaussian and sequential Monte Carlo state estimators."""

from .base import Filter, GaussianBelief, LinearGaussianModel, kalman_filter
from .gaussian import GAUSSIAN_FILTERS
from .smc import SMC_FILTERS

FILTERS = {**GAUSSIAN_FILTERS, **SMC_FILTERS}

__all__ = ["FILTERS", "Filter", "GaussianBelief", "LinearGaussianModel", "kalman_filter"]
