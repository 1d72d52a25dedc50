"""RKHS ANOVA meta-models fitted by ridge group sparse estimation.

Modules: ``noise`` (generalized Gaussian errors), ``kernels`` (centered ANOVA
kernels and Gram spectra), ``rates`` (critical radii and penalty tuning),
``estimator`` (block coordinate descent solver), ``bench`` (synthetic risk
harness), ``probes`` (covering and concentration diagnostics) and ``cli``.
"""
__version__ = "0.1.0"

from .estimator import FitConfig, FitResult, MetaModel, fit, predict, rescale_fit
from .kernels import GramSet, GroupIndex, KernelSpec, anova_gram, enumerate_groups
from .noise import NoiseSpec, sample_errors
from .rates import RateParams, TuningTable, tuning_table

__all__ = [
    "FitConfig", "FitResult", "MetaModel", "fit", "predict", "rescale_fit",
    "GramSet", "GroupIndex", "KernelSpec", "anova_gram", "enumerate_groups",
    "NoiseSpec", "sample_errors", "RateParams", "TuningTable", "tuning_table",
]
