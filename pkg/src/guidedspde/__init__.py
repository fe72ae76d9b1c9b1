"""Guided particle filtering and path-space MCMC for spectrally discretised SPDEs."""

from .amari import AmariDrift, AmariModel, AmariParams, CustomDrift, TimeGrid, ZeroDrift, simulate_path
from .filtering import FilterConfig, FilterResult, run_filter
from .guiding import DirectGuide, OneStepGuide, RiccatiGuide, build_direct_guide, build_riccati_guide
from .observation import Dataset, ObservationScheme, Problem, generate_dataset
from .smoothing import SmootherConfig, run_smoother
from .spectral import LinearDynamics, SpectralGrid, matern_spectrum
from .ukf import run_ukf

__version__ = "0.1.0"

__all__ = [
    "AmariDrift", "AmariModel", "AmariParams", "CustomDrift", "Dataset", "DirectGuide", "FilterConfig",
    "FilterResult", "LinearDynamics", "ObservationScheme", "OneStepGuide", "Problem", "RiccatiGuide",
    "SmootherConfig", "SpectralGrid", "TimeGrid", "ZeroDrift", "build_direct_guide", "build_riccati_guide",
    "generate_dataset", "matern_spectrum", "run_filter", "run_smoother", "run_ukf", "simulate_path",
]
