"""Confidence sub-contour boxes for nonlinear dynamic models."""
from .core import Interval, Orthotope, TimeGrid, Trajectory, contains, normalize_interval
from .estimation import filter_fits, median_ci, multi_start_fit
from .loss import Explorer, LossConfig, dissimilarity, loss, threshold
from .models import IntegratorConfig, dengue_model, integrate, test_models
from .oat import OatConfig, promissory_box
from .sampling import latin_hypercube, monte_carlo, uncertainty_analysis
from .sensitivity import convergence_analysis, saltelli_design, sobol_indices
from .shrink import ShrinkConfig, csb_estimate

__all__ = [
    "Interval", "Orthotope", "TimeGrid", "Trajectory", "contains", "normalize_interval",
    "filter_fits", "median_ci", "multi_start_fit",
    "Explorer", "LossConfig", "dissimilarity", "loss", "threshold",
    "IntegratorConfig", "dengue_model", "integrate", "test_models",
    "OatConfig", "promissory_box",
    "latin_hypercube", "monte_carlo", "uncertainty_analysis",
    "convergence_analysis", "saltelli_design", "sobol_indices",
    "ShrinkConfig", "csb_estimate",
]
