"""Sliced and max-sliced Wasserstein distances, robust filtering, and experiment harness."""
from .empirical1d import Sample1D, brute_force_wp_pow, w1_cdf, wp_pow_equal, wp_pow_weighted
from .geometry import PointCloud, project, project_ball, sample_sphere, sphere_abs_moment
from .maxsliced import SubgradConfig, dense_grid_oracle, lipo_maximize, subgrad_descent
from .robust import msw1_weighted_ascent, resilience_report, restricted_w1, spectral_filter, weighted_moments
from .sliced import EstimateReport, estimate_swp

__version__ = "0.1.0"
