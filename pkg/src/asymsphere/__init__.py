"""Asymmetric multivariate Gaussian random fields on the circle and the 2-sphere."""
from .asymmetry import AsymmetricCovariance, AsymmetrySpec, build_block_cov, cross_cov
from .covariance import RadialModelSpec, preset, radial_eval, validate_params
from .data import ObservationSet, read_csv, write_csv
from .estimate import CompositeLikelihood, FitResult, ParameterVector, Variant, cl_objective, fit
from .gegenbauer import check_psd_sequence, extract_schoenberg
from .geometry import SpherePoint, geodesic_distance, paper_grid, rotation_s1, rotation_s2
from .predict import CvScores, PredictionResult, cokrige, drop_one_cv
from .simulate import simulate_field

__all__ = [
    "AsymmetricCovariance", "AsymmetrySpec", "CompositeLikelihood", "CvScores", "FitResult",
    "ObservationSet", "ParameterVector", "PredictionResult", "RadialModelSpec", "SpherePoint",
    "Variant", "build_block_cov", "check_psd_sequence", "cl_objective", "cokrige", "cross_cov",
    "drop_one_cv", "extract_schoenberg", "fit", "geodesic_distance", "paper_grid", "preset",
    "radial_eval", "read_csv", "rotation_s1", "rotation_s2", "simulate_field", "validate_params",
    "write_csv",
]
