"""Geometry of mixing for finite-time flows.

Builds harmonic-mean pullback metrics from trajectory Jacobians, assembles
the matching diffusion operators with P1 finite elements, and extracts
coherent structures from their spectra: diagnostic scalar fields, spectra
and eigenfunctions, heat evolution under the averaged geometry, and k-means
partitions of the spectral embedding.
"""

from . import (clustering, fem_operator, flow_map, flow_models, heat_flow,
               mixing_geometry, spectral)
from .clustering import (ClusterAssignment, SpectralEmbedding,
                         bimodality_score, build_embedding,
                         indicator_rotation_check, kmeans, match_labels)
from .fem_operator import (DiscreteOperatorPair, TriMesh, assemble,
                           build_mesh, rayleigh_quotient, validate_mesh)
from .flow_map import (FlowMapSample, MaterialGrid, StepControl,
                       TrajectoryExitError, grid_for_model, integrate_flow,
                       linearized_flow, sample_flow, validate_sample)
from .flow_models import (FlowModel, interpolation_endpoints, model_names,
                          named_model, velocity)
from .heat_flow import HeatState, evolve, leakage
from .mixing_geometry import (MetricSampleSet, MixingMetricField,
                              TensorDiagnostics, build_metric_field,
                              cauchy_green, diagnostics, harmonic_determinant,
                              harmonic_mean, harmonic_mean_2d_shortcut,
                              surface_flux, transformed_normal, validate_field)
from .spectral import (SpectralResult, ball_average_expansion,
                       detect_eigengap, eigengap_scan, oracle_1d_identity,
                       solve_spectrum)

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment", "DiscreteOperatorPair", "FlowMapSample", "FlowModel",
    "HeatState", "MaterialGrid", "MetricSampleSet", "MixingMetricField",
    "SpectralEmbedding", "SpectralResult", "StepControl", "TensorDiagnostics",
    "TrajectoryExitError", "TriMesh", "assemble", "ball_average_expansion",
    "bimodality_score", "build_embedding", "build_mesh", "build_metric_field",
    "cauchy_green", "clustering", "detect_eigengap", "diagnostics",
    "eigengap_scan", "evolve", "fem_operator", "flow_map", "flow_models",
    "grid_for_model", "harmonic_determinant", "harmonic_mean",
    "harmonic_mean_2d_shortcut",
    "heat_flow", "indicator_rotation_check", "integrate_flow",
    "interpolation_endpoints", "kmeans", "leakage", "linearized_flow",
    "match_labels", "mixing_geometry", "model_names", "named_model",
    "oracle_1d_identity", "rayleigh_quotient", "sample_flow", "solve_spectrum",
    "spectral", "surface_flux", "transformed_normal", "validate_field",
    "validate_mesh", "validate_sample", "velocity",
]
