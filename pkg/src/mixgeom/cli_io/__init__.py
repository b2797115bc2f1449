"""Command-line driver, run configuration, and file formats."""

from .cli import build_parser, main
from .formats import (GridFieldFile, parse_velocity_data, read_grid_field,
                      read_spectrum, render_heatmap, sha256_file, write_coo,
                      write_checksum_manifest, write_grid_field, write_ppm,
                      write_spectrum)
from .pipeline import (BENCHMARK_PRESETS, PipelineContext, PipelineError,
                       RunConfig, benchmark_config, resolve_model,
                       run_benchmark, run_pipeline, run_stage)

__all__ = [
    "BENCHMARK_PRESETS", "GridFieldFile", "PipelineContext", "PipelineError",
    "RunConfig", "benchmark_config", "build_parser", "main",
    "parse_velocity_data", "read_grid_field", "read_spectrum",
    "render_heatmap", "resolve_model", "run_benchmark", "run_pipeline",
    "run_stage", "sha256_file", "write_checksum_manifest", "write_coo",
    "write_grid_field", "write_ppm", "write_spectrum",
]
