"""Unpaired CT to micro-CT super-resolution toolkit (Python bindings)."""

from ._core import (
    __version__,
    cdf_gap,
    default_config,
    extract_patches,
    generate_phantom_pair,
    histogram_match,
    hu_moments,
    hum_distance,
    m_hum,
    Generator,
    load_generator,
    median_filter,
    reconstruct_slice,
    summarize_passes,
    wilcoxon_rank_sum,
)

__all__ = [
    "__version__",
    "cdf_gap",
    "default_config",
    "extract_patches",
    "generate_phantom_pair",
    "histogram_match",
    "hu_moments",
    "hum_distance",
    "m_hum",
    "Generator",
    "load_generator",
    "median_filter",
    "reconstruct_slice",
    "summarize_passes",
    "wilcoxon_rank_sum",
]
