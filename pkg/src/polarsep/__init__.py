"""Polarization-based reflection/transmission simulation and separation."""

__version__ = "0.1.0"

from .decompose import (
    CanonicalPair,
    ResidualFields,
    SingularityError,
    canonical_baseline_separate,
    canonical_solve,
    combine_residuals,
    fresnel_inverse_separate,
)
from .geometry import AoiField, GeometryRanges, SurfaceGeometry, aoi_field, sample_surface
from .imagecore import (
    ImageError,
    MetricReport,
    clip_quantize,
    gamma_compress,
    gamma_expand,
    histogram_match,
    psnr,
    rmse,
)
from .optics import OpticalConfig, PolarStack, brewster, fresnel, malus_project, mixing_alpha, observe
from .synth import SampleRecord, SynthConfig, synthesize_sample

__all__ = [
    "AoiField",
    "CanonicalPair",
    "GeometryRanges",
    "ImageError",
    "MetricReport",
    "OpticalConfig",
    "PolarStack",
    "ResidualFields",
    "SampleRecord",
    "SingularityError",
    "SurfaceGeometry",
    "SynthConfig",
    "aoi_field",
    "brewster",
    "canonical_baseline_separate",
    "canonical_solve",
    "clip_quantize",
    "combine_residuals",
    "fresnel",
    "fresnel_inverse_separate",
    "gamma_compress",
    "gamma_expand",
    "histogram_match",
    "malus_project",
    "mixing_alpha",
    "observe",
    "psnr",
    "rmse",
    "sample_surface",
    "synthesize_sample",
]
