"""Microphone-array imaging with weighted data spaces.

Beamforming and DAMAS-NNLS deconvolution parameterized by a Hermitian
positive-definite weighting of the vectorized cross-spectral data, with
noise-covariance estimation, a synthetic monopole benchmark and source-map
quality diagnostics.

Conventions used throughout: time factor exp(+i omega t), column-major
vectorization vec(A)[l*M + m] = A[m, l], and the weighted inner product
<a, b>_W = <a, W^{-1} b>_2.
"""

__version__ = "0.1.0"

from .beamforming import (
    SourceMap,
    band_average,
    beamform_map,
    beamform_point,
    beamformer_variance,
    rms_noise_level,
    third_octave_edges,
)
from .covariance import (
    CovarianceEstimate,
    gaussian_covariance,
    gaussian_covariance_estimate,
    nearest_psd_regularized,
    sample_covariance,
    spectral_diagnostics,
)
from .damas import DamasSystem, assemble_system, discrepancy_alpha, nnls_solve, psf_value
from .diagnostics import (
    MetricReport,
    StatsReport,
    anderson_darling_rate,
    compute_map_metrics,
    compute_stats,
    properness_ratio,
    resolution_measure,
    snr_measure,
    spr_measure,
    white_noise_deviation,
    zero_mean_deviation,
)
from .geometry import (
    FlowField,
    FocusGrid,
    MicArray,
    build_focus_grid,
    green_function,
    mach_distance,
    propagation_vector,
    steering_matrix,
)
from .spectra import BlockSamples, SpectralData, estimate_csm, estimate_pcsm, welch_blocks
from .synth import GroundTruth, SynthScenario, noise_level_db, synthesize_blocks
from .weighting import (
    SelectionMask,
    WeightingScheme,
    build_weighting,
    weighted_inner,
    woodbury_apply,
)

__all__ = [name for name in dir() if not name.startswith("_")]
