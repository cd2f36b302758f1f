"""Source-map quality metrics and statistical assumption diagnostics.

Map metrics (resolution, SNR, source-to-pattern ratio) operate on lattice
grids with 8-connected components; all three are invariant under positive
scaling of the power map.  The statistics side quantifies how well block
data supports the zero-mean / Gaussian / proper / white-noise assumptions
behind the covariance-based weighting choices.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .beamforming import SourceMap
from .errors import InsufficientSamplesError, InvalidArgumentError, UndefinedMetricError, UnsupportedGridError
from .spectra import BlockSamples, estimate_csm, estimate_pcsm

# Stephens' critical values for the Anderson-Darling composite normality
# test (mean and variance estimated), indexed by significance level.
AD_CRITICAL_VALUES = {0.15: 0.576, 0.10: 0.631, 0.05: 0.752, 0.025: 0.873, 0.01: 1.035}

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

# -1 dB expressed as a linear power ratio.
_MINUS_ONE_DB = 10.0 ** (-0.1)


@dataclass(frozen=True)
class ResolutionResult:
    """Largest distance from the peak to the -1 dB super-level set.

    ``value`` takes the whole level set (the contract value);
    ``component_value`` restricts it to the peak's connected component,
    which is robust against detached patches grazing the -1 dB line.
    """

    value: float
    component_value: float


@dataclass(frozen=True)
class SnrResult:
    """Main-lobe to largest-sidelobe distance in dB.

    When the super-level sets stay single-component all the way down,
    ``no_sidelobe`` is set and ``value_db`` holds the map's dynamic range.
    """

    value_db: float
    no_sidelobe: bool


@dataclass(frozen=True)
class MetricReport:
    resolution: float
    resolution_component: float
    snr_db: float
    snr_no_sidelobe: bool
    spr_db: float


@dataclass(frozen=True)
class StatsReport:
    """Per-frequency assumption diagnostics for a block dataset."""

    freqs: np.ndarray
    eps_mean: np.ndarray
    ad_acceptance_rate: np.ndarray
    proper_ratio: np.ndarray
    white_noise_dev: np.ndarray


def _lattice_image(source_map: SourceMap) -> np.ndarray:
    lattice = source_map.grid.lattice
    if lattice is None:
        raise UnsupportedGridError("metric needs a lattice grid with adjacency information")
    return source_map.powers.reshape(lattice.shape)


def resolution_measure(source_map: SourceMap) -> ResolutionResult:
    """Supremum distance from the peak over points within 1 dB of the peak."""
    img = _lattice_image(source_map)
    powers = source_map.powers
    peak = powers.max()
    if peak <= 0.0:
        raise UndefinedMetricError("resolution is undefined for an all-zero map")
    peak_idx = int(np.argmax(powers))
    pts = source_map.grid.points
    dists = np.linalg.norm(pts - pts[peak_idx], axis=1)

    above = powers >= peak * _MINUS_ONE_DB
    value = float(np.max(dists[above]))

    labels, _ = ndimage.label(above.reshape(img.shape), structure=_EIGHT_CONNECTED)
    peak_label = labels.reshape(-1)[peak_idx]
    in_component = labels.reshape(-1) == peak_label
    component_value = float(np.max(dists[in_component & above]))
    return ResolutionResult(value=value, component_value=component_value)


def snr_measure(source_map: SourceMap) -> SnrResult:
    """Level (in dB below the peak) at which a second lobe appears.

    Sweeps the distinct map values downward and counts 8-connected
    components of the super-level sets; the supremum of the defining set is
    attained at a cell value, so the sweep is exact.
    """
    img = _lattice_image(source_map)
    peak = img.max()
    if peak <= 0.0:
        raise UndefinedMetricError("SNR is undefined for an all-zero map")
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(img / peak)

    finite = db[np.isfinite(db)]
    distinct = np.unique(finite)[::-1]
    for level in distinct:
        mask = db >= level
        _, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
        if count > 1:
            return SnrResult(value_db=float(abs(level)), no_sidelobe=False)
    return SnrResult(value_db=float(abs(distinct[-1])), no_sidelobe=True)


def spr_measure(source_map: SourceMap) -> float:
    """Source-to-pattern ratio 10 log10(max power / mean power) in dB."""
    powers = source_map.powers
    mean = powers.mean()
    if mean <= 0.0:
        raise UndefinedMetricError("SPR is undefined for a map with zero mean power")
    return float(10.0 * np.log10(powers.max() / mean))


def compute_map_metrics(source_map: SourceMap) -> MetricReport:
    res = resolution_measure(source_map)
    snr = snr_measure(source_map)
    return MetricReport(
        resolution=res.value,
        resolution_component=res.component_value,
        snr_db=snr.value_db,
        snr_no_sidelobe=snr.no_sidelobe,
        spr_db=spr_measure(source_map),
    )


def zero_mean_deviation(blocks: BlockSamples) -> np.ndarray:
    """Norm ratio of the mean pressure vector to the mean of absolute values.

    Per frequency: sqrt(sum_m |mean_j p_j(x_m)|^2 / sum_m (mean_j |p_j(x_m)|)^2).
    Vanishing blocks make the ratio 0/0 and raise.
    """
    mean_vec = blocks.data.mean(axis=0)  # (M, F)
    mean_abs = np.abs(blocks.data).mean(axis=0)
    num = np.sum(np.abs(mean_vec) ** 2, axis=0)
    den = np.sum(mean_abs**2, axis=0)
    if np.any(den == 0.0):
        raise UndefinedMetricError("zero-mean deviation is undefined for all-zero blocks")
    return np.sqrt(num / den)


def anderson_darling_statistic(samples: np.ndarray) -> np.ndarray:
    """Stephens-adjusted A^2 statistic for composite normality, batched.

    samples has shape (..., n); mean and variance are estimated per row and
    the adjustment A*^2 = A^2 (1 + 0.75/n + 2.25/n^2) is applied.  Rows with
    zero variance yield +inf (certain rejection).
    """
    x = np.sort(np.asarray(samples, dtype=float), axis=-1)
    n = x.shape[-1]
    if n < 8:
        raise InsufficientSamplesError(f"Anderson-Darling test needs n >= 8 samples, got {n}")
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, ddof=1, keepdims=True)
    degenerate = std[..., 0] == 0.0
    std = np.where(std == 0.0, 1.0, std)
    u = ndtr((x - mean) / std)
    eps = np.finfo(float).tiny
    u = np.clip(u, eps, 1.0 - 1e-16)
    i = np.arange(1, n + 1, dtype=float)
    log_terms = (2.0 * i - 1.0) * (np.log(u) + np.log1p(-u[..., ::-1]))
    a2 = -n - log_terms.sum(axis=-1) / n
    a2 = a2 * (1.0 + 0.75 / n + 2.25 / n**2)
    return np.where(degenerate, np.inf, a2)


def anderson_darling_rate(blocks: BlockSamples, significance: float = 0.05) -> np.ndarray:
    """Fraction of microphones passing the AD normality test, per frequency.

    Real and imaginary parts are tested individually and a microphone is
    accepted only when both pass (conjunction rule).
    """
    try:
        critical = AD_CRITICAL_VALUES[significance]
    except KeyError:
        raise InvalidArgumentError(
            f"unsupported significance level {significance}; choose from {sorted(AD_CRITICAL_VALUES)}"
        )
    if blocks.num_blocks < 8:
        raise InsufficientSamplesError(f"AD rate needs at least 8 blocks, got {blocks.num_blocks}")
    # (M, F, J) per-part sample layout.
    samples = np.moveaxis(blocks.data, 0, -1)
    a2_real = anderson_darling_statistic(samples.real)
    a2_imag = anderson_darling_statistic(samples.imag)
    accept = (a2_real <= critical) & (a2_imag <= critical)
    return accept.mean(axis=0)


def properness_ratio(csm: np.ndarray, pcsm: np.ndarray):
    """Frobenius norm ratio ||PCSM|| / ||CSM||; zero for proper signals."""
    csm = np.asarray(csm)
    pcsm = np.asarray(pcsm)
    if csm.shape != pcsm.shape:
        raise InvalidArgumentError(f"shape mismatch {csm.shape} vs {pcsm.shape}")
    norm_c = np.linalg.norm(csm, axis=(-2, -1))
    norm_p = np.linalg.norm(pcsm, axis=(-2, -1))
    if np.any(norm_c == 0.0):
        raise UndefinedMetricError("properness ratio is undefined for a zero CSM")
    return norm_p / norm_c


def white_noise_deviation(sigma: np.ndarray) -> float:
    """min over a > 0 of ||Sigma - a I||_F / ||Sigma||_F, always in [0, 1].

    The unconstrained minimizer is a* = Re(trace Sigma) / n; it is floored
    at zero because the a -> 0+ limit gives ratio one, which the minimum can
    only improve on.
    """
    sigma = np.asarray(sigma, dtype=np.complex128)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {sigma.shape}")
    n = sigma.shape[0]
    norm2 = float(np.sum(np.abs(sigma) ** 2))
    if norm2 == 0.0:
        raise UndefinedMetricError("white-noise deviation is undefined for a zero matrix")
    a_star = max(float(np.trace(sigma).real) / n, 0.0)
    dev2 = norm2 - 2.0 * a_star * float(np.trace(sigma).real) + a_star**2 * n
    return float(np.sqrt(max(dev2, 0.0) / norm2))


def white_noise_deviation_gaussian(csm: np.ndarray, pcsm: np.ndarray) -> float:
    """White-noise deviation of the Gaussian-formula covariance, without
    materializing the M^2 x M^2 matrix.

    Uses the closed forms trace(Sigma) = (trace C)^2 + ||P||_F^2 and
    ||Sigma||_F^2 = ||C||_F^4 + ||P||_F^4 + 2 Re<C^T (x) C, K>_F, where the
    cross term reduces to sum(C * (conj(P) (C^H P))).
    """
    c = np.asarray(csm, dtype=np.complex128)
    p = np.asarray(pcsm, dtype=np.complex128)
    if c.shape != p.shape or c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidArgumentError("csm/pcsm must be square with equal shape")
    n = c.shape[0] ** 2
    norm_c2 = float(np.sum(np.abs(c) ** 2))
    norm_p2 = float(np.sum(np.abs(p) ** 2))
    cross = complex(np.sum(c * (p.conj() @ (c.conj().T @ p))))
    norm2 = norm_c2**2 + norm_p2**2 + 2.0 * cross.real
    if norm2 <= 0.0:
        raise UndefinedMetricError("white-noise deviation is undefined for a zero covariance")
    trace = float(np.trace(c).real) ** 2 + norm_p2
    a_star = max(trace / n, 0.0)
    dev2 = norm2 - 2.0 * a_star * trace + a_star**2 * n
    return float(np.sqrt(max(dev2, 0.0) / norm2))


def compute_stats(blocks: BlockSamples, significance: float = 0.05) -> StatsReport:
    """All four per-frequency assumption diagnostics for a block dataset."""
    csm = estimate_csm(blocks)
    pcsm = estimate_pcsm(blocks)
    white = np.array([white_noise_deviation_gaussian(csm[f], pcsm[f]) for f in range(blocks.num_freqs)])
    return StatsReport(
        freqs=blocks.freqs,
        eps_mean=zero_mean_deviation(blocks),
        ad_acceptance_rate=anderson_darling_rate(blocks, significance=significance),
        proper_ratio=np.asarray(properness_ratio(csm, pcsm)),
        white_noise_dev=white,
    )
