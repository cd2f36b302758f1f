"""The W-weighted beamformer, its statistical variance and band averaging.

The imaging functional at a focus point y is

    I_W(y) = <vec C, vec G(y)>_W / <vec G(y), vec G(y)>_W,

with G(y) = g(y) g(y)^* the rank-one propagation matrix; any sensor-pair
mask is applied to both vectors and to W before the inner products.  Raw
complex values are kept on the map; the clamp max(0, Re I) happens only in
the reported source powers so that DAMAS and diagnostics can use the
unclamped values.
"""

from dataclasses import dataclass, replace

import numpy as np

from .covariance import CovarianceEstimate
from .errors import (
    DegenerateSteeringError,
    InconsistentInputsError,
    InvalidArgumentError,
    NoBinsInBandError,
)
from .geometry import FlowField, FocusGrid, MicArray, steering_matrix
from .vecops import vec
from .weighting import SelectionMask, WeightingScheme

THIRD_OCTAVE_FACTOR = 2.0 ** (1.0 / 6.0)


@dataclass(frozen=True)
class SourceMap:
    """Per-point beamformer outputs over a focus grid.

    values holds the raw complex beamformer results; powers clamps the real
    part at zero, which is the reported source-power estimator.
    """

    grid: FocusGrid
    values: np.ndarray
    weighting: str
    mask: str
    frequency: float | None = None
    band_edges: tuple[float, float] | None = None
    block_count: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if values.shape[0] != self.grid.num_points:
            raise InvalidArgumentError(
                f"{values.shape[0]} values for a grid of {self.grid.num_points} points"
            )
        object.__setattr__(self, "values", values)

    @property
    def powers(self) -> np.ndarray:
        return np.maximum(0.0, self.values.real)

    def power_db(self) -> np.ndarray:
        """Powers in dB relative to the map-local maximum (0 dB at the peak)."""
        p = self.powers
        peak = p.max()
        if peak <= 0:
            raise InvalidArgumentError("power map has no positive values")
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(p / peak)


def vec_outer(g: np.ndarray) -> np.ndarray:
    """vec(g g^*) under the package's column-major convention."""
    g = np.asarray(g, dtype=np.complex128).reshape(-1)
    return vec(np.outer(g, g.conj()))


def vec_outer_matrix(gmat: np.ndarray) -> np.ndarray:
    """Column-stacked vec(g_n g_n^*) for steering matrix gmat of shape (M, N)."""
    gmat = np.asarray(gmat, dtype=np.complex128)
    m, n = gmat.shape
    # Element [l, m, n] = g_m conj(g_l); C-order flatten of (l, m) is l*M + m.
    return np.einsum("mn,ln->lmn", gmat, gmat.conj()).reshape(m * m, n)


def _reduced_weighting(w: WeightingScheme, mask: SelectionMask | None) -> WeightingScheme:
    if mask is None or mask.is_trivial:
        if w.dim is not None and mask is not None and w.dim != mask.full_dim:
            raise InconsistentInputsError(
                f"weighting dimension {w.dim} does not match data dimension {mask.full_dim}"
            )
        return w
    if w.dim is None or w.dim == mask.full_dim:
        return w.reduce(mask)
    if w.dim == mask.reduced_dim:
        return w
    raise InconsistentInputsError(
        f"weighting dimension {w.dim} matches neither the full ({mask.full_dim}) "
        f"nor the mask-reduced ({mask.reduced_dim}) data dimension"
    )


def _reduced_sigma(sigma, mask: SelectionMask | None) -> np.ndarray:
    if isinstance(sigma, CovarianceEstimate):
        sigma = sigma.sigma
    sigma = np.asarray(sigma, dtype=np.complex128)
    if mask is None or mask.is_trivial:
        return sigma
    if sigma.shape[0] == mask.full_dim:
        idx = mask.retained
        return sigma[np.ix_(idx, idx)]
    if sigma.shape[0] == mask.reduced_dim:
        return sigma
    raise InconsistentInputsError(
        f"covariance dimension {sigma.shape[0]} matches neither the full nor the reduced data dimension"
    )


def _mask_apply(v: np.ndarray, mask: SelectionMask | None) -> np.ndarray:
    return v if mask is None or mask.is_trivial else mask.apply(v)


def beamform_point(csm: np.ndarray, w: WeightingScheme, mask: SelectionMask | None, g: np.ndarray) -> complex:
    """Weighted beamformer value for one focus point with steering vector g."""
    cvec = _mask_apply(vec(np.asarray(csm, dtype=np.complex128)), mask)
    gvec = _mask_apply(vec_outer(g), mask)
    if np.linalg.norm(gvec) == 0.0:
        raise DegenerateSteeringError("steering vector vanishes after masking")
    w_red = _reduced_weighting(w, mask)
    u = w_red.apply_inverse(gvec)
    denom = float(np.real(np.vdot(u, gvec)))
    if denom <= 0.0:
        raise DegenerateSteeringError(f"weighted steering norm is not positive ({denom:.3g})")
    return complex(np.vdot(u, cvec) / denom)


def beamform_map(
    csm: np.ndarray,
    w: WeightingScheme,
    mask: SelectionMask | None,
    grid: FocusGrid,
    array: MicArray,
    omega: float,
    flow: FlowField,
    block_count: int | None = None,
) -> SourceMap:
    """Beamformer values on every grid point; order-independent by construction."""
    gmat = steering_matrix(array, grid, omega, flow)
    vg = _mask_apply(vec_outer_matrix(gmat), mask)
    norms = np.linalg.norm(vg, axis=0)
    if np.any(norms == 0.0):
        bad = int(np.argmin(norms))
        raise DegenerateSteeringError(f"steering vector vanishes after masking at grid point {bad}")
    cvec = _mask_apply(vec(np.asarray(csm, dtype=np.complex128)), mask)
    w_red = _reduced_weighting(w, mask)
    u = w_red.apply_inverse(vg)
    denom = np.real(np.einsum("jn,jn->n", u.conj(), vg))
    values = (u.conj().T @ cvec) / denom
    return SourceMap(
        grid=grid,
        values=values,
        weighting=w.describe(),
        mask=mask.describe() if mask is not None else "none",
        frequency=float(omega),
        block_count=block_count,
    )


def beamformer_variance(w: WeightingScheme, sigma, mask: SelectionMask | None, g: np.ndarray) -> float:
    """Variance of the beamformer value under data covariance sigma.

    V_W = <W^{-1} gbar, Sigma W^{-1} gbar>_2 / <gbar, W^{-1} gbar>_2^2 with
    gbar the (mask-reduced) vec of the propagation matrix.  sigma is the
    covariance of the averaged CSM (a CovarianceEstimate or raw matrix).
    """
    gvec = _mask_apply(vec_outer(g), mask)
    if np.linalg.norm(gvec) == 0.0:
        raise DegenerateSteeringError("steering vector vanishes after masking")
    w_red = _reduced_weighting(w, mask)
    sig = _reduced_sigma(sigma, mask)
    if sig.shape[0] != gvec.shape[0]:
        raise InconsistentInputsError(
            f"covariance dimension {sig.shape[0]} does not match steering dimension {gvec.shape[0]}"
        )
    u = w_red.apply_inverse(gvec)
    numerator = float(np.real(np.vdot(sig @ u, u)))
    denominator = float(np.real(np.vdot(u, gvec)))
    return numerator / denominator**2


def rms_noise_level(
    w: WeightingScheme,
    sigma,
    mask: SelectionMask | None,
    grid: FocusGrid,
    array: MicArray,
    omega: float,
    flow: FlowField,
    block_count: int = 1,
) -> float:
    """Root mean squared map noise sqrt(sum_n V_W(y_n)) over the focus grid.

    When ``sigma`` is a raw matrix it is interpreted as the single-block
    covariance and divided by ``block_count``; a CovarianceEstimate already
    carries its normalization, so block_count must stay 1 in that case.
    The result scales as 1/sqrt(block_count).
    """
    if isinstance(sigma, CovarianceEstimate):
        if block_count != 1:
            raise InvalidArgumentError("block_count is implied by a CovarianceEstimate; pass 1")
        sig = sigma.sigma
    else:
        if block_count < 1:
            raise InvalidArgumentError("block count must be >= 1")
        sig = np.asarray(sigma, dtype=np.complex128) / block_count
    gmat = steering_matrix(array, grid, omega, flow)
    vg = _mask_apply(vec_outer_matrix(gmat), mask)
    w_red = _reduced_weighting(w, mask)
    sig_red = _reduced_sigma(sig, mask)
    u = w_red.apply_inverse(vg)
    nums = np.real(np.einsum("jn,jn->n", (sig_red @ u).conj(), u))
    dens = np.real(np.einsum("jn,jn->n", u.conj(), vg))
    return float(np.sqrt(np.sum(nums / dens**2)))


def third_octave_edges(center_omega: float) -> tuple[float, float]:
    """Band edges [2^(-1/6) w0, 2^(1/6) w0] of the third-octave band."""
    return (center_omega / THIRD_OCTAVE_FACTOR, center_omega * THIRD_OCTAVE_FACTOR)


def band_average(maps: list[SourceMap], center_omega: float) -> SourceMap:
    """Mean of the per-bin maps whose frequency falls in the third-octave band.

    Complex values are averaged unclamped; the clamp to nonnegative powers
    happens on the averaged map.
    """
    if not maps:
        raise InvalidArgumentError("band_average needs at least one map")
    first = maps[0]
    for m in maps[1:]:
        if m.grid.num_points != first.grid.num_points or not np.allclose(m.grid.points, first.grid.points):
            raise InconsistentInputsError("maps do not share a focus grid")
        if m.weighting != first.weighting or m.mask != first.mask:
            raise InconsistentInputsError("maps were computed with different weighting or mask")
    freqs = np.array([m.frequency for m in maps], dtype=float)
    if np.any(np.isnan(freqs)):
        raise InvalidArgumentError("band_average needs per-bin maps with a frequency")
    lo, hi = third_octave_edges(center_omega)
    in_band = (freqs >= lo) & (freqs <= hi)
    if not np.any(in_band):
        nearest = freqs[np.argsort(np.abs(freqs - center_omega))[:3]]
        hz = ", ".join(f"{f / (2 * np.pi):.1f} Hz" for f in nearest)
        raise NoBinsInBandError(
            f"no bins inside [{lo / (2 * np.pi):.1f}, {hi / (2 * np.pi):.1f}] Hz; nearest bins: {hz}"
        )
    stacked = np.stack([m.values for m, keep in zip(maps, in_band) if keep])
    return replace(
        first,
        values=stacked.mean(axis=0),
        frequency=float(center_omega),
        band_edges=(float(lo), float(hi)),
    )
