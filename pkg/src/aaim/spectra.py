"""Frequency-domain block samples and their averages (CSM / pseudo-CSM).

BlockSamples is the canonical internal representation of measurement data:
complex pressure samples indexed (block, mic, frequency).  Time-series
ingestion via Welch's method is provided as an optional entry path.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .errors import InvalidArgumentError
from .vecops import require_hermitian

# Relative tolerance on negative CSM eigenvalues (round-off guard).
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class BlockSamples:
    """Per-block frequency-domain pressure samples.

    freqs: angular frequencies (rad/s), strictly increasing, shape (F,).
    data:  complex array of shape (J, M, F) indexed (block, mic, frequency).
    """

    freqs: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float).reshape(-1)
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 3:
            raise InvalidArgumentError(f"block data must have shape (J, M, F), got {data.shape}")
        if data.shape[0] < 1:
            raise InvalidArgumentError("at least one block sample is required")
        if data.shape[2] != freqs.shape[0]:
            raise InvalidArgumentError(
                f"frequency axis mismatch: {data.shape[2]} data bins vs {freqs.shape[0]} frequencies"
            )
        if freqs.shape[0] > 1 and not np.all(np.diff(freqs) > 0):
            raise InvalidArgumentError("frequencies must be strictly increasing")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "data", data)

    @property
    def num_blocks(self) -> int:
        return self.data.shape[0]

    @property
    def num_mics(self) -> int:
        return self.data.shape[1]

    @property
    def num_freqs(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SpectralData:
    """Block-averaged CSM and pseudo-CSM per frequency.

    csm:  (F, M, M) Hermitian positive semi-definite matrices.
    pcsm: (F, M, M) complex symmetric matrices.
    """

    freqs: np.ndarray
    csm: np.ndarray
    pcsm: np.ndarray
    block_count: int

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float).reshape(-1)
        csm = np.asarray(self.csm, dtype=np.complex128)
        pcsm = np.asarray(self.pcsm, dtype=np.complex128)
        if csm.shape != pcsm.shape or csm.ndim != 3 or csm.shape[1] != csm.shape[2]:
            raise InvalidArgumentError(f"csm/pcsm must share shape (F, M, M), got {csm.shape} and {pcsm.shape}")
        if csm.shape[0] != freqs.shape[0]:
            raise InvalidArgumentError("frequency axis mismatch between freqs and matrices")
        for f in range(csm.shape[0]):
            require_hermitian(csm[f], what=f"csm[{f}]")
            sym_dev = np.linalg.norm(pcsm[f] - pcsm[f].T)
            scale = max(np.linalg.norm(pcsm[f]), 1.0)
            if sym_dev > 1e-10 * scale:
                raise InvalidArgumentError(f"pcsm[{f}] is not complex symmetric")
            evals = np.linalg.eigvalsh(csm[f])
            tr = float(np.trace(csm[f]).real)
            if tr > 0 and evals[0] < -PSD_RTOL * tr:
                raise InvalidArgumentError(f"csm[{f}] has negative eigenvalue {evals[0]:.3g}")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "csm", csm)
        object.__setattr__(self, "pcsm", pcsm)


def estimate_csm(blocks: BlockSamples) -> np.ndarray:
    """Block-averaged cross spectral matrix, (F, M, M).

    Entry (m, l) is the mean over blocks of p_j(x_m) p_j(x_l)^*; Hermitian
    positive semi-definite by construction.
    """
    d = blocks.data
    return np.einsum("jmf,jlf->fml", d, d.conj()) / blocks.num_blocks


def estimate_pcsm(blocks: BlockSamples) -> np.ndarray:
    """Block-averaged pseudo cross spectral matrix, (F, M, M).

    Entry (m, l) is the mean over blocks of p_j(x_m) p_j(x_l) without
    conjugation; complex symmetric by construction.  Its size relative to
    the CSM measures how strongly the signals deviate from properness.
    """
    d = blocks.data
    return np.einsum("jmf,jlf->fml", d, d) / blocks.num_blocks


def spectral_data(blocks: BlockSamples) -> SpectralData:
    """Convenience wrapper estimating CSM and PCSM together."""
    return SpectralData(
        freqs=blocks.freqs,
        csm=estimate_csm(blocks),
        pcsm=estimate_pcsm(blocks),
        block_count=blocks.num_blocks,
    )


def welch_blocks(
    signal: np.ndarray,
    sample_rate: float,
    block_len: int,
    overlap: float = 0.5,
    window: str = "hann",
) -> BlockSamples:
    """Segment real time signals into windowed frequency-domain blocks.

    signal: real array of shape (M, n_samples), one row per microphone.
    Blocks of ``block_len`` samples advance by hop = round(block_len * (1 - overlap)).

    Scaling uses the coherent (amplitude) window correction with one-sided
    sqrt(2) weighting of interior bins, so a sinusoid of amplitude A that
    falls exactly on a bin yields a CSM auto-power of A^2 / 2 there.  This
    keeps Welch-ingested data commensurate with the synthetic generator.
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=float))
    n_mics, n_samples = signal.shape
    if block_len < 2:
        raise InvalidArgumentError(f"block length must be >= 2, got {block_len}")
    if block_len > n_samples:
        raise InvalidArgumentError(f"block length {block_len} exceeds signal length {n_samples}")
    if not (0.0 <= overlap < 1.0):
        raise InvalidArgumentError(f"overlap must lie in [0, 1), got {overlap}")
    if sample_rate <= 0:
        raise InvalidArgumentError("sample rate must be positive")

    hop = int(round(block_len * (1.0 - overlap)))
    hop = max(hop, 1)
    n_blocks = (n_samples - block_len) // hop + 1

    if window in ("rect", "rectangular", "boxcar"):
        taper = np.ones(block_len)
    else:
        taper = get_window(window, block_len, fftbins=True)
    coherent_gain = float(np.sum(taper))

    n_bins = block_len // 2 + 1
    scale = np.full(n_bins, np.sqrt(2.0) / coherent_gain)
    scale[0] = 1.0 / coherent_gain
    if block_len % 2 == 0:
        scale[-1] = 1.0 / coherent_gain

    data = np.empty((n_blocks, n_mics, n_bins), dtype=np.complex128)
    for j in range(n_blocks):
        seg = signal[:, j * hop : j * hop + block_len] * taper[None, :]
        data[j] = np.fft.rfft(seg, axis=1) * scale[None, :]

    freqs = 2.0 * np.pi * np.fft.rfftfreq(block_len, d=1.0 / sample_rate)
    return BlockSamples(freqs=freqs, data=data)
