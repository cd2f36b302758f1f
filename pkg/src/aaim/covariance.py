"""Estimation and repair of the M^2 x M^2 covariance of vectorized CSM data.

Two estimators are provided: the closed-form fourth-moment formula valid for
zero-mean complex Gaussian signals, and the distribution-free sample
covariance over block CSMs.  Both produce the covariance of a single-block
CSM sample; the covariance of the J-block average is that divided by J,
which is what :class:`CovarianceEstimate.sigma` stores.

Dense storage is intended for M <= 64 (M^2 = 4096, ~270 MB complex);
larger arrays should use the structured weighting paths instead.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InsufficientSamplesError, InvalidArgumentError
from .spectra import BlockSamples
from .vecops import require_hermitian

GAUSSIAN_METHOD = "gaussian-formula"
SAMPLE_METHOD = "sample"


@dataclass(frozen=True)
class CovarianceEstimate:
    """Covariance of the block-averaged vec(CSM) with provenance metadata.

    sigma is already divided by block_count; ``per_block`` recovers the
    single-block covariance J * sigma used by the rms noise-level formula.
    """

    sigma: np.ndarray
    method: str
    block_count: int
    alpha_floor: float | None = None
    clipped_count: int | None = None
    rank: int | None = None

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.complex128)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise InvalidArgumentError(f"sigma must be square, got shape {sigma.shape}")
        require_hermitian(sigma, what="covariance matrix")
        if self.block_count < 1:
            raise InvalidArgumentError("block count must be >= 1")
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def per_block(self) -> np.ndarray:
        """Single-block covariance J * sigma."""
        return self.sigma * self.block_count


def gaussian_covariance(csm: np.ndarray, pcsm: np.ndarray) -> np.ndarray:
    """Fourth-moment covariance of a single-block vec(CSM) sample.

    Cov(C_ml, C_m'l') = C_mm' * conj(C_ll') + P_ml' * conj(P_lm'),
    assembled under column-major vectorization.  Exact for zero-mean complex
    Gaussian pressure vectors; Hermitian by construction but not necessarily
    positive semi-definite.
    """
    csm = np.asarray(csm, dtype=np.complex128)
    pcsm = np.asarray(pcsm, dtype=np.complex128)
    if csm.shape != pcsm.shape or csm.ndim != 2 or csm.shape[0] != csm.shape[1]:
        raise InvalidArgumentError(f"csm/pcsm must be square with equal shape, got {csm.shape} and {pcsm.shape}")
    require_hermitian(csm, what="csm")
    m = csm.shape[0]
    # Row index (m, l) -> l*M + m, column index (m', l') -> l'*M + m'.
    term1 = np.einsum("ma,lb->lmba", csm, csm.conj()).reshape(m * m, m * m)
    term2 = np.einsum("mb,la->lmba", pcsm, pcsm.conj()).reshape(m * m, m * m)
    return term1 + term2


def gaussian_covariance_estimate(csm: np.ndarray, pcsm: np.ndarray, block_count: int = 1) -> CovarianceEstimate:
    """Wrap :func:`gaussian_covariance` with block-average normalization."""
    sigma = gaussian_covariance(csm, pcsm) / block_count
    return CovarianceEstimate(sigma=sigma, method=GAUSSIAN_METHOD, block_count=block_count)


def sample_covariance(blocks: BlockSamples) -> list[CovarianceEstimate]:
    """Sample covariance of single-block CSMs, one estimate per frequency.

    Computes (1/J) sum_j (vec C_j - vec Cbar)(vec C_j - vec Cbar)^* with
    C_j = p_j p_j^*; the stored sigma is that divided by J.  The numerical
    rank (bounded by J) is recorded in metadata.
    """
    j = blocks.num_blocks
    if j < 2:
        raise InsufficientSamplesError(f"sample covariance needs at least 2 blocks, got {j}")
    m = blocks.num_mics
    out = []
    for f in range(blocks.num_freqs):
        p = blocks.data[:, :, f]  # (J, M)
        vecs = np.einsum("jl,jm->jlm", p.conj(), p).reshape(j, m * m)
        centered = vecs - vecs.mean(axis=0, keepdims=True)
        per_block = centered.T @ centered.conj() / j
        per_block = 0.5 * (per_block + per_block.conj().T)
        rank = int(np.linalg.matrix_rank(centered))
        out.append(
            CovarianceEstimate(
                sigma=per_block / j,
                method=SAMPLE_METHOD,
                block_count=j,
                rank=rank,
            )
        )
    return out


def gaussian_variance_diagonal(csm: np.ndarray, pcsm: np.ndarray, block_count: int = 1) -> np.ndarray:
    """Diagonal of the Gaussian-formula covariance without dense assembly.

    Var(C_ml) = C_mm * C_ll + |P_ml|^2 per block, divided by block_count for
    the averaged CSM; returned in column-major vec order, shape (M^2,).
    """
    csm = np.asarray(csm, dtype=np.complex128)
    pcsm = np.asarray(pcsm, dtype=np.complex128)
    d = csm.diagonal().real
    var = np.outer(d, d) + np.abs(pcsm) ** 2  # indexed [m, l]; symmetric
    return var.reshape(-1, order="F").astype(float) / block_count


def sample_variance_diagonal(blocks: BlockSamples, freq_index: int) -> np.ndarray:
    """Per-entry sample variances of the block CSMs at one frequency.

    Distribution-free counterpart of :func:`gaussian_variance_diagonal`;
    returns the single-block variances divided by J, vec order, shape (M^2,).
    """
    j = blocks.num_blocks
    if j < 2:
        raise InsufficientSamplesError(f"sample variances need at least 2 blocks, got {j}")
    p = blocks.data[:, :, freq_index]  # (J, M)
    prods = np.einsum("jm,jl->jml", p, p.conj())  # C_j entries (J, M, M)
    var = np.mean(np.abs(prods - prods.mean(axis=0)) ** 2, axis=0)  # (M, M) indexed [m, l]
    return var.reshape(-1, order="F").astype(float) / j


def nearest_psd_regularized(sigma, alpha: float):
    """Closest covariance with all eigenvalues >= alpha (Frobenius metric).

    For Hermitian input the constrained Frobenius-nearest problem is solved
    exactly by clipping the eigenvalues at alpha in the eigenbasis; the
    inverse of the result is bounded by 1/alpha.  Idempotent for fixed alpha.

    Accepts a raw matrix (returns a matrix) or a CovarianceEstimate
    (returns a new estimate with repair metadata filled in).
    """
    if alpha <= 0:
        raise InvalidArgumentError(f"eigenvalue floor alpha must be positive, got {alpha}")
    if isinstance(sigma, CovarianceEstimate):
        repaired, clipped = _clip_eigenvalues(sigma.sigma, alpha)
        return replace(sigma, sigma=repaired, alpha_floor=float(alpha), clipped_count=clipped)
    repaired, _ = _clip_eigenvalues(np.asarray(sigma, dtype=np.complex128), alpha)
    return repaired


def _clip_eigenvalues(sigma: np.ndarray, alpha: float) -> tuple[np.ndarray, int]:
    sigma = require_hermitian(sigma, what="covariance matrix")
    evals, evecs = np.linalg.eigh(sigma)
    clipped = int(np.sum(evals < alpha))
    if clipped == 0:
        return sigma, 0
    fixed = np.maximum(evals, alpha)
    repaired = (evecs * fixed[None, :]) @ evecs.conj().T
    return 0.5 * (repaired + repaired.conj().T), clipped


def spectral_diagnostics(sigma) -> dict:
    """Extremal eigenvalues and condition number of a Hermitian matrix."""
    if isinstance(sigma, CovarianceEstimate):
        sigma = sigma.sigma
    sigma = require_hermitian(np.asarray(sigma, dtype=np.complex128), what="matrix")
    evals = np.linalg.eigvalsh(sigma)
    lam_min = float(evals[0])
    lam_max = float(evals[-1])
    cond = np.inf if lam_min <= 0 else lam_max / lam_min
    return {"lambda_min": lam_min, "lambda_max": lam_max, "condition_number": cond}


def hermitian_inverse_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Inverse matrix square root of a Hermitian positive-definite matrix."""
    sigma = require_hermitian(np.asarray(sigma, dtype=np.complex128), what="matrix")
    evals, evecs = np.linalg.eigh(sigma)
    if evals[0] <= 0:
        raise InvalidArgumentError(f"matrix is not positive definite (lambda_min = {evals[0]:.3g})")
    return (evecs * (evals**-0.5)[None, :]) @ evecs.conj().T
