"""Structured weighting matrices W and the weighted data-space inner product.

Every scheme represents a Hermitian positive-definite operator on the
(possibly mask-reduced) vectorized CSM space and knows how to apply its
inverse.  The inner product convention is fixed package-wide as

    <a, b>_W = <a, W^{-1} b>_2 = sum_j a_j conj((W^{-1} b)_j),

so conventional beamforming corresponds to W = sigma^2 I and the
Mahalanobis (iv-f) choice to W = Sigma.  W is never required in dense form
outside of tests; dense expansion exists for small dimensions only.
"""

import numpy as np
from scipy import linalg as sla

from .covariance import CovarianceEstimate
from .errors import InvalidArgumentError, NotPositiveDefiniteError
from .vecops import flat_index, pair_index, require_hermitian


class SelectionMask:
    """Removal of sensor-pair entries from the vectorized data space.

    Stores the removed (m, l) index pairs and the sorted retained flat
    indices into the column-major vec space.  Diagonal removal is the
    common instance (all autocorrelation pairs removed).
    """

    def __init__(self, size: int, removed_pairs=()):
        if size < 1:
            raise InvalidArgumentError("mask needs a positive matrix size")
        pairs = set()
        for m, l in removed_pairs:
            if not (0 <= m < size and 0 <= l < size):
                raise InvalidArgumentError(f"pair ({m}, {l}) outside 0..{size - 1}")
            pairs.add((int(m), int(l)))
        self.size = int(size)
        self.removed_pairs = frozenset(pairs)
        removed_flat = {flat_index(m, l, size) for m, l in pairs}
        self.retained = np.array(sorted(set(range(size * size)) - removed_flat), dtype=int)
        if self.retained.size == 0:
            raise InvalidArgumentError("mask retains no entries")

    @classmethod
    def none(cls, size: int) -> "SelectionMask":
        return cls(size, ())

    @classmethod
    def diagonal_removal(cls, size: int) -> "SelectionMask":
        return cls(size, [(m, m) for m in range(size)])

    @property
    def full_dim(self) -> int:
        return self.size * self.size

    @property
    def reduced_dim(self) -> int:
        return int(self.retained.size)

    @property
    def is_trivial(self) -> bool:
        return len(self.removed_pairs) == 0

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Restrict a vec-space array (first axis of length M^2) to retained entries."""
        v = np.asarray(v)
        if v.shape[0] != self.full_dim:
            raise InvalidArgumentError(f"expected leading dimension {self.full_dim}, got {v.shape[0]}")
        return v[self.retained]

    def retained_pairs(self) -> np.ndarray:
        """(reduced_dim, 2) array of retained (m, l) pairs in retained order."""
        return np.array([pair_index(j, self.size) for j in self.retained], dtype=int)

    def describe(self) -> str:
        if self.is_trivial:
            return "none"
        diag = {(m, m) for m in range(self.size)}
        if self.removed_pairs == frozenset(diag):
            return "diagonal-removal"
        return "pairs:" + ";".join(f"{m},{l}" for m, l in sorted(self.removed_pairs))

    def __eq__(self, other):
        return (
            isinstance(other, SelectionMask)
            and self.size == other.size
            and self.removed_pairs == other.removed_pairs
        )

    def __hash__(self):
        return hash((self.size, self.removed_pairs))


class WeightingScheme:
    """Base class: a Hermitian PD operator with cached inverse application."""

    kind = "generic"

    @property
    def dim(self):
        raise NotImplementedError

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        """W^{-1} v for a vector (dim,) or column-stacked matrix (dim, K)."""
        raise NotImplementedError

    def reduce(self, mask: SelectionMask | None) -> "WeightingScheme":
        """Restriction of W to the retained rows/columns of the mask."""
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        """Explicit W; for testing at small dimensions only."""
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind

    def _check_dim(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.complex128)
        if self.dim is not None and v.shape[0] != self.dim:
            raise InvalidArgumentError(f"vector dimension {v.shape[0]} does not match weighting dimension {self.dim}")
        return v


class ScaledIdentity(WeightingScheme):
    """W = sigma^2 I; dimension may stay unspecified (any vector accepted)."""

    kind = "conventional"

    def __init__(self, sigma2: float = 1.0, dim: int | None = None):
        if not sigma2 > 0:
            raise NotPositiveDefiniteError("scaled identity needs sigma^2 > 0", eigenvalue=sigma2)
        self.sigma2 = float(sigma2)
        self._dim = dim

    @property
    def dim(self):
        return self._dim

    def apply_inverse(self, v):
        return self._check_dim(v) / self.sigma2

    def reduce(self, mask):
        if mask is None or mask.is_trivial and self._dim in (None, mask.full_dim):
            return ScaledIdentity(self.sigma2, dim=mask.full_dim if mask else self._dim)
        return ScaledIdentity(self.sigma2, dim=mask.reduced_dim)

    def dense(self):
        if self._dim is None:
            raise InvalidArgumentError("dense expansion needs a fixed dimension")
        return self.sigma2 * np.eye(self._dim)


class Diagonal(WeightingScheme):
    """W = diag(d) with strictly positive real entries."""

    kind = "diagonal"

    def __init__(self, d: np.ndarray, kind: str | None = None):
        d = np.asarray(d)
        if np.iscomplexobj(d):
            if np.max(np.abs(d.imag)) > 1e-12 * max(np.max(np.abs(d.real)), 1.0):
                raise InvalidArgumentError("diagonal weighting entries must be real")
            d = d.real
        d = d.astype(float).reshape(-1)
        if d.size == 0 or np.min(d) <= 0:
            raise NotPositiveDefiniteError(
                "diagonal weighting entries must be positive",
                eigenvalue=float(np.min(d)) if d.size else None,
            )
        self.d = d
        if kind is not None:
            self.kind = kind

    @property
    def dim(self):
        return self.d.size

    def apply_inverse(self, v):
        v = self._check_dim(v)
        if v.ndim == 1:
            return v / self.d
        return v / self.d[:, None]

    def reduce(self, mask):
        if mask is None or mask.is_trivial:
            return self
        return Diagonal(self.d[mask.retained], kind=self.kind)

    def dense(self):
        return np.diag(self.d).astype(np.complex128)


class DenseHermitian(WeightingScheme):
    """Explicit Hermitian PD W with a cached Cholesky factorization."""

    kind = "dense"

    def __init__(self, w: np.ndarray, kind: str | None = None):
        w = require_hermitian(np.asarray(w, dtype=np.complex128), what="dense weighting")
        try:
            self._factor = sla.cho_factor(w, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            lam_min = float(np.linalg.eigvalsh(w)[0])
            raise NotPositiveDefiniteError("dense weighting is not positive definite", eigenvalue=lam_min)
        self.w = w
        if kind is not None:
            self.kind = kind

    @property
    def dim(self):
        return self.w.shape[0]

    def apply_inverse(self, v):
        v = self._check_dim(v)
        return sla.cho_solve(self._factor, v, check_finite=False)

    def reduce(self, mask):
        if mask is None or mask.is_trivial:
            return self
        idx = mask.retained
        return DenseHermitian(self.w[np.ix_(idx, idx)], kind=self.kind)

    def dense(self):
        return self.w.copy()


class KroneckerPair(WeightingScheme):
    """W = R^T (x) R for a Hermitian PD factor R (RAB / Capon weightings).

    Applying the inverse uses W^{-1} vec(A) = vec(R^{-1} A R^{-1}) at
    O(M^3) instead of factoring the M^2 x M^2 operator.
    """

    kind = "kronecker"

    def __init__(self, r: np.ndarray, kind: str | None = None):
        r = require_hermitian(np.asarray(r, dtype=np.complex128), what="Kronecker factor")
        try:
            self._factor = sla.cho_factor(r, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            lam_min = float(np.linalg.eigvalsh(r)[0])
            raise NotPositiveDefiniteError("Kronecker factor is not positive definite", eigenvalue=lam_min)
        self.r = r
        self.size = r.shape[0]
        if kind is not None:
            self.kind = kind

    @property
    def dim(self):
        return self.size * self.size

    def _solve_two_sided(self, a: np.ndarray) -> np.ndarray:
        # R^{-1} A R^{-1}; R Hermitian so (R^{-1} Y^H)^H = Y R^{-1}.
        y = sla.cho_solve(self._factor, a, check_finite=False)
        return sla.cho_solve(self._factor, y.conj().T, check_finite=False).conj().T

    def apply_inverse(self, v):
        v = self._check_dim(v)
        m = self.size
        if v.ndim == 1:
            return self._solve_two_sided(v.reshape((m, m), order="F")).reshape(-1, order="F")
        out = np.empty_like(v)
        for k in range(v.shape[1]):
            out[:, k] = self._solve_two_sided(v[:, k].reshape((m, m), order="F")).reshape(-1, order="F")
        return out

    def reduce(self, mask):
        if mask is None or mask.is_trivial:
            return self
        pairs = mask.retained_pairs()
        mm, ll = pairs[:, 0], pairs[:, 1]
        # W[(m,l),(m',l')] = R[l',l] * R[m,m'] restricted to retained pairs.
        w_red = self.r[np.ix_(ll, ll)].T * self.r[np.ix_(mm, mm)]
        return DenseHermitian(w_red, kind=self.kind)

    def dense(self):
        return np.kron(self.r.T, self.r)


class DiagPlusLowRank(WeightingScheme):
    """W = D + L^* S L with D positive diagonal, S = diag(+-1), L of shape (r, n).

    The signed low-rank term is needed because the off-diagonal remainder of
    a covariance matrix has zero trace and therefore mixed-sign eigenvalues.
    Inverse application runs through the Sherman-Morrison-Woodbury identity,
    solving only an r x r system.
    """

    kind = "diag-plus-low-rank"

    def __init__(self, d: np.ndarray, l: np.ndarray, signs: np.ndarray | None = None, kind: str | None = None):
        d = np.asarray(d, dtype=float).reshape(-1)
        if d.size == 0 or np.min(d) <= 0:
            raise NotPositiveDefiniteError("diagonal part must be positive", eigenvalue=float(np.min(d)) if d.size else None)
        l = np.asarray(l, dtype=np.complex128)
        if l.ndim != 2 or l.shape[1] != d.size:
            raise InvalidArgumentError(f"low-rank factor must have shape (r, {d.size}), got {l.shape}")
        if signs is None:
            signs = np.ones(l.shape[0])
        signs = np.asarray(signs, dtype=float).reshape(-1)
        if signs.size != l.shape[0] or not np.all(np.abs(signs) == 1.0):
            raise InvalidArgumentError("signs must be a +-1 vector with one entry per factor row")
        self.d = d
        self.l = l
        self.signs = signs
        self._verify_positive_definite()
        # Woodbury inner matrix S^{-1} + L D^{-1} L^* (S^{-1} = S for +-1 signs).
        inner = np.diag(signs) + (l / d[None, :]) @ l.conj().T
        self._inner_factor = sla.lu_factor(inner, check_finite=False)
        if kind is not None:
            self.kind = kind

    def _verify_positive_definite(self):
        # W = D^{1/2} (I + B^* S B) D^{1/2} with B = L D^{-1/2}; W is PD iff
        # all eigenvalues of the r x r Hermitian C^{1/2} S C^{1/2} (C = B B^*)
        # exceed -1.
        b = self.l / np.sqrt(self.d)[None, :]
        c = b @ b.conj().T
        evals, evecs = np.linalg.eigh(0.5 * (c + c.conj().T))
        half = (evecs * np.sqrt(np.maximum(evals, 0.0))[None, :]) @ evecs.conj().T
        t = half @ np.diag(self.signs) @ half
        lam = np.linalg.eigvalsh(0.5 * (t + t.conj().T))
        if lam.size and lam[0] <= -1.0 + 1e-12:
            raise NotPositiveDefiniteError(
                "diag-plus-low-rank weighting is not positive definite",
                eigenvalue=float(1.0 + lam[0]),
            )

    @property
    def dim(self):
        return self.d.size

    def apply_inverse(self, v):
        v = self._check_dim(v)
        dinv_v = v / self.d if v.ndim == 1 else v / self.d[:, None]
        t = self.l @ dinv_v
        t = sla.lu_solve(self._inner_factor, t, check_finite=False)
        correction = self.l.conj().T @ t
        correction = correction / self.d if v.ndim == 1 else correction / self.d[:, None]
        return dinv_v - correction

    def reduce(self, mask):
        if mask is None or mask.is_trivial:
            return self
        idx = mask.retained
        return DiagPlusLowRank(self.d[idx], self.l[:, idx], self.signs, kind=self.kind)

    def dense(self):
        return np.diag(self.d).astype(np.complex128) + self.l.conj().T @ np.diag(self.signs) @ self.l


def woodbury_apply(d: np.ndarray, l: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(D + L^* L)^{-1} v via the Sherman-Morrison-Woodbury identity.

    Only the L x L system (I + L D^{-1} L^*) is solved; for positive D that
    system is always positive definite.
    """
    d = np.asarray(d, dtype=float).reshape(-1)
    if np.min(d) <= 0:
        raise InvalidArgumentError("woodbury_apply needs strictly positive diagonal entries")
    l = np.asarray(l, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    if l.ndim != 2 or l.shape[1] != d.size or v.shape[0] != d.size:
        raise InvalidArgumentError("dimension mismatch between D, L and v")
    dinv_v = v / d if v.ndim == 1 else v / d[:, None]
    if l.shape[0] == 0:
        return dinv_v
    inner = np.eye(l.shape[0]) + (l / d[None, :]) @ l.conj().T
    t = np.linalg.solve(inner, l @ dinv_v)
    correction = l.conj().T @ t
    correction = correction / d if v.ndim == 1 else correction / d[:, None]
    return dinv_v - correction


def diag_plus_low_rank_from_dense(sigma: np.ndarray, mass: float = 0.99, kind: str | None = None) -> DiagPlusLowRank:
    """Fit a structured surrogate D + L^* S L to a dense Hermitian PD matrix.

    D is the diagonal of sigma; the low-rank term keeps the leading
    eigenpairs (by magnitude) of the off-diagonal remainder until ``mass``
    of its squared Frobenius norm is captured.
    """
    sigma = require_hermitian(np.asarray(sigma, dtype=np.complex128), what="covariance")
    d = sigma.diagonal().real.copy()
    if np.min(d) <= 0:
        raise NotPositiveDefiniteError("covariance diagonal must be positive", eigenvalue=float(np.min(d)))
    remainder = sigma - np.diag(d)
    evals, evecs = np.linalg.eigh(remainder)
    order = np.argsort(-np.abs(evals))
    evals = evals[order]
    evecs = evecs[:, order]
    total = float(np.sum(evals**2))
    if total == 0.0:
        return DiagPlusLowRank(d, np.zeros((0, d.size)), np.zeros(0) + 1.0, kind=kind)
    cum = np.cumsum(evals**2) / total
    rank = int(np.searchsorted(cum, mass) + 1)
    lead = evals[:rank]
    factor = (np.sqrt(np.abs(lead))[:, None]) * evecs[:, :rank].conj().T
    signs = np.sign(lead)
    signs[signs == 0] = 1.0
    return DiagPlusLowRank(d, factor, signs, kind=kind)


def build_weighting(
    choice: str,
    *,
    sigma2: float = 1.0,
    cov=None,
    shading: np.ndarray | None = None,
    csm: np.ndarray | None = None,
    alpha: float | None = None,
    num_mics: int | None = None,
    structured: bool = False,
    low_rank_mass: float = 0.99,
) -> WeightingScheme:
    """Construct one of the named weighting choices.

    conventional: W = sigma^2 I.
    ivd:          W = diag(Sigma) from a covariance estimate.
    ivf:          W = Sigma dense, or a diag-plus-low-rank surrogate when
                  ``structured`` is set.
    shading:      microphone weights nu > 0; W = diag(vec(nu nu^T))^{-1}.
    rab:          W = (C + alpha I)^T (x) (C + alpha I), alpha > 0.
    capon:        W = C^T (x) C for an invertible CSM.
    """
    choice = choice.lower()
    if choice == "conventional":
        dim = None if num_mics is None else num_mics * num_mics
        return ScaledIdentity(sigma2, dim=dim)

    if choice in ("ivd", "ivf"):
        if cov is None:
            raise InvalidArgumentError(f"{choice} weighting needs a covariance estimate")
        sigma = cov.sigma if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=np.complex128)
        if choice == "ivd":
            return Diagonal(sigma.diagonal(), kind="ivd")
        if structured:
            return diag_plus_low_rank_from_dense(sigma, mass=low_rank_mass, kind="ivf")
        return DenseHermitian(sigma, kind="ivf")

    if choice == "shading":
        if shading is None:
            raise InvalidArgumentError("shading weighting needs a microphone weight vector")
        nu = np.asarray(shading, dtype=float).reshape(-1)
        if np.min(nu) <= 0:
            raise NotPositiveDefiniteError("shading weights must be positive", eigenvalue=float(np.min(nu)))
        pair = np.outer(nu, nu).reshape(-1, order="F")
        return Diagonal(1.0 / pair, kind="shading")

    if choice == "rab":
        if csm is None or alpha is None:
            raise InvalidArgumentError("rab weighting needs a CSM and alpha > 0")
        if alpha <= 0:
            raise InvalidArgumentError(f"rab modelling parameter must be positive, got {alpha}")
        c = require_hermitian(np.asarray(csm, dtype=np.complex128), what="csm")
        return KroneckerPair(c + alpha * np.eye(c.shape[0]), kind="rab")

    if choice == "capon":
        if csm is None:
            raise InvalidArgumentError("capon weighting needs a CSM")
        c = require_hermitian(np.asarray(csm, dtype=np.complex128), what="csm")
        return KroneckerPair(c, kind="capon")

    raise InvalidArgumentError(f"unknown weighting choice '{choice}'")


def weighted_inner(w: WeightingScheme, a: np.ndarray, b: np.ndarray) -> complex:
    """<a, b>_W = sum_j a_j conj((W^{-1} b)_j); conjugate-symmetric and PD."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(w.apply_inverse(b), a))


def reduce_weighting(w: WeightingScheme, mask: SelectionMask | None) -> WeightingScheme:
    """Module-level alias for :meth:`WeightingScheme.reduce`."""
    return w.reduce(mask)
