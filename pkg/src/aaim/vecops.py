"""Column-major vectorization helpers shared by all modules.

The whole package commits to one convention: ``vec(A)`` stacks the columns
of A, so the matrix entry ``A[m, l]`` lands at flat index ``l * M + m``
(0-based).  Every index mapping between the M x M matrix space and the
M^2 vector space goes through this module so the convention cannot drift.
"""

import numpy as np

from .errors import InvalidArgumentError

HERMITIAN_RTOL = 1e-10


def vec(a: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a square matrix."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"vec expects a square matrix, got shape {a.shape}")
    return a.reshape(-1, order="F")


def unvec(v: np.ndarray, m: int) -> np.ndarray:
    """Inverse of :func:`vec`: reshape an M^2 vector back to an M x M matrix."""
    v = np.asarray(v)
    if v.shape != (m * m,):
        raise InvalidArgumentError(f"unvec expects shape ({m * m},), got {v.shape}")
    return v.reshape((m, m), order="F")


def flat_index(m: int, l: int, size: int) -> int:
    """Flat index of matrix entry (row m, column l) under column-major vec."""
    return l * size + m


def pair_index(j: int, size: int) -> tuple[int, int]:
    """(row, column) pair of flat index j; inverse of :func:`flat_index`."""
    return j % size, j // size


def hermitian_deviation(a: np.ndarray) -> float:
    """Relative deviation of a square matrix from Hermitian symmetry."""
    a = np.asarray(a)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - a.conj().T) / scale)


def require_hermitian(a: np.ndarray, what: str = "matrix", rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Validate Hermitian symmetry up to ``rtol`` and return the symmetrized matrix."""
    dev = hermitian_deviation(a)
    if dev > rtol:
        raise InvalidArgumentError(f"{what} is not Hermitian (relative deviation {dev:.3g})")
    return 0.5 * (a + np.asarray(a).conj().T)
