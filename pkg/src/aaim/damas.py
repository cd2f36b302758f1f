"""Weighted point-spread functions, DAMAS system assembly and NNLS deconvolution.

The deblurring problem relates unknown nonnegative source powers q to the
beamforming map b through the PSF matrix H (H q = b).  Entry H[n, l] is the
real part of the beamformer response at grid point n to a unit monopole at
grid point l, evaluated in the same weighted data space as the map, so a
noise-free unit monopole at grid point s produces exactly b = H e_s.

The solver minimizes ||H q - b||^2 + alpha ||q||^2 over q >= 0 with an
active-set method on the normal equations and certifies optimality through
the KKT conditions.  alpha = 0 is allowed but does not guarantee a unique
minimizer; the regularized problem is strictly convex.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .beamforming import SourceMap, vec_outer, vec_outer_matrix, _mask_apply, _reduced_weighting
from .errors import (
    DegenerateSteeringError,
    InconsistentInputsError,
    InvalidArgumentError,
    NonConvergenceError,
)
from .geometry import FlowField, FocusGrid, MicArray, steering_matrix
from .weighting import ScaledIdentity, SelectionMask, WeightingScheme

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DamasSystem:
    """Discretized deblurring system H q = b on a focus grid."""

    h: np.ndarray
    b: np.ndarray
    grid: FocusGrid
    weighting: str
    mask: str
    frequency: float | None = None
    block_count: int | None = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        n = self.grid.num_points
        if h.shape != (n, n) or b.shape != (n,):
            raise InvalidArgumentError(f"system shape mismatch: H {h.shape}, b {b.shape}, grid {n}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(b))):
            raise InvalidArgumentError("DAMAS system contains non-finite entries")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class NnlsSolution:
    """Nonnegative solution with its KKT optimality certificate."""

    q: np.ndarray
    kkt_residual: float
    iterations: int
    residual_norm: float
    objective: float


@dataclass(frozen=True)
class DiscrepancyResult:
    """Regularization parameter chosen by the discrepancy principle."""

    alpha: float
    flag: str  # "ok" | "over-regularized" | "under-regularized"
    residual_norm: float
    n_solves: int


def psf_value(
    w: WeightingScheme,
    mask: SelectionMask | None,
    g_focus: np.ndarray,
    g_source: np.ndarray,
) -> complex:
    """Weighted PSF: beamformer value at the focus point for a unit monopole.

    psi_W(y, y') = <vec G(y'), vec G(y)>_W / <vec G(y), vec G(y)>_W with y
    the focus point (steering g_focus) and y' the source (g_source);
    psi_W(y, y) = 1 for every weighting and mask.
    """
    vg_focus = _mask_apply(vec_outer(g_focus), mask)
    vg_source = _mask_apply(vec_outer(g_source), mask)
    if np.linalg.norm(vg_focus) == 0.0:
        raise DegenerateSteeringError("focus steering vector vanishes after masking")
    w_red = _reduced_weighting(w, mask)
    u = w_red.apply_inverse(vg_focus)
    denom = float(np.real(np.vdot(u, vg_focus)))
    return complex(np.vdot(u, vg_source) / denom)


def assemble_system(
    w: WeightingScheme,
    mask: SelectionMask | None,
    grid: FocusGrid,
    source_map: SourceMap,
    array: MicArray,
    omega: float,
    flow: FlowField,
) -> DamasSystem:
    """Build H and b from a beamforming map computed with the same w/mask/grid.

    H[n, l] = Re psi_W(y_n, y_l) (response at n to a source at l) and
    b[n] = Re I_W(y_n); the diagonal of H is exactly one.
    """
    mask_desc = mask.describe() if mask is not None else "none"
    if source_map.weighting != w.describe() or source_map.mask != mask_desc:
        raise InconsistentInputsError(
            f"map descriptors (weighting={source_map.weighting}, mask={source_map.mask}) do not match "
            f"the requested system (weighting={w.describe()}, mask={mask_desc})"
        )
    if source_map.grid.num_points != grid.num_points or not np.allclose(source_map.grid.points, grid.points):
        raise InconsistentInputsError("map grid does not match the system grid")

    gmat = steering_matrix(array, grid, omega, flow)
    h = _psf_matrix(w, mask, gmat)
    np.fill_diagonal(h, 1.0)
    return DamasSystem(
        h=h,
        b=source_map.values.real.copy(),
        grid=grid,
        weighting=w.describe(),
        mask=mask_desc,
        frequency=source_map.frequency,
        block_count=source_map.block_count,
    )


def _psf_matrix(w: WeightingScheme, mask: SelectionMask | None, gmat: np.ndarray) -> np.ndarray:
    """Re psi_W(y_n, y_l) for all grid-point pairs, H[n, l] indexed (focus, source).

    The scaled-identity weighting with no mask or plain diagonal removal has
    the closed forms |g_n^* g_l|^2 and |g_n^* g_l|^2 - sum_m |g_n[m] g_l[m]|^2
    for the numerator, which avoid the O(N^2 M^2) generic contraction.
    """
    if isinstance(w, ScaledIdentity) and (mask is None or mask.is_trivial):
        s = gmat.conj().T @ gmat
        num = np.abs(s) ** 2
        den = np.real(np.diagonal(s)) ** 2
        return num / den[:, None]
    if isinstance(w, ScaledIdentity) and mask.describe() == "diagonal-removal":
        s = gmat.conj().T @ gmat
        a = np.abs(gmat) ** 2
        t = a.T @ a
        num = np.abs(s) ** 2 - t
        den = np.real(np.diagonal(s)) ** 2 - np.diagonal(t)
        return num / den[:, None]
    vg = _mask_apply(vec_outer_matrix(gmat), mask)
    w_red = _reduced_weighting(w, mask)
    u = w_red.apply_inverse(vg)
    cross = u.conj().T @ vg  # cross[n, l] = <vec G_l, vec G_n>_W
    denom = np.real(np.einsum("jn,jn->n", u.conj(), vg))
    return np.real(cross) / denom[:, None]


def _solve_passive(gram: np.ndarray, rhs: np.ndarray, passive: np.ndarray) -> np.ndarray:
    sub = gram[np.ix_(passive, passive)]
    try:
        return sla.cho_solve(sla.cho_factor(sub, check_finite=False), rhs[passive], check_finite=False)
    except np.linalg.LinAlgError:
        # Rank-deficient subproblem (possible at alpha = 0): minimum-norm fit.
        return np.linalg.lstsq(sub, rhs[passive], rcond=None)[0]


def nnls_solve(h: np.ndarray, b: np.ndarray, alpha: float = 0.0, max_iter: int | None = None) -> NnlsSolution:
    """Minimize ||H q - b||^2 + alpha ||q||^2 over q >= 0 (active-set method).

    Returns the solution together with its KKT residual: at optimality the
    gradient vanishes on the support and is nonnegative on the zero set, up
    to tol = 1e-8 * max(1, ||H^T b||_inf).
    """
    h = np.asarray(h, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if h.ndim != 2 or h.shape[0] != b.shape[0]:
        raise InvalidArgumentError(f"shape mismatch: H {h.shape}, b {b.shape}")
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(b))):
        raise InvalidArgumentError("NNLS inputs must be finite")
    if alpha < 0:
        raise InvalidArgumentError(f"regularization parameter must be >= 0, got {alpha}")
    n = h.shape[1]
    if max_iter is None:
        max_iter = max(10 * n, 100)
    if alpha == 0.0:
        logger.debug("NNLS at alpha = 0: minimizer may not be unique")

    gram = h.T @ h
    if alpha > 0.0:
        gram = gram + alpha * np.eye(n)
    rhs = h.T @ b
    tol = 1e-8 * max(1.0, float(np.max(np.abs(rhs))) if rhs.size else 1.0)

    q = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    # w is the negative half-gradient rhs - Gram q; positive entries mark
    # coordinates whose activation decreases the objective.
    neg_grad = rhs.copy()
    iterations = 0

    while True:
        candidates = ~passive & (neg_grad > tol)
        if not np.any(candidates):
            break
        if iterations >= max_iter:
            kkt = _kkt_residual(q, neg_grad, tol)
            raise NonConvergenceError(f"NNLS did not converge within {max_iter} iterations", kkt_residual=kkt)
        iterations += 1
        enter = int(np.argmax(np.where(candidates, neg_grad, -np.inf)))
        passive[enter] = True

        while True:
            idx = np.flatnonzero(passive)
            z = _solve_passive(gram, rhs, idx)
            if np.all(z > 0.0):
                q = np.zeros(n)
                q[idx] = z
                break
            # Step toward z until the first passive coordinate hits zero.
            zq = q[idx]
            neg = z <= 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg & (zq > z), zq / (zq - z), np.inf)
            t = float(np.min(ratios))
            q_new = np.zeros(n)
            q_new[idx] = zq + t * (z - zq)
            q_new[idx[ratios <= t]] = 0.0
            q = np.maximum(q_new, 0.0)
            passive = q > 0.0
            if not np.any(passive):
                break
        neg_grad = rhs - gram @ q

    kkt = _kkt_residual(q, neg_grad, tol)
    residual = float(np.linalg.norm(h @ q - b))
    objective = residual**2 + alpha * float(q @ q)
    return NnlsSolution(q=q, kkt_residual=kkt, iterations=iterations, residual_norm=residual, objective=objective)


def _kkt_residual(q: np.ndarray, neg_grad: np.ndarray, tol: float) -> float:
    on_support = float(np.max(np.abs(neg_grad[q > 0]))) if np.any(q > 0) else 0.0
    off_support = float(np.max(neg_grad[q == 0])) if np.any(q == 0) else 0.0
    return max(on_support, off_support, 0.0)


def _spectral_norm_sq(h: np.ndarray, iters: int = 30, seed: int = 0) -> float:
    """Largest eigenvalue of H^T H by power iteration (bracket scale only)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(h.shape[1])
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        u = h @ v
        v = h.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 1.0
        lam = nv
        v /= nv
    return float(lam)


def discrepancy_alpha(
    h: np.ndarray,
    b: np.ndarray,
    delta: float,
    tau: float = 1.5,
    rel_tol: float = 1e-3,
) -> DiscrepancyResult:
    """Largest alpha whose residual ||H q_alpha - b|| stays within tau * delta.

    Searches the bracket [1e-8, 1e8] * ||H||_2^2 by log-bisection, relying on
    the monotone growth of the residual in alpha.  Degenerate cases return a
    bracket endpoint with a flag: "over-regularized" when even q = 0
    satisfies the bound (tau * delta >= ||b||), "under-regularized" when no
    alpha in the bracket does.
    """
    if delta <= 0:
        raise InvalidArgumentError(f"noise level delta must be positive, got {delta}")
    if tau < 1.0:
        raise InvalidArgumentError(f"discrepancy constant tau must be >= 1, got {tau}")
    b = np.asarray(b, dtype=float).reshape(-1)
    target = tau * delta
    scale = _spectral_norm_sq(np.asarray(h, dtype=float))
    lo, hi = 1e-8 * scale, 1e8 * scale

    if target >= np.linalg.norm(b):
        return DiscrepancyResult(alpha=hi, flag="over-regularized", residual_norm=float(np.linalg.norm(b)), n_solves=0)

    n_solves = 0

    def residual(alpha: float) -> float:
        nonlocal n_solves
        n_solves += 1
        return nnls_solve(h, b, alpha).residual_norm

    r_lo = residual(lo)
    if r_lo > target:
        return DiscrepancyResult(alpha=lo, flag="under-regularized", residual_norm=r_lo, n_solves=n_solves)
    r_hi = residual(hi)
    if r_hi <= target:
        return DiscrepancyResult(alpha=hi, flag="over-regularized", residual_norm=r_hi, n_solves=n_solves)

    r_best = r_lo
    while hi / lo > 1.0 + rel_tol:
        mid = float(np.sqrt(lo * hi))
        r_mid = residual(mid)
        if r_mid <= target:
            lo, r_best = mid, r_mid
        else:
            hi = mid
    return DiscrepancyResult(alpha=lo, flag="ok", residual_norm=r_best, n_solves=n_solves)
