"""Array geometry, focus grids and the convected free-field Green's function.

All phases follow the e^{+i omega t} time-factor convention; with that
convention an outgoing monopole at y observed at x carries the phase
factor exp(-i k |x-y|) in still air.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError

_COINCIDENT_TOL = 1e-12


@dataclass(frozen=True)
class MicArray:
    """Microphone positions in meters, shape (M, 3)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidArgumentError(f"positions must have shape (M, 3), got {pos.shape}")
        if pos.shape[0] < 2:
            raise InvalidArgumentError("a microphone array needs at least 2 microphones")
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(dist, np.inf)
        if np.any(dist < _COINCIDENT_TOL):
            raise InvalidArgumentError("microphone positions must be pairwise distinct")
        object.__setattr__(self, "positions", pos)

    @property
    def num_mics(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class FlowField:
    """Uniform subsonic flow: speed of sound c (m/s) and Mach vector m = u/c."""

    speed_of_sound: float
    mach: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.speed_of_sound > 0.0:
            raise InvalidArgumentError(f"speed of sound must be positive, got {self.speed_of_sound}")
        m = np.asarray(self.mach, dtype=float).reshape(3)
        if np.linalg.norm(m) >= 1.0:
            raise InvalidArgumentError(f"flow must be subsonic, got |mach| = {np.linalg.norm(m):.4g}")
        object.__setattr__(self, "mach", m)

    @property
    def beta_squared(self) -> float:
        """1 - |m|^2, in (0, 1]."""
        return 1.0 - float(self.mach @ self.mach)


@dataclass(frozen=True)
class LatticeInfo:
    """Descriptor of a planar equidistant grid (x-y plane at fixed z)."""

    origin: np.ndarray
    dx: float
    dy: float
    nx: int
    ny: int

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))

    def regenerate(self) -> np.ndarray:
        """Recreate the point list; row-major with x varying fastest."""
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        gx, gy = np.meshgrid(ix, iy)  # gy rows, gx columns
        pts = np.empty((self.ny * self.nx, 3))
        pts[:, 0] = self.origin[0] + gx.ravel() * self.dx
        pts[:, 1] = self.origin[1] + gy.ravel() * self.dy
        pts[:, 2] = self.origin[2]
        return pts

    @property
    def shape(self) -> tuple[int, int]:
        """(ny, nx) shape for reshaping flat per-point arrays to an image."""
        return (self.ny, self.nx)


@dataclass(frozen=True)
class FocusGrid:
    """Flat list of focus points with an optional lattice descriptor.

    Metrics that need adjacency (connected components) require ``lattice``;
    grids built from arbitrary point lists simply leave it as None.
    """

    points: np.ndarray
    lattice: LatticeInfo | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise InvalidArgumentError(f"grid points must have shape (N, 3) with N >= 1, got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.lattice is not None:
            regen = self.lattice.regenerate()
            if regen.shape != pts.shape or not np.allclose(regen, pts, atol=1e-9):
                raise InvalidArgumentError("lattice descriptor does not regenerate the point list")

    @property
    def num_points(self) -> int:
        return self.points.shape[0]


def build_focus_grid(origin, dx: float, dy: float, nx: int, ny: int) -> FocusGrid:
    """Planar equidistant grid of nx*ny points in row-major order (x fastest)."""
    if nx < 1 or ny < 1:
        raise InvalidArgumentError(f"grid counts must be >= 1, got nx={nx}, ny={ny}")
    if dx <= 0 or dy <= 0:
        raise InvalidArgumentError(f"grid spacings must be positive, got dx={dx}, dy={dy}")
    lattice = LatticeInfo(origin=np.asarray(origin, dtype=float), dx=float(dx), dy=float(dy), nx=int(nx), ny=int(ny))
    return FocusGrid(points=lattice.regenerate(), lattice=lattice)


def mach_distance(x, y, mach) -> float:
    """Flow-corrected distance sqrt(((x-y).m)^2 + beta^2 |x-y|^2).

    Reduces to the Euclidean distance for m = 0.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    y = np.asarray(y, dtype=float).reshape(3)
    m = np.asarray(mach, dtype=float).reshape(3)
    beta2 = 1.0 - float(m @ m)
    if beta2 <= 0.0:
        raise InvalidArgumentError("mach vector must be subsonic")
    d = x - y
    r2 = float(d @ d)
    if r2 < _COINCIDENT_TOL**2:
        raise DegenerateGeometryError("coincident points have no defined propagation distance")
    return float(np.sqrt((d @ m) ** 2 + beta2 * r2))


def green_function(x, y, omega: float, flow: FlowField) -> complex:
    """Green's function of the convected Helmholtz equation (uniform subsonic flow).

    g(x, y, omega) = exp(-(i k / beta^2) (-(x-y).m + |x-y|_m)) / (4 pi |x-y|_m)
    with k = omega / c.  Its magnitude is 1 / (4 pi |x-y|_m).
    """
    x = np.asarray(x, dtype=float).reshape(3)
    y = np.asarray(y, dtype=float).reshape(3)
    m = flow.mach
    beta2 = flow.beta_squared
    dm = mach_distance(x, y, m)
    k = omega / flow.speed_of_sound
    phase = (-1j * k / beta2) * (-(x - y) @ m + dm)
    return complex(np.exp(phase) / (4.0 * np.pi * dm))


def propagation_vector(array: MicArray, y, omega: float, flow: FlowField) -> np.ndarray:
    """Per-microphone Green's function values g(x_m, y), shape (M,)."""
    y = np.asarray(y, dtype=float).reshape(3)
    d = array.positions - y[None, :]
    r2 = np.einsum("ij,ij->i", d, d)
    if np.any(r2 < _COINCIDENT_TOL**2):
        idx = int(np.argmin(r2))
        raise DegenerateGeometryError(f"focus point coincides with microphone {idx}")
    m = flow.mach
    beta2 = flow.beta_squared
    dm = np.sqrt((d @ m) ** 2 + beta2 * r2)
    k = omega / flow.speed_of_sound
    phase = (-1j * k / beta2) * (-(d @ m) + dm)
    return np.exp(phase) / (4.0 * np.pi * dm)


def steering_matrix(array: MicArray, grid: FocusGrid, omega: float, flow: FlowField) -> np.ndarray:
    """Propagation vectors for every grid point, shape (M, N)."""
    d = array.positions[:, None, :] - grid.points[None, :, :]  # (M, N, 3)
    r2 = np.einsum("mnk,mnk->mn", d, d)
    if np.any(r2 < _COINCIDENT_TOL**2):
        bad = np.argwhere(r2 < _COINCIDENT_TOL**2)[0]
        raise DegenerateGeometryError(f"grid point {bad[1]} coincides with microphone {bad[0]}")
    m = flow.mach
    beta2 = flow.beta_squared
    dm_proj = np.einsum("mnk,k->mn", d, m)
    dm = np.sqrt(dm_proj**2 + beta2 * r2)
    k = omega / flow.speed_of_sound
    phase = (-1j * k / beta2) * (-dm_proj + dm)
    return np.exp(phase) / (4.0 * np.pi * dm)
