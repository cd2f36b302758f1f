"""Exception hierarchy for the aaim package.

Errors are split into data/validation problems (exit code 2 in the CLI)
and numerical failures (exit code 3).
"""


class AaimError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(AaimError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateGeometryError(AaimError):
    """Coincident points or another geometry that would produce infinities."""


class DegenerateSteeringError(AaimError):
    """Steering vector vanishes after masking; beamformer undefined."""


class NotPositiveDefiniteError(AaimError):
    """A matrix required to be Hermitian positive definite is not.

    Carries the offending eigenvalue when known.
    """

    def __init__(self, message, eigenvalue=None):
        if eigenvalue is not None:
            message = f"{message} (offending eigenvalue {eigenvalue:.6g})"
        super().__init__(message)
        self.eigenvalue = eigenvalue


class InsufficientSamplesError(AaimError):
    """Too few block samples for the requested estimator."""


class InconsistentInputsError(AaimError):
    """Inputs were produced under different weighting/mask/grid descriptors."""


class NonConvergenceError(AaimError):
    """An iterative solver exhausted its iteration budget.

    Carries the final KKT residual for diagnosis.
    """

    def __init__(self, message, kkt_residual=None):
        if kkt_residual is not None:
            message = f"{message} (KKT residual {kkt_residual:.6g})"
        super().__init__(message)
        self.kkt_residual = kkt_residual


class UndefinedMetricError(AaimError):
    """Metric is undefined for this input (e.g. all-zero source map)."""


class UnsupportedGridError(AaimError):
    """Operation needs a lattice grid but the map's grid is not one."""


class NoBinsInBandError(AaimError):
    """A frequency band contains no FFT bins."""


class FormatError(AaimError):
    """A binary container is corrupted or truncated.

    Carries the byte offset at which decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
