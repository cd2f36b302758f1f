"""Synthetic single-monopole benchmark generator with ground-truth bookkeeping.

Pressure samples follow p_j = eta_j * p0 * g(y_s) + rho * eps_j with eta_j a
scalar standard complex normal and eps_j an M-vector of independent standard
complex normal entries, so the samples are zero mean, proper and complex
Gaussian by construction and E[CSM] = p0^2 G(y_s) + rho^2 I exactly.

A standard complex normal here is (x + i y) / sqrt(2) with x, y ~ N(0, 1),
giving E|z|^2 = 1.  The generator is numpy's PCG64; streams for different
frequency bins use the derived seed (seed XOR bin index) so parallel
generation stays deterministic.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .geometry import FlowField, MicArray, propagation_vector
from .spectra import BlockSamples


@dataclass(frozen=True)
class SynthScenario:
    """Parameters of the synthetic monopole benchmark."""

    array: MicArray
    flow: FlowField
    source_position: np.ndarray
    source_amplitude: float
    noise_amplitude: float
    block_count: int
    freqs: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "source_position", np.asarray(self.source_position, dtype=float).reshape(3))
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=float).reshape(-1))
        if self.source_amplitude < 0:
            raise InvalidArgumentError("source amplitude must be >= 0")
        if self.noise_amplitude < 0:
            raise InvalidArgumentError("noise amplitude must be >= 0")
        if self.block_count < 1:
            raise InvalidArgumentError("block count must be >= 1")
        if self.freqs.size < 1:
            raise InvalidArgumentError("at least one frequency is required")


@dataclass(frozen=True)
class GroundTruth:
    """Exact first and second moments of a synthetic scenario.

    signal_csm[f] = p0^2 g(y_s) g(y_s)^* is the rank-one acoustic CSM,
    noise_diag = rho^2 I the white-noise part.  Under the proper-Gaussian
    construction the exact covariance of a single-block vec(CSM) sample is
    expected_csm^T (x) expected_csm (Kronecker product); the covariance of
    the J-block average is that divided by J.
    """

    freqs: np.ndarray
    signal_csm: np.ndarray  # (F, M, M)
    noise_power: float  # rho^2
    block_count: int
    steering: np.ndarray = field(repr=False, default=None)  # (F, M)

    def expected_csm(self, f: int) -> np.ndarray:
        m = self.signal_csm.shape[1]
        return self.signal_csm[f] + self.noise_power * np.eye(m)

    def expected_sigma(self, f: int, per_average: bool = True) -> np.ndarray:
        """Dense M^2 x M^2 covariance of vec(CSM); intended for small M."""
        c = self.expected_csm(f)
        sigma = np.kron(c.T, c)
        if per_average:
            sigma = sigma / self.block_count
        return sigma


def _standard_complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synthesize_blocks(scenario: SynthScenario) -> tuple[BlockSamples, GroundTruth]:
    """Draw the block samples of a scenario; deterministic given the seed.

    Per frequency bin f the stream PCG64(seed XOR f) first draws the J
    source factors eta, then the J x M noise matrix eps.
    """
    m = scenario.array.num_mics
    j = scenario.block_count
    f_count = scenario.freqs.size
    p0 = scenario.source_amplitude
    rho = scenario.noise_amplitude

    data = np.empty((j, m, f_count), dtype=np.complex128)
    steering = np.empty((f_count, m), dtype=np.complex128)
    signal_csm = np.empty((f_count, m, m), dtype=np.complex128)

    for f, omega in enumerate(scenario.freqs):
        g = propagation_vector(scenario.array, scenario.source_position, omega, scenario.flow)
        steering[f] = g
        signal_csm[f] = p0**2 * np.outer(g, g.conj())
        rng = np.random.Generator(np.random.PCG64(scenario.seed ^ f))
        eta = _standard_complex_normal(rng, j)
        eps = _standard_complex_normal(rng, (j, m))
        data[:, :, f] = eta[:, None] * (p0 * g)[None, :] + rho * eps

    blocks = BlockSamples(freqs=scenario.freqs, data=data)
    truth = GroundTruth(
        freqs=scenario.freqs,
        signal_csm=signal_csm,
        noise_power=rho**2,
        block_count=j,
        steering=steering,
    )
    return blocks, truth


def noise_level_db(p0: float, rho: float) -> float:
    """Signal-to-additive-noise amplitude ratio 20 log10(p0 / rho) in dB."""
    if p0 <= 0 or rho <= 0:
        raise InvalidArgumentError("noise level requires positive amplitudes")
    return 20.0 * np.log10(p0 / rho)


def noise_amplitude_for_level(p0: float, level_db: float) -> float:
    """Inverse of :func:`noise_level_db`: rho giving the requested level."""
    if p0 <= 0:
        raise InvalidArgumentError("source amplitude must be positive")
    return p0 * 10.0 ** (-level_db / 20.0)
