"""File formats: AAIM binary containers, geometry text files and CSV tables.

Binary layout (all integers unsigned 32-bit little-endian, all floats
little-endian float64, complex values interleaved re/im float64):

  block samples:  magic "AAIM", version, M, J, F, F frequencies (Hz),
                  J*M*F complex values ordered block-major, then mic,
                  then frequency.
  CSM / PCSM:     magic "AAIM", version, M, F, F frequencies (Hz),
                  F*M*M complex values row-major per frequency.
  covariance:     magic "AAIM", version, one method tag byte
                  (0 = gaussian-formula, 1 = sample), then the CSM layout
                  with M replaced by M^2.  The stored matrix is the
                  covariance of the block-averaged CSM.

In-memory frequencies are angular (rad/s); files store Hz.  Frequencies
constructed as 2*pi*f_hz round-trip bit-exactly; arbitrary values are
idempotent after the first write/read cycle.
"""

import struct
from pathlib import Path

import numpy as np

from .beamforming import SourceMap
from .errors import FormatError, InvalidArgumentError
from .geometry import MicArray
from .spectra import BlockSamples

MAGIC = b"AAIM"
FORMAT_VERSION = 1
TIME_CONVENTION = "exp(+i omega t)"

_METHOD_TAGS = {"gaussian-formula": 0, "sample": 1}
_TAG_METHODS = {v: k for k, v in _METHOD_TAGS.items()}

TWO_PI = 2.0 * np.pi


class _Reader:
    """Byte cursor raising FormatError with the failing offset."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise FormatError(f"{self.path}: truncated file, needed {count} bytes", offset=self.offset)
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()

    def c128_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(16 * count), dtype="<c16").copy()

    def expect_magic(self):
        if self.take(4) != MAGIC:
            raise FormatError(f"{self.path}: bad magic, not an AAIM container", offset=0)
        version = self.u32()
        if version != FORMAT_VERSION:
            raise FormatError(f"{self.path}: unsupported format version {version}", offset=4)

    def done(self):
        if self.offset != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.offset} unexpected trailing bytes", offset=self.offset
            )


def _header(*fields: int) -> bytes:
    return MAGIC + struct.pack("<I", FORMAT_VERSION) + b"".join(struct.pack("<I", f) for f in fields)


def write_block_samples(path, blocks: BlockSamples) -> None:
    j, m, f = blocks.data.shape
    payload = [
        _header(m, j, f),
        (blocks.freqs / TWO_PI).astype("<f8").tobytes(),
        np.ascontiguousarray(blocks.data, dtype="<c16").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def read_block_samples(path) -> BlockSamples:
    r = _Reader(Path(path).read_bytes(), path)
    r.expect_magic()
    m, j, f = r.u32(), r.u32(), r.u32()
    freqs_hz = r.f64_array(f)
    data = r.c128_array(j * m * f).reshape(j, m, f)
    r.done()
    return BlockSamples(freqs=freqs_hz * TWO_PI, data=data)


def write_spectral_matrices(path, freqs: np.ndarray, matrices: np.ndarray) -> None:
    """Write a per-frequency stack of square matrices (CSM or PCSM layout)."""
    matrices = np.asarray(matrices, dtype=np.complex128)
    freqs = np.asarray(freqs, dtype=float).reshape(-1)
    if matrices.ndim != 3 or matrices.shape[1] != matrices.shape[2]:
        raise InvalidArgumentError(f"expected shape (F, M, M), got {matrices.shape}")
    if matrices.shape[0] != freqs.size:
        raise InvalidArgumentError("frequency count does not match matrix stack")
    payload = [
        _header(matrices.shape[1], freqs.size),
        (freqs / TWO_PI).astype("<f8").tobytes(),
        np.ascontiguousarray(matrices, dtype="<c16").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def read_spectral_matrices(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a matrix stack; returns (freqs in rad/s, matrices of shape (F, M, M))."""
    r = _Reader(Path(path).read_bytes(), path)
    r.expect_magic()
    m, f = r.u32(), r.u32()
    freqs_hz = r.f64_array(f)
    mats = r.c128_array(f * m * m).reshape(f, m, m)
    r.done()
    return freqs_hz * TWO_PI, mats


def write_covariance(path, freqs: np.ndarray, sigmas: np.ndarray, method: str) -> None:
    """Write per-frequency M^2 x M^2 covariance matrices of the averaged CSM."""
    if method not in _METHOD_TAGS:
        raise InvalidArgumentError(f"unknown covariance method '{method}'")
    sigmas = np.asarray(sigmas, dtype=np.complex128)
    freqs = np.asarray(freqs, dtype=float).reshape(-1)
    if sigmas.ndim != 3 or sigmas.shape[1] != sigmas.shape[2]:
        raise InvalidArgumentError(f"expected shape (F, M^2, M^2), got {sigmas.shape}")
    if sigmas.shape[0] != freqs.size:
        raise InvalidArgumentError("frequency count does not match covariance stack")
    payload = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<B", _METHOD_TAGS[method]),
        struct.pack("<I", sigmas.shape[1]),
        struct.pack("<I", freqs.size),
        (freqs / TWO_PI).astype("<f8").tobytes(),
        np.ascontiguousarray(sigmas, dtype="<c16").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def read_covariance(path) -> tuple[np.ndarray, np.ndarray, str]:
    """Read covariance stack; returns (freqs rad/s, sigmas (F, n, n), method)."""
    r = _Reader(Path(path).read_bytes(), path)
    r.expect_magic()
    tag = r.u8()
    if tag not in _TAG_METHODS:
        raise FormatError(f"{path}: unknown covariance method tag {tag}", offset=8)
    n, f = r.u32(), r.u32()
    freqs_hz = r.f64_array(f)
    sigmas = r.c128_array(f * n * n).reshape(f, n, n)
    r.done()
    return freqs_hz * TWO_PI, sigmas, _TAG_METHODS[tag]


def load_array_geometry(path) -> MicArray:
    """Read microphone positions from text: one 'x y z' line per mic, '#' comments."""
    positions = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise InvalidArgumentError(f"{path}:{lineno}: expected three coordinates, got {len(fields)}")
        try:
            positions.append([float(v) for v in fields])
        except ValueError:
            raise InvalidArgumentError(f"{path}:{lineno}: non-numeric coordinate in {line!r}")
    if not positions:
        raise InvalidArgumentError(f"{path}: no microphone positions found")
    return MicArray(positions=np.array(positions))


def save_array_geometry(path, array: MicArray, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append("# x y z (meters)")
    for p in array.positions:
        lines.append(f"{p[0]:.12g} {p[1]:.12g} {p[2]:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def _map_header_lines(source_map: SourceMap) -> list[str]:
    lines = [
        "# aaim source map",
        f"# time_convention: {TIME_CONVENTION}",
        f"# weighting: {source_map.weighting}",
        f"# mask: {source_map.mask}",
    ]
    if source_map.band_edges is not None:
        lo, hi = source_map.band_edges
        lines.append(f"# band_center_hz: {source_map.frequency / TWO_PI:.9g}")
        lines.append(f"# band_edges_hz: {lo / TWO_PI:.9g},{hi / TWO_PI:.9g}")
    elif source_map.frequency is not None:
        lines.append(f"# frequency_hz: {source_map.frequency / TWO_PI:.9g}")
    if source_map.block_count is not None:
        lines.append(f"# block_count: {source_map.block_count}")
    return lines


def write_source_map_csv(path, source_map: SourceMap, q: np.ndarray | None = None) -> None:
    """CSV with columns x,y,z,re_value,im_value,power,power_db (+ q for DAMAS maps).

    Metadata (weighting, mask, frequency or band, block count) goes into
    '#' comment lines before the column header.
    """
    powers = source_map.powers
    peak = powers.max()
    with np.errstate(divide="ignore"):
        power_db = 10.0 * np.log10(powers / peak) if peak > 0 else np.full_like(powers, -np.inf)
    columns = "x,y,z,re_value,im_value,power,power_db"
    if q is not None:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != source_map.grid.num_points:
            raise InvalidArgumentError("q length does not match the grid")
        columns += ",q"
    lines = _map_header_lines(source_map)
    lines.append(columns)
    pts = source_map.grid.points
    vals = source_map.values
    for n in range(source_map.grid.num_points):
        row = (
            f"{pts[n, 0]:.9g},{pts[n, 1]:.9g},{pts[n, 2]:.9g},"
            f"{vals[n].real:.17g},{vals[n].imag:.17g},{powers[n]:.17g},{power_db[n]:.6g}"
        )
        if q is not None:
            row += f",{q[n]:.17g}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def write_metric_rows_csv(path, rows: list[tuple[float, str, float, str]]) -> None:
    """Rows of (frequency rad/s, metric name, value, flags) as a plottable CSV."""
    lines = ["frequency_hz,metric,value,flags"]
    for freq, metric, value, flags in rows:
        lines.append(f"{freq / TWO_PI:.9g},{metric},{value:.12g},{flags}")
    Path(path).write_text("\n".join(lines) + "\n")
