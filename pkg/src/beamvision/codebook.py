"""Steering vectors and the rank-1 Type-I single-panel precoding codebook.

The codebook is the discrete beam label space used everywhere else: dataset
labels, classifier outputs and rate evaluation all index into it through the
row-major ``(l, m, p) -> flat`` mapping of :class:`BeamIndex`.

Coordinate convention: zenith is measured from the array's vertical axis, so
broadside is ``zenith = pi/2, azimuth = 0``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError, UnsupportedConfigurationError

N_COPHASE = 4  # QPSK co-phasing alphabet {1, j, -1, -j}

EXPORT_MAGIC = b"BVCB"
EXPORT_VERSION = 1


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna panel description.

    Args:
        n1: horizontal antenna count per polarization.
        n2: vertical antenna count per polarization.
        dual_polarized: whether the panel carries two co-located polarizations.
        spacing_h: horizontal element spacing in wavelengths.
        spacing_v: vertical element spacing in wavelengths.
    """

    n1: int = 8
    n2: int = 2
    dual_polarized: bool = True
    spacing_h: float = 0.5
    spacing_v: float = 0.5

    def __post_init__(self) -> None:
        if self.n1 < 1 or self.n2 < 1:
            raise InvalidArgumentError(f"antenna counts must be >= 1, got {self.n1}x{self.n2}")
        if self.spacing_h <= 0 or self.spacing_v <= 0:
            raise InvalidArgumentError("element spacing must be strictly positive")

    @property
    def n_elements(self) -> int:
        """Elements of a single polarization panel."""
        return self.n1 * self.n2

    @property
    def n_ports(self) -> int:
        """Total ports including both polarizations when dual polarized."""
        return 2 * self.n_elements if self.dual_polarized else self.n_elements

    def single_pol(self) -> "ArrayGeometry":
        """View of the same panel with one polarization."""
        return replace(self, dual_polarized=False)


@dataclass(frozen=True)
class BeamIndex:
    """Structured beam index: horizontal DFT index l, vertical index m,
    co-phasing index p and the row-major flattening of the triple."""

    l: int
    m: int
    p: int
    flat: int


def flat_from_lmp(l: int, m: int, p: int, m_count: int) -> int:
    """Row-major flattening (l outer, m middle, p inner)."""
    return (l * m_count + m) * N_COPHASE + p


def lmp_from_flat(flat: int, m_count: int) -> tuple[int, int, int]:
    lm, p = divmod(flat, N_COPHASE)
    l, m = divmod(lm, m_count)
    return l, m, p


@dataclass(frozen=True)
class BeamCodebook:
    """Ordered set of unit-norm dual-polarized precoders indexed by BeamIndex.flat."""

    geometry: ArrayGeometry
    o1: int
    o2: int
    precoders: np.ndarray  # (num_beams, 2*n1*n2) complex128

    @property
    def num_beams(self) -> int:
        return self.precoders.shape[0]

    @property
    def l_count(self) -> int:
        return self.geometry.n1 * self.o1

    @property
    def m_count(self) -> int:
        return self.geometry.n2 * self.o2

    def flat_index(self, l: int, m: int, p: int) -> int:
        if not (0 <= l < self.l_count and 0 <= m < self.m_count and 0 <= p < N_COPHASE):
            raise InvalidArgumentError(f"beam index ({l}, {m}, {p}) out of range")
        return flat_from_lmp(l, m, p, self.m_count)

    def beam_index(self, flat: int) -> BeamIndex:
        if not (0 <= flat < self.num_beams):
            raise InvalidArgumentError(f"flat index {flat} out of range [0, {self.num_beams})")
        l, m, p = lmp_from_flat(flat, self.m_count)
        return BeamIndex(l=l, m=m, p=p, flat=flat)

    def precoder(self, index: int | BeamIndex) -> np.ndarray:
        flat = index.flat if isinstance(index, BeamIndex) else int(index)
        return self.precoders[flat]

    @property
    def params(self) -> tuple[int, int, int, int]:
        return (self.geometry.n1, self.geometry.n2, self.o1, self.o2)


def steering_vector(geometry: ArrayGeometry, azimuth: float, zenith: float) -> np.ndarray:
    """Single-polarization UPA response toward (azimuth, zenith).

    Entry for element (a, b) is
    ``exp(j*2*pi*(a*spacing_h*sin(zenith)*sin(azimuth) + b*spacing_v*cos(zenith)))``
    scaled by ``1/sqrt(n1*n2)``, in row-major element order (a outer, b inner).

    Args:
        geometry: panel description; only the single-pol element grid is used.
        azimuth: radians, 0 at boresight.
        zenith: radians from the vertical array axis; broadside is pi/2.

    Returns:
        Unit-norm complex vector of length n1*n2.
    """
    if not (math.isfinite(azimuth) and math.isfinite(zenith)):
        raise InvalidArgumentError(f"angles must be finite, got az={azimuth}, zen={zenith}")
    a = np.arange(geometry.n1)
    b = np.arange(geometry.n2)
    phase_h = a * geometry.spacing_h * math.sin(zenith) * math.sin(azimuth)
    phase_v = b * geometry.spacing_v * math.cos(zenith)
    phases = phase_h[:, None] + phase_v[None, :]  # (n1, n2), row-major on ravel
    vec = np.exp(2j * np.pi * phases).ravel()
    return vec / math.sqrt(geometry.n_elements)


def _dft_vector(n: int, oversampling: int, k: int) -> np.ndarray:
    """Length-n oversampled DFT vector, element a = exp(j*2*pi*a*k/(n*oversampling))."""
    a = np.arange(n)
    return np.exp(2j * np.pi * a * k / (n * oversampling))


def build_type1_codebook(geometry: ArrayGeometry, o1: int = 4, o2: int = 4) -> BeamCodebook:
    """Construct the rank-1 single-panel Type-I codebook.

    Beam (l, m) is the Kronecker product of oversampled DFT vectors on the two
    panel axes, unit-normalized; the precoder stacks it over both
    polarizations with QPSK co-phasing: ``w = (1/sqrt(2)) * [b; exp(j*pi*p/2)*b]``.
    Ordering follows BeamIndex.flat, so two calls with equal arguments produce
    bitwise-identical precoders.

    Args:
        geometry: must be dual polarized.
        o1, o2: horizontal / vertical oversampling factors, >= 1.

    Returns:
        BeamCodebook with n1*o1 * n2*o2 * 4 unit-norm precoders.
    """
    if not geometry.dual_polarized:
        raise UnsupportedConfigurationError(
            "Type-I codebook requires a dual-polarized geometry"
        )
    if o1 < 1 or o2 < 1:
        raise InvalidArgumentError(f"oversampling factors must be >= 1, got o1={o1}, o2={o2}")

    n1, n2 = geometry.n1, geometry.n2
    l_count, m_count = n1 * o1, n2 * o2
    n_el = n1 * n2
    cophase = np.exp(1j * np.pi * np.arange(N_COPHASE) / 2)

    precoders = np.empty((l_count * m_count * N_COPHASE, 2 * n_el), dtype=np.complex128)
    for l in range(l_count):
        d1 = _dft_vector(n1, o1, l)
        for m in range(m_count):
            d2 = _dft_vector(n2, o2, m)
            beam = np.kron(d1, d2) / math.sqrt(n_el)  # unit norm
            for p in range(N_COPHASE):
                flat = flat_from_lmp(l, m, p, m_count)
                precoders[flat, :n_el] = beam
                precoders[flat, n_el:] = cophase[p] * beam
    precoders /= math.sqrt(2.0)
    return BeamCodebook(geometry=geometry, o1=o1, o2=o2, precoders=precoders)


def export_codebook(codebook: BeamCodebook, path, fmt: str = "binary") -> None:
    """Dump precoders for cross-implementation comparison.

    binary: magic 'BVCB', version, then n1, n2, o1, o2, num_beams, length as
    little-endian uint32, followed by interleaved real/imag little-endian
    float64 in flat-index order.
    json: header fields plus a nested list with the same interleaving.
    """
    n1, n2, o1, o2 = codebook.params
    num, length = codebook.precoders.shape
    interleaved = np.empty((num, 2 * length), dtype="<f8")
    interleaved[:, 0::2] = codebook.precoders.real
    interleaved[:, 1::2] = codebook.precoders.imag
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(EXPORT_MAGIC)
            fh.write(struct.pack("<6I", EXPORT_VERSION, n1, n2, o1, o2, num))
            fh.write(struct.pack("<I", length))
            fh.write(interleaved.tobytes())
    elif fmt == "json":
        payload = {
            "format": "beamvision-codebook-v1",
            "n1": n1, "n2": n2, "o1": o1, "o2": o2,
            "num_beams": num,
            "length": length,
            "precoders": interleaved.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    else:
        raise InvalidArgumentError(f"unknown export format {fmt!r}")


def load_codebook_export(path, fmt: str = "binary") -> tuple[tuple[int, int, int, int], np.ndarray]:
    """Read a dump written by export_codebook; returns ((n1,n2,o1,o2), precoders)."""
    if fmt == "binary":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != EXPORT_MAGIC:
                raise InvalidArgumentError(f"bad codebook dump magic in {path}")
            version, n1, n2, o1, o2, num = struct.unpack("<6I", fh.read(24))
            if version != EXPORT_VERSION:
                raise InvalidArgumentError(f"unsupported codebook dump version {version}")
            (length,) = struct.unpack("<I", fh.read(4))
            raw = np.frombuffer(fh.read(), dtype="<f8").reshape(num, 2 * length)
    elif fmt == "json":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        n1, n2, o1, o2 = payload["n1"], payload["n2"], payload["o1"], payload["o2"]
        num, length = payload["num_beams"], payload["length"]
        raw = np.asarray(payload["precoders"], dtype=np.float64).reshape(num, 2 * length)
    else:
        raise InvalidArgumentError(f"unknown export format {fmt!r}")
    precoders = raw[:, 0::2] + 1j * raw[:, 1::2]
    return (n1, n2, o1, o2), precoders
