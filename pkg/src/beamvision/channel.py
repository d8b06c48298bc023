"""Desk-scale line-of-sight channel synthesis, achievable rate, and the
exhaustive-search beam oracle.

The user is a single-antenna receiver, so a channel realization is a complex
vector over the RSU's dual-polarized ports. Rate is computed after
matched-filter equalization of the scalar effective channel, i.e.
``log2(1 + snr * |h^H w|^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codebook import ArrayGeometry, BeamCodebook, BeamIndex, steering_vector
from .errors import InvalidArgumentError


@dataclass
class LinkParams:
    """RSU pose and link-level constants.

    Attributes:
        rsu_position: RSU array location in world coordinates, meters.
        rsu_yaw_rad: array boresight azimuth (rotation about the vertical
            world axis); 0 points the boresight along world +x.
        snr_linear: transmit power over receiver noise, before beamforming
            gain and path loss (both enter through the channel vector).
        carrier_wavelength_m: carrier wavelength in meters.
        blockage_attenuation_db: extra amplitude attenuation applied to
            blocked links, in dB.
        pol_phase_rad: fixed phase offset of the second polarization port
            group relative to the first.
    """

    rsu_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rsu_yaw_rad: float = 0.0
    snr_linear: float = 1e10
    carrier_wavelength_m: float = 0.01
    blockage_attenuation_db: float = 20.0
    pol_phase_rad: float = 0.0

    def __post_init__(self) -> None:
        self.rsu_position = np.asarray(self.rsu_position, dtype=np.float64).reshape(3)
        if self.snr_linear <= 0:
            raise InvalidArgumentError(f"snr_linear must be > 0, got {self.snr_linear}")
        if self.carrier_wavelength_m <= 0:
            raise InvalidArgumentError("carrier wavelength must be > 0")
        if self.blockage_attenuation_db < 0:
            raise InvalidArgumentError("blockage attenuation must be >= 0 dB")


@dataclass
class ChannelRealization:
    """Downlink channel from the RSU ports to one single-antenna user."""

    h: np.ndarray
    user_position: np.ndarray
    blocked: bool


def _angles_in_array_frame(rel: np.ndarray, yaw_rad: float) -> tuple[float, float, float]:
    """(azimuth, zenith, distance) of a point offset `rel` from the array,
    after undoing the array yaw. Zenith is measured from the vertical axis."""
    cos_y, sin_y = math.cos(yaw_rad), math.sin(yaw_rad)
    x = cos_y * rel[0] + sin_y * rel[1]
    y = -sin_y * rel[0] + cos_y * rel[1]
    z = rel[2]
    dist = math.sqrt(x * x + y * y + z * z)
    azimuth = math.atan2(y, x)
    zenith = math.acos(max(-1.0, min(1.0, z / dist)))
    return azimuth, zenith, dist


def synthesize_los_channel(
    user_position: np.ndarray,
    params: LinkParams,
    geometry: ArrayGeometry,
    blocked: bool = False,
) -> ChannelRealization:
    """Free-space LoS channel between the RSU array and a user position.

    Element phases follow the far-field UPA response toward the user; the
    common gain carries the free-space amplitude ``wavelength / (4*pi*d)``
    and the distance phase ``exp(-j*2*pi*d/wavelength)``. Both polarization
    halves share the element phases, the second shifted by ``pol_phase_rad``.
    Blocked links are attenuated by ``blockage_attenuation_db``.

    Deterministic: identical inputs give bitwise-identical channels.
    """
    user_position = np.asarray(user_position, dtype=np.float64).reshape(3)
    rel = user_position - params.rsu_position
    dist = float(np.linalg.norm(rel))
    if dist <= 0.0:
        raise InvalidArgumentError("user is co-located with the RSU (zero distance)")
    azimuth, zenith, _ = _angles_in_array_frame(rel, params.rsu_yaw_rad)

    # Unnormalized element phases: steering vector times sqrt(n1*n2).
    a = steering_vector(geometry.single_pol(), azimuth, zenith) * math.sqrt(geometry.n_elements)
    lam = params.carrier_wavelength_m
    gain = (lam / (4.0 * math.pi * dist)) * np.exp(-2j * np.pi * dist / lam)
    if blocked:
        gain *= 10.0 ** (-params.blockage_attenuation_db / 20.0)

    pol = np.exp(1j * params.pol_phase_rad)
    h = gain * np.concatenate([a, pol * a])
    return ChannelRealization(h=h, user_position=user_position, blocked=blocked)


def _as_vector(h) -> np.ndarray:
    vec = h.h if isinstance(h, ChannelRealization) else h
    return np.asarray(vec)


def beamforming_gains(h, codebook: BeamCodebook) -> np.ndarray:
    """|h^H w|^2 for every precoder, in flat-index order."""
    vec = _as_vector(h)
    if vec.shape[0] != codebook.precoders.shape[1]:
        raise InvalidArgumentError(
            f"channel length {vec.shape[0]} does not match codebook port count "
            f"{codebook.precoders.shape[1]}"
        )
    return np.abs(codebook.precoders.conj() @ vec) ** 2


def achievable_rate(h, precoder: np.ndarray, snr_linear: float) -> float:
    """Post-equalization achievable rate in bits/s/Hz: log2(1 + snr*|h^H w|^2).

    The precoder is expected unit-norm; only dimensions are checked.
    """
    vec = _as_vector(h)
    precoder = np.asarray(precoder)
    if vec.shape != precoder.shape:
        raise InvalidArgumentError(
            f"channel/precoder dimension mismatch: {vec.shape} vs {precoder.shape}"
        )
    return float(np.log2(1.0 + snr_linear * np.abs(np.vdot(vec, precoder)) ** 2))


def oracle_beam(h, codebook: BeamCodebook) -> BeamIndex:
    """Exhaustive-search optimal beam: argmax |h^H w|^2, ties to lowest flat index."""
    gains = beamforming_gains(h, codebook)
    return codebook.beam_index(int(np.argmax(gains)))


def top_k_beams(h, codebook: BeamCodebook, k: int) -> list[BeamIndex]:
    """First k beams by descending |h^H w|^2; ties by ascending flat index."""
    if not (1 <= k <= codebook.num_beams):
        raise InvalidArgumentError(f"k={k} out of range [1, {codebook.num_beams}]")
    gains = beamforming_gains(h, codebook)
    order = np.argsort(-gains, kind="stable")[:k]
    return [codebook.beam_index(int(flat)) for flat in order]
