"""Multipath fading channel with an exponential power-delay profile.

Delays are integer sample counts drawn uniformly over the cyclic prefix; tap
gains are zero-mean circular complex Gaussians whose variance decays as
``exp(-delay / tau_rms)``. Per-subcarrier gains follow the usual DFT relation
``h_k = sum_i a_i exp(-2j*pi*k*d_i/N)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

NORMALIZATIONS = ("expected", "per_realization")


@dataclass(frozen=True)
class PowerDelayProfile:
    """Exponentially decaying power-delay profile.

    ``tau_rms_norm`` is the rms delay spread in sample periods. With
    ``normalization="expected"`` tap variances are scaled so that the sum of
    expected tap powers is one, which is the regime where
    :func:`subcarrier_correlation` is the exact ensemble correlation.
    ``"per_realization"`` rescales every draw to unit total tap energy.
    """

    tau_rms_norm: float = 10.0
    num_paths: int = 20
    cp_len: int = 128
    normalization: str = "expected"

    def __post_init__(self):
        if not self.tau_rms_norm > 0:
            raise ValueError(f"tau_rms_norm must be positive, got {self.tau_rms_norm}")
        if self.num_paths < 1:
            raise ValueError(f"num_paths must be >= 1, got {self.num_paths}")
        if self.cp_len < 1:
            raise ValueError(f"cp_len must be >= 1, got {self.cp_len}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(
                f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}"
            )

    def mean_profile_power(self) -> float:
        """Mean of exp(-d/tau_rms) over the integer delays 0..cp_len."""
        d = np.arange(self.cp_len + 1)
        return float(np.mean(np.exp(-d / self.tau_rms_norm)))


@dataclass(frozen=True)
class ChannelRealization:
    delays: np.ndarray
    gains: np.ndarray
    indices: np.ndarray
    subcarrier_gains: np.ndarray
    fft_size: int

    @classmethod
    def from_taps(cls, delays, gains, indices, fft_size: int) -> "ChannelRealization":
        delays = np.asarray(delays, dtype=np.int64)
        gains = np.asarray(gains, dtype=np.complex128)
        indices = np.asarray(indices, dtype=np.int64)
        h = frequency_response(delays, gains, indices, fft_size)
        return cls(delays, gains, indices, np.atleast_1d(h), fft_size)

    @property
    def max_delay(self) -> int:
        return int(self.delays.max()) if self.delays.size else 0

    def as_dict(self) -> Mapping[int, complex]:
        return {int(k): complex(h) for k, h in zip(self.indices, self.subcarrier_gains)}

    def gain(self, k: int) -> complex:
        """Gain at an arbitrary subcarrier, not only the stored ones."""
        return complex(frequency_response(self.delays, self.gains, k, self.fft_size))

    def taps(self) -> np.ndarray:
        """Dense impulse response of length max_delay + 1 (colliding delays add)."""
        h = np.zeros(self.max_delay + 1, dtype=np.complex128)
        np.add.at(h, self.delays, self.gains)
        return h


@dataclass(frozen=True)
class SubchannelPlan:
    """Equispaced subcarrier allocation reused over ``slots`` OFDM symbols."""

    indices: np.ndarray
    spacing: int
    slots: int = 1
    slot_interval: float = 0.0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("plan needs at least one subcarrier index")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("plan indices must be strictly increasing")
        if idx.size > 1 and np.any(np.diff(idx) != self.spacing):
            raise ValueError("plan indices must be equispaced")
        if self.slots < 1:
            raise ValueError(f"slots must be >= 1, got {self.slots}")

    @property
    def per_slot_count(self) -> int:
        return int(self.indices.size)

    @property
    def total_count(self) -> int:
        return self.per_slot_count * self.slots

    def slots_independent(self, coherence: float, factor: float = 10.0) -> bool:
        """True when slots are far enough apart to treat their fades as independent."""
        return self.slots == 1 or self.slot_interval >= factor * coherence


def subcarrier_correlation(
    tau_rms_norm: float, cp_len: int, fft_size: int, delta_l: float
) -> complex:
    """Closed-form normalized correlation between subcarriers ``delta_l`` apart.

    Continuous-delay form for uniform delays on [0, cp_len] under an exponential
    profile.
    """
    if not tau_rms_norm > 0:
        raise ValueError(f"tau_rms_norm must be positive, got {tau_rms_norm}")
    if fft_size <= 0:
        raise ValueError("fft_size must be positive")
    if cp_len > fft_size:
        raise ValueError("cp_len must not exceed fft_size")
    if delta_l == 0:
        return 1.0 + 0j
    a = 1.0 / tau_rms_norm + 2j * np.pi * delta_l / fft_size
    num = 1.0 - np.exp(-cp_len * a)
    den = tau_rms_norm * (1.0 - np.exp(-cp_len / tau_rms_norm)) * a
    return complex(num / den)


def frequency_response(delays, gains, k, fft_size: int):
    """h_k = sum_i gains[i] * exp(-2j*pi*k*delays[i]/N); ``k`` may be an array."""
    delays = np.asarray(delays)
    gains = np.asarray(gains, dtype=np.complex128)
    if delays.shape != gains.shape:
        raise ValueError(
            f"delays and gains must have the same length ({delays.shape} vs {gains.shape})"
        )
    k = np.asarray(k)
    phase = np.exp(-2j * np.pi * np.multiply.outer(k, delays) / fft_size)
    out = phase @ gains
    return out if out.ndim else complex(out)


def sample_realization(
    rng: np.random.Generator,
    pdp: PowerDelayProfile,
    indices: Sequence[int],
    fft_size: int,
    delays: Sequence[int] | None = None,
) -> ChannelRealization:
    """Draw one channel; ``delays`` pins the path delays instead of sampling them.

    With random delays the profile is scaled by its mean over the delay
    distribution, so E|h_k|^2 = 1 on average over delays and gains. Pinned
    delays are scaled by their own profile sum, so E|h_k|^2 = 1 over the gains.
    """
    if delays is None:
        d = rng.integers(0, pdp.cp_len + 1, size=pdp.num_paths)
        var = np.exp(-d / pdp.tau_rms_norm) / (d.size * pdp.mean_profile_power())
    else:
        d = np.asarray(delays, dtype=np.int64)
        if d.size == 0 or d.min() < 0:
            raise ValueError("pinned delays must be non-empty and non-negative")
        prof = np.exp(-d / pdp.tau_rms_norm)
        var = prof / prof.sum()
    g = (rng.standard_normal(d.size) + 1j * rng.standard_normal(d.size)) * np.sqrt(var / 2)
    if pdp.normalization == "per_realization":
        g = g / np.sqrt(np.sum(np.abs(g) ** 2))
    return ChannelRealization.from_taps(d, g, indices, fft_size)


def allocate_equispaced(
    fft_size: int, delta_l: int, slots: int = 1, slot_interval: float = 0.0, first: int = 0
) -> SubchannelPlan:
    if delta_l <= 0:
        raise ValueError(f"delta_l must be positive, got {delta_l}")
    if delta_l > fft_size:
        raise ValueError("delta_l must not exceed fft_size")
    if not 0 <= first < fft_size:
        raise ValueError("first index out of range")
    idx = np.arange(first, fft_size, delta_l)
    return SubchannelPlan(idx, delta_l, slots, slot_interval)


def min_plan_correlation(pdp: PowerDelayProfile, plan: SubchannelPlan, fft_size: int) -> float:
    """Largest |rho| between any two allocated subcarriers (adjacent ones for equispaced)."""
    if plan.per_slot_count < 2:
        return 0.0
    return abs(subcarrier_correlation(pdp.tau_rms_norm, pdp.cp_len, fft_size, plan.spacing))


def doppler_frequency(carrier_hz: float, speed_mps: float) -> float:
    return speed_mps * carrier_hz / SPEED_OF_LIGHT


def coherence_time(carrier_hz: float, speed_mps: float) -> float:
    """Clarke-model coherence time sqrt(9/(16 pi)) / f_D; ``math.inf`` for a static link."""
    if carrier_hz <= 0 or speed_mps < 0:
        raise ValueError("carrier must be positive and speed non-negative")
    if speed_mps == 0:
        return math.inf
    return math.sqrt(9.0 / (16.0 * math.pi)) / doppler_frequency(carrier_hz, speed_mps)


def kmh(speed_kmh: float) -> float:
    return speed_kmh / 3.6


def warn_if_isi(realization: ChannelRealization, cp_len: int) -> None:
    if realization.max_delay > cp_len:
        warnings.warn(
            f"path delay {realization.max_delay} exceeds cyclic prefix {cp_len}; ISI regime",
            RuntimeWarning,
            stacklevel=3,
        )
