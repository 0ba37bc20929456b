"""Discrete-time OFDM modem with cyclic prefix and receiver impairments.

Both transforms are unitary: an active subcarrier carrying a unit-modulus
symbol contributes unit energy to the symbol body, and white time-domain noise
of variance ``s2`` shows up with variance ``s2`` on every demodulated bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .channel import ChannelRealization, SubchannelPlan, warn_if_isi


@dataclass(frozen=True)
class OfdmConfig:
    fft_size: int = 2048
    cp_len: int = 128
    bandwidth_hz: float = 20e6

    def __post_init__(self):
        n = self.fft_size
        if n < 2 or n & (n - 1):
            raise ValueError(f"fft_size must be a power of two, got {n}")
        if not 0 <= self.cp_len < n:
            raise ValueError(f"cp_len must lie in [0, fft_size), got {self.cp_len}")
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be positive")

    @property
    def sample_period(self) -> float:
        return 1.0 / self.bandwidth_hz

    @property
    def useful_duration(self) -> float:
        return self.fft_size / self.bandwidth_hz

    @property
    def guard_duration(self) -> float:
        return self.cp_len / self.bandwidth_hz

    @property
    def symbol_duration(self) -> float:
        return self.useful_duration + self.guard_duration

    @property
    def symbol_len(self) -> int:
        return self.fft_size + self.cp_len


@dataclass(frozen=True)
class ImpairmentConfig:
    """Receiver-side impairments for one reception.

    cfo_norm is the carrier offset in subcarrier spacings, phase0 a constant
    phase, sample_offset the integer timing error (positive = window late),
    clock_offset_ppm the sampling clock error. oscillator_phase_per_slot holds
    the per-slot oscillator phase; the slot is selected at application time.
    """

    cfo_norm: float = 0.0
    phase0: float = 0.0
    sample_offset: int = 0
    clock_offset_ppm: float = 0.0
    oscillator_phase_per_slot: tuple[float, ...] = ()

    def __post_init__(self):
        if abs(self.cfo_norm) >= 0.5:
            raise ValueError(f"|cfo_norm| must be < 0.5, got {self.cfo_norm}")
        if abs(self.clock_offset_ppm) > 200:
            raise ValueError(f"|clock_offset_ppm| must be <= 200, got {self.clock_offset_ppm}")

    def validate(self, config: OfdmConfig) -> None:
        if abs(self.sample_offset) > config.cp_len:
            raise ValueError(
                f"|sample_offset| must not exceed cp_len={config.cp_len}, got {self.sample_offset}"
            )

    @property
    def is_ideal(self) -> bool:
        return (
            self.cfo_norm == 0
            and self.phase0 == 0
            and self.sample_offset == 0
            and self.clock_offset_ppm == 0
            and not any(self.oscillator_phase_per_slot)
        )


def _grid(config: OfdmConfig, symbols) -> np.ndarray:
    n = config.fft_size
    if isinstance(symbols, Mapping):
        grid = np.zeros(n, dtype=np.complex128)
        for k, x in symbols.items():
            if not 0 <= k < n:
                raise IndexError(f"subcarrier index {k} outside [0, {n - 1}]")
            grid[k] = x
        return grid
    grid = np.asarray(symbols, dtype=np.complex128)
    if grid.shape[-1] != n:
        raise ValueError(f"frequency grid must have {n} bins, got {grid.shape[-1]}")
    return grid


def place(config: OfdmConfig, indices: Sequence[int], values) -> np.ndarray:
    """Frequency grid with ``values`` on ``indices`` and zeros elsewhere."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= config.fft_size):
        raise IndexError("subcarrier index out of range")
    values = np.asarray(values, dtype=np.complex128)
    grid = np.zeros(values.shape[:-1] + (config.fft_size,), dtype=np.complex128)
    grid[..., idx] = values
    return grid


def modulate(config: OfdmConfig, symbols) -> np.ndarray:
    """OFDM symbol(s) with cyclic prefix, length N + N_g along the last axis.

    ``symbols`` is either a mapping ``{subcarrier: value}`` or a full
    frequency grid (leading axes are treated as independent symbols).
    """
    grid = _grid(config, symbols)
    body = np.fft.ifft(grid, axis=-1) * math.sqrt(config.fft_size)
    if config.cp_len == 0:
        return body
    return np.concatenate([body[..., -config.cp_len:], body], axis=-1)


def demodulate(
    samples: np.ndarray,
    config: OfdmConfig,
    plan: SubchannelPlan | Sequence[int] | None = None,
    start: int = 0,
) -> np.ndarray:
    """Drop the CP of the symbol beginning at ``start``, FFT, and pick the plan bins.

    Returns values ordered like the plan indices (all N bins when plan is None).
    """
    samples = np.asarray(samples)
    end = start + config.symbol_len
    if samples.shape[-1] < end:
        raise ValueError(
            f"need at least {end} samples to demodulate, got {samples.shape[-1]}"
        )
    body = samples[..., start + config.cp_len : end]
    y = np.fft.fft(body, axis=-1) / math.sqrt(config.fft_size)
    if plan is None:
        return y
    idx = plan.indices if isinstance(plan, SubchannelPlan) else np.asarray(plan)
    return y[..., idx]


def complex_noise(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(var / 2)


def apply_channel(
    samples: np.ndarray,
    realization: ChannelRealization,
    noise_var: float = 0.0,
    rng: np.random.Generator | None = None,
    cp_len: int | None = None,
) -> np.ndarray:
    """Linear convolution with the tap sequence plus complex AWGN.

    The output keeps the input length; energy spilling past the end of the
    stream is dropped, so callers pad the stream with the guard they need.
    """
    samples = np.asarray(samples, dtype=np.complex128)
    if cp_len is not None:
        warn_if_isi(realization, cp_len)
    out = np.zeros_like(samples)
    n = samples.shape[-1]
    for d, g in zip(realization.delays, realization.gains):
        if d < n:
            out[..., d:] += g * samples[..., : n - d]
    if noise_var > 0:
        if rng is None:
            raise ValueError("rng required when noise_var > 0")
        out += complex_noise(rng, out.shape, noise_var)
    return out


def cfo_attenuation(cfo_norm: float, fft_size: int) -> float:
    """Useful-signal amplitude factor sin(pi*v)/(N*sin(pi*v/N))."""
    if cfo_norm == 0:
        return 1.0
    return math.sin(math.pi * cfo_norm) / (fft_size * math.sin(math.pi * cfo_norm / fft_size))


def ici_power_cfo(cfo_norm: float) -> float:
    """Approximate ICI power (pi^2/3)*v^2 for unit-power subcarriers."""
    return math.pi**2 / 3.0 * cfo_norm**2


def timing_excess(delays: Sequence[int], sample_offset: int, cp_len: int) -> np.ndarray:
    """Per-path number of samples by which the FFT window leaves the path's symbol.

    Window late by more than the path delay, or early by more than the guard
    left in front of the path, both spill into a neighbouring symbol.
    """
    d = np.asarray(delays, dtype=np.int64)
    late = np.where(sample_offset > d, sample_offset - d, 0)
    early = np.where(sample_offset < d - cp_len, (d - cp_len) - sample_offset, 0)
    return late + early


def ici_isi_power_offset(
    realization: ChannelRealization, sample_offset: int, config: OfdmConfig
) -> float:
    """Gaussian-approximated ICI+ISI power caused by an integer timing offset."""
    excess = timing_excess(realization.delays, sample_offset, config.cp_len) / config.fft_size
    p = np.abs(realization.gains) ** 2
    return float(np.sum(p * (2 * excess - excess**2)))


def clock_offset_response(k, clock_offset_ppm: float, config: OfdmConfig) -> np.ndarray:
    """Per-subcarrier complex factor of a sampling clock offset.

    Subcarrier k sees a frequency shift of k*s bins (s = ppm*1e-6), giving the
    CFO-style attenuation plus the phase term 2*pi*k*(N_g*s + (N-1)*s/2)/N.
    """
    k = np.asarray(k, dtype=float)
    s = clock_offset_ppm * 1e-6
    v = k * s
    n = config.fft_size
    with np.errstate(invalid="ignore", divide="ignore"):
        att = np.where(v == 0, 1.0, np.sin(np.pi * v) / (n * np.sin(np.pi * v / n)))
    phase = 2 * np.pi * k * (config.cp_len * s + (n - 1) * s / 2) / n
    return att * np.exp(1j * phase)


def apply_impairments(
    samples: np.ndarray,
    imp: ImpairmentConfig,
    config: OfdmConfig,
    rng: np.random.Generator | None = None,
    symbol_start: int = 0,
    slot: int = 0,
) -> np.ndarray:
    """Apply clock offset, timing offset, CFO and constant phase to a sample stream.

    The clock offset uses the equivalent per-subcarrier model on the symbol
    that begins at ``symbol_start`` (Gaussian ICI of the matching power needs
    ``rng``). The timing offset then shifts the stream so that the receiver
    reads ``in[n + sample_offset]`` with zeros outside, and the CFO rotates
    sample n by ``2*pi*cfo_norm*n/N`` plus the constant phase.
    """
    imp.validate(config)
    out = np.array(samples, dtype=np.complex128)
    if imp.clock_offset_ppm:
        out = _apply_clock_offset(out, imp.clock_offset_ppm, config, rng, symbol_start)
    n_e = int(imp.sample_offset)
    if n_e:
        shifted = np.zeros_like(out)
        if n_e > 0:
            shifted[..., :-n_e] = out[..., n_e:]
        else:
            shifted[..., -n_e:] = out[..., :n_e]
        out = shifted
    phase = imp.phase0
    if imp.oscillator_phase_per_slot:
        phase += imp.oscillator_phase_per_slot[slot]
    if imp.cfo_norm:
        n = np.arange(out.shape[-1])
        out = out * np.exp(1j * (2 * np.pi * imp.cfo_norm * n / config.fft_size + phase))
    elif phase:
        out = out * np.exp(1j * phase)
    return out


def _apply_clock_offset(out, ppm, config, rng, symbol_start):
    if rng is None:
        raise ValueError("rng required to draw clock-offset ICI")
    n_f, n_g = config.symbol_len, config.cp_len
    block = out[..., symbol_start : symbol_start + n_f]
    if block.shape[-1] < n_f:
        raise ValueError("stream too short for the clock-offset symbol")
    grid = np.fft.fft(block[..., n_g:], axis=-1) / math.sqrt(config.fft_size)
    k = np.arange(config.fft_size)
    active = np.abs(grid) ** 2
    mean_power = active[active > 1e-12].mean() if np.any(active > 1e-12) else 0.0
    ici_var = math.pi**2 / 3.0 * (k * ppm * 1e-6) ** 2 * mean_power
    grid = grid * clock_offset_response(k, ppm, config)
    grid = grid + complex_noise(rng, grid.shape, 1.0) * np.sqrt(ici_var)
    out = out.copy()
    out[..., symbol_start : symbol_start + n_f] = modulate(config, grid)
    return out
