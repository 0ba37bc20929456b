"""Phase challenge-response authentication with artificial noise over OFDM.

One authentication runs over ``plan.slots`` time slots. In every slot the
verifier (Alice) sends an all-ones challenge on the allocated subcarriers, the
prover estimates the channel phases, and answers with the key phases minus the
estimates plus Tikhonov artificial noise. Alice correlates the received
symbols against the expected key.
"""

from __future__ import annotations

import hashlib
import hmac
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import ofdm
from .channel import (
    ChannelRealization,
    PowerDelayProfile,
    SubchannelPlan,
    allocate_equispaced,
    sample_realization,
)
from .noise import tikhonov_sample, wrap_angle
from .ofdm import ImpairmentConfig, OfdmConfig
from .stats import ChiSqFit, marcum_q

H0, H1 = 0, 1


# ---------------------------------------------------------------- keys


@dataclass(frozen=True)
class KeyMaterial:
    symbols: np.ndarray
    modulation_order: int = 2

    def __post_init__(self):
        m = self.modulation_order
        if m < 2 or m & (m - 1):
            raise ValueError(f"modulation order must be a power of two >= 2, got {m}")
        s = np.asarray(self.symbols, dtype=np.int64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("key must be a non-empty 1-D symbol vector")
        if s.min() < 0 or s.max() >= m:
            raise ValueError(f"key symbols must lie in [0, {m - 1}]")
        object.__setattr__(self, "symbols", s)

    @classmethod
    def random(cls, rng: np.random.Generator, length: int, m: int = 2) -> "KeyMaterial":
        return cls(rng.integers(0, m, size=length), m)

    def __len__(self) -> int:
        return self.symbols.size

    @property
    def phases(self) -> np.ndarray:
        return 2 * np.pi * self.symbols / self.modulation_order

    @property
    def unit_symbols(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def entropy_bits(self) -> float:
        return len(self) * math.log2(self.modulation_order)

    def sub_keys(self, slots: int) -> list["KeyMaterial"]:
        if len(self) % slots:
            raise ValueError(f"key length {len(self)} is not a multiple of {slots} slots")
        return [KeyMaterial(b, self.modulation_order) for b in np.split(self.symbols, slots)]


def _expand(secret: bytes, info: bytes, nbytes: int) -> bytes:
    out = b""
    counter = 1
    while len(out) < nbytes:
        out += hmac.new(secret, info + counter.to_bytes(4, "big"), hashlib.sha256).digest()
        counter += 1
    return out[:nbytes]


def _framed(*parts: bytes) -> bytes:
    return b"".join(len(p).to_bytes(4, "big") + p for p in parts)


def _bits_to_key(raw: bytes, length: int, m: int) -> KeyMaterial:
    bits_per = int(math.log2(m))
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: length * bits_per]
    weights = 1 << np.arange(bits_per - 1, -1, -1)
    return KeyMaterial(bits.reshape(length, bits_per) @ weights, m)


def derive_session_keys(
    master_key: bytes, rand: bytes, sqn: bytes, amf: bytes, length: int, m: int = 2
) -> tuple[KeyMaterial, KeyMaterial]:
    """Derive (K_A, K_B) from the long-term key.

    HMAC-SHA256 in counter mode stands in for the operator's f2 (from RAND) and
    f1 (from SQN || RAND || AMF) functions.
    """
    if not master_key:
        raise ValueError("master key must be non-empty")
    if m < 2 or m & (m - 1):
        raise ValueError("modulation order must be a power of two >= 2")
    nbytes = -(-length * int(math.log2(m)) // 8)
    k_a = _expand(master_key, b"f2" + _framed(rand), nbytes)
    k_b = _expand(master_key, b"f1" + _framed(sqn, rand, amf), nbytes)
    return _bits_to_key(k_a, length, m), _bits_to_key(k_b, length, m)


# ------------------------------------------------------- signal stages


@dataclass(frozen=True)
class ChallengeObservation:
    phases: np.ndarray
    slot: int = 0
    degenerate: np.ndarray | None = None


@dataclass(frozen=True)
class VerificationOutcome:
    statistic: float
    slot_terms: np.ndarray
    omega: float = 0.0
    threshold: float = math.nan

    @property
    def accepted(self) -> bool:
        return bool(self.statistic >= self.threshold)

    def with_threshold(self, threshold: float) -> "VerificationOutcome":
        return replace(self, threshold=threshold)


def make_challenge(config: OfdmConfig, plan: SubchannelPlan) -> np.ndarray:
    return ofdm.modulate(config, ofdm.place(config, plan.indices, np.ones(plan.per_slot_count)))


def estimate_phases(y, slot: int = 0) -> ChallengeObservation:
    """Per-subcarrier phase estimates; an exactly-zero bin reads as phase 0."""
    y = np.asarray(y, dtype=np.complex128)
    zero = y == 0
    return ChallengeObservation(wrap_angle(np.angle(y)), slot, zero if zero.any() else None)


def response_symbols(
    key_block: KeyMaterial, observation: ChallengeObservation, beta: float, rng: np.random.Generator
) -> np.ndarray:
    if len(key_block) != observation.phases.size:
        raise ValueError("observation does not cover the key block")
    v = tikhonov_sample(rng, beta, observation.phases.shape)
    return np.exp(1j * (key_block.phases - observation.phases + v))


def make_response(
    key_block: KeyMaterial,
    observation: ChallengeObservation,
    beta: float,
    rng: np.random.Generator,
    config: OfdmConfig,
    plan: SubchannelPlan,
) -> np.ndarray:
    x = response_symbols(key_block, observation, beta, rng)
    return ofdm.modulate(config, ofdm.place(config, plan.indices, x))


# -------------------------------------------------------- verification


def _blocks(y_slots, keys) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(keys, KeyMaterial):
        keys = [keys]
    y = np.atleast_2d(np.asarray(y_slots, dtype=np.complex128))
    if len(keys) != y.shape[0]:
        raise ValueError(f"{y.shape[0]} slots of observations but {len(keys)} sub-keys")
    k = np.array([key.unit_symbols for key in keys])
    if k.shape != y.shape:
        raise ValueError(f"observation shape {y.shape} does not match key blocks {k.shape}")
    return y, k


def verify_statistic(y, key: KeyMaterial) -> float:
    """|sum_k conj(key_k) y_k|^2 for a single slot."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != (len(key),):
        raise ValueError(f"expected {len(key)} observations, got {y.shape}")
    return float(abs(np.vdot(key.unit_symbols, y)) ** 2)


def verify_time_separated(y_slots, sub_keys: Sequence[KeyMaterial]) -> float:
    """Noncoherent combination sum_m |K_m^H y_m|^2 over slots."""
    y, k = _blocks(y_slots, sub_keys)
    return float(np.sum(np.abs(np.sum(np.conj(k) * y, axis=1)) ** 2))


def frequency_grid(omega_max: float, n_w: int) -> np.ndarray:
    """N_w candidate per-subcarrier phase increments, symmetric and containing 0.

    A range wider than one period is folded to [-pi, pi).
    """
    if n_w < 1:
        raise ValueError("grid size must be >= 1")
    if omega_max < 0:
        raise ValueError("omega_max must be >= 0")
    half = min(omega_max, math.pi)
    step = 2 * half / n_w
    return step * (np.arange(n_w) - n_w // 2)


def verify_freq_search(
    y_slots, sub_keys: Sequence[KeyMaterial], omega_max: float, n_w: int
) -> VerificationOutcome:
    """Maximise the noncoherent metric over a common linear phase ramp."""
    y, k = _blocks(y_slots, sub_keys)
    grid = frequency_grid(omega_max, n_w)
    z = np.conj(k) * y
    ramp = np.exp(-1j * np.outer(np.arange(y.shape[1]), grid))
    eta = z @ ramp
    total = np.sum(np.abs(eta) ** 2, axis=0)
    best = int(np.argmax(total))
    return VerificationOutcome(float(total[best]), eta[:, best], float(grid[best]))


def _as_fit(fit) -> ChiSqFit:
    if isinstance(fit, ChiSqFit):
        return fit
    lam, sigma2 = fit[:2]
    dof = fit[2] if len(fit) > 2 else 1
    if not (math.isfinite(lam) and math.isfinite(sigma2)):
        raise ValueError(f"non-finite fit ({lam}, {sigma2})")
    return ChiSqFit(float(lam), float(sigma2), int(dof))


def choose_threshold(h0_fit, target_pf: float, dof_pairs: int | None = None, rtol: float = 1e-12) -> float:
    """Smallest threshold whose fitted false-alarm probability is <= target_pf."""
    fit = _as_fit(h0_fit)
    j = dof_pairs or fit.dof_pairs
    if not 0 < target_pf <= 1:
        raise ValueError("target_pf must lie in (0, 1]")
    if target_pf == 1:
        return 0.0
    a = fit.lam / fit.sigma2
    lo, hi = 0.0, max(1.0, a + j)
    while marcum_q(j, a, hi) > target_pf:
        lo, hi = hi, 2 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if marcum_q(j, a, mid) <= target_pf:
            hi = mid
        else:
            lo = mid
    return hi * fit.sigma2


def detection_probability(h1_fit, threshold: float, dof_pairs: int | None = None) -> float:
    fit = _as_fit(h1_fit)
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    j = dof_pairs or fit.dof_pairs
    if math.isinf(threshold):
        return 0.0
    return float(marcum_q(j, fit.lam / fit.sigma2, threshold / fit.sigma2))


# ------------------------------------------------------------ scenario


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one Monte Carlo point needs.

    ``beta = inf`` disables the artificial noise. ``search_points = 0`` selects
    the plain noncoherent metric, otherwise the ramp search with that many
    grid points over ``omega_max``; ``search_range`` pins that range instead of
    deriving it from ``sample_offset_max`` (useful for an offset-free baseline
    verified exactly like the impaired case).
    """

    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    plan: SubchannelPlan = field(default_factory=lambda: allocate_equispaced(2048, 32))
    pdp: PowerDelayProfile = field(
        default_factory=lambda: PowerDelayProfile(normalization="per_realization")
    )
    snr: float = 10.0
    beta: float = 1.5
    modulation_order: int = 2
    cfo_max: float = 0.0
    sample_offset_max: int = 0
    clock_offset_ppm_max: float = 0.0
    search_points: int = 0
    search_range: float | None = None
    trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.cfo_max < 0.5:
            raise ValueError("cfo_max must lie in [0, 0.5)")
        if not 0 <= self.sample_offset_max <= self.ofdm.cp_len:
            raise ValueError("sample_offset_max must lie in [0, cp_len]")
        if self.search_points < 0:
            raise ValueError("search_points must be >= 0")
        if self.search_range is not None and not self.search_range >= 0:
            raise ValueError("search_range must be >= 0")
        if self.plan.indices.max() >= self.ofdm.fft_size:
            raise ValueError("plan does not fit the FFT size")

    @classmethod
    def scenario_1(cls, **overrides) -> "ScenarioConfig":
        return cls(**overrides)

    @property
    def snr_db(self) -> float:
        return 10 * math.log10(self.snr)

    @property
    def key_length(self) -> int:
        return self.plan.total_count

    @property
    def omega_max(self) -> float:
        """Largest residual ramp from the two receivers' timing offsets."""
        if self.search_range is not None:
            return self.search_range
        return 2 * math.pi * 2 * self.sample_offset_max * self.plan.spacing / self.ofdm.fft_size

    @property
    def has_impairments(self) -> bool:
        return bool(self.cfo_max or self.sample_offset_max or self.clock_offset_ppm_max)


def snr_from_db(db: float) -> float:
    return 10 ** (db / 10)


@dataclass(frozen=True)
class TrialData:
    y: np.ndarray
    key: KeyMaterial
    sub_keys: list
    channels: tuple = ()


def _draw_receiver(rng: np.random.Generator, sc: ScenarioConfig) -> ImpairmentConfig:
    j = sc.plan.slots
    slot_phase = tuple(rng.uniform(-np.pi, np.pi, j))
    if not sc.has_impairments:
        return ImpairmentConfig(oscillator_phase_per_slot=slot_phase)
    return ImpairmentConfig(
        cfo_norm=rng.uniform(-sc.cfo_max, sc.cfo_max) if sc.cfo_max else 0.0,
        phase0=0.0,
        sample_offset=int(rng.integers(-sc.sample_offset_max, sc.sample_offset_max + 1)),
        clock_offset_ppm=(
            rng.uniform(-sc.clock_offset_ppm_max, sc.clock_offset_ppm_max)
            if sc.clock_offset_ppm_max
            else 0.0
        ),
        oscillator_phase_per_slot=slot_phase,
    )


def _receive(
    symbol: np.ndarray,
    h: ChannelRealization,
    imp: ImpairmentConfig,
    sc: ScenarioConfig,
    rng: np.random.Generator,
    slot: int,
) -> np.ndarray:
    cfg = sc.ofdm
    pad = cfg.cp_len
    stream = np.concatenate([np.zeros(pad, complex), symbol, np.zeros(pad, complex)])
    r = ofdm.apply_channel(stream, h, 1.0 / sc.snr, rng)
    r = ofdm.apply_impairments(r, imp, cfg, rng, symbol_start=pad, slot=slot)
    return ofdm.demodulate(r, cfg, sc.plan, start=pad)


def simulate_trial(sc: ScenarioConfig, hypothesis: int, rng: np.random.Generator) -> TrialData:
    """Run challenge and response over every slot; return Alice's observations.

    Under H1 the prover is Bob with the shared key on the Alice-Bob channel.
    Under H0 an impersonator runs the same procedure with a fresh uniform key
    on an independent channel of their own.
    """
    if hypothesis not in (H0, H1):
        raise ValueError("hypothesis must be H0 or H1")
    cfg, plan = sc.ofdm, sc.plan
    key = KeyMaterial.random(rng, sc.key_length, sc.modulation_order)
    sent = key if hypothesis == H1 else KeyMaterial.random(rng, sc.key_length, sc.modulation_order)
    sent_blocks = sent.sub_keys(plan.slots)
    prover_rx = _draw_receiver(rng, sc)
    alice_rx = _draw_receiver(rng, sc)
    challenge = make_challenge(cfg, plan)
    y = np.empty((plan.slots, plan.per_slot_count), dtype=np.complex128)
    channels = []
    for m in range(plan.slots):
        # under H0 this is the impersonator's own channel: a fresh, independent draw
        h = sample_realization(rng, sc.pdp, plan.indices, cfg.fft_size)
        channels.append(h)
        obs = estimate_phases(_receive(challenge, h, prover_rx, sc, rng, m), slot=m)
        response = make_response(sent_blocks[m], obs, sc.beta, rng, cfg, plan)
        y[m] = _receive(response, h, alice_rx, sc, rng, m)
    return TrialData(y, key, key.sub_keys(plan.slots), tuple(channels))


def verify(sc: ScenarioConfig, data: TrialData, search_points: int | None = None) -> float:
    n_w = sc.search_points if search_points is None else search_points
    if n_w:
        return verify_freq_search(data.y, data.sub_keys, sc.omega_max, n_w).statistic
    return verify_time_separated(data.y, data.sub_keys)


def run_protocol_trial(sc: ScenarioConfig, hypothesis: int, rng: np.random.Generator) -> float:
    return verify(sc, simulate_trial(sc, hypothesis, rng))
