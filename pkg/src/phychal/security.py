"""Key-equivocation metrics for a noise-free eavesdropper on a static channel.

Eve sees phi_k = 2*pi*kappa_k/M + v_k + rot with v_k Tikhonov(beta) and an
unknown rotation ``rot`` uniform on the circle. The per-symbol coherent mutual
information (rotation known) upper-bounds what leaks to the eavesdropper, which
lower-bounds the remaining equivocation about the key.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .noise import tikhonov_pdf, tikhonov_sample, wrap_angle
from .stats import log_bessel_i

QUAD_TOL = 1e-9


class QuadratureError(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"quadrature did not converge (error estimate {residual:.3g})")
        self.residual = residual


@dataclass(frozen=True)
class EquivocationResult:
    coherent_mi: float
    bound: float
    beta: float
    modulation_order: int
    quad_error: float


def _check_order(m: int) -> None:
    if m < 2 or m & (m - 1):
        raise ValueError(f"modulation order must be a power of two >= 2, got {m}")


def _log2_ratio(v, beta: float, m: int):
    """log2( sum_j f(v - 2 pi j/M) / f(v) ), evaluated as a log-sum-exp."""
    shifts = 2 * np.pi * np.arange(m) / m
    e = beta * (np.cos(np.subtract.outer(v, shifts)) - np.cos(v)[..., None])
    top = e.max(axis=-1)
    return (top + np.log(np.exp(e - top[..., None]).sum(axis=-1))) / math.log(2)


def equivocation_bound(beta: float, m: int = 2) -> EquivocationResult:
    """Per-symbol equivocation lower bound and coherent mutual information, in bits.

    PSK and Tikhonov symmetry make the expectation over the transmitted symbol
    trivial, leaving a single adaptive Gauss-Kronrod integral over the noise.
    """
    _check_order(m)
    if not beta >= 0:
        raise ValueError("beta must be >= 0")
    log2m = math.log2(m)
    if beta == 0:
        return EquivocationResult(0.0, log2m, beta, m, 0.0)
    if math.isinf(beta):
        return EquivocationResult(log2m, 0.0, beta, m, 0.0)

    def integrand(v):
        return float(tikhonov_pdf(v, beta) * _log2_ratio(np.array(v), beta, m))

    # the density concentrates near 0 for large beta; split there
    val, err = integrate.quad(
        integrand, -np.pi, np.pi, points=[0.0], epsabs=QUAD_TOL, epsrel=1e-12, limit=400
    )
    if err > 100 * QUAD_TOL:
        raise QuadratureError(err)
    bound = min(max(val, 0.0), log2m)
    return EquivocationResult(log2m - bound, bound, beta, m, err)


def eve_clean_observation(key, beta: float, rng: np.random.Generator, rotation: float = 0.0, m: int = 2):
    """Phases Eve extracts from a noise-free copy of the response."""
    key = np.asarray(key)
    if not -np.pi < rotation <= np.pi:
        raise ValueError("rotation must lie in (-pi, pi]")
    v = tikhonov_sample(rng, beta, key.shape)
    return wrap_angle(2 * np.pi * key / m + v + rotation)


def log_marginal_likelihood(phi, key_phases, beta: float):
    """log p(phi | key) with the rotation integrated out over a uniform prior.

    The rotation integral of prod_k f(phi_k - key_k - r) is a von Mises
    normalizer, giving I0(beta*R) / (2*pi*I0(beta))^L with
    R = |sum_k exp(j(phi_k - key_k))|.
    """
    phi = np.asarray(phi, dtype=float)
    r = np.abs(np.exp(1j * (phi - key_phases)).sum(axis=-1))
    n = phi.shape[-1]
    return log_bessel_i(0, beta * r) - n * (math.log(2 * math.pi) + log_bessel_i(0, beta))


@dataclass(frozen=True)
class MIEstimate:
    bits: float
    stderr: float
    samples: int


def mi_noncoherent_estimate(
    beta: float, m: int, length: int, samples: int, rng: np.random.Generator
) -> MIEstimate:
    """Monte Carlo estimate of I(phases; key) for ``length`` symbols, rotation unknown.

    The mixture over all M^length keys is summed exhaustively, so ``length``
    must stay small.
    """
    _check_order(m)
    if length < 1 or length > 8:
        raise ValueError("length must be between 1 and 8")
    if math.isinf(beta):
        raise ValueError("beta must be finite for the mixture likelihood")
    keys = rng.integers(0, m, size=(samples, length))
    rot = rng.uniform(-np.pi, np.pi, size=(samples, 1))
    v = tikhonov_sample(rng, beta, (samples, length))
    phi = wrap_angle(2 * np.pi * keys / m + v + rot)

    # shifting every key symbol by the same constellation step leaves R
    # unchanged, so enumerate keys with a zero first symbol and weight by M
    tails = np.array(list(itertools.product(range(m), repeat=length - 1)), dtype=float)
    table = np.hstack([np.zeros((tails.shape[0], 1)), tails]).reshape(-1, length)
    table_phases = 2 * np.pi * table / m

    log_cond = log_marginal_likelihood(phi, 2 * np.pi * keys / m, beta)
    mix = np.empty(samples)
    for start in range(0, samples, 512):
        block = phi[start : start + 512, None, :]
        ll = log_marginal_likelihood(block, table_phases[None, :, :], beta)
        top = ll.max(axis=1)
        mix[start : start + 512] = top + np.log(np.exp(ll - top[:, None]).sum(axis=1))
    # log p(phi) = log( M * sum_table p / M^L )
    log_marg = mix + math.log(m) - length * math.log(m)
    terms = (log_cond - log_marg) / math.log(2)
    return MIEstimate(float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(samples)), samples)
