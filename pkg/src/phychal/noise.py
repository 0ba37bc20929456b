"""Tikhonov (von Mises) artificial phase noise and angle helpers.

``beta = math.inf`` is accepted everywhere and means "no noise": samples are
exactly zero and the density degenerates to a point mass.
"""

from __future__ import annotations

import math

import numpy as np

from .stats import log_bessel_i


def _check_beta(beta: float) -> None:
    if not beta >= 0:
        raise ValueError(f"concentration beta must be >= 0, got {beta}")


def wrap_angle(x):
    """Wrap radians into (-pi, pi]; odd multiples of pi map to +pi."""
    x = np.asarray(x, dtype=float)
    w = np.pi - np.mod(np.pi - x, 2 * np.pi)
    w = np.where(w <= -np.pi, np.pi, w)
    return w if w.ndim else float(w)


def tikhonov_pdf(x, beta: float):
    """Density exp(beta*cos x) / (2*pi*I0(beta)) on (-pi, pi]."""
    _check_beta(beta)
    if math.isinf(beta):
        raise ValueError("density is a point mass for beta = inf")
    x = np.asarray(x, dtype=float)
    # exp(beta*(cos x - 1)) / I0e(beta) keeps large beta finite
    out = np.exp(beta * (np.cos(x) - 1.0) - (log_bessel_i(0, beta) - beta)) / (2 * np.pi)
    return out if out.ndim else float(out)


def tikhonov_sample(rng: np.random.Generator, beta: float, size=None):
    """Draw Tikhonov(beta) phases in (-pi, pi].

    Rejection sampling with the wrapped-Cauchy envelope (Best & Fisher);
    a wrapped normal stands in beyond beta = 1e6 where the envelope
    constants lose precision.
    """
    _check_beta(beta)
    shape = () if size is None else size
    n = int(np.prod(shape)) if shape != () else 1
    if math.isinf(beta):
        out = np.zeros(n)
    elif beta == 0:
        out = rng.uniform(-np.pi, np.pi, n)
    elif beta > 1e6:
        out = rng.standard_normal(n) / math.sqrt(beta)
    else:
        out = _best_fisher(rng, beta, n)
    out = wrap_angle(out)
    return float(out[0]) if size is None else np.reshape(out, shape)


def _best_fisher(rng: np.random.Generator, beta: float, n: int) -> np.ndarray:
    if beta < 1e-5:
        s = 1.0 / beta + beta
    else:
        r = 1.0 + math.sqrt(1.0 + 4.0 * beta * beta)
        rho = (r - math.sqrt(2.0 * r)) / (2.0 * beta)
        s = (1.0 + rho * rho) / (2.0 * rho)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(16, int(1.3 * (n - filled)))
        z = np.cos(np.pi * rng.random(m))
        w = (1.0 + s * z) / (s + z)
        y = beta * (s - w)
        v = rng.random(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (y * (2.0 - y) - v >= 0) | (np.log(y / v) + 1.0 - y >= 0)
        acc = np.arccos(np.clip(w[ok], -1.0, 1.0))
        sign = np.where(rng.random(acc.size) < 0.5, -1.0, 1.0)
        take = min(acc.size, n - filled)
        out[filled : filled + take] = (sign * acc)[:take]
        filled += take
    return out


def circular_mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.angle(np.mean(np.exp(1j * x))))


def mean_resultant_length(beta: float) -> float:
    """E[cos v] = I1(beta)/I0(beta) for Tikhonov noise."""
    _check_beta(beta)
    if math.isinf(beta):
        return 1.0
    if beta == 0:
        return 0.0
    return math.exp(log_bessel_i(1, beta) - log_bessel_i(0, beta))
