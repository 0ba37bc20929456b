"""Detection numerics: Bessel I, noncentral chi-square, Marcum Q, empirical ROC.

The noncentral chi-square here counts ``J`` complex dimensions and uses a
per-dimension scale ``sigma2``: with ``u = x/sigma2`` and ``c = lam/sigma2``
the density of ``u`` is ``(u/c)^((J-1)/2) exp(-(u+c)) I_{J-1}(2 sqrt(u c))``,
so ``E[x] = J*sigma2 + lam`` and ``Var[x] = J*sigma2**2 + 2*sigma2*lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class DegenerateFitError(ValueError):
    """Moment fit produced a non-positive scale; carries the raw estimates."""

    def __init__(self, lam: float, sigma2: float):
        super().__init__(f"degenerate noncentral chi-square fit: lam={lam}, sigma2={sigma2}")
        self.lam = lam
        self.sigma2 = sigma2


def bessel_i(order: int, x):
    """Modified Bessel function of the first kind, integer order."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("bessel_i is defined here for x >= 0 only")
    out = special.iv(order, x)
    return out if out.ndim else float(out)


def log_bessel_i(order: int, x):
    """log I_order(x), finite for large x (uses the exponentially scaled form)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("log_bessel_i is defined here for x >= 0 only")
    with np.errstate(divide="ignore"):
        out = np.log(special.ive(order, x)) + x
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ChiSqFit:
    lam: float
    sigma2: float
    dof_pairs: int = 1
    clamped: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.sigma2)):
            raise ValueError(f"non-finite fit ({self.lam}, {self.sigma2})")
        if self.lam < 0 or self.sigma2 <= 0:
            raise ValueError(f"invalid fit: lam={self.lam}, sigma2={self.sigma2}")
        if self.dof_pairs < 1:
            raise ValueError("dof_pairs must be >= 1")

    @property
    def mean(self) -> float:
        return self.dof_pairs * self.sigma2 + self.lam

    @property
    def variance(self) -> float:
        return self.dof_pairs * self.sigma2**2 + 2 * self.sigma2 * self.lam


def fit_noncentral_chisq(mean: float, second_moment: float, dof_pairs: int = 1) -> ChiSqFit:
    """Method-of-moments fit.

    For one complex dimension this is lam = sqrt(2 m^2 - E[x^2]) and
    sigma2 = m - lam; for J dimensions lam = sqrt((J+1) m^2 - J E[x^2]) and
    sigma2 = (m - lam)/J. A negative radicand (sampling noise) clamps lam to 0.
    """
    j = dof_pairs
    rad = (j + 1) * mean * mean - j * second_moment
    clamped = rad < 0
    lam = 0.0 if clamped else math.sqrt(rad)
    sigma2 = (mean - lam) / j
    if not sigma2 > 0 or not math.isfinite(sigma2):
        raise DegenerateFitError(lam, sigma2)
    return ChiSqFit(lam, sigma2, j, clamped)


def fit_from_samples(samples, dof_pairs: int = 1) -> ChiSqFit:
    x = np.asarray(samples, dtype=float)
    return fit_noncentral_chisq(float(x.mean()), float(np.mean(x * x)), dof_pairs)


def noncentral_chisq_pdf(x, fit: ChiSqFit):
    x = np.asarray(x, dtype=float)
    j, s2 = fit.dof_pairs, fit.sigma2
    u = np.maximum(x, 0.0) / s2
    c = fit.lam / s2
    with np.errstate(divide="ignore", invalid="ignore"):
        if c == 0:
            logf = -u - special.gammaln(j)
            if j > 1:
                logf = logf + (j - 1) * np.log(u)
        else:
            logf = -(u + c) + log_bessel_i(j - 1, 2.0 * np.sqrt(u * c))
            if j > 1:
                logf = logf + 0.5 * (j - 1) * (np.log(u) - math.log(c))
    out = np.where(x < 0, 0.0, np.exp(logf) / s2)
    out = np.nan_to_num(out, nan=0.0)
    return out if out.ndim else float(out)


def marcum_q(j: int, a: float, b):
    """Generalized Marcum Q in the unit-scale form Q_J(a, b) = P(X > b).

    X is a Poisson(a) mixture of Gamma(J + k, 1) variables, so
    Q_J(a, b) = sum_k e^{-a} a^k / k! * Gamma_upper_reg(J + k, b). The sum runs
    over a window around the Poisson mode wide enough that the dropped mass is
    below double precision.
    """
    if j < 1:
        raise ValueError("J must be >= 1")
    if a < 0:
        raise ValueError("a must be >= 0")
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("b must be >= 0")
    if a == 0:
        upper = special.gammaincc(j, b)
        lower = special.gammainc(j, b)
    else:
        spread = 12.0 * math.sqrt(a) + 40.0
        k = np.arange(max(0, int(a - spread)), int(a + spread) + 1)
        w = np.exp(k * math.log(a) - a - special.gammaln(k + 1))[:, None]
        bb = b.reshape(1, -1)
        upper = (w * special.gammaincc(j + k[:, None], bb)).sum(axis=0).reshape(b.shape)
        lower = (w * special.gammainc(j + k[:, None], bb)).sum(axis=0).reshape(b.shape)
    # sum whichever tail is small, so values near 1 keep full precision
    out = np.where(upper > 0.5, 1.0 - lower, upper)
    out = np.clip(np.where(b == 0, 1.0, out), 0.0, 1.0)
    return out if out.ndim else float(out)


def noncentral_chisq_sf(x, fit: ChiSqFit):
    x = np.asarray(x, dtype=float)
    return marcum_q(fit.dof_pairs, fit.lam / fit.sigma2, np.maximum(x, 0.0) / fit.sigma2)


def noncentral_chisq_cdf(x, fit: ChiSqFit):
    return 1.0 - noncentral_chisq_sf(x, fit)


def sample_noncentral_chisq(rng: np.random.Generator, fit: ChiSqFit, size: int) -> np.ndarray:
    """Draw sigma2 * sum_m |Z_m + mu_m|^2 with sum |mu_m|^2 = lam/sigma2."""
    j = fit.dof_pairs
    z = (rng.standard_normal((size, j)) + 1j * rng.standard_normal((size, j))) / math.sqrt(2)
    z[:, 0] += math.sqrt(fit.lam / fit.sigma2)
    return fit.sigma2 * np.sum(np.abs(z) ** 2, axis=1)


@dataclass(frozen=True)
class Roc:
    pf: np.ndarray
    pd: np.ndarray
    thresholds: np.ndarray

    def pd_at(self, max_pf: float) -> float:
        """Best detection rate among operating points with P_f <= max_pf."""
        ok = self.pf <= max_pf + 1e-15
        return float(self.pd[ok].max()) if np.any(ok) else 0.0

    def pd_interp(self, pf_grid) -> np.ndarray:
        return np.array([self.pd_at(p) for p in np.atleast_1d(pf_grid)])


def empirical_roc(zeta_h1, zeta_h0) -> Roc:
    """ROC of the rule ``zeta >= threshold`` swept over the pooled samples.

    Points run from (0, 0) at an infinite threshold to (1, 1).
    """
    h1 = np.sort(np.asarray(zeta_h1, dtype=float))
    h0 = np.sort(np.asarray(zeta_h0, dtype=float))
    if h1.size == 0 or h0.size == 0:
        raise ValueError("both sample sets must be non-empty")
    thr = np.unique(np.concatenate([h1, h0]))[::-1]
    pd = 1.0 - np.searchsorted(h1, thr, side="left") / h1.size
    pf = 1.0 - np.searchsorted(h0, thr, side="left") / h0.size
    return Roc(
        np.concatenate([[0.0], pf]),
        np.concatenate([[0.0], pd]),
        np.concatenate([[np.inf], thr]),
    )


def empirical_threshold(zeta_h0, target_pf: float) -> float:
    """Smallest sample threshold whose empirical false-alarm rate is <= target_pf."""
    h0 = np.sort(np.asarray(zeta_h0, dtype=float))
    allowed = int(math.floor(target_pf * h0.size))
    if allowed >= h0.size:
        return float(h0[0])
    # strictly above the (allowed+1)-th largest value
    return float(np.nextafter(h0[h0.size - allowed - 1], np.inf))
