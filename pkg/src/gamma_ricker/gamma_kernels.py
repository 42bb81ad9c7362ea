"""Gamma-distribution identities used by the moment closure.

For X ~ Gamma(k, theta) with k = mu**2 / s and theta = s / mu::

    E[X   exp(-tau X)] = mu          / (1 + tau theta)**(k + 1)
    E[X^2 exp(-tau X)] = (mu**2 + s) / (1 + tau theta)**(k + 2)

Powers are evaluated as exp((k + n) * log1p(tau theta)) so that the
small-variance regime (k very large) neither overflows nor loses precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .errors import DomainError, UnsupportedOrder, require_positive


@dataclass(frozen=True)
class GammaShape:
    k: float
    theta: float

    def __post_init__(self):
        require_positive("k", self.k)
        require_positive("theta", self.theta)

    @property
    def mean(self):
        return self.k * self.theta

    @property
    def variance(self):
        return self.k * self.theta * self.theta


def gamma_from_moments(mu, s):
    """Shape/scale pair matching mean ``mu`` and variance ``s``."""
    require_positive("mu", mu)
    require_positive("s", s)
    return GammaShape(k=mu * mu / s, theta=s / mu)


def laplace_moment(mu, s, tau, n):
    """E[X**n exp(-tau X)] for n in {1, 2} under the Gamma(mu, s) ansatz."""
    require_positive("mu", mu)
    require_positive("s", s)
    if not tau >= 0:
        raise DomainError("tau", tau, ">= 0")
    if n not in (1, 2):
        raise UnsupportedOrder(f"laplace_moment supports n in {{1, 2}}, got n={n!r}")
    k = mu * mu / s
    theta = s / mu
    log_denom = (k + n) * math.log1p(tau * theta)
    numer = mu if n == 1 else mu * mu + s
    return numer * math.exp(-log_denom)


def gamma_logpdf(x, shape: GammaShape):
    x = np.asarray(x, dtype=float)
    k, theta = shape.k, shape.theta
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (k - 1.0) * np.log(x) - x / theta - math.lgamma(k) - k * math.log(theta)
    if k == 1.0:
        out = np.where(x == 0, -math.log(theta), out)
    return out


def gamma_pdf(x, shape: GammaShape):
    """Gamma density, evaluated in log space. Accepts scalars or arrays (x >= 0)."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise DomainError("x", x, ">= 0")
    out = np.exp(gamma_logpdf(xa, shape))
    return float(out) if out.ndim == 0 else out


def gamma_cdf(x, shape: GammaShape):
    """P(X <= x); the exact per-bin integral of :func:`gamma_pdf`."""
    xa = np.clip(np.asarray(x, dtype=float), 0.0, None)
    out = gammainc(shape.k, xa / shape.theta)
    return float(out) if out.ndim == 0 else out
