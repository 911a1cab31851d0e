"""Normal, unit-variance Student-t and skewed-t distributions.

All three are standardized to zero mean and unit variance.  Besides density,
CDF and quantile, each provides the closed-form Expected Shortfall
``ES(alpha) = (1/alpha) * int_0^alpha F^{-1}(u) du`` of its left tail.

Functions accept scalars or arrays and broadcast like numpy ufuncs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from qbsdrisk.errors import DomainError

__all__ = [
    "SkewedTParams",
    "Normal",
    "StudentT",
    "SkewedT",
    "InnovationDist",
    "skewt_pdf",
    "skewt_cdf",
    "skewt_quantile",
    "skewt_es",
    "student_es",
    "std_t_pdf",
    "std_t_cdf",
    "std_t_quantile",
    "dist_quantile",
    "dist_es",
]


def _as_out(x, out):
    return float(out) if np.ndim(x) == 0 else out


def _check_prob(u, name="u"):
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return arr


def _check_dof(v):
    if not (np.isfinite(v) and v > 2.0):
        raise DomainError(f"degrees of freedom must exceed 2, got {v!r}")


@dataclass(frozen=True)
class SkewedTParams:
    """Skewed-t shape: degrees of freedom ``v`` and asymmetry ``lam``.

    The derived constants ``a``, ``b`` and ``c`` are computed on
    construction.  The mode of the density sits at ``-a/b``.
    """

    v: float
    lam: float
    a: float = field(init=False)
    b: float = field(init=False)
    c: float = field(init=False)

    def __post_init__(self):
        v, lam = float(self.v), float(self.lam)
        _check_dof(v)
        if not (-1.0 < lam < 1.0):
            raise DomainError(f"asymmetry must lie in (-1, 1), got {lam!r}")
        c = math.exp(math.lgamma((v + 1) / 2) - math.lgamma(v / 2)) / math.sqrt(math.pi * (v - 2))
        a = 4.0 * lam * c * (v - 2) / (v - 1)
        b = math.sqrt(1.0 + 3.0 * lam * lam - a * a)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def mode(self) -> float:
        return -self.a / self.b

    def flipped(self) -> "SkewedTParams":
        """Parameters of ``-X`` when ``X`` has these parameters."""
        return SkewedTParams(self.v, -self.lam)


# --- unit-variance Student-t -------------------------------------------------

def _t_scale(v):
    return math.sqrt((v - 2.0) / v)


def std_t_pdf(x, v):
    """Density of the Student-t with ``v`` dof rescaled to unit variance."""
    _check_dof(v)
    s = _t_scale(v)
    x = np.asarray(x, dtype=float)
    out = np.exp(_t_logpdf_raw(x / s, v)) / s
    return _as_out(x, out)


def _t_logpdf_raw(z, v):
    return (math.lgamma((v + 1) / 2) - math.lgamma(v / 2)
            - 0.5 * math.log(math.pi * v) - 0.5 * (v + 1) * np.log1p(z * z / v))


def std_t_cdf(x, v):
    _check_dof(v)
    x = np.asarray(x, dtype=float)
    return _as_out(x, special.stdtr(v, x / _t_scale(v)))


def std_t_quantile(u, v):
    _check_dof(v)
    u = _check_prob(u)
    return _as_out(u, _t_scale(v) * special.stdtrit(v, u))


def student_es(alpha, v):
    """Left-tail ES of the unit-variance Student-t at level ``alpha``."""
    _check_dof(v)
    alpha = _check_prob(alpha, "alpha")
    q = special.stdtrit(v, alpha)
    dens = np.exp(_t_logpdf_raw(q, v))
    out = -(dens / alpha) * ((v + q * q) / (v - 1.0)) * _t_scale(v)
    return _as_out(alpha, out)


# --- skewed-t ----------------------------------------------------------------

def skewt_pdf(x, params: SkewedTParams):
    a, b, c, v, lam = params.a, params.b, params.c, params.v, params.lam
    x = np.asarray(x, dtype=float)
    denom = np.where(x <= -a / b, 1.0 - lam, 1.0 + lam)
    z = (b * x + a) / denom
    out = b * c * (1.0 + z * z / (v - 2.0)) ** (-(v + 1.0) / 2.0)
    return _as_out(x, out)


def skewt_logpdf(x, params: SkewedTParams):
    a, b, c, v, lam = params.a, params.b, params.c, params.v, params.lam
    x = np.asarray(x, dtype=float)
    denom = np.where(x <= -a / b, 1.0 - lam, 1.0 + lam)
    z = (b * x + a) / denom
    out = math.log(b * c) - 0.5 * (v + 1.0) * np.log1p(z * z / (v - 2.0))
    return _as_out(x, out)


def skewt_cdf(x, params: SkewedTParams):
    a, b, v, lam = params.a, params.b, params.v, params.lam
    x = np.asarray(x, dtype=float)
    k = math.sqrt(v / (v - 2.0))
    left = x <= -a / b
    denom = np.where(left, 1.0 - lam, 1.0 + lam)
    z = (b * x + a) / denom * k
    # right branch written as 1 - (1+lam) F(-z) to keep precision near 1
    out = np.where(left, (1.0 - lam) * special.stdtr(v, z), 1.0 - (1.0 + lam) * special.stdtr(v, -z))
    return _as_out(x, out)


def skewt_quantile(u, params: SkewedTParams):
    a, b, v, lam = params.a, params.b, params.v, params.lam
    u = _check_prob(u)
    uu = np.atleast_1d(u)
    left = uu <= (1.0 - lam) / 2.0
    s = _t_scale(v)
    z = np.empty(uu.shape)
    # each branch is evaluated only where it applies
    z[left] = (1.0 - lam) * s * special.stdtrit(v, uu[left] / (1.0 - lam))
    z[~left] = (1.0 + lam) * s * special.stdtrit(v, (uu[~left] + lam) / (1.0 + lam))
    out = (z - a) / b
    return _as_out(u, out.reshape(np.shape(u)))


def _es_left_branch(alpha, params: SkewedTParams):
    """ES when the alpha-quantile sits at or left of the mode."""
    a, b, v, lam = params.a, params.b, params.v, params.lam
    q = skewt_quantile(alpha, params)
    alpha_t = std_t_cdf(b / (1.0 - lam) * (q + a / b), v)
    return (alpha_t / alpha) * (1.0 - lam) * (-a / b + (1.0 - lam) / b * student_es(alpha_t, v))


def skewt_es(alpha, params: SkewedTParams):
    """Left-tail Expected Shortfall of the skewed-t.

    When the alpha-quantile lies right of the mode the tail integral is taken
    from the mirrored distribution ``(v, -lam)`` at level ``1 - alpha`` and
    rescaled by ``(1 - alpha) / alpha``, using that the mean is zero.
    """
    alpha = _check_prob(alpha, "alpha")
    q = np.asarray(skewt_quantile(alpha, params))
    left = q <= params.mode
    out = np.empty_like(alpha, dtype=float)
    if np.any(left):
        out[left] = _es_left_branch(alpha[left], params)
    if np.any(~left):
        ar = alpha[~left]
        out[~left] = (1.0 - ar) / ar * _es_left_branch(1.0 - ar, params.flipped())
    return _as_out(alpha, out)


# --- innovation distribution handles -----------------------------------------

@dataclass(frozen=True)
class Normal:
    name = "normal"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return _as_out(x, np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi))

    def cdf(self, x):
        return _as_out(x, special.ndtr(np.asarray(x, dtype=float)))

    def ppf(self, u):
        u = _check_prob(u)
        return _as_out(u, special.ndtri(u))

    def es(self, alpha):
        alpha = _check_prob(alpha, "alpha")
        z = special.ndtri(alpha)
        return _as_out(alpha, -np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) / alpha)


@dataclass(frozen=True)
class StudentT:
    v: float
    name = "t"

    def __post_init__(self):
        _check_dof(self.v)

    def pdf(self, x):
        return std_t_pdf(x, self.v)

    def cdf(self, x):
        return std_t_cdf(x, self.v)

    def ppf(self, u):
        return std_t_quantile(u, self.v)

    def es(self, alpha):
        return student_es(alpha, self.v)


@dataclass(frozen=True)
class SkewedT:
    params: SkewedTParams
    name = "skew-t"

    @classmethod
    def of(cls, v, lam):
        return cls(SkewedTParams(v, lam))

    def pdf(self, x):
        return skewt_pdf(x, self.params)

    def cdf(self, x):
        return skewt_cdf(x, self.params)

    def ppf(self, u):
        return skewt_quantile(u, self.params)

    def es(self, alpha):
        return skewt_es(alpha, self.params)


InnovationDist = Normal | StudentT | SkewedT


def dist_quantile(u, d: InnovationDist):
    return d.ppf(u)


def dist_es(alpha, d: InnovationDist):
    return d.es(alpha)
