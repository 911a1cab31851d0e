"""APARCH returns with skewed-t innovations and their true one-step risk."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate

from qbsdrisk.distributions import SkewedTParams, skewt_es, skewt_pdf, skewt_quantile
from qbsdrisk.errors import DomainError, SimulationError

__all__ = [
    "AparchParams",
    "SimulatedPath",
    "make_rng",
    "uniform_open",
    "sample_skewt",
    "power_moment",
    "simulate_aparch",
    "true_var_es",
]


@dataclass(frozen=True)
class AparchParams:
    omega: float
    beta: float
    gamma: float
    delta: float
    theta: float
    innovation: SkewedTParams

    def __post_init__(self):
        if min(self.omega, self.beta, self.gamma, self.delta) <= 0:
            raise DomainError("omega, beta, gamma and delta must be positive")
        if not -1 < self.theta < 1:
            raise DomainError("theta must lie in (-1, 1)")


@dataclass(frozen=True)
class SimulatedPath:
    returns: np.ndarray
    sigma: np.ndarray
    seed: int
    params: AparchParams

    @property
    def sigma_next(self) -> float:
        return float(self.sigma[-1])


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox generator; passes an existing Generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def uniform_open(n: int, rng) -> np.ndarray:
    """Uniforms strictly inside (0, 1) on the 2^-53 grid shifted by half a step."""
    k = make_rng(rng).integers(0, 2**53, size=n, dtype=np.int64)
    return (k + 0.5) / 2.0**53


def sample_skewt(n: int, params: SkewedTParams, seed) -> np.ndarray:
    """Skewed-t draws by inverse transform of a seeded uniform stream."""
    if n < 1:
        raise DomainError("n must be at least 1")
    return np.asarray(skewt_quantile(uniform_open(n, seed), params), dtype=float)


@lru_cache(maxsize=64)
def power_moment(delta: float, theta: float, v: float, lam: float) -> float:
    """``E(|e| - theta e)^delta`` for a skewed-t innovation, by quadrature."""
    p = SkewedTParams(v, lam)
    f = lambda x: (abs(x) - theta * x) ** delta * skewt_pdf(x, p)
    cuts = sorted({0.0, p.mode})
    pieces = [(-np.inf, cuts[0])] + list(zip(cuts[:-1], cuts[1:])) + [(cuts[-1], np.inf)]
    return float(sum(integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)[0] for a, b in pieces))


@njit(cache=True)
def _aparch(omega, beta, gamma, delta, theta, eps, s0):
    n = eps.size
    sd = np.empty(n + 1)
    r = np.empty(n)
    sd[0] = s0
    for t in range(n):
        sig = sd[t] ** (1.0 / delta)
        r[t] = sig * eps[t]
        sd[t + 1] = omega + beta * sd[t] + gamma * (abs(r[t]) - theta * r[t]) ** delta
    return r, sd


def simulate_aparch(params: AparchParams, T: int, burn_in: int = 500, seed: int = 0) -> SimulatedPath:
    """Simulate ``T`` returns after discarding ``burn_in`` warm-up steps.

    The recursion starts at the unconditional level of ``sigma^delta`` when
    the process is stationary in that moment, and at ``omega`` otherwise.
    ``sigma`` has ``T + 1`` entries, the last being the one-step-ahead value.
    """
    if T < 1 or burn_in < 0:
        raise DomainError("need T >= 1 and burn_in >= 0")
    inn = params.innovation
    m = power_moment(params.delta, params.theta, inn.v, inn.lam)
    denom = 1.0 - params.beta - params.gamma * m
    s0 = params.omega / denom if denom > 0 else params.omega
    eps = sample_skewt(T + burn_in, inn, seed)
    with np.errstate(over="ignore", invalid="ignore"):
        r, sd = _aparch(params.omega, params.beta, params.gamma, params.delta, params.theta, eps, s0)
    if not (np.all(np.isfinite(sd)) and np.all(sd > 0)):
        raise SimulationError("sigma^delta overflowed; parameters are explosive")
    sigma = sd[burn_in:] ** (1.0 / params.delta)
    return SimulatedPath(r[burn_in:], sigma, int(seed), params)


def true_var_es(sigma_next: float, alpha: float, params: SkewedTParams) -> tuple[float, float]:
    """True conditional VaR and ES, proportional to ``sigma_next``."""
    if not sigma_next > 0:
        raise DomainError("sigma must be positive")
    return (float(sigma_next * skewt_quantile(alpha, params)),
            float(sigma_next * skewt_es(alpha, params)))
