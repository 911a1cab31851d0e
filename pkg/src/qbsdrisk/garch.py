"""GARCH(1,1), GJR-GARCH(1,1) and EGARCH(1,1) benchmarks fitted by maximum likelihood.

Innovations are standardized normal, Student-t or skewed-t; the
conditional mean is zero or AR(1).  One-step forecasts are
``VaR = mu + sigma * F^{-1}(alpha)`` and ``ES = mu + sigma * ES_eps(alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numba import njit
from scipy.optimize import minimize

from qbsdrisk.distributions import Normal, SkewedT, StudentT
from qbsdrisk.errors import DomainError, EstimationError
from qbsdrisk.qbsd import RiskForecast

__all__ = [
    "GarchModelSpec",
    "GarchParams",
    "GarchFit",
    "PENALTY",
    "garch_nll",
    "garch_variance_path",
    "fit_garch",
    "garch_forecast",
]

Family = Literal["garch", "gjr", "egarch"]
DistName = Literal["normal", "t", "skew-t"]
MeanKind = Literal["zero", "ar1"]

PENALTY = 1e10
_STATIONARITY = 1.0 - 1e-6
_V_FLOOR = 2.01
_GRAD_TOL = 1e-3
_E_ABS_NORMAL = math.sqrt(2.0 / math.pi)
_FAMILY_CODE = {"garch": 0, "gjr": 1, "egarch": 2}
_DIST_CODE = {"normal": 0, "t": 1, "skew-t": 2}


@dataclass(frozen=True)
class GarchModelSpec:
    family: Family = "garch"
    dist: DistName = "normal"
    mean: MeanKind = "zero"

    def __post_init__(self):
        if self.family not in _FAMILY_CODE:
            raise DomainError(f"unknown GARCH family {self.family!r}")
        if self.dist not in _DIST_CODE:
            raise DomainError(f"unknown innovation distribution {self.dist!r}")
        if self.mean not in ("zero", "ar1"):
            raise DomainError(f"unknown mean model {self.mean!r}")
        if self.family == "egarch" and self.dist != "normal":
            raise DomainError("EGARCH is only supported with normal innovations")

    @property
    def model_id(self) -> str:
        head = {"garch": "GARCH", "gjr": "GJR-GARCH", "egarch": "EGARCH"}[self.family]
        tail = "" if self.family == "egarch" else "-" + self.dist
        return ("AR-" if self.mean == "ar1" else "") + head + tail


@dataclass(frozen=True)
class GarchParams:
    """Natural-scale parameters.

    ``delta`` is the GJR threshold coefficient or the EGARCH sign
    coefficient; ``gamma`` is the ARCH (or EGARCH magnitude) coefficient.
    """

    omega: float
    beta: float
    gamma: float
    delta: float = 0.0
    c: float = 0.0
    phi: float = 0.0
    v: float | None = None
    lam: float | None = None

    def validate(self, spec: GarchModelSpec):
        if spec.family == "egarch":
            if not abs(self.beta) < 1:
                raise DomainError("EGARCH requires |beta| < 1")
        else:
            if not self.omega > 0 or min(self.beta, self.gamma) < 0:
                raise DomainError("GARCH requires omega > 0 and non-negative beta, gamma")
            if spec.family == "gjr" and self.delta < 0:
                raise DomainError("GJR threshold coefficient must be non-negative")
            if spec.family == "garch" and self.delta != 0:
                raise DomainError("plain GARCH has no threshold coefficient")
            if not self.persistence(spec) < 1:
                raise DomainError("variance process is not covariance stationary")
        if spec.dist in ("t", "skew-t") and not (self.v is not None and self.v > 2):
            raise DomainError("degrees of freedom must exceed 2")
        if spec.dist == "skew-t" and not (self.lam is not None and abs(self.lam) < 1):
            raise DomainError("skew parameter must lie in (-1, 1)")
        if spec.mean == "zero" and (self.c != 0 or self.phi != 0):
            raise DomainError("zero-mean model carries mean coefficients")

    def persistence(self, spec: GarchModelSpec) -> float:
        if spec.family == "egarch":
            return abs(self.beta)
        return self.beta + self.gamma + 0.5 * self.delta

    def innovation(self, spec: GarchModelSpec):
        if spec.dist == "normal":
            return Normal()
        if spec.dist == "t":
            return StudentT(self.v)
        return SkewedT.of(self.v, self.lam)


# --- compiled likelihood -------------------------------------------------------

@njit(cache=True)
def _residuals(r, c, phi, ar):
    if ar:
        return r[1:] - c - phi * r[:-1]
    return r.copy()


@njit(cache=True)
def _variance(fam, omega, beta, gamma, delta, e, s2_0):
    n = e.size
    s2 = np.empty(n + 1)
    s2[0] = s2_0
    if fam == 2:
        ls = math.log(s2_0)
        for t in range(1, n + 1):
            z = e[t - 1] / math.sqrt(s2[t - 1])
            ls = omega + beta * ls + gamma * (abs(z) - _E_ABS_NORMAL) + delta * z
            ls = min(max(ls, -700.0), 700.0)
            s2[t] = math.exp(ls)
    else:
        for t in range(1, n + 1):
            et = e[t - 1]
            a = gamma + (delta if (fam == 1 and et < 0.0) else 0.0)
            s2[t] = omega + beta * s2[t - 1] + a * et * et
    return s2


@njit(cache=True)
def _loglik(e, s2, dist, v, lam):
    n = e.size
    if dist == 1:
        kconst = math.lgamma((v + 1) / 2) - math.lgamma(v / 2) - 0.5 * math.log(math.pi * (v - 2))
    elif dist == 2:
        cc = math.exp(math.lgamma((v + 1) / 2) - math.lgamma(v / 2)) / math.sqrt(math.pi * (v - 2))
        a = 4.0 * lam * cc * (v - 2) / (v - 1)
        b = math.sqrt(1.0 + 3.0 * lam * lam - a * a)
        kconst = math.log(b * cc)
        thr = -a / b
    total = 0.0
    for t in range(n):
        if not (s2[t] > 0.0) or not np.isfinite(s2[t]):
            return -np.inf
        z = e[t] / math.sqrt(s2[t])
        if dist == 0:
            lp = -0.5 * math.log(2.0 * math.pi) - 0.5 * z * z
        elif dist == 1:
            lp = kconst - 0.5 * (v + 1) * math.log1p(z * z / (v - 2))
        else:
            d = (1.0 - lam) if z <= thr else (1.0 + lam)
            u = (b * z + a) / d
            lp = kconst - 0.5 * (v + 1) * math.log1p(u * u / (v - 2))
        total += lp - 0.5 * math.log(s2[t])
    return total


@njit(cache=True)
def _nll_natural(r, fam, dist, ar, omega, beta, gamma, delta, c, phi, v, lam, s2_0):
    e = _residuals(r, c, phi, ar)
    s2 = _variance(fam, omega, beta, gamma, delta, e, s2_0)
    ll = _loglik(e, s2[:-1], dist, v, lam)
    if not np.isfinite(ll):
        return PENALTY
    return -ll


def garch_variance_path(params: GarchParams, spec: GarchModelSpec, returns):
    """Residuals and conditional variances (one step past the sample)."""
    r = np.ascontiguousarray(returns, dtype=float)
    ar = spec.mean == "ar1"
    e = _residuals(r, params.c, params.phi, ar)
    s2 = _variance(_FAMILY_CODE[spec.family], params.omega, params.beta, params.gamma,
                   params.delta, e, float(np.var(r)))
    return e, s2


def garch_nll(params: GarchParams, spec: GarchModelSpec, returns) -> float:
    """Negative log-likelihood; ``PENALTY`` when the variance filter breaks down.

    The variance recursion starts from the sample variance of ``returns``.
    With an AR(1) mean the first observation only conditions the second.
    """
    params.validate(spec)
    r = np.ascontiguousarray(returns, dtype=float)
    return float(_nll_natural(r, _FAMILY_CODE[spec.family], _DIST_CODE[spec.dist], spec.mean == "ar1",
                              params.omega, params.beta, params.gamma, params.delta, params.c,
                              params.phi, params.v or 0.0, params.lam or 0.0, float(np.var(r))))


# --- unconstrained coordinates -------------------------------------------------

def _softmax_weights(x):
    z = np.concatenate([np.asarray(x, dtype=float), [0.0]])
    z = np.exp(z - z.max())
    return _STATIONARITY * z[:-1] / z.sum()


def _inv_softmax(w):
    w = np.maximum(np.asarray(w, dtype=float), 1e-10)
    slack = max(_STATIONARITY - w.sum(), 1e-10)
    return np.log(w / slack)


def _to_natural(x, spec: GarchModelSpec) -> GarchParams:
    i = 0
    c = phi = 0.0
    if spec.mean == "ar1":
        c, phi = float(x[0]), float(x[1])
        i = 2
    if spec.family == "egarch":
        omega, beta, gamma, delta = float(x[i]), float(math.tanh(x[i + 1])), float(x[i + 2]), float(x[i + 3])
        i += 4
    else:
        omega = float(math.exp(x[i]))
        k = 3 if spec.family == "gjr" else 2
        w = _softmax_weights(x[i + 1:i + 1 + k])
        beta, gamma = float(w[0]), float(w[1])
        delta = float(2.0 * w[2]) if k == 3 else 0.0
        i += 1 + k
    v = lam = None
    if spec.dist in ("t", "skew-t"):
        v = _V_FLOOR + float(math.exp(x[i]))
        i += 1
    if spec.dist == "skew-t":
        lam = 0.999 * float(math.tanh(x[i]))
    return GarchParams(omega, beta, gamma, delta, c, phi, v, lam)


def _to_unconstrained(p: GarchParams, spec: GarchModelSpec) -> np.ndarray:
    x = []
    if spec.mean == "ar1":
        x += [p.c, p.phi]
    if spec.family == "egarch":
        x += [p.omega, math.atanh(np.clip(p.beta, -0.999999, 0.999999)), p.gamma, p.delta]
    else:
        x.append(math.log(p.omega))
        w = [p.beta, p.gamma] + ([0.5 * p.delta] if spec.family == "gjr" else [])
        x += list(_inv_softmax(w))
    if spec.dist in ("t", "skew-t"):
        x.append(math.log(max(p.v - _V_FLOOR, 1e-8)))
    if spec.dist == "skew-t":
        x.append(math.atanh(np.clip(p.lam / 0.999, -0.999999, 0.999999)))
    return np.array(x, dtype=float)


def _rescale(p: GarchParams, spec: GarchModelSpec, sd: float) -> GarchParams:
    """Map parameters fitted on ``r / sd`` back to the scale of ``r``."""
    if spec.family == "egarch":
        omega = p.omega + (1.0 - p.beta) * math.log(sd * sd)
    else:
        omega = p.omega * sd * sd
    return replace(p, omega=omega, c=p.c * sd)


def _default_starts(spec: GarchModelSpec, z) -> list[GarchParams]:
    shape = {"normal": (None, None), "t": (8.0, None), "skew-t": (8.0, 0.0)}[spec.dist]
    c, phi = 0.0, 0.0
    if spec.mean == "ar1":
        phi = float(np.corrcoef(z[1:], z[:-1])[0, 1])
        c = float(np.mean(z[1:]) - phi * np.mean(z[:-1]))
    starts = []
    for beta, gamma in ((0.85, 0.10), (0.70, 0.20), (0.95, 0.03)):
        if spec.family == "egarch":
            starts.append(GarchParams(0.0, beta, gamma + 0.05, -0.05, c, phi, *shape))
        else:
            delta = 0.5 * gamma if spec.family == "gjr" else 0.0
            g = 0.5 * gamma if spec.family == "gjr" else gamma
            omega = max(1.0 - beta - g - 0.5 * delta, 0.01)
            starts.append(GarchParams(omega, beta, g, delta, c, phi, *shape))
    return starts


@dataclass
class GarchFit:
    spec: GarchModelSpec
    params: GarchParams
    nll: float
    sigma2: np.ndarray
    residuals: np.ndarray
    mu_next: float
    converged: bool

    @property
    def sigma_next(self) -> float:
        return float(math.sqrt(self.sigma2[-1]))

    def forecast(self, alphas, window_index=0) -> list[RiskForecast]:
        d = self.params.innovation(self.spec)
        out = []
        for a in alphas:
            var = self.mu_next + self.sigma_next * float(d.ppf(a))
            es = self.mu_next + self.sigma_next * float(d.es(a))
            out.append(RiskForecast(var=var, es=es, alpha=float(a), model_id=self.spec.model_id,
                                    window_index=window_index, mu=self.mu_next))
        return out


def fit_garch(returns, spec: GarchModelSpec, *, warm: GarchParams | None = None) -> GarchFit:
    """Maximum likelihood over feasibility-preserving coordinates.

    The series is divided by its standard deviation before optimizing, so
    fits are scale equivariant.  Several starts are run with BFGS and the
    lowest negative log-likelihood is kept.  ``converged`` reports whether
    the gradient in optimizer coordinates is below 1e-3.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 250:
        raise DomainError("GARCH fit needs at least 250 observations")
    if not np.all(np.isfinite(r)):
        raise DomainError("returns must be finite")
    sd = float(np.std(r))
    if not sd > 0:
        raise EstimationError("series has zero variance")
    z = np.ascontiguousarray(r / sd)
    fam, dist, ar = _FAMILY_CODE[spec.family], _DIST_CODE[spec.dist], spec.mean == "ar1"
    s2_0 = float(np.var(z))

    def objective(x):
        p = _to_natural(x, spec)
        return _nll_natural(z, fam, dist, ar, p.omega, p.beta, p.gamma, p.delta, p.c, p.phi,
                            p.v or 0.0, p.lam or 0.0, s2_0)

    starts = _default_starts(spec, z)
    if warm is not None:
        starts = [_rescale(warm, spec, 1.0 / sd)] + starts[:1]
    best = None
    for s in starts:
        x0 = _to_unconstrained(s, spec)
        if not objective(x0) < PENALTY:
            continue
        # central differences: forward ones stall BFGS well short of the optimum
        res = minimize(objective, x0, method="BFGS", jac="3-point",
                       options={"gtol": 1e-6, "maxiter": 2000})
        if best is None or res.fun < best.fun - 1e-12:
            best = res
    if best is None or not best.fun < PENALTY:
        raise EstimationError(f"all starts failed for {spec.model_id}",
                              {"starts": len(starts), "best": None if best is None else best.fun})

    params = _rescale(_to_natural(best.x, spec), spec, sd)
    e, s2 = garch_variance_path(params, spec, r)
    mu_next = params.c + params.phi * r[-1] if ar else 0.0
    nll = garch_nll(params, spec, r)
    converged = bool(np.max(np.abs(best.jac)) < _GRAD_TOL)
    return GarchFit(spec, params, nll, s2, e, float(mu_next), converged)


def garch_forecast(params: GarchParams, spec: GarchModelSpec, returns, alpha: float) -> RiskForecast:
    """One-step VaR and ES from given parameters filtered through ``returns``."""
    params.validate(spec)
    r = np.asarray(returns, dtype=float)
    e, s2 = garch_variance_path(params, spec, r)
    mu_next = params.c + params.phi * r[-1] if spec.mean == "ar1" else 0.0
    fit = GarchFit(spec, params, float("nan"), s2, e, float(mu_next), True)
    return fit.forecast([alpha])[0]
